"""RMSE metrics, enhancement percentages, report files and plot-ready exports."""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContractViolation
from .geoframe import LocalFrame
from .trajectory import TruthTable

METRICS = ("horizontal", "vertical", "td_ms")


def enhancement(baseline, candidate):
    """Relative improvement of ``candidate`` over ``baseline`` in percent.

    NaN where the baseline is exactly zero.
    """
    baseline = np.asarray(baseline, dtype=float)
    if np.any(baseline < 0):
        raise ContractViolation("baseline RMSE must be non-negative")
    with np.errstate(divide="ignore", invalid="ignore"):
        pct = (baseline - np.asarray(candidate, dtype=float)) / baseline * 100.0
    return np.where(baseline == 0, np.nan, pct)


@dataclass
class RunReport:
    """Error statistics of one estimator run.

    ``horizontal``/``vertical``/``td_ms`` use epochs at or after ``cut``;
    the ``*_all`` variants use every epoch.
    """

    estimator: str
    seed: int
    config_hash: str
    cut: float
    n_epochs: int
    n_used: int
    horizontal: float
    vertical: float
    td_ms: float
    east: float
    north: float
    up: float
    horizontal_all: float
    vertical_all: float
    td_ms_all: float
    enhancement: dict = field(default_factory=dict)

    def metrics(self):
        return np.array([getattr(self, m) for m in METRICS])

    def with_baseline(self, baseline: "RunReport"):
        pct = enhancement(baseline.metrics(), self.metrics())
        self.enhancement = {m: float(p) for m, p in zip(METRICS, pct)}
        return self

    def row(self):
        d = asdict(self)
        enh = d.pop("enhancement")
        for m in METRICS:
            d[f"enh_{m}"] = enh.get(m, float("nan"))
        return d


REPORT_FIELDS = list(RunReport("", 0, "", 0, 0, 0, *[0.0] * 9).row())


def _rms(x):
    return float(np.sqrt(np.mean(np.square(x)))) if len(x) else float("nan")


def error_table(outputs, truth: TruthTable, td_truth, frame: LocalFrame | None = None):
    """Per-epoch ENU position error and time-offset error (seconds).

    Raises :class:`~fegut.errors.TimeRangeError` when an output lies outside
    the truth table.
    """
    if not outputs:
        raise ContractViolation("no estimator outputs to evaluate")
    frame = frame or truth.frame
    t = np.array([o.t for o in outputs])
    r = np.array([o.r for o in outputs])
    ref = truth.sample(t)
    enu = frame.vector_to_enu(r - ref.r)
    td_err = np.array([o.td for o in outputs]) - td_truth
    return t, enu, td_err


def compute_rmse(outputs, truth: TruthTable, td_truth, cut=10.0, frame=None, estimator="", seed=0, config_hash=""):
    t, enu, td_err = error_table(outputs, truth, td_truth, frame)
    keep = t >= t[0] + cut
    if not np.any(keep):
        raise ContractViolation(f"convergence cut {cut} s leaves no epochs")
    horiz = np.hypot(enu[:, 0], enu[:, 1])
    e = enu[keep]
    return RunReport(
        estimator=estimator,
        seed=int(seed),
        config_hash=config_hash,
        cut=float(cut),
        n_epochs=len(t),
        n_used=int(keep.sum()),
        horizontal=_rms(horiz[keep]),
        vertical=_rms(e[:, 2]),
        td_ms=1e3 * _rms(td_err[keep]),
        east=_rms(e[:, 0]),
        north=_rms(e[:, 1]),
        up=_rms(e[:, 2]),
        horizontal_all=_rms(horiz),
        vertical_all=_rms(enu[:, 2]),
        td_ms_all=1e3 * _rms(td_err),
    )


def pooled_rms(values, counts):
    """Combine RMS values of disjoint segments into the RMS of the union."""
    values = np.asarray(values, dtype=float)
    counts = np.asarray(counts, dtype=float)
    return float(np.sqrt(np.sum(counts * values**2) / np.sum(counts)))


def aggregate(reports):
    """Mean and sample std of each metric and enhancement over reports of one estimator."""
    out = {}
    for m in METRICS + ("horizontal_all", "vertical_all", "td_ms_all"):
        vals = np.array([getattr(r, m) for r in reports])
        out[m] = (float(vals.mean()), float(vals.std(ddof=1)) if len(vals) > 1 else 0.0)
    for m in METRICS:
        vals = np.array([r.enhancement.get(m, np.nan) for r in reports])
        out[f"enh_{m}"] = (float(vals.mean()), float(vals.std(ddof=1)) if len(vals) > 1 else 0.0)
    return out


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else v


def write_report(path, reports):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=REPORT_FIELDS)
        w.writeheader()
        for r in reports:
            w.writerow({k: _fmt(v) for k, v in r.row().items()})


def read_report(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def format_table(reports):
    """Human-readable summary in the layout of a results table."""
    lines = [f"{'estimator':<10}{'seed':>6}{'horiz[m]':>11}{'vert[m]':>10}{'td[ms]':>10}"
             f"{'enh_h%':>9}{'enh_v%':>9}{'enh_td%':>9}"]
    for r in reports:
        e = [r.enhancement.get(m, float("nan")) for m in METRICS]
        lines.append(f"{r.estimator:<10}{r.seed:>6}{r.horizontal:>11.4f}{r.vertical:>10.4f}{r.td_ms:>10.3f}"
                     f"{e[0]:>9.2f}{e[1]:>9.2f}{e[2]:>9.2f}")
    if reports:
        lines.append(f"(first {reports[0].cut:g} s excluded; *_all columns in the CSV include them)")
    return "\n".join(lines)


def write_plot_data(out_dir, truth: TruthTable, td_truth, traces: dict, frame=None):
    """Write ``plotdata_{pos,td,traj}.csv`` with one row per output epoch.

    ``traces`` maps an estimator name to its outputs; all traces must share
    the same epochs.
    """
    out_dir = Path(out_dir)
    frame = frame or truth.frame
    names = sorted(traces)
    if not names:
        raise ContractViolation("no traces to export")
    tables = {n: error_table(traces[n], truth, td_truth, frame) for n in names}
    t = tables[names[0]][0]
    for n in names[1:]:
        if not np.array_equal(tables[n][0], t):
            raise ContractViolation("traces do not share the same epochs")
    truth_enu = frame.to_enu(truth.sample(t).r)

    def dump(name, header, columns):
        with open(out_dir / name, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for row in zip(*columns):
                w.writerow([repr(float(v)) for v in row])

    header, cols = ["t"], [t]
    for n in names:
        enu = tables[n][1]
        header += [f"{n}_e_east", f"{n}_e_north", f"{n}_e_up", f"{n}_e_horizontal"]
        cols += [enu[:, 0], enu[:, 1], enu[:, 2], np.hypot(enu[:, 0], enu[:, 1])]
    dump("plotdata_pos.csv", header, cols)

    header, cols = ["t", "td_truth_ms"], [t, np.full(len(t), 1e3 * td_truth)]
    for n in names:
        header.append(f"{n}_td_ms")
        cols.append(1e3 * (tables[n][2] + td_truth))
    dump("plotdata_td.csv", header, cols)

    header = ["t", "truth_east", "truth_north", "truth_up"]
    cols = [t, truth_enu[:, 0], truth_enu[:, 1], truth_enu[:, 2]]
    for n in names:
        enu = truth_enu + tables[n][1]
        header += [f"{n}_east", f"{n}_north", f"{n}_up"]
        cols += [enu[:, 0], enu[:, 1], enu[:, 2]]
    dump("plotdata_traj.csv", header, cols)
