"""Command-line driver: simulate, run, evaluate, montecarlo, config.

Exit codes: 0 success, 2 configuration error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .config import ExperimentConfig, build_scenario
from .ekf import write_state_trace
from .errors import ConfigurationError, FegutError
from .evaluation import aggregate, compute_rmse, format_table, write_plot_data, write_report
from .geoframe import LocalFrame
from .hybrid import FeGutPipeline, read_trace, run_baseline_ekf, write_trace
from .scene import read_dataset, write_dataset
from .trajectory import TruthTable

log = logging.getLogger("fegut")

ESTIMATORS = ("ekf", "fegut")
EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


def run_estimator(name, epochs, cfg: ExperimentConfig, debug_path=None):
    """Run one estimator over a list of epochs; returns ``(outputs, state_rows)``."""
    if name == "ekf":
        rows = []
        outputs = run_baseline_ekf(
            epochs, cfg.ekf_config(), cfg.data["estimator"]["cold_start_iterations"], state_rows=rows
        )
        return outputs, rows
    if name == "fegut":
        pipeline = FeGutPipeline(cfg.pipeline_config(), debug_path)
        outputs = pipeline.run(epochs)
        return outputs, pipeline.state_rows
    raise ConfigurationError(f"unknown estimator {name!r}")


def run_seed(cfg: ExperimentConfig, seed, out_dir=None):
    """Simulate one seed and evaluate both estimators; FE-GUT carries the enhancement."""
    sc = build_scenario(cfg, seed)
    reports = {}
    for name in ESTIMATORS:
        outputs, rows = run_estimator(name, sc.dataset.epochs, cfg)
        reports[name] = compute_rmse(
            outputs, sc.table, cfg.td_truth, cfg.cut, estimator=name, seed=seed, config_hash=cfg.hash
        )
        if out_dir is not None:
            write_trace(Path(out_dir) / f"trace_{name}.csv", outputs, sc.table.frame)
    reports["fegut"].with_baseline(reports["ekf"])
    return [reports[n] for n in ESTIMATORS]


# subcommands --------------------------------------------------------------
def cmd_simulate(args, cfg):
    out = _out_dir(args, cfg)
    sc = build_scenario(cfg, args.seed)
    write_dataset(out / "dataset.jsonl", sc.dataset)
    sc.table.to_csv(out / "truth.csv")
    print(f"wrote {len(sc.dataset)} epochs to {out / 'dataset.jsonl'} (seed {args.seed})")


def cmd_run(args, cfg):
    out = _out_dir(args, cfg)
    ds = read_dataset(_existing(Path(args.dataset) if args.dataset else out / "dataset.jsonl"))
    frame = LocalFrame(tuple(ds.header["origin"]))
    debug = out / "fgo_debug.jsonl" if args.verbose and args.estimator == "fegut" else None
    if debug is not None and debug.exists():
        debug.unlink()
    outputs, rows = run_estimator(args.estimator, ds.epochs, cfg, debug)
    write_trace(out / f"trace_{args.estimator}.csv", outputs, frame)
    write_state_trace(out / f"states_{args.estimator}.csv", rows)
    print(f"wrote {len(outputs)} outputs to {out / f'trace_{args.estimator}.csv'}")


def cmd_evaluate(args, cfg):
    out = _out_dir(args, cfg)
    ds = read_dataset(_existing(out / "dataset.jsonl"))
    truth = TruthTable.from_csv(_existing(out / "truth.csv"))
    td = float(ds.header["td_truth"])
    seed = int(ds.header["seed"])
    chash = ds.header.get("config_hash", "")
    traces = {n: read_trace(out / f"trace_{n}.csv") for n in ESTIMATORS if (out / f"trace_{n}.csv").exists()}
    if not traces:
        raise FegutError(f"no trace_*.csv files in {out}")
    reports = {n: compute_rmse(o, truth, td, cfg.cut, estimator=n, seed=seed, config_hash=chash)
               for n, o in traces.items()}
    if "ekf" in reports and "fegut" in reports:
        reports["fegut"].with_baseline(reports["ekf"])
    ordered = [reports[n] for n in ESTIMATORS if n in reports]
    write_report(out / "report.csv", ordered)
    write_plot_data(out, truth, td, traces)
    print(format_table(ordered))


def cmd_montecarlo(args, cfg):
    out = _out_dir(args, cfg)
    seeds = [args.seed] if args.seed is not None else cfg.seeds
    workers = args.workers or cfg.data["montecarlo"]["workers"] or min(len(seeds), os.cpu_count() or 1)
    if workers > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_seed, [cfg] * len(seeds), seeds))
    else:
        results = [run_seed(cfg, s) for s in seeds]
    reports = [r for pair in results for r in pair]
    write_report(out / "report.csv", reports)
    summary = {n: aggregate([r for r in reports if r.estimator == n]) for n in ESTIMATORS}
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["estimator", "metric", "mean", "std", "n_seeds"])
        for n in ESTIMATORS:
            for metric, (mean, std) in summary[n].items():
                if n == "ekf" and metric.startswith("enh_"):
                    continue
                w.writerow([n, metric, repr(mean), repr(std), len(seeds)])
    print(format_table(reports))
    for n in ESTIMATORS:
        s = summary[n]
        print(f"{n:<6} mean over {len(seeds)} seeds: horizontal {s['horizontal'][0]:.4f} m, "
              f"vertical {s['vertical'][0]:.4f} m, td {s['td_ms'][0]:.3f} ms")


def cmd_config(args, cfg):
    sys.stdout.write(f"# source: {cfg.source}\n# sha256: {cfg.hash}\n")
    sys.stdout.write(cfg.dump_yaml())


# plumbing -----------------------------------------------------------------
def _out_dir(args, cfg):
    out = Path(args.out or cfg.data["output"]["dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _existing(path: Path):
    if not path.exists():
        raise FegutError(f"missing input file {path}")
    return path


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment YAML (default: packaged lemniscate config)")
    common.add_argument("--out", help="output directory (default: output.dir from the config)")
    common.add_argument("--verbose", "-v", action="store_true", help="debug logging and FGO window dumps")

    p = argparse.ArgumentParser(prog="fegut", description="GNSS/UWB fusion with online time-offset calibration")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="write dataset.jsonl and truth.csv")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("run", parents=[common], help="run one estimator on a dataset")
    s.add_argument("--estimator", choices=ESTIMATORS, required=True)
    s.add_argument("--dataset", help="dataset path (default: OUT/dataset.jsonl)")
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("evaluate", parents=[common], help="RMSE report and plot data from traces in OUT")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("montecarlo", parents=[common], help="simulate, run and evaluate over the seed list")
    s.add_argument("--seed", type=int, help="single seed instead of the configured list")
    s.add_argument("--workers", type=int, help="worker processes")
    s.set_defaults(func=cmd_montecarlo)

    s = sub.add_parser("config", parents=[common], help="print the merged configuration and its hash")
    s.set_defaults(func=cmd_config)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.ERROR,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig.packaged()
        args.func(args, cfg)
    except ConfigurationError as exc:
        print(f"fegut: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FegutError, OSError, ValueError) as exc:
        print(f"fegut: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
