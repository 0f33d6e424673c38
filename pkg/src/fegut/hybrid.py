"""FE-GUT: a naive EKF for position/velocity, a sliding-window graph for the time offset.

Per epoch (UWB-only epochs stop after the first step):

1. predict the naive EKF and update it with the epoch's measurements,
   compensating UWB ranges with the current time-offset estimate;
2. add the epoch to the graph, initialised from the EKF posterior;
3. solve the window, marginalize the oldest state once the window is full;
4. feed the graph's time offset back into the EKF.

The 12-state EKF baseline is provided here too so both estimators share the
same cold start and output format.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .ekf import (
    EkfConfig,
    FilterState,
    Mode,
    ekf_partial_update,
    ekf_predict,
    ekf_update,
    initial_state,
    set_external_td,
    state_trace_row,
)
from .errors import ColdStartError, ContractViolation, DatasetParseError, FegutError
from .fgo import SlidingWindowGraph, SolverConfig
from .geoframe import LocalFrame
from .models import N_DYN, N_STATE, POS, TD, VEL, make_state
from .scene import EpochKind, EpochMeasurements

log = logging.getLogger(__name__)


class FeedbackMode(str, Enum):
    EVERY_SOLVE = "every_solve"
    DAMPED = "damped"


@dataclass(frozen=True)
class PipelineConfig:
    ekf: EkfConfig = field(default_factory=EkfConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    feedback: FeedbackMode = FeedbackMode.EVERY_SOLVE
    alpha: float = 1.0
    cold_start_iterations: int = 20

    def validate(self):
        FeedbackMode(self.feedback)
        if self.feedback == FeedbackMode.DAMPED and not (0.0 < self.alpha <= 1.0):
            raise ContractViolation("damped feedback needs alpha in (0, 1]")
        self.solver.validate()
        return self


@dataclass
class EpochOutput:
    t: float
    r: np.ndarray
    v: np.ndarray
    td: float
    source: str
    diagnostics: dict = field(default_factory=dict)


def cold_start(epoch: EpochMeasurements, iterations=20):
    """Standalone GNSS fix: position/bias by Gauss-Newton, velocity/drift by linear LS.

    Returns the 12-element state with zero acceleration and zero time offset.
    """
    n = epoch.n_sats
    if n < 4:
        raise ColdStartError(f"cold start needs at least 4 satellites, epoch at t={epoch.t} has {n}")
    sp = epoch.sat_pos
    x = np.zeros(4)
    for _ in range(iterations):
        d = sp - x[:3]
        rho = np.linalg.norm(d, axis=1)
        G = np.hstack([-d / rho[:, None], np.ones((n, 1))])
        dx, *_ = np.linalg.lstsq(G, epoch.pseudoranges - (rho + x[3]), rcond=None)
        x += dx
        if np.linalg.norm(dx[:3]) < 1e-9:
            break
    else:
        if np.linalg.norm(dx[:3]) > 1e-3:
            raise ColdStartError("pseudorange fix did not converge")
    d = sp - x[:3]
    los = d / np.linalg.norm(d, axis=1)[:, None]
    G = np.hstack([-los, np.ones((n, 1))])
    vel, *_ = np.linalg.lstsq(G, epoch.doppler, rcond=None)
    return make_state(r=x[:3], v=vel[:3], clock_bias=x[3], clock_drift=vel[3])


class FeGutPipeline:
    """Owns the naive EKF and the sliding-window graph for one run."""

    def __init__(self, config: PipelineConfig | None = None, debug_path=None):
        self.config = (config or PipelineConfig()).validate()
        self.debug_path = debug_path
        self.ekf: FilterState | None = None
        self.graph: SlidingWindowGraph | None = None
        self.state_rows: list = []
        self._td_var = self.config.ekf.p0_td

    @property
    def initialized(self):
        return self.ekf is not None

    def initialize(self, epoch: EpochMeasurements):
        cfg = self.config
        x0 = cold_start(epoch, cfg.cold_start_iterations)
        self.ekf = initial_state(epoch.t, x0, cfg.ekf, Mode.NAIVE, external_td=0.0)
        self._reset_graph(x0, cfg.ekf.initial_covariance(Mode.FULL))
        return self.ekf

    def _reset_graph(self, mean12, cov12):
        self.graph = SlidingWindowGraph(self.config.solver, self.config.ekf, self.debug_path)
        self.graph.set_initial_prior(mean12, cov12)

    def _graph_from_ekf(self):
        cov = np.zeros((N_STATE, N_STATE))
        cov[:N_DYN, :N_DYN] = self.ekf.cov
        cov[TD, TD] = self._td_var
        self._reset_graph(self.ekf.full_state(), cov)

    def _feedback(self, td):
        ext = self.ekf.external_td
        if self.config.feedback == FeedbackMode.DAMPED:
            td = ext + self.config.alpha * (td - ext)
        self.ekf = set_external_td(self.ekf, td)

    def step(self, epoch: EpochMeasurements) -> EpochOutput:
        if not self.initialized:
            raise ContractViolation("pipeline not initialized")
        cfg = self.config
        dt = epoch.t - self.ekf.t
        if dt > 0:
            self.ekf = ekf_predict(self.ekf, dt, cfg.ekf)
        elif dt < 0:
            raise ContractViolation(f"epoch at t={epoch.t} precedes filter time {self.ekf.t}")

        if epoch.kind == EpochKind.UWB_ONLY:
            self.ekf, innov = ekf_partial_update(self.ekf, epoch, cfg.ekf)
            self.state_rows.append(state_trace_row(self.ekf, innov))
            return self._output(epoch, "ekf", {})

        self.ekf, innov = ekf_update(self.ekf, epoch, cfg.ekf)
        self.state_rows.append(state_trace_row(self.ekf, innov))
        try:
            diag = self._graph_step(epoch)
            source = "fgo"
        except Exception as exc:  # any graph failure falls back to the EKF for this epoch
            log.warning("graph optimisation failed at t=%.3f (%s); EKF-only output", epoch.t, exc)
            diag = {"fgo_error": f"{type(exc).__name__}: {exc}"}
            source = "ekf"
            self._graph_from_ekf()
        return self._output(epoch, source, diag)

    def _graph_step(self, epoch):
        g = self.graph
        g.add_epoch(epoch, self.ekf.mean)
        rep = g.solve()
        head = g.states[g.keys[-1]].copy()
        if g.size >= self.config.solver.window:
            g.marginalize_oldest()
            g.slide()
        est = g.current_td()
        diag = {
            "fgo_cost": rep.final_cost,
            "fgo_iterations": rep.iterations,
            "td_std": est.std,
            "td_observable": est.observable,
            "fgo_r": head[POS],
            "fgo_v": head[VEL],
        }
        if est.observable:
            self._td_var = est.std**2
            self._feedback(est.value)
        else:
            log.warning(
                "time offset unobservable at t=%.3f (marginal std %.3g s); estimate not fed back",
                epoch.t, est.std,
            )
        return diag

    def _output(self, epoch, source, diag):
        x = self.ekf.mean
        return EpochOutput(float(epoch.t), x[POS].copy(), x[VEL].copy(), self.ekf.external_td, source, diag)

    def run(self, epochs):
        outputs = []
        for epoch in epochs:
            if not self.initialized:
                if not epoch.has_gnss:
                    raise ColdStartError("first epoch must carry GNSS data")
                self.initialize(epoch)
            outputs.append(self.step(epoch))
        return outputs


def run_fegut(epochs, config: PipelineConfig | None = None, debug_path=None):
    pipeline = FeGutPipeline(config, debug_path)
    return pipeline.run(epochs), pipeline


def run_baseline_ekf(epochs, config: EkfConfig | None = None, cold_start_iterations=20, state_rows=None):
    """12-state EKF estimating the time offset as an ordinary state."""
    cfg = config or EkfConfig()
    state = None
    outputs = []
    for epoch in epochs:
        if state is None:
            if not epoch.has_gnss:
                raise ColdStartError("first epoch must carry GNSS data")
            state = initial_state(epoch.t, cold_start(epoch, cold_start_iterations), cfg, Mode.FULL)
        dt = epoch.t - state.t
        if dt > 0:
            state = ekf_predict(state, dt, cfg)
        if epoch.kind == EpochKind.UWB_ONLY:
            state, innov = ekf_partial_update(state, epoch, cfg)
        else:
            state, innov = ekf_update(state, epoch, cfg)
        if state_rows is not None:
            state_rows.append(state_trace_row(state, innov))
        outputs.append(
            EpochOutput(float(epoch.t), state.mean[POS].copy(), state.mean[VEL].copy(), float(state.mean[TD]), "ekf", {})
        )
    return outputs


TRACE_FIELDS = [
    "t", "source", "rx", "ry", "rz", "east", "north", "up", "vx", "vy", "vz",
    "td", "td_std", "fgo_cost", "fgo_iterations", "fgo_rx", "fgo_ry", "fgo_rz",
]


def write_trace(path, outputs, frame: LocalFrame):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_FIELDS)
        for o in outputs:
            enu = frame.to_enu(o.r)
            d = o.diagnostics
            fgo_r = d.get("fgo_r", (np.nan,) * 3)
            row = [o.t, o.source, *o.r, *enu, *o.v, o.td, d.get("td_std", np.nan),
                   d.get("fgo_cost", np.nan), d.get("fgo_iterations", 0), *fgo_r]
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def read_trace(path):
    """Trace rows back as :class:`EpochOutput` objects (diagnostics partially restored)."""
    outputs = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != TRACE_FIELDS:
            raise DatasetParseError("unexpected trace header", 1)
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(TRACE_FIELDS):
                raise DatasetParseError(f"expected {len(TRACE_FIELDS)} columns", lineno)
            try:
                vals = dict(zip(TRACE_FIELDS, row))
                diag = {"td_std": float(vals["td_std"]), "fgo_cost": float(vals["fgo_cost"]),
                        "fgo_iterations": int(vals["fgo_iterations"])}
                outputs.append(EpochOutput(
                    float(vals["t"]),
                    np.array([float(vals[k]) for k in ("rx", "ry", "rz")]),
                    np.array([float(vals[k]) for k in ("vx", "vy", "vz")]),
                    float(vals["td"]), vals["source"], diag,
                ))
            except ValueError as exc:
                raise DatasetParseError(str(exc), lineno) from None
    return outputs


__all__ = [
    "EpochOutput", "FeGutPipeline", "FeedbackMode", "PipelineConfig", "cold_start",
    "read_trace", "run_baseline_ekf", "run_fegut", "write_trace", "FegutError",
]
