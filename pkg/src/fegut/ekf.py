"""Extended Kalman filters for tightly coupled GNSS/UWB positioning.

Two modes share one implementation:

* ``Mode.FULL`` estimates all 12 states, including the time offset.
* ``Mode.NAIVE`` carries only the 11 dynamic states; UWB ranges are
  compensated with an externally supplied time offset.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np
from scipy import linalg
from scipy.stats import chi2

from .errors import ContractViolation, NumericalError
from .models import (
    N_DYN,
    N_STATE,
    TD,
    TransitionModel,
    assemble_H,
    measurement_variances,
    process_noise_cov,
    transition_matrix,
    with_td,
)
from .scene import EpochKind, EpochMeasurements, NoiseSpec


class Mode(str, Enum):
    FULL = "tdtssm12"
    NAIVE = "naive11"


@dataclass(frozen=True)
class EkfConfig:
    """Filter tuning. Variances in ``p0_*`` are the initial covariance diagonal."""

    p0_position: float = 100.0
    p0_velocity: float = 1.0
    p0_acceleration: float = 0.1
    p0_clock_bias: float = 100.0
    p0_clock_drift: float = 1.0
    p0_td: float = 1e-2
    jerk_psd: float = 0.1
    clock_bias_psd: float = 1e-3
    clock_drift_psd: float = 1e-4
    td_psd: float = 1e-10
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    gate: bool = False
    gate_probability: float = 0.999

    def initial_covariance(self, mode=Mode.FULL):
        diag = np.concatenate(
            [
                np.full(3, self.p0_position),
                np.full(3, self.p0_velocity),
                np.full(3, self.p0_acceleration),
                [self.p0_clock_bias, self.p0_clock_drift, self.p0_td],
            ]
        )
        if np.any(diag <= 0):
            raise ContractViolation("initial covariance must be positive definite")
        return np.diag(diag if mode == Mode.FULL else diag[:N_DYN])

    def transition(self, dt, td_psd=None):
        return TransitionModel(
            dt,
            jerk_psd=self.jerk_psd,
            clock_bias_psd=self.clock_bias_psd,
            clock_drift_psd=self.clock_drift_psd,
            td_psd=self.td_psd if td_psd is None else td_psd,
        )


@dataclass(frozen=True)
class FilterState:
    t: float
    mean: np.ndarray
    cov: np.ndarray
    mode: Mode = Mode.FULL
    external_td: float = 0.0

    @property
    def dim(self):
        return N_STATE if self.mode == Mode.FULL else N_DYN

    @property
    def td(self):
        return float(self.mean[TD]) if self.mode == Mode.FULL else self.external_td

    def full_state(self):
        """12-element state; in naive mode the time offset is the external one."""
        if self.mode == Mode.FULL:
            return self.mean.copy()
        return with_td(self.mean, self.external_td)


@dataclass
class Innovation:
    residual: np.ndarray
    S: np.ndarray
    nis: float
    norms: dict
    accepted: bool = True


def initial_state(t, x0, cfg: EkfConfig, mode=Mode.FULL, external_td=0.0):
    x0 = np.asarray(x0, dtype=float)
    mean = x0[:N_DYN].copy() if mode == Mode.NAIVE else with_td(x0[:N_DYN], x0[TD] if len(x0) > N_DYN else 0.0)
    return FilterState(float(t), mean, cfg.initial_covariance(mode), mode, float(external_td))


def ekf_predict(state: FilterState, dt, cfg: EkfConfig) -> FilterState:
    """Mean ``F x`` and covariance ``F P F^T + Q`` over ``dt`` seconds."""
    if not dt > 0:
        raise ContractViolation(f"prediction interval must be positive, got {dt}")
    dim = state.dim
    F = transition_matrix(dt, dim)
    Q = process_noise_cov(cfg.transition(dt), dim)
    P = F @ state.cov @ F.T + Q
    return replace(state, t=state.t + dt, mean=F @ state.mean, cov=0.5 * (P + P.T))


def _linearize(state: FilterState, x, epoch):
    if state.mode == Mode.FULL:
        return assemble_H(x, epoch)
    pred, H = assemble_H(with_td(x, state.external_td), epoch)
    return pred, H[:, :N_DYN]


def _block_norms(residual, epoch):
    n = epoch.n_sats
    return {
        "pseudorange": float(np.linalg.norm(residual[:n])),
        "doppler": float(np.linalg.norm(residual[n : 2 * n])),
        "uwb": float(np.linalg.norm(residual[2 * n :])),
    }


def ekf_update(state: FilterState, epoch: EpochMeasurements, cfg: EkfConfig, iterations=1):
    """Measurement update; ``iterations > 1`` gives the iterated EKF.

    Uses the Joseph-form covariance update. Returns ``(new_state, Innovation)``.

    Raises
    ------
    NumericalError
        If the innovation covariance is not positive definite.
    """
    y = epoch.measurement_vector()
    if y.size == 0:
        raise ContractViolation("epoch carries no measurements")
    R = np.diag(measurement_variances(epoch, cfg.noise))
    P = state.cov
    x_prior = state.mean
    x = x_prior
    for _ in range(max(1, iterations)):
        pred, H = _linearize(state, x, epoch)
        # iterated form: linearise at x, expand about the prior mean
        residual = y - pred - H @ (x_prior - x)
        S = H @ P @ H.T + R
        try:
            c = linalg.cho_factor(S)
        except linalg.LinAlgError:
            raise NumericalError("innovation covariance is not positive definite") from None
        K = linalg.cho_solve(c, H @ P).T
        x = x_prior + K @ residual

    innovation = y - _linearize(state, x_prior, epoch)[0]
    nis = float(residual @ linalg.cho_solve(c, residual))
    info = Innovation(innovation, S, nis, _block_norms(innovation, epoch))
    if cfg.gate and nis > chi2.ppf(cfg.gate_probability, len(y)):
        info.accepted = False
        return state, info
    if not np.all(np.isfinite(x)):
        raise NumericalError("non-finite state after update")

    I_KH = np.eye(state.dim) - K @ H
    P_new = I_KH @ P @ I_KH.T + K @ R @ K.T
    return replace(state, mean=x, cov=0.5 * (P_new + P_new.T)), info


def ekf_partial_update(state: FilterState, epoch: EpochMeasurements, cfg: EkfConfig):
    """Update with a UWB-only epoch (measurement vector reduced to the UWB rows)."""
    if epoch.kind != EpochKind.UWB_ONLY:
        raise ContractViolation("partial update requires a UWB-only epoch")
    return ekf_update(state, epoch, cfg)


def set_external_td(state: FilterState, td) -> FilterState:
    if state.mode != Mode.NAIVE:
        raise ContractViolation("external time offset only applies to the naive filter")
    return replace(state, external_td=float(td))


def state_trace_row(state: FilterState, innovation: Innovation | None = None):
    row = {"t": state.t}
    x = state.full_state()
    names = ["rx", "ry", "rz", "vx", "vy", "vz", "ax", "ay", "az", "clock_bias", "clock_drift", "td"]
    for name, val in zip(names, x):
        row[name] = float(val)
    diag = np.diag(state.cov)
    for name, val in zip(names, diag):
        row[f"var_{name}"] = float(val)
    if state.mode == Mode.NAIVE:
        row["var_td"] = 0.0
    norms = innovation.norms if innovation is not None else {}
    for key in ("pseudorange", "doppler", "uwb"):
        row[f"innov_{key}"] = norms.get(key, 0.0)
    return row


def write_state_trace(path, rows):
    rows = list(rows)
    if not rows:
        raise ValueError("no rows to write")
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        for row in rows:
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
