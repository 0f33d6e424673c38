"""Sliding-window factor graph with a single window-constant time offset.

Each window state holds the 11 time-varying quantities of one epoch; the time
offset is one shared scalar variable that every UWB factor connects to. The
window is solved by Levenberg-Marquardt on dense normal equations and the
oldest state is removed by Schur-complement marginalization, leaving a joint
Gaussian prior on the next state and the time offset.

Residual convention: every factor returns a whitened residual ``r(x)`` and its
Jacobian blocks ``dr/dx``; the optimiser minimises ``0.5 * sum |r|^2``.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import NamedTuple

import numpy as np
from scipy import linalg

from . import _kernels
from .ekf import EkfConfig
from .errors import ContractViolation, NumericalError, RankDeficiencyError
from .models import N_DYN, N_STATE, process_noise_cov, transition_matrix
from .scene import EpochMeasurements

log = logging.getLogger(__name__)

TD_KEY = "td"
_EMPTY = np.zeros((0, 3))


class FactorKind(str, Enum):
    PRIOR = "prior"
    PREDICTION = "prediction"
    GNSS = "gnss"
    UWB = "uwb"
    LINEAR = "linear"


def _var_dim(key):
    return 1 if key == TD_KEY else N_DYN


class Factor:
    kind: FactorKind
    keys: tuple

    def linearize(self, values):
        """Whitened residual and a list of Jacobian blocks, one per key."""
        raise NotImplementedError

    def cost(self, values):
        r, _ = self.linearize(values)
        return 0.5 * float(r @ r)


class PriorFactor(Factor):
    """Linear Gaussian prior ``sqrt_info @ (x - x_lin) + offset``.

    ``x_lin`` is frozen when the factor is created, so Jacobians of
    marginalized information stay at their first estimate.
    """

    kind = FactorKind.PRIOR

    def __init__(self, keys, x_lin, sqrt_info, offset=None):
        self.keys = tuple(keys)
        self.x_lin = np.asarray(x_lin, dtype=float)
        self.sqrt_info = np.atleast_2d(np.asarray(sqrt_info, dtype=float))
        self.offset = np.zeros(self.sqrt_info.shape[0]) if offset is None else np.asarray(offset, dtype=float)
        dims = [_var_dim(k) for k in self.keys]
        self._splits = np.cumsum(dims)[:-1]
        if self.sqrt_info.shape[1] != sum(dims) or len(self.x_lin) != sum(dims):
            raise ValueError("prior dimensions do not match its keys")

    @classmethod
    def from_covariance(cls, keys, mean, cov):
        info = np.linalg.inv(cov)
        sqrt_info = np.linalg.cholesky(0.5 * (info + info.T)).T
        return cls(keys, mean, sqrt_info)

    @property
    def information(self):
        return self.sqrt_info.T @ self.sqrt_info

    def linearize(self, values):
        x = np.concatenate([np.atleast_1d(values[k]) for k in self.keys])
        r = self.sqrt_info @ (x - self.x_lin) + self.offset
        return r, np.split(self.sqrt_info, self._splits, axis=1)


class PredictionFactor(Factor):
    """Constant-acceleration link between consecutive states, whitened by ``Q``."""

    kind = FactorKind.PREDICTION

    def __init__(self, key0, key1, dt, model: EkfConfig):
        self.keys = (key0, key1)
        self.dt = float(dt)
        self.F = transition_matrix(dt, N_DYN)
        Q = process_noise_cov(model.transition(dt, td_psd=0.0), N_DYN)
        self.whiten = linalg.solve_triangular(np.linalg.cholesky(Q), np.eye(N_DYN), lower=True)
        self._J0 = -self.whiten @ self.F

    def linearize(self, values):
        x0, x1 = values[self.keys[0]], values[self.keys[1]]
        r = self.whiten @ (x1 - self.F @ x0)
        return r, [self._J0, self.whiten]


class GnssFactor(Factor):
    """Pseudorange and Doppler rows of one epoch."""

    kind = FactorKind.GNSS

    def __init__(self, key, epoch: EpochMeasurements, model: EkfConfig):
        self.keys = (key,)
        self.sat_pos = epoch.sat_pos
        self.y = np.concatenate([epoch.pseudoranges, epoch.doppler])
        n = epoch.n_sats
        self.inv_sigma = np.concatenate(
            [np.full(n, 1.0 / model.noise.pseudorange), np.full(n, 1.0 / model.noise.doppler)]
        )

    def predict(self, values):
        x = np.append(values[self.keys[0]], 0.0)
        pred, H, _ = _kernels.active.measurement_jacobian(x, self.sat_pos, _EMPTY)
        return pred, H

    def innovation(self, values):
        return self.y - self.predict(values)[0]

    def linearize(self, values):
        pred, H = self.predict(values)
        w = self.inv_sigma[:, None]
        return (pred - self.y) * self.inv_sigma, [H[:, :N_DYN] * w]


class UwbFactor(Factor):
    """UWB ranges of one epoch; depends on that epoch's state and the shared offset."""

    kind = FactorKind.UWB

    def __init__(self, key, epoch: EpochMeasurements, model: EkfConfig):
        self.keys = (key, TD_KEY)
        self.anchors = epoch.anchor_pos
        self.y = epoch.uwb_ranges.copy()
        self.inv_sigma = 1.0 / model.noise.uwb

    def predict(self, values):
        x = np.append(values[self.keys[0]], values[TD_KEY])
        pred, H, _ = _kernels.active.measurement_jacobian(x, _EMPTY, self.anchors)
        return pred, H

    def innovation(self, values):
        return self.y - self.predict(values)[0]

    def linearize(self, values):
        pred, H = self.predict(values)
        s = self.inv_sigma
        return (pred - self.y) * s, [H[:, :N_DYN] * s, H[:, N_DYN:] * s]


class LinearFactor(Factor):
    """``sqrt_info @ (sum_i A_i x_i - z)``; used for linear test problems."""

    kind = FactorKind.LINEAR

    def __init__(self, keys, blocks, z, sqrt_info=None):
        self.keys = tuple(keys)
        self.blocks = [np.atleast_2d(np.asarray(b, dtype=float)) for b in blocks]
        self.z = np.atleast_1d(np.asarray(z, dtype=float))
        self.sqrt_info = np.eye(len(self.z)) if sqrt_info is None else np.atleast_2d(sqrt_info)

    def linearize(self, values):
        pred = sum(b @ np.atleast_1d(values[k]) for k, b in zip(self.keys, self.blocks))
        return self.sqrt_info @ (pred - self.z), [self.sqrt_info @ b for b in self.blocks]


@dataclass(frozen=True)
class SolverConfig:
    """Window size and Levenberg-Marquardt settings.

    With ``damping=False`` every step is an undamped Gauss-Newton step and is
    always accepted.
    """

    window: int = 10
    max_iterations: int = 25
    cost_tolerance: float = 1e-10
    step_tolerance: float = 1e-10
    gradient_tolerance: float = 1e-12
    lambda_init: float = 1e-4
    lambda_up: float = 10.0
    lambda_down: float = 10.0
    damping: bool = True
    marginalization_epsilon: float = 1e-9
    td_observability_ratio: float = 0.5

    def validate(self):
        if self.window < 2:
            raise ContractViolation("window size must be at least 2")
        if min(self.cost_tolerance, self.step_tolerance, self.gradient_tolerance) <= 0:
            raise ContractViolation("solver tolerances must be positive")
        return self


@dataclass
class SolveReport:
    iterations: int
    initial_cost: float
    final_cost: float
    converged: bool
    reason: str
    cost_history: list = field(default_factory=list)
    td: float = float("nan")
    td_std: float = float("nan")
    td_observable: bool = True
    rank_deficient: tuple = ()


class TdEstimate(NamedTuple):
    value: float
    std: float
    observable: bool


class SlidingWindowGraph:
    """Window of dynamic states plus one time-offset variable and their factors."""

    def __init__(self, config: SolverConfig, model: EkfConfig, debug_path=None):
        self.config = config.validate()
        self.model = model
        self.states: dict[int, np.ndarray] = {}
        self.times: dict[int, float] = {}
        self.td = 0.0
        self.factors: list[Factor] = []
        self.debug_path = debug_path
        self.last_report: SolveReport | None = None
        self.marginalization_flags: list[str] = []
        self._next_key = 0
        self._initial_prior = None
        self._initial_td_std = None
        self._pending_slide = None
        self._td_cov = None

    # construction -------------------------------------------------------
    def set_initial_prior(self, mean, cov):
        """Gaussian prior on the first state and the offset (12-element mean/cov)."""
        mean = np.asarray(mean, dtype=float)
        cov = np.asarray(cov, dtype=float)
        if mean.shape != (N_STATE,) or cov.shape != (N_STATE, N_STATE):
            raise ContractViolation("initial prior must be 12-dimensional")
        self._initial_prior = (mean, cov)
        self._initial_td_std = float(np.sqrt(cov[-1, -1]))
        self.td = float(mean[-1])

    @property
    def keys(self):
        return list(self.states)

    @property
    def size(self):
        return len(self.states)

    @property
    def n_variables(self):
        return N_DYN * len(self.states) + 1

    def add_epoch(self, epoch: EpochMeasurements, init):
        """Append a state initialised at ``init`` with its prediction and measurement factors."""
        if self._pending_slide is not None:
            raise ContractViolation("slide the window before adding epochs")
        init = np.asarray(init, dtype=float)[:N_DYN].copy()
        key = self._next_key
        if self.states:
            last = next(reversed(self.states))
            dt = epoch.t - self.times[last]
            if not dt > 0:
                raise ContractViolation(f"epoch at t={epoch.t} is not after the last window epoch")
            self.factors.append(PredictionFactor(last, key, dt, self.model))
        else:
            if self._initial_prior is None:
                raise ContractViolation("an initial prior is required before the first epoch")
            mean, cov = self._initial_prior
            self.factors.append(PriorFactor.from_covariance((key, TD_KEY), mean, cov))
            self._initial_prior = None
        self.states[key] = init
        self.times[key] = float(epoch.t)
        self._next_key += 1
        if epoch.n_sats:
            self.factors.append(GnssFactor(key, epoch, self.model))
        if epoch.n_anchors:
            self.factors.append(UwbFactor(key, epoch, self.model))
        return key

    def add_factor(self, factor: Factor):
        self.factors.append(factor)

    def add_state(self, t, init):
        """Append a bare state (no factors); for hand-built graphs."""
        key = self._next_key
        self.states[key] = np.asarray(init, dtype=float).copy()
        self.times[key] = float(t)
        self._next_key += 1
        return key

    # linear algebra -----------------------------------------------------
    def _values(self):
        vals = dict(self.states)
        vals[TD_KEY] = np.array([self.td])
        return vals

    def _layout(self, keys):
        offsets = {}
        pos = 0
        for k in keys:
            offsets[k] = pos
            pos += _var_dim(k)
        return offsets, pos

    def _system(self, values, factors, keys):
        offsets, n = self._layout(keys)
        rows = []
        blocks = []
        for f in factors:
            r, Js = f.linearize(values)
            rows.append(r)
            blocks.append(Js)
        m = sum(len(r) for r in rows)
        J = np.zeros((m, n))
        r_all = np.empty(m)
        i = 0
        for f, r, Js in zip(factors, rows, blocks):
            k = len(r)
            r_all[i : i + k] = r
            for key, Jb in zip(f.keys, Js):
                o = offsets[key]
                J[i : i + k, o : o + Jb.shape[1]] += Jb
            i += k
        return r_all, J

    def _cost(self, values):
        total = 0.0
        for f in self.factors:
            r, _ = f.linearize(values)
            total += float(r @ r)
        return 0.5 * total

    @staticmethod
    def _apply(values, keys, offsets, delta):
        new = {}
        for k in keys:
            o = offsets[k]
            new[k] = values[k] + delta[o : o + _var_dim(k)]
        return new

    # solving ------------------------------------------------------------
    def solve(self) -> SolveReport:
        """Minimise the window cost; updates the stored estimates in place.

        Raises
        ------
        RankDeficiencyError
            When a variable receives no information at all (zero column).
        NumericalError
            On non-finite residuals.
        """
        if not self.states:
            raise ContractViolation("graph has no states")
        if self._pending_slide is not None:
            raise ContractViolation("slide the window before solving")
        cfg = self.config
        keys = self.keys + [TD_KEY]
        offsets, n = self._layout(keys)
        values = self._values()
        r, J = self._system(values, self.factors, keys)
        if not np.all(np.isfinite(r)):
            raise NumericalError("non-finite residual at the initial estimate")
        cost = 0.5 * float(r @ r)
        history = [cost]
        initial = cost
        lam = cfg.lambda_init if cfg.damping else 0.0
        reason = "max_iterations"
        converged = False
        iterations = 0

        while iterations < cfg.max_iterations:
            H = J.T @ J
            g = J.T @ r
            self._check_rank(H, keys, offsets)
            if np.max(np.abs(g)) < cfg.gradient_tolerance:
                reason, converged = "gradient", True
                break
            iterations += 1
            accepted = False
            while True:
                A = H + lam * np.diag(np.diag(H)) if lam > 0 else H
                try:
                    delta = linalg.cho_solve(linalg.cho_factor(A), -g)
                except linalg.LinAlgError:
                    if not cfg.damping:
                        raise RankDeficiencyError("normal equations are singular", self._weak_columns(H, keys, offsets))
                    lam = max(lam * cfg.lambda_up, 1e-12)
                    if lam > 1e16:
                        break
                    continue
                cand = self._apply(values, keys, offsets, delta)
                r_new, J_new = self._system(cand, self.factors, keys)
                new_cost = 0.5 * float(r_new @ r_new)
                if not cfg.damping or (np.isfinite(new_cost) and new_cost <= cost):
                    accepted = True
                    break
                lam *= cfg.lambda_up
                if lam > 1e16:
                    break
            if not accepted:
                reason, converged = "no_progress", True
                break
            if not np.isfinite(new_cost):
                raise NumericalError("non-finite residual during optimisation")
            values, r, J = cand, r_new, J_new
            decrease = cost - new_cost
            cost = new_cost
            history.append(cost)
            if cfg.damping:
                lam /= cfg.lambda_down
            step = np.max(np.abs(delta) / (np.abs(np.concatenate([np.atleast_1d(values[k]) for k in keys])) + 1.0))
            if abs(decrease) <= cfg.cost_tolerance * max(cost, 1e-300) or cost < 1e-300:
                reason, converged = "cost", True
                break
            if step < cfg.step_tolerance:
                reason, converged = "step", True
                break

        for k in self.keys:
            self.states[k] = values[k]
        self.td = float(values[TD_KEY][0])

        H = J.T @ J
        td_var = self._td_variance(H, n)
        td_std = float(np.sqrt(td_var)) if td_var is not None else float("inf")
        observable = True
        if self._initial_td_std is not None:
            observable = td_std <= cfg.td_observability_ratio * self._initial_td_std
        report = SolveReport(
            iterations, initial, cost, converged, reason, history, self.td, td_std, observable,
            () if observable else (TD_KEY,),
        )
        self.last_report = report
        if self.debug_path is not None:
            self._dump(values, report)
        return report

    def _weak_columns(self, H, keys, offsets):
        diag = np.diag(H)
        scale = max(np.max(diag), 1.0)
        bad = []
        for k in keys:
            o = offsets[k]
            if np.any(diag[o : o + _var_dim(k)] <= 1e-14 * scale):
                bad.append(k)
        return bad

    def _check_rank(self, H, keys, offsets):
        bad = self._weak_columns(H, keys, offsets)
        if bad:
            raise RankDeficiencyError(f"no information on variables {bad}", bad)

    @staticmethod
    def _td_variance(H, n):
        e = np.zeros(n)
        e[-1] = 1.0
        try:
            return float(linalg.cho_solve(linalg.cho_factor(H), e)[-1])
        except linalg.LinAlgError:
            return None

    def current_td(self, strict=False) -> TdEstimate:
        """Shared offset estimate with its marginal standard deviation.

        With ``strict=True`` an unobservable offset raises
        :class:`RankDeficiencyError` instead of being flagged.
        """
        if self.last_report is None:
            raise ContractViolation("current_td requested before the first solve")
        rep = self.last_report
        if strict and not rep.td_observable:
            raise RankDeficiencyError(
                f"time offset unobservable: marginal std {rep.td_std:.3g} s barely below prior", (TD_KEY,)
            )
        return TdEstimate(rep.td, rep.td_std, rep.td_observable)

    # marginalization ----------------------------------------------------
    def marginalize_oldest(self) -> PriorFactor:
        """Schur-complement the oldest state into a prior on its neighbours."""
        if self._pending_slide is not None:
            raise ContractViolation("previous marginalization not yet slid")
        if len(self.states) < self.config.window:
            raise ContractViolation("marginalization requires a full window")
        oldest = self.keys[0]
        touching = [f for f in self.factors if oldest in f.keys]
        rest = [f for f in self.factors if oldest not in f.keys]
        keep = []
        for f in touching:
            for k in f.keys:
                if k != oldest and k not in keep:
                    keep.append(k)
        keep.sort(key=lambda k: (k == TD_KEY, k if k != TD_KEY else 0))
        keys = [oldest] + keep
        values = self._values()
        r, J = self._system(values, touching, keys)
        H = J.T @ J
        g = J.T @ r
        nm = N_DYN
        Hmm, Hmr, Hrr = H[:nm, :nm], H[:nm, nm:], H[nm:, nm:]
        gm, gr = g[:nm], g[nm:]
        try:
            c = linalg.cho_factor(Hmm)
            flags = []
        except linalg.LinAlgError:
            eps = self.config.marginalization_epsilon
            c = linalg.cho_factor(Hmm + eps * np.eye(nm))
            flags = ["regularized"]
            log.warning("marginalization block not invertible; regularised with %g I", eps)
        self.marginalization_flags = flags
        Lam = Hrr - Hmr.T @ linalg.cho_solve(c, Hmr)
        b = gr - Hmr.T @ linalg.cho_solve(c, gm)
        Lam = 0.5 * (Lam + Lam.T)
        w, V = np.linalg.eigh(Lam)
        keep_ev = w > 1e-12 * max(w.max(), 1e-300)
        w, V = w[keep_ev], V[:, keep_ev]
        sqrt_info = np.sqrt(w)[:, None] * V.T
        offset = (V.T @ b) / np.sqrt(w)
        x_lin = np.concatenate([np.atleast_1d(values[k]) for k in keep])
        prior = PriorFactor(keep, x_lin, sqrt_info, offset)
        self.factors = rest + [prior]
        self._pending_slide = oldest
        return prior

    def slide(self):
        """Drop the marginalized state from the window."""
        if self._pending_slide is None:
            raise ContractViolation("slide requires a completed marginalization")
        key = self._pending_slide
        del self.states[key]
        del self.times[key]
        self._pending_slide = None

    def prior_td_information(self):
        """Information on the offset held by the prior factors (for diagnostics)."""
        total = 0.0
        for f in self.factors:
            if isinstance(f, PriorFactor) and TD_KEY in f.keys:
                idx = sum(_var_dim(k) for k in f.keys[: f.keys.index(TD_KEY)])
                total += float(f.information[idx, idx])
        return total

    # debugging ----------------------------------------------------------
    def _dump(self, values, report):
        rec = {
            "t": self.times[self.keys[-1]],
            "cost_history": report.cost_history,
            "iterations": report.iterations,
            "td": report.td,
            "td_std": report.td_std,
            "factors": [
                {"kind": f.kind.value, "keys": [str(k) for k in f.keys], "cost": f.cost(values)}
                for f in self.factors
            ],
        }
        with open(self.debug_path, "a") as fh:
            fh.write(json.dumps(rec) + "\n")
