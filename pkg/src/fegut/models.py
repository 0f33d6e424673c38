"""State layout, constant-acceleration transition and GNSS/UWB measurement models.

The 12-element state is ``[r(3), v(3), a(3), clock_bias, clock_drift, td]``
with positions in ECEF metres, clock terms in range units and the time offset
in seconds. The first 11 elements are the time-varying (dynamic) part.

The per-row functions here are straightforward numpy and double as the
reference for the stacked kernel behind :func:`assemble_H`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import SingularGeometryError
from .scene import EpochMeasurements, NoiseSpec

POS = slice(0, 3)
VEL = slice(3, 6)
ACC = slice(6, 9)
CLOCK_BIAS = 9
CLOCK_DRIFT = 10
TD = 11
N_STATE = 12
N_DYN = 11

TD_LIMIT = 1.0
_MIN_RANGE = 1e-9


def make_state(r=(0, 0, 0), v=(0, 0, 0), a=(0, 0, 0), clock_bias=0.0, clock_drift=0.0, td=0.0):
    x = np.empty(N_STATE)
    x[POS] = r
    x[VEL] = v
    x[ACC] = a
    x[CLOCK_BIAS] = clock_bias
    x[CLOCK_DRIFT] = clock_drift
    x[TD] = td
    return x


def with_td(dyn, td):
    """Full state from an 11-element dynamic state and a time offset."""
    x = np.empty(N_STATE)
    x[:N_DYN] = dyn
    x[TD] = td
    return x


@dataclass(frozen=True)
class TransitionModel:
    """Discrete constant-acceleration model over ``dt`` seconds.

    ``jerk_psd`` [m^2/s^5] is the white-jerk density per axis, the clock
    densities follow the two-state model and ``td_psd`` [s^2/s] lets the time
    offset wander; it is zero when the offset is treated as a window constant.
    """

    dt: float
    jerk_psd: float = 0.1
    clock_bias_psd: float = 1e-3
    clock_drift_psd: float = 1e-4
    td_psd: float = 0.0


def transition_matrix(dt, dim=N_STATE):
    if dim not in (N_STATE, N_DYN):
        raise ValueError("dim must be 11 or 12")
    F = np.eye(dim)
    I3 = np.eye(3)
    F[POS, VEL] = I3 * dt
    F[POS, ACC] = 0.5 * I3 * dt * dt
    F[VEL, ACC] = I3 * dt
    F[CLOCK_BIAS, CLOCK_DRIFT] = dt
    return F


def predict_state(x, model: TransitionModel):
    """Propagate the mean: ``r + v dt + a dt^2/2``, ``v + a dt``, ``bias + drift dt``."""
    x = np.asarray(x, dtype=float)
    dt = model.dt
    out = x.copy()
    out[POS] = x[POS] + x[VEL] * dt + 0.5 * x[ACC] * dt * dt
    out[VEL] = x[VEL] + x[ACC] * dt
    out[CLOCK_BIAS] = x[CLOCK_BIAS] + x[CLOCK_DRIFT] * dt
    return out


def process_noise_cov(model: TransitionModel, dim=N_STATE):
    """Closed-form discretised process noise for the white-jerk and clock models."""
    dt = model.dt
    Q = np.zeros((dim, dim))
    q = model.jerk_psd
    block = q * np.array(
        [
            [dt**5 / 20.0, dt**4 / 8.0, dt**3 / 6.0],
            [dt**4 / 8.0, dt**3 / 3.0, dt**2 / 2.0],
            [dt**3 / 6.0, dt**2 / 2.0, dt],
        ]
    )
    for axis in range(3):
        idx = [axis, 3 + axis, 6 + axis]
        Q[np.ix_(idx, idx)] = block
    sb, sd = model.clock_bias_psd, model.clock_drift_psd
    Q[CLOCK_BIAS, CLOCK_BIAS] = sb * dt + sd * dt**3 / 3.0
    Q[CLOCK_BIAS, CLOCK_DRIFT] = Q[CLOCK_DRIFT, CLOCK_BIAS] = sd * dt**2 / 2.0
    Q[CLOCK_DRIFT, CLOCK_DRIFT] = sd * dt
    if dim == N_STATE:
        Q[TD, TD] = model.td_psd * dt
    return Q


def _unit_from(target, origin):
    d = np.asarray(target, dtype=float) - origin
    rho = np.linalg.norm(d)
    if rho < _MIN_RANGE:
        raise SingularGeometryError("range model evaluated at zero distance")
    return d / rho, rho


def pseudorange_model(x, sat_pos):
    """Predicted pseudorange ``|sat - r| + bias`` and its gradient over the 12 states."""
    x = np.asarray(x, dtype=float)
    los, rho = _unit_from(sat_pos, x[POS])
    grad = np.zeros(N_STATE)
    grad[POS] = -los
    grad[CLOCK_BIAS] = 1.0
    return rho + x[CLOCK_BIAS], grad


def doppler_model(x, sat_pos):
    """Predicted range rate ``-los . v + drift``.

    The gradient keeps only the velocity and drift entries; the dependence of
    the line of sight on position is left out (it scales with v/range).
    """
    x = np.asarray(x, dtype=float)
    los, _ = _unit_from(sat_pos, x[POS])
    grad = np.zeros(N_STATE)
    grad[VEL] = -los
    grad[CLOCK_DRIFT] = 1.0
    return -(los @ x[VEL]) + x[CLOCK_DRIFT], grad


def uwb_position(x):
    """Where the tag was when a UWB range stamped now was actually taken."""
    td = x[TD]
    return x[POS] - x[VEL] * td - 0.5 * x[ACC] * td * td


def uwb_model(x, anchor):
    """Predicted UWB range to ``anchor`` from the time-offset-compensated position."""
    x = np.asarray(x, dtype=float)
    td = x[TD]
    los, rho = _unit_from(anchor, uwb_position(x))
    hup = -los
    grad = np.zeros(N_STATE)
    grad[POS] = hup
    grad[VEL] = -hup * td
    grad[ACC] = -0.5 * hup * td * td
    grad[TD] = -(hup @ (x[VEL] + x[ACC] * td))
    return rho, grad


def assemble_H(x, epoch: EpochMeasurements):
    """Predicted measurement vector and Jacobian for an epoch.

    Rows are ordered pseudoranges, Doppler, UWB ranges; UWB-only epochs give
    just the UWB rows.

    Returns
    -------
    pred : ndarray, shape (2n + m,)
    H : ndarray, shape (2n + m, 12)
    """
    pred, H, ranges = _kernels.active.measurement_jacobian(
        np.asarray(x, dtype=float), epoch.sat_pos, epoch.anchor_pos
    )
    if ranges.size and not np.all(ranges >= _MIN_RANGE):
        raise SingularGeometryError("range model evaluated at zero distance")
    return pred, H


def measurement_variances(epoch: EpochMeasurements, noise: NoiseSpec):
    n, m = epoch.n_sats, epoch.n_anchors
    return np.concatenate(
        [np.full(n, noise.pseudorange**2), np.full(n, noise.doppler**2), np.full(m, noise.uwb**2)]
    )


def measurement_blocks(H, n_sats):
    """Split a stacked Jacobian into its named blocks (views)."""
    n = n_sats
    u = slice(2 * n, None)
    return {
        "HG": H[:n, POS],
        "HG_vel": H[n : 2 * n, VEL],
        "HUP": H[u, POS],
        "HUV": H[u, VEL],
        "HUA": H[u, ACC],
        "HUT": H[u, TD],
    }
