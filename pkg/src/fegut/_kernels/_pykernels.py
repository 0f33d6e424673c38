"""Pure numpy implementation of the hot measurement kernel.

Mirrors ``_ckernels.pyx`` operation for operation so that both backends
produce identical Jacobian block identities.
"""

import numpy as np

NAME = "python"


def measurement_jacobian(x, sat_pos, anchors):
    """Stacked predictions and Jacobian for one epoch.

    Parameters
    ----------
    x : ndarray, shape (12,)
        ``[r, v, a, clock_bias, clock_drift, td]``.
    sat_pos : ndarray, shape (n, 3)
    anchors : ndarray, shape (m, 3)

    Returns
    -------
    pred : ndarray, shape (2n + m,)
        Pseudoranges, Doppler range rates, UWB ranges.
    H : ndarray, shape (2n + m, 12)
    ranges : ndarray, shape (n + m,)
        Geometric ranges; callers reject zeros.
    """
    x = np.asarray(x, dtype=float)
    sat_pos = np.asarray(sat_pos, dtype=float).reshape(-1, 3)
    anchors = np.asarray(anchors, dtype=float).reshape(-1, 3)
    n = sat_pos.shape[0]
    m = anchors.shape[0]
    r = x[0:3]
    v = x[3:6]
    a = x[6:9]
    td = x[11]
    pred = np.empty(2 * n + m)
    H = np.zeros((2 * n + m, 12))
    ranges = np.empty(n + m)

    d = sat_pos - r
    rho = np.sqrt(d[:, 0] * d[:, 0] + d[:, 1] * d[:, 1] + d[:, 2] * d[:, 2])
    ranges[:n] = rho
    with np.errstate(divide="ignore", invalid="ignore"):
        hg = -d / rho[:, None]
    pred[:n] = rho + x[9]
    pred[n : 2 * n] = (hg[:, 0] * v[0] + hg[:, 1] * v[1] + hg[:, 2] * v[2]) + x[10]
    H[:n, 0:3] = hg
    H[:n, 9] = 1.0
    H[n : 2 * n, 3:6] = hg
    H[n : 2 * n, 10] = 1.0

    c = -0.5 * td * td
    back = r - v * td + c * a
    d = anchors - back
    rho = np.sqrt(d[:, 0] * d[:, 0] + d[:, 1] * d[:, 1] + d[:, 2] * d[:, 2])
    ranges[n:] = rho
    with np.errstate(divide="ignore", invalid="ignore"):
        hup = -d / rho[:, None]
    w = v + a * td
    k = 2 * n
    pred[k:] = rho
    H[k:, 0:3] = hup
    H[k:, 3:6] = -td * hup
    H[k:, 6:9] = c * hup
    H[k:, 11] = -(hup[:, 0] * w[0] + hup[:, 1] * w[1] + hup[:, 2] * w[2])
    return pred, H, ranges
