# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled measurement kernel; see ``_pykernels`` for the reference version."""

import numpy as np
from libc.math cimport sqrt

NAME = "cython"


def measurement_jacobian(x, sat_pos, anchors):
    cdef double[::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef double[:, ::1] sp = np.ascontiguousarray(sat_pos, dtype=np.float64).reshape(-1, 3)
    cdef double[:, ::1] an = np.ascontiguousarray(anchors, dtype=np.float64).reshape(-1, 3)
    cdef Py_ssize_t n = sp.shape[0]
    cdef Py_ssize_t m = an.shape[0]
    pred_arr = np.empty(2 * n + m)
    H_arr = np.zeros((2 * n + m, 12))
    ranges_arr = np.empty(n + m)
    cdef double[::1] pred = pred_arr
    cdef double[:, ::1] H = H_arr
    cdef double[::1] ranges = ranges_arr

    cdef double rx = xv[0], ry = xv[1], rz = xv[2]
    cdef double vx = xv[3], vy = xv[4], vz = xv[5]
    cdef double ax = xv[6], ay = xv[7], az = xv[8]
    cdef double bias = xv[9], drift = xv[10], td = xv[11]
    cdef double dx, dy, dz, rho, hx, hy, hz
    cdef Py_ssize_t i, j, k

    for i in range(n):
        dx = sp[i, 0] - rx
        dy = sp[i, 1] - ry
        dz = sp[i, 2] - rz
        rho = sqrt(dx * dx + dy * dy + dz * dz)
        ranges[i] = rho
        hx = -dx / rho
        hy = -dy / rho
        hz = -dz / rho
        pred[i] = rho + bias
        pred[n + i] = (hx * vx + hy * vy + hz * vz) + drift
        H[i, 0] = hx
        H[i, 1] = hy
        H[i, 2] = hz
        H[i, 9] = 1.0
        H[n + i, 3] = hx
        H[n + i, 4] = hy
        H[n + i, 5] = hz
        H[n + i, 10] = 1.0

    cdef double c = -0.5 * td * td
    cdef double bx = rx - vx * td + c * ax
    cdef double by = ry - vy * td + c * ay
    cdef double bz = rz - vz * td + c * az
    cdef double wx = vx + ax * td
    cdef double wy = vy + ay * td
    cdef double wz = vz + az * td
    for j in range(m):
        k = 2 * n + j
        dx = an[j, 0] - bx
        dy = an[j, 1] - by
        dz = an[j, 2] - bz
        rho = sqrt(dx * dx + dy * dy + dz * dz)
        ranges[n + j] = rho
        hx = -dx / rho
        hy = -dy / rho
        hz = -dz / rho
        pred[k] = rho
        H[k, 0] = hx
        H[k, 1] = hy
        H[k, 2] = hz
        H[k, 3] = -td * hx
        H[k, 4] = -td * hy
        H[k, 5] = -td * hz
        H[k, 6] = c * hx
        H[k, 7] = c * hy
        H[k, 8] = c * hz
        H[k, 11] = -(hx * wx + hy * wy + hz * wz)
    return pred_arr, H_arr, ranges_arr
