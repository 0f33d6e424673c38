"""Ground-truth motion: constant-speed lemniscate and circle lookup tables."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from enum import Enum
from typing import NamedTuple

import numpy as np
from scipy.integrate import solve_ivp

from .errors import ConfigurationError, DatasetParseError, TimeRangeError
from .geoframe import GeodeticCoord, LocalFrame

DEFAULT_ORIGIN = GeodeticCoord(39.904987, 116.405289, 60.0352)


class Shape(str, Enum):
    LEMNISCATE = "lemniscate"
    CIRCLE = "circle"


@dataclass(frozen=True)
class TrajectorySpec:
    """Parameters of a planar constant-speed trajectory.

    ``origin`` is the western apex of the lemniscate, or the western-most
    point of the circle. ``lead_time`` extends the table before t=0 so that
    time-lagged sensors can be sampled from the first epoch on.
    """

    shape: Shape = Shape.LEMNISCATE
    origin: GeodeticCoord = DEFAULT_ORIGIN
    horizontal_extent: float = 200.0
    radius: float = 100.0
    average_speed: float = 5.0
    duration: float = 240.0
    table_rate: float = 1000.0
    lead_time: float = 1.0

    def validate(self) -> "TrajectorySpec":
        try:
            shape = Shape(self.shape)
        except ValueError:
            raise ConfigurationError(f"unknown trajectory shape {self.shape!r}") from None
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "origin", GeodeticCoord(*self.origin).validate())
        if self.duration <= 0:
            raise ConfigurationError("duration must be positive")
        if self.average_speed <= 0:
            raise ConfigurationError("average_speed must be positive")
        if self.table_rate < 100:
            raise ConfigurationError("table_rate must be at least 100 Hz")
        if self.horizontal_extent <= 0 or self.radius <= 0:
            raise ConfigurationError("trajectory size must be positive")
        if self.lead_time < 0:
            raise ConfigurationError("lead_time must be non-negative")
        return self

    @property
    def center_enu(self) -> np.ndarray:
        """Geometric centre of the path in the origin's ENU frame."""
        half = self.horizontal_extent / 2.0 if self.shape == Shape.LEMNISCATE else self.radius
        return np.array([half, 0.0, 0.0])


class MotionSample(NamedTuple):
    t: float
    r: np.ndarray
    v: np.ndarray
    a: np.ndarray


@dataclass
class TruthTable:
    """Dense, uniformly sampled ECEF kinematics.

    Sampling between grid points uses cubic Hermite interpolation: position
    with the stored velocity as slope, velocity with the stored acceleration
    as slope, and linear interpolation for acceleration.
    """

    times: np.ndarray
    positions: np.ndarray
    velocities: np.ndarray
    accelerations: np.ndarray
    origin: GeodeticCoord = DEFAULT_ORIGIN
    frame: LocalFrame = field(init=False, repr=False)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.positions = np.asarray(self.positions, dtype=float)
        self.velocities = np.asarray(self.velocities, dtype=float)
        self.accelerations = np.asarray(self.accelerations, dtype=float)
        n = len(self.times)
        if n < 2 or np.any(np.diff(self.times) <= 0):
            raise ConfigurationError("truth table timestamps must be strictly increasing")
        for arr in (self.positions, self.velocities, self.accelerations):
            if arr.shape != (n, 3):
                raise ConfigurationError("truth table arrays must have shape (n, 3)")
        self.origin = GeodeticCoord(*self.origin)
        self.frame = LocalFrame(self.origin)

    @property
    def span(self):
        return float(self.times[0]), float(self.times[-1])

    def __len__(self):
        return len(self.times)

    def _locate(self, t):
        t = np.asarray(t, dtype=float)
        t0, t1 = self.span
        if np.any(t < t0) or np.any(t > t1):
            raise TimeRangeError(f"time outside truth table span [{t0}, {t1}]")
        idx = np.searchsorted(self.times, t, side="right") - 1
        idx = np.clip(idx, 0, len(self.times) - 2)
        h = self.times[idx + 1] - self.times[idx]
        u = (t - self.times[idx]) / h
        return idx, h, u

    def sample(self, t):
        """Interpolated position, velocity and acceleration at ``t`` (scalar or array)."""
        scalar = np.ndim(t) == 0
        idx, h, u = self._locate(np.atleast_1d(t))
        u = u[:, None]
        h = h[:, None]
        u2 = u * u
        u3 = u2 * u
        h00 = 2 * u3 - 3 * u2 + 1
        h10 = u3 - 2 * u2 + u
        h01 = -2 * u3 + 3 * u2
        h11 = u3 - u2
        p0, p1 = self.positions[idx], self.positions[idx + 1]
        v0, v1 = self.velocities[idx], self.velocities[idx + 1]
        a0, a1 = self.accelerations[idx], self.accelerations[idx + 1]
        r = h00 * p0 + h10 * h * v0 + h01 * p1 + h11 * h * v1
        v = h00 * v0 + h10 * h * a0 + h01 * v1 + h11 * h * a1
        a = (1 - u) * a0 + u * a1
        if scalar:
            return MotionSample(float(np.asarray(t)), r[0], v[0], a[0])
        return MotionSample(np.asarray(t, dtype=float), r, v, a)

    def to_csv(self, path):
        data = np.column_stack([self.times, self.positions, self.velocities, self.accelerations])
        with open(path, "w", newline="") as fh:
            fh.write(f"# origin {self.origin.latitude!r} {self.origin.longitude!r} {self.origin.height!r}\n")
            fh.write("t,rx,ry,rz,vx,vy,vz,ax,ay,az\n")
            np.savetxt(fh, data, delimiter=",", fmt="%.17g")

    @classmethod
    def from_csv(cls, path):
        origin = DEFAULT_ORIGIN
        rows = []
        with open(path, newline="") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                if line.startswith("# origin"):
                    try:
                        origin = GeodeticCoord(*(float(v) for v in line.split()[2:5]))
                    except (TypeError, ValueError) as exc:
                        raise DatasetParseError(f"bad origin header: {exc}", lineno) from None
                    continue
                if line.startswith("#") or line.startswith("t,"):
                    continue
                parts = next(csv.reader([line]))
                if len(parts) != 10:
                    raise DatasetParseError(f"expected 10 columns, got {len(parts)}", lineno)
                try:
                    rows.append([float(p) for p in parts])
                except ValueError as exc:
                    raise DatasetParseError(str(exc), lineno) from None
        if len(rows) < 2:
            raise DatasetParseError("truth table needs at least two rows")
        data = np.asarray(rows)
        return cls(data[:, 0], data[:, 1:4], data[:, 4:7], data[:, 7:10], origin)


def sample_truth(table: TruthTable, t) -> MotionSample:
    return table.sample(t)


def _lemniscate(theta, a):
    s, c = np.sin(theta), np.cos(theta)
    d = 1.0 + s * s
    x = a * c / d
    y = a * s * c / d
    dx = a * (s * s - 3.0) * s / d**2
    dy = a * (1.0 - 3.0 * s * s) / d**2
    ddx = a * (-(s**4) + 12.0 * s * s - 3.0) * c / d**3
    ddy = -a * (14.0 * np.sin(2 * theta) + 3.0 * np.sin(4 * theta)) / (4.0 * d**3)
    return (
        np.stack([x, y], axis=-1),
        np.stack([dx, dy], axis=-1),
        np.stack([ddx, ddy], axis=-1),
    )


def _lemniscate_angles(times, a, speed):
    """Curve parameter theta(t) for constant-speed travel, starting at the western apex."""

    def rate(_t, th):
        _, d1, _ = _lemniscate(th[0], a)
        return [speed / np.hypot(d1[0], d1[1])]

    theta = np.empty_like(times)
    kw = dict(method="DOP853", rtol=1e-12, atol=1e-13)
    fwd = times >= 0
    if np.any(fwd):
        sol = solve_ivp(rate, (0.0, times[fwd][-1]), [np.pi], t_eval=times[fwd], **kw)
        theta[fwd] = sol.y[0]
    if np.any(~fwd):
        back = times[~fwd][::-1]
        sol = solve_ivp(rate, (0.0, back[-1]), [np.pi], t_eval=back, **kw)
        theta[~fwd] = sol.y[0][::-1]
    return theta


def _planar_motion(spec: TrajectorySpec, times):
    """Planar ENU kinematics (x east, y north) relative to the origin."""
    s = spec.average_speed
    if spec.shape == Shape.LEMNISCATE:
        a = spec.horizontal_extent / 2.0
        theta = _lemniscate_angles(times, a, s)
        p, d1, d2 = _lemniscate(theta, a)
        norm = np.hypot(d1[:, 0], d1[:, 1])[:, None]
        theta_dot = s / norm
        theta_ddot = -s * s * np.sum(d1 * d2, axis=1, keepdims=True) / norm**4
        pos = p + np.array([a, 0.0])
        vel = d1 * theta_dot
        acc = d2 * theta_dot**2 + d1 * theta_ddot
        return pos, vel, acc
    radius = spec.radius
    w = s / radius
    phi = np.pi + w * times
    unit = np.stack([np.cos(phi), np.sin(phi)], axis=-1)
    tang = np.stack([-np.sin(phi), np.cos(phi)], axis=-1)
    pos = radius * unit + np.array([radius, 0.0])
    return pos, s * tang, -s * w * unit


def build_truth_table(spec: TrajectorySpec) -> TruthTable:
    """Tabulate the trajectory on a uniform grid and convert it to ECEF."""
    spec = spec.validate()
    dt = 1.0 / spec.table_rate
    n_lead = int(round(spec.lead_time * spec.table_rate))
    n_main = int(round(spec.duration * spec.table_rate))
    times = np.arange(-n_lead, n_main + 1) * dt
    pos2, vel2, acc2 = _planar_motion(spec, times)
    zeros = np.zeros((len(times), 1))
    frame = LocalFrame(spec.origin)
    positions = frame.to_ecef(np.hstack([pos2, zeros]))
    velocities = frame.vector_to_ecef(np.hstack([vel2, zeros]))
    accelerations = frame.vector_to_ecef(np.hstack([acc2, zeros]))
    return TruthTable(times, positions, velocities, accelerations, spec.origin)


def static_truth_table(origin=DEFAULT_ORIGIN, duration=60.0, table_rate=100.0, lead_time=1.0, enu=(0.0, 0.0, 0.0)):
    """A motionless receiver; used to exercise time-offset unobservability."""
    frame = LocalFrame(origin)
    times = np.arange(-round(lead_time * table_rate), round(duration * table_rate) + 1) / table_rate
    pos = np.tile(frame.to_ecef(np.asarray(enu, dtype=float)), (len(times), 1))
    zeros = np.zeros_like(pos)
    return TruthTable(times, pos, zeros, zeros.copy(), origin)
