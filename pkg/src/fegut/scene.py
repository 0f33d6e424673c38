"""Simulated satellites, UWB anchors and receiver clock; measurement synthesis.

Measurements are generated with their own truth-side formulas rather than by
calling the estimator models, so the estimators are checked against an
independent route.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, DatasetParseError, TimeRangeError
from .geoframe import GM_EARTH, WGS84_A, LocalFrame, elevation_azimuth
from .trajectory import TruthTable

DATASET_FORMAT = "fegut-dataset/1"

# (azimuth, elevation) in degrees, as seen from the scenario origin at t=0
DEFAULT_SKY = (
    (0.0, 85.0),
    (30.0, 55.0),
    (150.0, 50.0),
    (270.0, 45.0),
    (60.0, 30.0),
    (200.0, 28.0),
    (320.0, 32.0),
    (110.0, 25.0),
)


class EpochKind(str, Enum):
    GNSS_AND_UWB = "gnss_uwb"
    UWB_ONLY = "uwb_only"


@dataclass
class EpochMeasurements:
    """Everything observed at one timestamp.

    GNSS arrays have length ``n`` (zero for UWB-only epochs), anchor arrays
    length ``m``.
    """

    t: float
    kind: EpochKind
    sat_ids: list = field(default_factory=list)
    sat_pos: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    sat_vel: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    pseudoranges: np.ndarray = field(default_factory=lambda: np.zeros(0))
    doppler: np.ndarray = field(default_factory=lambda: np.zeros(0))
    anchor_ids: list = field(default_factory=list)
    anchor_pos: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    uwb_ranges: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        self.kind = EpochKind(self.kind)
        self.sat_pos = np.asarray(self.sat_pos, dtype=float).reshape(-1, 3)
        self.sat_vel = np.asarray(self.sat_vel, dtype=float).reshape(-1, 3)
        self.pseudoranges = np.asarray(self.pseudoranges, dtype=float).reshape(-1)
        self.doppler = np.asarray(self.doppler, dtype=float).reshape(-1)
        self.anchor_pos = np.asarray(self.anchor_pos, dtype=float).reshape(-1, 3)
        self.uwb_ranges = np.asarray(self.uwb_ranges, dtype=float).reshape(-1)
        n = len(self.pseudoranges)
        if self.kind == EpochKind.UWB_ONLY and n:
            raise ConfigurationError("UWB-only epoch must not carry GNSS data")
        if not (len(self.sat_pos) == len(self.doppler) == n == len(self.sat_ids)):
            raise ConfigurationError("inconsistent GNSS array lengths")
        if not (len(self.anchor_pos) == len(self.uwb_ranges) == len(self.anchor_ids)):
            raise ConfigurationError("inconsistent UWB array lengths")

    @property
    def n_sats(self):
        return len(self.pseudoranges)

    @property
    def n_anchors(self):
        return len(self.uwb_ranges)

    @property
    def has_gnss(self):
        return self.kind == EpochKind.GNSS_AND_UWB

    def measurement_vector(self):
        """Stacked ``[pseudoranges, doppler, uwb ranges]``."""
        return np.concatenate([self.pseudoranges, self.doppler, self.uwb_ranges])

    def uwb_only(self) -> "EpochMeasurements":
        """A copy restricted to the UWB block."""
        return EpochMeasurements(
            self.t, EpochKind.UWB_ONLY,
            anchor_ids=list(self.anchor_ids), anchor_pos=self.anchor_pos.copy(),
            uwb_ranges=self.uwb_ranges.copy(),
        )

    def to_record(self):
        sats = [
            {"id": sid, "pos": p.tolist(), "vel": v.tolist(), "pseudorange": float(pr), "doppler": float(d)}
            for sid, p, v, pr, d in zip(self.sat_ids, self.sat_pos, self.sat_vel, self.pseudoranges, self.doppler)
        ]
        uwb = [
            {"id": aid, "anchor_pos": p.tolist(), "range": float(rg)}
            for aid, p, rg in zip(self.anchor_ids, self.anchor_pos, self.uwb_ranges)
        ]
        return {"t": float(self.t), "kind": self.kind.value, "sats": sats, "uwb": uwb}

    @classmethod
    def from_record(cls, rec):
        sats = rec["sats"]
        uwb = rec["uwb"]
        return cls(
            t=float(rec["t"]),
            kind=EpochKind(rec["kind"]),
            sat_ids=[s["id"] for s in sats],
            sat_pos=[s["pos"] for s in sats],
            sat_vel=[s["vel"] for s in sats],
            pseudoranges=[s["pseudorange"] for s in sats],
            doppler=[s["doppler"] for s in sats],
            anchor_ids=[u["id"] for u in uwb],
            anchor_pos=[u["anchor_pos"] for u in uwb],
            uwb_ranges=[u["range"] for u in uwb],
        )

    def __eq__(self, other):
        if not isinstance(other, EpochMeasurements):
            return NotImplemented
        return self.to_record() == other.to_record()


@dataclass(frozen=True)
class NoiseSpec:
    """Standard deviations of the white measurement noise."""

    pseudorange: float = 2.0
    doppler: float = 0.1
    uwb: float = 0.1
    seed: int = 0

    def validate(self, allow_zero=True):
        for name in ("pseudorange", "doppler", "uwb"):
            val = getattr(self, name)
            if val < 0 or (val == 0 and not allow_zero):
                raise ConfigurationError(f"noise sigma {name}={val} invalid")
        return self


@dataclass(frozen=True)
class ClockTruth:
    """Two-state receiver clock random walk, in range units.

    ``bias_psd`` [m^2/s] drives the bias directly, ``drift_psd`` [m^2/s^3]
    drives the drift.
    """

    bias0: float = 10.0
    drift0: float = 0.1
    bias_psd: float = 1e-3
    drift_psd: float = 1e-4

    def simulate(self, times, rng):
        times = np.asarray(times, dtype=float)
        bias = np.empty_like(times)
        drift = np.empty_like(times)
        bias[0], drift[0] = self.bias0, self.drift0
        for k in range(1, len(times)):
            dt = times[k] - times[k - 1]
            q = np.array(
                [
                    [self.bias_psd * dt + self.drift_psd * dt**3 / 3.0, self.drift_psd * dt**2 / 2.0],
                    [self.drift_psd * dt**2 / 2.0, self.drift_psd * dt],
                ]
            )
            noise = _correlated_normal(q, rng)
            bias[k] = bias[k - 1] + drift[k - 1] * dt + noise[0]
            drift[k] = drift[k - 1] + noise[1]
        return bias, drift


def _correlated_normal(cov, rng):
    z = rng.standard_normal(len(cov))
    if not np.any(cov):
        return np.zeros(len(cov))
    w, v = np.linalg.eigh(cov)
    return v @ (np.sqrt(np.clip(w, 0.0, None)) * z)


@dataclass(frozen=True)
class SatelliteOrbit:
    """Circular orbit: ``pos0`` at t=0 rotating about ``normal`` at ``rate`` rad/s."""

    sat_id: str
    pos0: np.ndarray
    normal: np.ndarray
    rate: float

    def state(self, t):
        t = np.asarray(t, dtype=float)[..., None]
        radius = np.linalg.norm(self.pos0)
        u = self.pos0 / radius
        w = np.cross(self.normal, u)
        ang = self.rate * t
        pos = radius * (np.cos(ang) * u + np.sin(ang) * w)
        vel = radius * self.rate * (-np.sin(ang) * u + np.cos(ang) * w)
        return pos, vel


class Constellation:
    """Deterministic set of circular MEO orbits producing satellite geometry."""

    def __init__(self, orbits: Sequence[SatelliteOrbit], elevation_mask=15.0):
        self.orbits = list(orbits)
        self.elevation_mask = float(elevation_mask)

    def states(self, t):
        pos = np.array([o.state(t)[0] for o in self.orbits])
        vel = np.array([o.state(t)[1] for o in self.orbits])
        return pos, vel

    def visible(self, t, receiver_ecef):
        """Satellites above the mask: ``(ids, pos, vel)``."""
        pos, vel = self.states(t)
        el, _ = elevation_azimuth(receiver_ecef, pos)
        keep = el >= self.elevation_mask
        ids = [o.sat_id for o, k in zip(self.orbits, keep) if k]
        return ids, pos[keep], vel[keep]


def build_constellation(origin, sky=DEFAULT_SKY, altitude=20200e3, elevation_mask=15.0) -> Constellation:
    """Place one satellite per ``(azimuth, elevation)`` pair as seen from ``origin``.

    Each satellite sits on a circular orbit of radius ``WGS84_A + altitude``
    and moves across the local sky with a heading perpendicular to its
    azimuth, so the geometry changes slowly over a run.
    """
    frame = LocalFrame(origin)
    o = frame.origin_ecef
    radius = WGS84_A + altitude
    rate = np.sqrt(GM_EARTH / radius**3)
    orbits = []
    for idx, (az_deg, el_deg) in enumerate(sky):
        az, el = np.radians(az_deg), np.radians(el_deg)
        los = frame.vector_to_ecef(np.array([np.cos(el) * np.sin(az), np.cos(el) * np.cos(az), np.sin(el)]))
        ol = o @ los
        slant = -ol + np.sqrt(ol * ol - o @ o + radius * radius)
        pos0 = o + slant * los
        u = pos0 / radius
        north = np.array([0.0, 0.0, 1.0]) - u[2] * u
        north /= np.linalg.norm(north)
        east = np.cross(north, u)
        heading = az + np.pi / 2.0
        motion = np.cos(heading) * north + np.sin(heading) * east
        normal = np.cross(u, motion)
        orbits.append(SatelliteOrbit(f"G{idx + 1:02d}", pos0, normal / np.linalg.norm(normal), rate))
    return Constellation(orbits, elevation_mask)


def pdop(receiver_ecef, sat_pos):
    los = np.asarray(sat_pos) - np.asarray(receiver_ecef)
    los /= np.linalg.norm(los, axis=1, keepdims=True)
    G = np.hstack([-los, np.ones((len(los), 1))])
    cov = np.linalg.inv(G.T @ G)
    return float(np.sqrt(np.trace(cov[:3, :3])))


@dataclass(frozen=True)
class AnchorSet:
    ids: tuple
    positions: np.ndarray

    def __len__(self):
        return len(self.ids)


def place_anchors(center, half_spacing=50.0, height=5.0, frame: LocalFrame | None = None) -> AnchorSet:
    """Four anchors on the corners of a square around ``center`` (ECEF).

    Offsets ``(+-half_spacing, +-half_spacing, height)`` are applied in
    ``frame`` (defaults to the tangent frame at ``center``).
    """
    if half_spacing <= 0:
        raise ConfigurationError("half_spacing must be positive")
    center = np.asarray(center, dtype=float)
    if frame is None:
        from .geoframe import ecef_to_geodetic

        lat, lon, h = ecef_to_geodetic(center)
        frame = LocalFrame((float(lat), float(lon), float(h)))
    s = half_spacing
    offsets = np.array([[-s, -s, height], [s, -s, height], [s, s, height], [-s, s, height]])
    positions = center + frame.vector_to_ecef(offsets)
    return AnchorSet(("U1", "U2", "U3", "U4"), positions)


@dataclass
class Dataset:
    header: dict
    epochs: list

    def __len__(self):
        return len(self.epochs)


def synthesize_dataset(
    table: TruthTable,
    constellation: Constellation,
    anchors: AnchorSet,
    clock: ClockTruth,
    noise: NoiseSpec,
    td: float,
    gnss_hz=1.0,
    uwb_hz=10.0,
    duration: float | None = None,
    metadata: dict | None = None,
) -> Dataset:
    """Sample noisy GNSS and time-lagged UWB measurements from the truth table.

    GNSS observables at epoch ``t`` use the truth at ``t``; UWB ranges stamped
    ``t`` use the truth at ``t - td``. Every ``uwb_hz / gnss_hz``-th epoch also
    carries GNSS data.
    """
    if td < 0:
        raise ConfigurationError("td must be non-negative")
    if gnss_hz <= 0 or uwb_hz < gnss_hz:
        raise ConfigurationError("need 0 < gnss_hz <= uwb_hz")
    ratio = uwb_hz / gnss_hz
    if abs(ratio - round(ratio)) > 1e-9:
        raise ConfigurationError("uwb_hz must be an integer multiple of gnss_hz")
    ratio = int(round(ratio))
    noise.validate()
    t_lo, t_hi = table.span
    if duration is None:
        duration = t_hi
    n_epochs = int(np.floor(duration * uwb_hz + 1e-9)) + 1
    times = np.arange(n_epochs) / uwb_hz
    if times[-1] > t_hi or times[0] - td < t_lo:
        raise TimeRangeError("measurement epochs exceed the truth table span")

    rng = np.random.default_rng(noise.seed)
    bias, drift = clock.simulate(times, rng)
    truth_now = table.sample(times)
    truth_lag = table.sample(times - td)

    epochs = []
    for k, t in enumerate(times):
        r_lag = truth_lag.r[k]
        d_uwb = anchors.positions - r_lag
        ranges = np.sqrt(np.sum(d_uwb * d_uwb, axis=1))
        uwb_noise = rng.standard_normal(len(anchors)) * noise.uwb
        common = dict(
            anchor_ids=list(anchors.ids),
            anchor_pos=anchors.positions.copy(),
            uwb_ranges=ranges + uwb_noise,
        )
        if k % ratio:
            epochs.append(EpochMeasurements(float(t), EpochKind.UWB_ONLY, **common))
            continue
        r, v = truth_now.r[k], truth_now.v[k]
        ids, sp, sv = constellation.visible(t, r)
        if len(ids) < 4:
            raise ConfigurationError(f"only {len(ids)} satellites above the mask at t={t}")
        d = sp - r
        rho = np.sqrt(np.sum(d * d, axis=1))
        los = d / rho[:, None]
        pr = rho + bias[k] + rng.standard_normal(len(ids)) * noise.pseudorange
        dop = -(los @ v) + drift[k] + rng.standard_normal(len(ids)) * noise.doppler
        epochs.append(
            EpochMeasurements(
                float(t), EpochKind.GNSS_AND_UWB, sat_ids=ids, sat_pos=sp, sat_vel=sv,
                pseudoranges=pr, doppler=dop, **common,
            )
        )

    header = {
        "type": "header",
        "format": DATASET_FORMAT,
        "seed": int(noise.seed),
        "td_truth": float(td),
        "gnss_hz": float(gnss_hz),
        "uwb_hz": float(uwb_hz),
        "n_epochs": len(epochs),
        "origin": list(table.origin),
        "anchors": [{"id": i, "pos": p.tolist()} for i, p in zip(anchors.ids, anchors.positions)],
        "clock": {"bias": bias.tolist(), "drift": drift.tolist()},
    }
    if metadata:
        header.update(metadata)
    return Dataset(header, epochs)


def write_dataset(path, dataset: Dataset):
    header = dict(dataset.header)
    header["n_epochs"] = len(dataset.epochs)
    with open(path, "w") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for ep in dataset.epochs:
            fh.write(json.dumps(ep.to_record(), sort_keys=True) + "\n")


def read_dataset(path) -> Dataset:
    header = None
    epochs = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetParseError(f"invalid JSON ({exc.msg})", lineno) from None
            if header is None:
                if not isinstance(rec, dict) or rec.get("type") != "header":
                    raise DatasetParseError("first record must be the dataset header", lineno)
                if rec.get("format") != DATASET_FORMAT:
                    raise DatasetParseError(f"unsupported format {rec.get('format')!r}", lineno)
                header = rec
                continue
            try:
                epochs.append(EpochMeasurements.from_record(rec))
            except (KeyError, TypeError, ValueError) as exc:
                raise DatasetParseError(f"malformed epoch record: {exc!r}", lineno) from None
    if header is None:
        raise DatasetParseError("empty dataset file")
    expected = header.get("n_epochs")
    if expected is not None and expected != len(epochs):
        raise DatasetParseError(f"truncated dataset: header announces {expected} epochs, found {len(epochs)}")
    return Dataset(header, epochs)
