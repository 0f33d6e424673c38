"""WGS84 geodetic, ECEF and local ENU conversions.

All functions accept either a single coordinate or a stacked array whose last
axis holds the three components. Angles in the public API are degrees.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .errors import ConfigurationError, SingularGeometryError

WGS84_A = 6378137.0
WGS84_F = 1.0 / 298.257223563
WGS84_B = WGS84_A * (1.0 - WGS84_F)
WGS84_E2 = WGS84_F * (2.0 - WGS84_F)
WGS84_EP2 = WGS84_E2 / (1.0 - WGS84_E2)

SPEED_OF_LIGHT = 299792458.0
GM_EARTH = 3.986004418e14


class GeodeticCoord(NamedTuple):
    """Latitude/longitude in degrees, height in metres above the ellipsoid."""

    latitude: float
    longitude: float
    height: float

    def validate(self) -> "GeodeticCoord":
        if not (-90.0 <= self.latitude <= 90.0):
            raise ConfigurationError(f"latitude {self.latitude} outside [-90, 90]")
        if not (-180.0 <= self.longitude <= 180.0):
            raise ConfigurationError(f"longitude {self.longitude} outside [-180, 180]")
        if not np.isfinite(self.height):
            raise ConfigurationError("height must be finite")
        return self


def geodetic_to_ecef(lat_deg, lon_deg, height):
    """Closed-form WGS84 geodetic to ECEF conversion.

    Parameters
    ----------
    lat_deg, lon_deg : float or array_like
        Geodetic latitude and longitude [deg].
    height : float or array_like
        Ellipsoidal height [m].

    Returns
    -------
    ndarray, shape (..., 3)
        ECEF position [m].
    """
    lat = np.radians(np.asarray(lat_deg, dtype=float))
    lon = np.radians(np.asarray(lon_deg, dtype=float))
    h = np.asarray(height, dtype=float)
    sin_lat = np.sin(lat)
    cos_lat = np.cos(lat)
    n = WGS84_A / np.sqrt(1.0 - WGS84_E2 * sin_lat * sin_lat)
    x = (n + h) * cos_lat * np.cos(lon)
    y = (n + h) * cos_lat * np.sin(lon)
    z = (n * (1.0 - WGS84_E2) + h) * sin_lat
    return np.stack([x, y, z], axis=-1)


def geodetic_coord_to_ecef(g: GeodeticCoord) -> np.ndarray:
    g = GeodeticCoord(*g).validate()
    return geodetic_to_ecef(g.latitude, g.longitude, g.height)


def ecef_to_geodetic(ecef):
    """ECEF to geodetic via Bowring's formula plus one Newton step on latitude.

    Returns
    -------
    tuple of ndarray
        ``(lat_deg, lon_deg, height)``.

    Raises
    ------
    SingularGeometryError
        At the Earth's centre, where latitude is undefined.
    """
    e = np.asarray(ecef, dtype=float)
    x, y, z = e[..., 0], e[..., 1], e[..., 2]
    p = np.hypot(x, y)
    if np.any((p == 0.0) & (z == 0.0)):
        raise SingularGeometryError("geodetic coordinates undefined at the Earth's centre")

    lon = np.arctan2(y, x)
    theta = np.arctan2(z * WGS84_A, p * WGS84_B)
    st, ct = np.sin(theta), np.cos(theta)
    lat = np.arctan2(z + WGS84_EP2 * WGS84_B * st**3, p - WGS84_E2 * WGS84_A * ct**3)

    # Newton step on f(lat) = p sin - z cos - e2 N sin cos
    s, c = np.sin(lat), np.cos(lat)
    w = np.sqrt(1.0 - WGS84_E2 * s * s)
    f = p * s - z * c - WGS84_E2 * WGS84_A * s * c / w
    df = p * c + z * s - WGS84_E2 * WGS84_A * (
        (c * c - s * s) / w + WGS84_E2 * s * s * c * c / w**3
    )
    lat = lat - f / df

    s, c = np.sin(lat), np.cos(lat)
    h = p * c + z * s - WGS84_A * np.sqrt(1.0 - WGS84_E2 * s * s)
    return np.degrees(lat), np.degrees(lon), h


def enu_rotation(lat_deg: float, lon_deg: float) -> np.ndarray:
    """Rotation matrix whose rows are the east, north, up unit vectors in ECEF."""
    lat = np.radians(lat_deg)
    lon = np.radians(lon_deg)
    sl, cl = np.sin(lat), np.cos(lat)
    so, co = np.sin(lon), np.cos(lon)
    return np.array(
        [
            [-so, co, 0.0],
            [-sl * co, -sl * so, cl],
            [cl * co, cl * so, sl],
        ]
    )


class LocalFrame:
    """East-north-up tangent frame anchored at a geodetic origin."""

    def __init__(self, origin):
        self.origin = GeodeticCoord(*origin).validate()
        self.origin_ecef = geodetic_coord_to_ecef(self.origin)
        self.rotation = enu_rotation(self.origin.latitude, self.origin.longitude)

    def to_enu(self, ecef):
        return (np.asarray(ecef, dtype=float) - self.origin_ecef) @ self.rotation.T

    def to_ecef(self, enu):
        return np.asarray(enu, dtype=float) @ self.rotation + self.origin_ecef

    def vector_to_enu(self, vec):
        """Rotate a free vector (velocity, LOS, error) without translation."""
        return np.asarray(vec, dtype=float) @ self.rotation.T

    def vector_to_ecef(self, vec):
        return np.asarray(vec, dtype=float) @ self.rotation

    def __repr__(self):
        return f"LocalFrame(origin={tuple(self.origin)})"


def ecef_to_enu(ecef, origin):
    return LocalFrame(origin).to_enu(ecef)


def enu_to_ecef(enu, origin):
    return LocalFrame(origin).to_ecef(enu)


def elevation_azimuth(receiver_ecef, target_ecef):
    """Elevation and azimuth [deg] of ``target`` seen from ``receiver``."""
    receiver_ecef = np.asarray(receiver_ecef, dtype=float)
    lat, lon, _ = ecef_to_geodetic(receiver_ecef)
    rot = enu_rotation(float(lat), float(lon))
    d = (np.asarray(target_ecef, dtype=float) - receiver_ecef) @ rot.T
    horiz = np.hypot(d[..., 0], d[..., 1])
    el = np.degrees(np.arctan2(d[..., 2], horiz))
    az = np.degrees(np.arctan2(d[..., 0], d[..., 1])) % 360.0
    return el, az
