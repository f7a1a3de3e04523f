"""WGS-84 coordinate handling, local-frame transforms, and the RTK correction model.

All functions are pure; the value types are immutable and safe to share.
Altitudes are ellipsoidal throughout (no geoid model).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

# WGS-84 ellipsoid
WGS84_A = 6378137.0
WGS84_F = 1.0 / 298.257223563
WGS84_B = WGS84_A * (1.0 - WGS84_F)
WGS84_E2 = WGS84_F * (2.0 - WGS84_F)  # first eccentricity squared

# Below this 3D separation, bearing/elevation is undefined (sensor resolution).
COINCIDENT_THRESHOLD_M = 1e-3

# RTK correction stream parameters: epochs at 1 Hz, stale after 2 s.
RTK_STALENESS_NS = 2_000_000_000


class GeodesyError(ValueError):
    """Invalid geodetic input."""


class DegenerateGeometryError(GeodesyError):
    """Endpoints too close for a line-of-sight solution."""


@dataclass(frozen=True)
class GeoFix:
    """Timestamped WGS-84 position with per-axis (E,N,U) 1-sigma uncertainty."""

    lat_deg: float
    lon_deg: float
    alt_m: float
    t_ns: int = 0
    sigma_enu_m: tuple[float, float, float] = (0.0, 0.0, 0.0)
    rtk_applied: bool = False

    def __post_init__(self) -> None:
        if not -90.0 <= self.lat_deg <= 90.0:
            raise GeodesyError(f"latitude {self.lat_deg} outside [-90, 90]")
        if not -180.0 < self.lon_deg <= 180.0:
            raise GeodesyError(f"longitude {self.lon_deg} outside (-180, 180]")
        if any(s < 0.0 for s in self.sigma_enu_m):
            raise GeodesyError(f"negative sigma in {self.sigma_enu_m}")


@dataclass(frozen=True)
class EcefPoint:
    x_m: float
    y_m: float
    z_m: float


@dataclass(frozen=True)
class EnuVector:
    e_m: float
    n_m: float
    u_m: float


@dataclass(frozen=True)
class LosAngles:
    """Line-of-sight angles: yaw clockwise from true north [0, 360), pitch
    above local horizontal [-90, 90]."""

    yaw_deg: float
    pitch_deg: float


def geodetic_to_ecef(fix: GeoFix) -> EcefPoint:
    """Closed-form WGS-84 geodetic to Earth-centered Earth-fixed conversion."""
    lat = math.radians(fix.lat_deg)
    lon = math.radians(fix.lon_deg)
    sin_lat = math.sin(lat)
    cos_lat = math.cos(lat)
    n = WGS84_A / math.sqrt(1.0 - WGS84_E2 * sin_lat * sin_lat)
    x = (n + fix.alt_m) * cos_lat * math.cos(lon)
    y = (n + fix.alt_m) * cos_lat * math.sin(lon)
    z = (n * (1.0 - WGS84_E2) + fix.alt_m) * sin_lat
    return EcefPoint(x, y, z)


def ecef_to_geodetic(p: EcefPoint) -> tuple[float, float, float]:
    """ECEF to (lat_deg, lon_deg, alt_m) via Bowring's method with refinement.

    Round-trip error against geodetic_to_ecef is sub-micrometer for
    |lat| <= 89.9 deg.
    """
    lon = math.atan2(p.y_m, p.x_m)
    rho = math.hypot(p.x_m, p.y_m)
    # Bowring initial reduced-latitude guess, then iterate the standard fix-point.
    lat = math.atan2(p.z_m, rho * (1.0 - WGS84_E2))
    alt = 0.0
    for _ in range(8):
        sin_lat = math.sin(lat)
        n = WGS84_A / math.sqrt(1.0 - WGS84_E2 * sin_lat * sin_lat)
        alt = rho / math.cos(lat) - n if abs(lat) < math.radians(89.999) else (
            p.z_m / sin_lat - n * (1.0 - WGS84_E2)
        )
        lat = math.atan2(p.z_m, rho * (1.0 - WGS84_E2 * n / (n + alt)))
    return math.degrees(lat), math.degrees(lon), alt


def _enu_rotation(origin: GeoFix) -> tuple[tuple[float, float, float], ...]:
    """Rows of the ECEF->ENU rotation matrix at the origin."""
    lat = math.radians(origin.lat_deg)
    lon = math.radians(origin.lon_deg)
    sl, cl = math.sin(lat), math.cos(lat)
    so, co = math.sin(lon), math.cos(lon)
    return (
        (-so, co, 0.0),
        (-sl * co, -sl * so, cl),
        (cl * co, cl * so, sl),
    )


def ecef_to_enu(p: EcefPoint, origin: GeoFix) -> EnuVector:
    """Rotate (p - ecef(origin)) into the origin's local east-north-up frame."""
    o = geodetic_to_ecef(origin)
    dx, dy, dz = p.x_m - o.x_m, p.y_m - o.y_m, p.z_m - o.z_m
    r = _enu_rotation(origin)
    return EnuVector(
        r[0][0] * dx + r[0][1] * dy + r[0][2] * dz,
        r[1][0] * dx + r[1][1] * dy + r[1][2] * dz,
        r[2][0] * dx + r[2][1] * dy + r[2][2] * dz,
    )


def enu_to_ecef(v: EnuVector, origin: GeoFix) -> EcefPoint:
    """Inverse of ecef_to_enu: local ENU offset back to an absolute ECEF point."""
    o = geodetic_to_ecef(origin)
    r = _enu_rotation(origin)  # transpose to go ENU->ECEF
    return EcefPoint(
        o.x_m + r[0][0] * v.e_m + r[1][0] * v.n_m + r[2][0] * v.u_m,
        o.y_m + r[0][1] * v.e_m + r[1][1] * v.n_m + r[2][1] * v.u_m,
        o.z_m + r[0][2] * v.e_m + r[1][2] * v.n_m + r[2][2] * v.u_m,
    )


def enu_offset_fix(origin: GeoFix, v: EnuVector, **overrides) -> GeoFix:
    """GeoFix displaced from origin by an ENU vector (timestamp preserved)."""
    lat, lon, alt = ecef_to_geodetic(enu_to_ecef(v, origin))
    base = replace(origin, lat_deg=lat, lon_deg=lon, alt_m=alt)
    return replace(base, **overrides) if overrides else base


def bearing_elevation(from_fix: GeoFix, to_fix: GeoFix) -> LosAngles:
    """Line-of-sight yaw (true-north, clockwise) and elevation from one fix to
    another, computed in the ENU frame anchored at ``from_fix``."""
    enu = ecef_to_enu(geodetic_to_ecef(to_fix), from_fix)
    d = math.sqrt(enu.e_m**2 + enu.n_m**2 + enu.u_m**2)
    if d <= COINCIDENT_THRESHOLD_M:
        raise DegenerateGeometryError(f"endpoints separated by {d:.2e} m")
    yaw = math.degrees(math.atan2(enu.e_m, enu.n_m)) % 360.0
    pitch = math.degrees(math.atan2(enu.u_m, math.hypot(enu.e_m, enu.n_m)))
    return LosAngles(yaw, pitch)


def distance_3d(a: GeoFix, b: GeoFix) -> float:
    """Euclidean separation in ECEF, meters."""
    pa = geodetic_to_ecef(a)
    pb = geodetic_to_ecef(b)
    return math.sqrt(
        (pa.x_m - pb.x_m) ** 2 + (pa.y_m - pb.y_m) ** 2 + (pa.z_m - pb.z_m) ** 2
    )


def apply_rtk(
    raw: GeoFix,
    correction: EnuVector,
    correction_t_ns: int,
    residual_sigma_enu_m: tuple[float, float, float] = (0.07, 0.07, 0.13),
    staleness_ns: int = RTK_STALENESS_NS,
) -> GeoFix:
    """Remove the correlated error component carried by an RTK correction.

    The corrected position is the raw fix shifted by -correction in its local
    ENU frame, with uncertainty collapsed to the configured residual sigma.
    A stale correction (epoch older than the staleness bound) leaves the fix
    unchanged with rtk_applied False; an already-corrected fix is returned
    as-is (idempotence).
    """
    if raw.rtk_applied:
        return raw
    if abs(raw.t_ns - correction_t_ns) > staleness_ns:
        return replace(raw, rtk_applied=False)
    shifted = enu_offset_fix(
        raw, EnuVector(-correction.e_m, -correction.n_m, -correction.u_m)
    )
    return replace(
        shifted, sigma_enu_m=tuple(residual_sigma_enu_m), rtk_applied=True
    )
