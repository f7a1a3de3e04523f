"""Route replay and sensor synthesis.

A Route is the ground truth; the GNSS and IMU sensor models corrupt it with
seeded noise. GNSS error is a Gauss-Markov correlated component plus white
residual noise, so that an RTK correction stream has a well-defined removable
part and the corrected stream lands at the configured residual accuracy.
"""

from __future__ import annotations

import bisect
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

import numpy as np

from .geodesy import (
    EnuVector,
    GeoFix,
    apply_rtk,
    ecef_to_enu,
    enu_offset_fix,
    geodetic_to_ecef,
)
from .sim import NS_PER_S


class RouteError(ValueError):
    """Malformed or inconsistent route document."""


@dataclass(frozen=True)
class Waypoint:
    t_s: float
    lat_deg: float
    lon_deg: float
    alt_m: float


@dataclass(frozen=True)
class TruePose:
    position: GeoFix  # zero-sigma ground truth
    heading_deg: float
    speed_mps: float


@dataclass(frozen=True)
class SensorConfig:
    gnss_rate_hz: float = 10.0
    imu_rate_hz: float = 50.0
    gnss_raw_sigma_enu_m: tuple[float, float, float] = (1.2, 1.2, 2.0)
    gnss_gm_tau_s: float = 60.0
    rtk_residual_sigma_enu_m: tuple[float, float, float] = (0.07, 0.07, 0.13)
    rtk_epoch_interval_s: float = 1.0
    rtk_staleness_s: float = 2.0
    imu_sigma_yaw_deg: float = 0.7
    imu_sigma_pitch_deg: float = 0.5
    seed: int = 0

    def __post_init__(self) -> None:
        if self.gnss_rate_hz <= 0 or self.imu_rate_hz <= 0:
            raise ValueError("sensor rates must be positive")
        if any(s < 0 for s in self.gnss_raw_sigma_enu_m) or any(
            s < 0 for s in self.rtk_residual_sigma_enu_m
        ):
            raise ValueError("sigmas must be non-negative")


class Route:
    """Ordered waypoints with linear-in-ENU interpolation between them."""

    def __init__(self, waypoints: list[Waypoint]):
        if len(waypoints) < 2:
            raise RouteError(f"route needs >= 2 waypoints, got {len(waypoints)}")
        for i in range(1, len(waypoints)):
            if waypoints[i].t_s <= waypoints[i - 1].t_s:
                raise RouteError(
                    f"waypoint {i}: t_s {waypoints[i].t_s} not after "
                    f"{waypoints[i - 1].t_s}"
                )
        self.waypoints = waypoints
        self.origin = GeoFix(
            waypoints[0].lat_deg, waypoints[0].lon_deg, waypoints[0].alt_m
        )
        self._times = [w.t_s for w in waypoints]
        self._enu = [
            ecef_to_enu(
                geodetic_to_ecef(GeoFix(w.lat_deg, w.lon_deg, w.alt_m)), self.origin
            )
            for w in waypoints
        ]

    @property
    def t_start_s(self) -> float:
        return self.waypoints[0].t_s

    @property
    def t_end_s(self) -> float:
        return self.waypoints[-1].t_s

    def path_length_m(self) -> float:
        total = 0.0
        for a, b in zip(self._enu, self._enu[1:]):
            total += math.dist((a.e_m, a.n_m, a.u_m), (b.e_m, b.n_m, b.u_m))
        return total


def load_route(document: Union[str, Path, dict]) -> Route:
    """Parse and validate a route file (or an already-decoded document)."""
    if isinstance(document, (str, Path)):
        try:
            doc = json.loads(Path(document).read_text())
        except json.JSONDecodeError as exc:
            raise RouteError(f"route file {document}: invalid JSON: {exc}") from exc
    else:
        doc = document
    if not isinstance(doc, dict) or "waypoints" not in doc:
        raise RouteError("route document missing 'waypoints'")
    waypoints = []
    for i, w in enumerate(doc["waypoints"]):
        try:
            waypoints.append(
                Waypoint(
                    t_s=float(w["t_s"]),
                    lat_deg=float(w["lat_deg"]),
                    lon_deg=float(w["lon_deg"]),
                    alt_m=float(w["alt_m"]),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise RouteError(f"waypoint {i}: malformed field: {exc}") from exc
    return Route(waypoints)


def sample_route(route: Route, t_s: float) -> TruePose:
    """Ground-truth pose at t_s: linear ENU interpolation; heading and speed
    from the active segment (the later segment at a knot)."""
    if not route.t_start_s <= t_s <= route.t_end_s:
        raise RouteError(
            f"t={t_s} outside route span [{route.t_start_s}, {route.t_end_s}]"
        )
    times = route._times
    i = bisect.bisect_right(times, t_s) - 1
    i = min(i, len(times) - 2)  # at the final knot, use the last segment
    a, b = route._enu[i], route._enu[i + 1]
    dt = times[i + 1] - times[i]
    frac = (t_s - times[i]) / dt
    e = a.e_m + frac * (b.e_m - a.e_m)
    n = a.n_m + frac * (b.n_m - a.n_m)
    u = a.u_m + frac * (b.u_m - a.u_m)
    de, dn, du = b.e_m - a.e_m, b.n_m - a.n_m, b.u_m - a.u_m
    horiz = math.hypot(de, dn)
    heading = math.degrees(math.atan2(de, dn)) % 360.0 if horiz > 0 else 0.0
    speed = math.sqrt(de * de + dn * dn + du * du) / dt
    fix = enu_offset_fix(route.origin, EnuVector(e, n, u), t_ns=int(t_s * NS_PER_S))
    return TruePose(position=fix, heading_deg=heading, speed_mps=speed)


class GnssSensor:
    """Stateful GNSS model: truth + Gauss-Markov drift + white noise.

    The RTK correction stream publishes the drift state at 1 Hz epochs; while
    a fresh epoch exists, apply_rtk removes the correlated component and only
    the white residual survives. A stale stream leaves the raw fix untouched.
    """

    def __init__(self, cfg: SensorConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.rng = rng
        self._gm = np.zeros(3)
        # GM variance is the raw variance minus the white residual variance,
        # so the uncorrected stream lands at the configured raw sigma.
        raw = np.asarray(cfg.gnss_raw_sigma_enu_m, dtype=float)
        res = np.asarray(cfg.rtk_residual_sigma_enu_m, dtype=float)
        self._gm_sigma = np.sqrt(np.maximum(raw**2 - res**2, 0.0))
        self._white_sigma = res
        self._last_t_ns: int | None = None
        self._last_epoch_t_ns: int | None = None

    def _advance_gm(self, t_ns: int) -> None:
        if self._last_t_ns is None:
            self._gm = self._gm_sigma * self.rng.standard_normal(3)
        else:
            dt = (t_ns - self._last_t_ns) / NS_PER_S
            phi = math.exp(-dt / self.cfg.gnss_gm_tau_s)
            drive = self._gm_sigma * math.sqrt(max(0.0, 1.0 - phi * phi))
            self._gm = phi * self._gm + drive * self.rng.standard_normal(3)
        self._last_t_ns = t_ns

    def measure(self, pose: TruePose, rtk_on: bool = True) -> GeoFix:
        t_ns = pose.position.t_ns
        self._advance_gm(t_ns)
        white = self._white_sigma * self.rng.standard_normal(3)
        err = self._gm + white
        raw = enu_offset_fix(
            pose.position,
            EnuVector(err[0], err[1], err[2]),
            sigma_enu_m=tuple(self.cfg.gnss_raw_sigma_enu_m),
            rtk_applied=False,
        )
        if not rtk_on:
            return raw
        # Correction epochs tick at the configured interval on the fix clock.
        epoch_ns = int(self.cfg.rtk_epoch_interval_s * NS_PER_S)
        self._last_epoch_t_ns = (t_ns // epoch_ns) * epoch_ns
        return apply_rtk(
            raw,
            EnuVector(self._gm[0], self._gm[1], self._gm[2]),
            correction_t_ns=self._last_epoch_t_ns,
            residual_sigma_enu_m=self.cfg.rtk_residual_sigma_enu_m,
            staleness_ns=int(self.cfg.rtk_staleness_s * NS_PER_S),
        )


class ImuSensor:
    """Attitude readings: truth plus zero-mean Gaussian per-axis noise."""

    def __init__(self, cfg: SensorConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.rng = rng

    def measure(self, pose: TruePose, pitch_true_deg: float = 0.0):
        yaw = (
            pose.heading_deg + self.cfg.imu_sigma_yaw_deg * self.rng.standard_normal()
        ) % 360.0
        pitch = pitch_true_deg + self.cfg.imu_sigma_pitch_deg * self.rng.standard_normal()
        return yaw, pitch, pose.position.t_ns
