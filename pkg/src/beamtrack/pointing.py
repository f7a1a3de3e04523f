"""Mount attitude math and the open-loop servo model.

Covers shortest-path yaw rotation, quantized actuation with latency and slew,
the two-parameter horn gain pattern, and pointing-error measurement.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

from .geodesy import LosAngles

PITCH_RANGE_DEG = (-30.0, 90.0)  # mechanical stops
BACKLOBE_FLOOR_DBI = -10.0


@dataclass(frozen=True)
class ServoConfig:
    quant_step_deg: float = 0.9
    slew_dps: float = 360.0
    actuation_latency_ms: float = 20.0
    yaw_continuous: bool = True

    def __post_init__(self) -> None:
        if self.quant_step_deg <= 0 or self.slew_dps <= 0 or self.actuation_latency_ms < 0:
            raise ValueError(f"invalid servo config {self}")


@dataclass(frozen=True)
class AntennaPattern:
    boresight_gain_dbi: float = 22.0
    hpbw_deg: float = 15.0

    def __post_init__(self) -> None:
        if self.hpbw_deg <= 0:
            raise ValueError("hpbw_deg must be positive")


@dataclass(frozen=True)
class MotionPlan:
    start_t_ns: int
    end_t_ns: int
    start_yaw_deg: float
    end_yaw_deg: float  # may lie outside [0,360) to encode the travel direction
    start_pitch_deg: float
    end_pitch_deg: float

    def __post_init__(self) -> None:
        if self.end_t_ns < self.start_t_ns:
            raise ValueError("motion plan ends before it starts")


@dataclass(frozen=True)
class PointingState:
    yaw_deg: float = 0.0
    pitch_deg: float = 0.0
    target_yaw_deg: float = 0.0
    target_pitch_deg: float = 0.0
    motion: Optional[MotionPlan] = None
    pitch_clamped: bool = False


def norm360(angle_deg: float) -> float:
    return angle_deg % 360.0


def shortest_rotation(current_deg: float, target_deg: float) -> float:
    """Minimal signed rotation taking current to target, in (-180, 180].

    An exact 180-degree tie resolves to +180.
    """
    delta = (norm360(target_deg) - norm360(current_deg)) % 360.0
    return delta if delta <= 180.0 else delta - 360.0


def quantize(angle_deg: float, step_deg: float) -> float:
    """Round to the nearest multiple of the actuation step; midpoint rounds
    away from zero (half-up)."""
    return math.floor(abs(angle_deg) / step_deg + 0.5) * step_deg * (
        -1.0 if angle_deg < 0 else 1.0
    )


def command_servo(
    state: PointingState, target: LosAngles, cfg: ServoConfig, now_ns: int
) -> PointingState:
    """Plan a move to the quantized target, starting after the actuation
    latency and progressing at the slew rate.

    Yaw takes the shortest path when the mount supports continuous rotation.
    Pitch outside the mechanical range is clamped and flagged.
    """
    pitch_target = target.pitch_deg
    clamped = False
    if not PITCH_RANGE_DEG[0] <= pitch_target <= PITCH_RANGE_DEG[1]:
        pitch_target = min(max(pitch_target, PITCH_RANGE_DEG[0]), PITCH_RANGE_DEG[1])
        clamped = True

    q_yaw = norm360(quantize(norm360(target.yaw_deg), cfg.quant_step_deg))
    q_pitch = quantize(pitch_target, cfg.quant_step_deg)

    cur_yaw, cur_pitch = attitude_at(state, now_ns)
    if cfg.yaw_continuous:
        yaw_delta = shortest_rotation(cur_yaw, q_yaw)
    else:
        yaw_delta = norm360(q_yaw) - norm360(cur_yaw)
    pitch_delta = q_pitch - cur_pitch

    travel_deg = max(abs(yaw_delta), abs(pitch_delta))
    start_ns = now_ns + int(cfg.actuation_latency_ms * 1e6)
    end_ns = start_ns + int(travel_deg / cfg.slew_dps * 1e9)
    plan = MotionPlan(
        start_t_ns=start_ns,
        end_t_ns=end_ns,
        start_yaw_deg=cur_yaw,
        end_yaw_deg=cur_yaw + yaw_delta,
        start_pitch_deg=cur_pitch,
        end_pitch_deg=q_pitch,
    )
    return PointingState(
        yaw_deg=cur_yaw,
        pitch_deg=cur_pitch,
        target_yaw_deg=q_yaw,
        target_pitch_deg=q_pitch,
        motion=plan,
        pitch_clamped=clamped,
    )


def attitude_at(state: PointingState, t_ns: int) -> tuple[float, float]:
    """Mount (yaw, pitch) at a given time: linear progress along the motion
    plan, held at the endpoints outside it."""
    plan = state.motion
    if plan is None:
        return norm360(state.yaw_deg), state.pitch_deg
    if t_ns <= plan.start_t_ns:
        return norm360(plan.start_yaw_deg), plan.start_pitch_deg
    if t_ns >= plan.end_t_ns:
        return norm360(plan.end_yaw_deg), plan.end_pitch_deg
    frac = (t_ns - plan.start_t_ns) / (plan.end_t_ns - plan.start_t_ns)
    yaw = plan.start_yaw_deg + frac * (plan.end_yaw_deg - plan.start_yaw_deg)
    pitch = plan.start_pitch_deg + frac * (plan.end_pitch_deg - plan.start_pitch_deg)
    return norm360(yaw), pitch


def pointing_error_deg(mount: tuple[float, float], los: LosAngles) -> float:
    """Great-circle angle between the mount boresight and the line of sight."""
    y1, p1 = math.radians(mount[0]), math.radians(mount[1])
    y2, p2 = math.radians(los.yaw_deg), math.radians(los.pitch_deg)
    c = (
        math.sin(p1) * math.sin(p2)
        + math.cos(p1) * math.cos(p2) * math.cos(y1 - y2)
    )
    return math.degrees(math.acos(min(1.0, max(-1.0, c))))


def gain_dbi(pattern: AntennaPattern, offaxis_deg: float) -> float:
    """Gaussian main-lobe gain, -3 dB at half the beamwidth, floored at the
    back-lobe level."""
    if offaxis_deg < 0:
        raise ValueError("off-axis angle must be non-negative")
    g = pattern.boresight_gain_dbi - 12.0 * (offaxis_deg / pattern.hpbw_deg) ** 2
    return max(g, BACKLOBE_FLOOR_DBI)


def settled(state: PointingState, t_ns: int) -> bool:
    """True once the mount has reached its commanded target."""
    return state.motion is None or t_ns >= state.motion.end_t_ns
