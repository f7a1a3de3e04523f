"""Beam-steering controller, shared by the fixed and mobile ends.

One single-threaded event-loop actor per controller: it registers a lease,
synchronizes its clock, publishes its own telemetry at a fixed rate, consumes
counterpart telemetry to steer the servo model, and instruments the
publish-to-command response time of every interaction. The TX and RX differ
only in topic names, sensor sources, and mount frame.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .geodesy import DegenerateGeometryError, GeoFix, LosAngles, bearing_elevation
from .middleware import LogRecord, MiddlewareClient, SYSTEM_TOPICS
from .mobility import GnssSensor, ImuSensor, SensorConfig, TruePose
from .pointing import (
    PointingState,
    ServoConfig,
    attitude_at,
    command_servo,
    norm360,
    shortest_rotation,
)
from .sim import NS_PER_S, Scheduler, ms_ns, ns

TELEMETRY_TOPICS = {"tx": "telemetry.tx", "rx": "telemetry.rx"}


@dataclass(frozen=True)
class TelemetryMessage:
    node_id: str
    seq: int
    fix: GeoFix
    attitude: tuple[float, float]
    publish_t_ns: int
    recalibrated: bool = False

    def to_payload(self) -> bytes:
        doc = {
            "node_id": self.node_id,
            "seq": self.seq,
            "t_ns": self.publish_t_ns,
            "lat_deg": self.fix.lat_deg,
            "lon_deg": self.fix.lon_deg,
            "alt_m": self.fix.alt_m,
            "sigma_enu_m": list(self.fix.sigma_enu_m),
            "yaw_deg": self.attitude[0],
            "pitch_deg": self.attitude[1],
            "rtk": self.fix.rtk_applied,
            "recalibrated": self.recalibrated,
        }
        return json.dumps(doc, sort_keys=True).encode("utf-8")

    @staticmethod
    def from_payload(payload: bytes) -> "TelemetryMessage":
        doc = json.loads(payload.decode("utf-8"))
        fix = GeoFix(
            lat_deg=doc["lat_deg"],
            lon_deg=doc["lon_deg"],
            alt_m=doc["alt_m"],
            t_ns=doc["t_ns"],
            sigma_enu_m=tuple(doc["sigma_enu_m"]),
            rtk_applied=doc["rtk"],
        )
        return TelemetryMessage(
            node_id=doc["node_id"],
            seq=doc["seq"],
            fix=fix,
            attitude=(doc["yaw_deg"], doc["pitch_deg"]),
            publish_t_ns=doc["t_ns"],
            recalibrated=doc["recalibrated"],
        )


@dataclass(frozen=True)
class InteractionRecord:
    peer_seq: int
    publish_t_ns: int
    recv_t_ns: int
    issue_t_ns: int  # target computed, command handed to the servo
    command_t_ns: int  # servo motion begins (actuation latency elapsed)

    @property
    def response_ms(self) -> float:
        return (self.command_t_ns - self.publish_t_ns) / 1e6

    @property
    def software_ms(self) -> float:
        """Compute+messaging share, excluding the configured actuation latency."""
        return (self.issue_t_ns - self.publish_t_ns) / 1e6


@dataclass(frozen=True)
class ResponseStats:
    mean_ms: float
    p50_ms: float
    p95_ms: float
    count: int
    mean_software_ms: float = 0.0
    mean_overhead_ms: float = 0.0  # mean response minus the configured latency budget


def configured_budget_ms(
    hop_ms: float = 2.0,
    hops: int = 4,
    proc_ms: float = 1.0,
    actuation_ms: float = 20.0,
) -> float:
    """Analytic mean response time implied by the configured latencies:
    publish to leader, replication, ack, delivery, then processing and
    actuation."""
    return hops * hop_ms + proc_ms + actuation_ms


def response_time_stats(
    records: list[InteractionRecord], budget_ms: Optional[float] = None
) -> ResponseStats:
    if not records:
        raise ValueError("no interaction records")
    resp = np.array([r.response_ms for r in records])
    soft = np.array([r.software_ms for r in records])
    budget = configured_budget_ms() if budget_ms is None else budget_ms
    return ResponseStats(
        mean_ms=float(resp.mean()),
        p50_ms=float(np.percentile(resp, 50)),
        p95_ms=float(np.percentile(resp, 95)),
        count=len(records),
        mean_software_ms=float(soft.mean()),
        mean_overhead_ms=float(resp.mean() - budget),
    )


def compute_target(
    self_fix: GeoFix, self_vehicle_yaw_deg: float, peer_fix: GeoFix
) -> LosAngles:
    """Mount-relative target: world-frame line of sight minus the vehicle
    heading on the yaw axis (body-fixed, level mount)."""
    los = bearing_elevation(self_fix, peer_fix)
    return LosAngles(norm360(los.yaw_deg - self_vehicle_yaw_deg), los.pitch_deg)


@dataclass(frozen=True)
class ControllerConfig:
    role: str  # "tx" | "rx"
    telemetry_rate_hz: float = 10.0
    stale_discard: bool = True
    servo: ServoConfig = field(default_factory=ServoConfig)
    mount_frame: str = "vehicle"  # "vehicle" | "world"
    proc_latency_ms: float = 1.0
    proc_jitter_ms: float = 0.2

    def __post_init__(self) -> None:
        if self.telemetry_rate_hz <= 0:
            raise ValueError("telemetry rate must be positive")
        if self.role not in ("tx", "rx"):
            raise ValueError(f"unknown role {self.role}")


class Controller:
    """Event-loop controller for one end of the link."""

    def __init__(
        self,
        cfg: ControllerConfig,
        client: MiddlewareClient,
        sched: Scheduler,
        sensor_cfg: SensorConfig,
        truth: Callable[[float], TruePose],
        rtk_on: bool = True,
    ):
        self.cfg = cfg
        self.client = client
        self.sched = sched
        self.truth = truth
        self.rtk_on = rtk_on
        self.node_id = cfg.role
        self.topic_self = TELEMETRY_TOPICS[cfg.role]
        self.topic_peer = TELEMETRY_TOPICS["rx" if cfg.role == "tx" else "tx"]
        self.gnss = GnssSensor(sensor_cfg, sched.rng(f"{cfg.role}.gnss"))
        self.imu = ImuSensor(sensor_cfg, sched.rng(f"{cfg.role}.imu"))
        self.sensor_cfg = sensor_cfg
        self._proc_rng = sched.rng(f"{cfg.role}.proc")

        self.pointing = PointingState()
        self.mount_bias_deg = 0.0  # physical mount-zero error (injectable)
        self.bias_comp_deg = 0.0  # compensation learned by recalibration
        self.latest_fix: Optional[GeoFix] = None
        self.latest_imu: Optional[tuple[float, float, int]] = None
        self.latest_pose: Optional[TruePose] = None
        self.seq = 0
        self.last_peer_seq = -1
        self.records: list[InteractionRecord] = []
        self.skipped_malformed = 0
        self.discarded_stale = 0
        self._recalibrated_flag = False
        self._seen_cmd_ids: set[str] = set()
        self.recording = False
        self.gain_db = 0.0
        self.on_recording_change: Optional[Callable[[bool], None]] = None
        self.on_interaction: Optional[Callable[[str, InteractionRecord], None]] = None
        self.lease = None
        self.fix_errors_m: list[float] = []  # 3D error of each fix vs truth
        self._running = False

    # -- lifecycle ---------------------------------------------------------

    def start(self) -> None:
        self._running = True
        self.client.register(self.cfg.role, f"node://{self.node_id}", self._on_lease)
        self.client.sync_clock(8, lambda off: self._begin())

    def stop(self) -> None:
        self._running = False

    def _on_lease(self, lease) -> None:
        self.lease = lease
        self.sched.after(ns(2.5), self._renew_lease)

    def _renew_lease(self) -> None:
        if not self._running:
            return
        try:
            self.lease = self.client.coordinator.renew(self.lease)
        except Exception:
            self.client.register(self.cfg.role, f"node://{self.node_id}", self._on_lease)
            return
        self.sched.after(ns(2.5), self._renew_lease)

    def _begin(self) -> None:
        self.client.subscribe(self.topic_peer, 0, self._on_peer_record)
        self.client.subscribe("commands", 0, self._on_command_record)
        self._imu_tick()
        self._gnss_tick()
        self._telemetry_tick()

    # -- sensor ticks --------------------------------------------------------

    def _now_s(self) -> float:
        return self.sched.now_ns / NS_PER_S

    def _gnss_tick(self) -> None:
        if not self._running:
            return
        try:
            pose = self.truth(self._now_s())
        except Exception:
            return
        self.latest_pose = pose
        self.latest_fix = self.gnss.measure(pose, rtk_on=self.rtk_on)
        from .geodesy import distance_3d

        self.fix_errors_m.append(distance_3d(self.latest_fix, pose.position))
        self.sched.after(ns(1.0 / self.sensor_cfg.gnss_rate_hz), self._gnss_tick)

    def _imu_tick(self) -> None:
        if not self._running:
            return
        try:
            pose = self.truth(self._now_s())
        except Exception:
            return
        self.latest_pose = pose
        self.latest_imu = self.imu.measure(pose)
        self.sched.after(ns(1.0 / self.sensor_cfg.imu_rate_hz), self._imu_tick)

    # -- telemetry out ----------------------------------------------------------

    def _telemetry_tick(self) -> None:
        if not self._running:
            return
        if self.latest_fix is not None:
            msg = TelemetryMessage(
                node_id=self.node_id,
                seq=self.seq,
                fix=self.latest_fix,
                attitude=self.boresight_world(self.sched.now_ns),
                publish_t_ns=self.client.clock.now_ns(),
                recalibrated=self._recalibrated_flag,
            )
            self._recalibrated_flag = False
            self.seq += 1
            self.client.publish(self.topic_self, self.node_id.encode(), msg.to_payload())
        self.sched.after(ns(1.0 / self.cfg.telemetry_rate_hz), self._telemetry_tick)

    # -- telemetry in --------------------------------------------------------------

    def _on_peer_record(self, record: LogRecord) -> None:
        try:
            msg = TelemetryMessage.from_payload(record.payload)
        except (ValueError, KeyError):
            self.skipped_malformed += 1
            return
        self.on_telemetry(msg)

    def on_telemetry(self, msg: TelemetryMessage) -> None:
        """Exactly one servo command per fresh counterpart message; stale or
        duplicate sequence numbers are discarded without a command."""
        if self.cfg.stale_discard and msg.seq <= self.last_peer_seq:
            self.discarded_stale += 1
            return
        self.last_peer_seq = msg.seq
        recv_t_ns = self.client.clock.now_ns()
        proc_ms = self.cfg.proc_latency_ms + self._proc_rng.uniform(
            -self.cfg.proc_jitter_ms, self.cfg.proc_jitter_ms
        )
        self.sched.after(ms_ns(proc_ms), lambda: self._issue_command(msg, recv_t_ns))

    def _issue_command(self, msg: TelemetryMessage, recv_t_ns: int) -> None:
        if self.latest_fix is None:
            return
        vehicle_yaw = self._measured_heading()
        try:
            target = compute_target(self.latest_fix, vehicle_yaw, msg.fix)
        except DegenerateGeometryError:
            self.skipped_malformed += 1
            return
        target = LosAngles(norm360(target.yaw_deg - self.bias_comp_deg), target.pitch_deg)
        self.pointing = command_servo(self.pointing, target, self.cfg.servo, self.sched.now_ns)
        issue_t_ns = self.client.clock.now_ns()
        command_t_ns = issue_t_ns + (self.pointing.motion.start_t_ns - self.sched.now_ns)
        record = InteractionRecord(
            peer_seq=msg.seq,
            publish_t_ns=msg.publish_t_ns,
            recv_t_ns=recv_t_ns,
            issue_t_ns=issue_t_ns,
            command_t_ns=command_t_ns,
        )
        self.records.append(record)
        if self.on_interaction:
            self.on_interaction(self.node_id, record)

    def _measured_heading(self) -> float:
        if self.cfg.mount_frame == "world":
            return 0.0
        return self.latest_imu[0] if self.latest_imu is not None else 0.0

    # -- physical state ------------------------------------------------------------

    def _frame_heading_true(self) -> float:
        if self.cfg.mount_frame == "world" or self.latest_pose is None:
            return 0.0
        return self.latest_pose.heading_deg

    def boresight_world(self, t_ns: int) -> tuple[float, float]:
        """Actual world-frame boresight direction of the mount at t_ns."""
        yaw, pitch = attitude_at(self.pointing, t_ns)
        return (
            norm360(yaw + self._frame_heading_true() + self.mount_bias_deg),
            pitch,
        )

    def pointing_error_now(self, peer_truth: GeoFix) -> float:
        from .pointing import pointing_error_deg

        if self.latest_pose is None:
            return float("nan")
        los = bearing_elevation(self.latest_pose.position, peer_truth)
        return pointing_error_deg(self.boresight_world(self.sched.now_ns), los)

    # -- command channel ---------------------------------------------------------------

    def _on_command_record(self, record: LogRecord) -> None:
        try:
            doc = json.loads(record.payload.decode("utf-8"))
        except ValueError:
            self.skipped_malformed += 1
            return
        cmd_id = str(doc.get("cmd_id", ""))
        if cmd_id in self._seen_cmd_ids:
            return  # at-least-once redelivery
        self._seen_cmd_ids.add(cmd_id)
        if doc.get("target") not in (self.cfg.role, "all"):
            return
        action = doc.get("action")
        if action == "recalibrate":
            self.recalibrate()
        elif action == "start_recording":
            self.recording = True
            if self.on_recording_change:
                self.on_recording_change(True)
        elif action == "stop_recording":
            self.recording = False
            if self.on_recording_change:
                self.on_recording_change(False)
        elif action == "set_gain":
            self.gain_db = float(doc.get("gain_db", 0))

    def recalibrate(self) -> None:
        """Re-zero the mount against the boresight IMU: fold the measured
        offset between actual and intended boresight into the compensation."""
        intended_yaw = norm360(
            attitude_at(self.pointing, self.sched.now_ns)[0]
            + self._frame_heading_true()
            + self.bias_comp_deg
        )
        measured_yaw = norm360(
            self.boresight_world(self.sched.now_ns)[0]
            + self.imu.cfg.imu_sigma_yaw_deg * self.imu.rng.standard_normal()
        )
        self.bias_comp_deg += shortest_rotation(intended_yaw, measured_yaw)
        self._recalibrated_flag = True
