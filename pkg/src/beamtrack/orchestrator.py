"""Campaign runner: wires mobility, controllers, middleware, sounder, and
post-processing into a scenario run.

Virtual mode drives everything from the discrete-event scheduler and is fully
deterministic under a fixed seed; realtime mode paces the same scheduler
against the wall clock (see operator.py).
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import report
from .controller import (
    Controller,
    ControllerConfig,
    InteractionRecord,
    configured_budget_ms,
    response_time_stats,
)
from .geodesy import GeodesyError, GeoFix
from .middleware import (
    Coordinator,
    Fabric,
    LocalClock,
    MiddlewareClient,
    SYSTEM_TOPICS,
    build_cluster,
)
from .mobility import Route, SensorConfig, TruePose, load_route, sample_route
from .pointing import AntennaPattern, ServoConfig
from .postproc import Calibration, make_calibration, run_postproc
from .sim import NS_PER_S, Scheduler, ns
from .sounder import (
    SEGMENT_SAMPLES,
    SegmentMeta,
    channel_taps,
    correlator_output,
    pn_sequence,
    slide_factor,
    PnConfig,
    record_segment,
)

CLOCK_OFFSET_SPREAD_MS = 50.0
ERROR_SAMPLE_RATE_HZ = 20.0
STARTUP_TRANSIENT_S = 2.0


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class Scenario:
    route_file: Path
    tx_fix: GeoFix
    duration_s: float
    mode: str = "virtual"
    seed: int = 0
    sensors: SensorConfig = field(default_factory=SensorConfig)
    servo: ServoConfig = field(default_factory=ServoConfig)
    pattern: AntennaPattern = field(default_factory=AntennaPattern)
    pn: PnConfig = field(default_factory=PnConfig)
    telemetry_rate_hz: float = 10.0
    rtk_on: bool = True
    n_brokers: int = 4
    replication_factor: int = 3
    hop_ms: float = 2.0
    hop_jitter_ms: float = 0.5
    election_timeout_ms: float = 500.0
    detection_delay_ms: float = 100.0
    carrier_hz: float = 28e9
    tx_power_dbm: float = 0.0
    noise_floor_dbm: float = -90.0
    commands: tuple[dict, ...] = ()  # {"t_s", "target", "action", ...}
    faults: tuple[dict, ...] = ()  # {"t_s", "action", "broker"}

    def __post_init__(self) -> None:
        if self.duration_s <= 0:
            raise ScenarioError("duration must be positive")
        if self.mode not in ("virtual", "realtime"):
            raise ScenarioError(f"unknown mode {self.mode}")


def load_scenario(path: Path) -> Scenario:
    path = Path(path)
    doc = json.loads(path.read_text())
    route_file = (path.parent / doc["route_file"]).resolve()
    if not route_file.exists():
        raise ScenarioError(f"route file {route_file} does not exist")
    tx = doc["tx_fix"]
    kwargs = {}
    for key in (
        "duration_s",
        "mode",
        "seed",
        "telemetry_rate_hz",
        "rtk_on",
        "n_brokers",
        "replication_factor",
        "hop_ms",
        "hop_jitter_ms",
        "election_timeout_ms",
        "detection_delay_ms",
        "carrier_hz",
        "tx_power_dbm",
        "noise_floor_dbm",
    ):
        if key in doc:
            kwargs[key] = doc[key]
    if "sensors" in doc:
        kwargs["sensors"] = SensorConfig(
            **{
                k: tuple(v) if isinstance(v, list) else v
                for k, v in doc["sensors"].items()
            }
        )
    if "servo" in doc:
        kwargs["servo"] = ServoConfig(**doc["servo"])
    if "pattern" in doc:
        kwargs["pattern"] = AntennaPattern(**doc["pattern"])
    return Scenario(
        route_file=route_file,
        tx_fix=GeoFix(tx["lat_deg"], tx["lon_deg"], tx["alt_m"]),
        commands=tuple(doc.get("commands", ())),
        faults=tuple(doc.get("faults", ())),
        **kwargs,
    )


@dataclass
class RunOutputs:
    out_dir: Path
    stats: dict
    telemetry_log: Path
    stats_report: Path
    interactions_log: Path
    segments_dir: Optional[Path]
    figures: list[Path]


class SegmentPipeline:
    """Recording gate for the RX sounder: one segment per half second of
    enabled recording; a stop mid-segment discards the partial segment."""

    def __init__(self, world: "World", out_dir: Path):
        self.world = world
        self.out_dir = Path(out_dir)
        self.seq = 0
        self.count = 0
        self.active = False
        self._chips = None

    def on_recording_change(self, recording: bool) -> None:
        if recording and not self.active:
            self.active = True
            self._begin_segment()
        elif not recording:
            self.active = False

    def _begin_segment(self) -> None:
        if not self.active:
            return
        world = self.world
        start_ns = world.sched.now_ns
        duration_ns = int(SEGMENT_SAMPLES / 2.0e6 * NS_PER_S)
        seq = self.seq
        self.seq += 1

        def finish() -> None:
            if not self.active or not world.rx.recording:
                world.publish_event(
                    {"type": "segment_discarded", "seq": seq, "reason": "stopped mid-segment"}
                )
                return
            self._synthesize(seq, start_ns)
            if self.active:
                self._begin_segment()

        world.sched.at(start_ns + duration_ns, finish)

    def _synthesize(self, seq: int, start_ns: int) -> None:
        world = self.world
        scn = world.scenario
        if self._chips is None:
            self._chips = pn_sequence(scn.pn)
        rx_pose = world.rx.latest_pose
        if rx_pose is None:
            return
        taps = channel_taps(
            scn.tx_fix,
            world.tx.boresight_world(world.sched.now_ns),
            scn.pattern,
            rx_pose.position,
            world.rx.boresight_world(world.sched.now_ns),
            scn.pattern,
            f_hz=scn.carrier_hz,
            tx_power_dbm=scn.tx_power_dbm,
        )
        meta = SegmentMeta(
            node_id="rx",
            seq=seq,
            t_start_ns=int(world.rx.client.clock.now_ns() - SEGMENT_SAMPLES / 2.0e6 * NS_PER_S),
            gain_db=world.rx.gain_db,
        )
        stream = correlator_output(
            self._chips,
            taps,
            slide_factor(scn.pn),
            meta,
            chip_rate_hz=scn.pn.tx_chip_rate_hz,
            noise_floor_dbm=scn.noise_floor_dbm,
            rng=world.sched.rng("sounder.noise"),
        )
        record_segment(stream, meta, self.out_dir)
        self.count += 1
        world.publish_event({"type": "segment_recorded", "seq": seq, "gain_db": world.rx.gain_db})


class World:
    """All live pieces of one scenario run."""

    def __init__(self, scenario: Scenario, out_dir: Path):
        self.scenario = scenario
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.sched = Scheduler(scenario.seed)
        self.fabric = Fabric(self.sched, scenario.hop_ms, scenario.hop_jitter_ms)
        self.coordinator = build_cluster(
            self.sched,
            self.fabric,
            scenario.n_brokers,
            scenario.election_timeout_ms,
            scenario.detection_delay_ms,
        )
        for topic in SYSTEM_TOPICS:
            self.coordinator.create_topic(topic, scenario.replication_factor)

        self.route: Route = load_route(scenario.route_file)
        clock_rng = self.sched.rng("clocks")
        spread = int(CLOCK_OFFSET_SPREAD_MS * 1e6)

        def make_client(node_id: str) -> MiddlewareClient:
            offset = int(clock_rng.integers(-spread, spread))
            return MiddlewareClient(
                node_id,
                self.sched,
                self.fabric,
                self.coordinator,
                LocalClock(self.sched, offset),
            )

        tx_truth_pose = TruePose(scenario.tx_fix, heading_deg=0.0, speed_mps=0.0)

        def tx_truth(t_s: float) -> TruePose:
            return dataclasses.replace(
                tx_truth_pose,
                position=dataclasses.replace(scenario.tx_fix, t_ns=int(t_s * NS_PER_S)),
            )

        def rx_truth(t_s: float) -> TruePose:
            return sample_route(self.route, min(t_s, self.route.t_end_s))

        self.tx = Controller(
            ControllerConfig(
                role="tx",
                telemetry_rate_hz=scenario.telemetry_rate_hz,
                servo=scenario.servo,
                mount_frame="world",
            ),
            make_client("tx"),
            self.sched,
            scenario.sensors,
            tx_truth,
            rtk_on=scenario.rtk_on,
        )
        self.rx = Controller(
            ControllerConfig(
                role="rx",
                telemetry_rate_hz=scenario.telemetry_rate_hz,
                servo=scenario.servo,
                mount_frame="vehicle",
            ),
            make_client("rx"),
            self.sched,
            scenario.sensors,
            rx_truth,
            rtk_on=scenario.rtk_on,
        )
        self.ops = make_client("ops")
        self.segments = SegmentPipeline(self, self.out_dir / "segments")
        self.rx.on_recording_change = self.segments.on_recording_change
        self.error_samples: list[tuple[float, float, float]] = []
        self.events: list[dict] = []
        self.on_event: Optional[Callable[[dict], None]] = None
        self._cmd_counter = 0
        self._rx_truth = rx_truth
        self._tx_truth = tx_truth

    # -- event/commands ----------------------------------------------------

    def publish_event(self, doc: dict) -> None:
        doc = dict(doc)
        doc["t_ns"] = self.sched.now_ns
        self.events.append(doc)
        self.ops.publish("events", b"", json.dumps(doc, sort_keys=True).encode())
        if self.on_event:
            self.on_event(doc)

    def send_command(self, doc: dict) -> str:
        doc = dict(doc)
        if "cmd_id" not in doc:
            self._cmd_counter += 1
            doc["cmd_id"] = f"cmd-{self._cmd_counter}"
        payload = json.dumps(doc, sort_keys=True).encode()
        action = doc.get("action", "")
        if action in ("fail_broker", "restore_broker"):
            broker = doc["broker"]
            if action == "fail_broker":
                self.coordinator.fail_broker(broker)
            else:
                self.coordinator.restore_broker(broker)
            self.publish_event({"type": "broker_health", "broker": broker, "action": action})
        else:
            self.ops.publish("commands", b"", payload)
        return doc["cmd_id"]

    def link_power_dbm(self) -> Optional[float]:
        """Line-of-sight received power for the current true geometry and
        commanded boresights (the live operator view's signal readout)."""
        rx_pose = self.rx.latest_pose
        if rx_pose is None:
            return None
        try:
            taps = channel_taps(
                self.scenario.tx_fix,
                self.tx.boresight_world(self.sched.now_ns),
                self.scenario.pattern,
                rx_pose.position,
                self.rx.boresight_world(self.sched.now_ns),
                self.scenario.pattern,
                f_hz=self.scenario.carrier_hz,
                tx_power_dbm=self.scenario.tx_power_dbm,
            )
        except GeodesyError:
            return None
        return taps[0].gain_db

    # -- sampling ----------------------------------------------------------

    def _sample_errors(self) -> None:
        t_s = self.sched.now_ns / NS_PER_S
        try:
            rx_truth = self._rx_truth(t_s).position
        except Exception:
            return
        tx_truth = self.scenario.tx_fix
        tx_err = self.tx.pointing_error_now(rx_truth)
        rx_err = self.rx.pointing_error_now(tx_truth)
        if math.isfinite(tx_err) and math.isfinite(rx_err):
            self.error_samples.append((t_s, tx_err, rx_err))
        self.sched.after(ns(1.0 / ERROR_SAMPLE_RATE_HZ), self._sample_errors)

    # -- run ------------------------------------------------------------------

    def start(self) -> None:
        self.tx.start()
        self.sched.at(ns(0.05), self.rx.start)
        self.sched.at(ns(STARTUP_TRANSIENT_S), self._sample_errors)
        for cmd in self.scenario.commands:
            self.sched.at(ns(cmd["t_s"]), lambda c=cmd: self.send_command(
                {k: v for k, v in c.items() if k != "t_s"}
            ))
        for fault in self.scenario.faults:
            self.sched.at(
                ns(fault["t_s"]),
                lambda f=fault: self.send_command(
                    {"target": "cluster", "action": f["action"], "broker": f["broker"]}
                ),
            )

    def run(self) -> None:
        self.start()
        self.sched.run_until(ns(self.scenario.duration_s))
        self.tx.stop()
        self.rx.stop()

    # -- outputs -------------------------------------------------------------

    def committed_telemetry(self) -> list[tuple[int, str, bytes]]:
        rows: list[tuple[int, str, bytes]] = []
        for topic in ("telemetry.tx", "telemetry.rx"):
            leader_id = self.coordinator.topics[topic].leader
            if leader_id is None:
                continue
            broker = self.coordinator.brokers[leader_id]
            for rec in broker.log[topic][: broker.hw[topic]]:
                rows.append((rec.append_t_ns, topic, rec.payload))
        rows.sort(key=lambda r: (r[0], r[1]))
        return rows

    def build_stats(self) -> dict:
        tx_err = np.array([s[1] for s in self.error_samples])
        rx_err = np.array([s[2] for s in self.error_samples])
        both = np.concatenate([tx_err, rx_err]) if len(tx_err) else np.array([])
        stats: dict = {
            "seed": self.scenario.seed,
            "duration_s": self.scenario.duration_s,
            "pointing": {
                "samples": int(both.size),
                "mean_deg": float(both.mean()) if both.size else None,
                "p95_deg": float(np.percentile(both, 95)) if both.size else None,
                "tx_mean_deg": float(tx_err.mean()) if tx_err.size else None,
                "rx_mean_deg": float(rx_err.mean()) if rx_err.size else None,
            },
            "geo": {
                "tx_fix_rms_3d_m": _rms(self.tx.fix_errors_m),
                "rx_fix_rms_3d_m": _rms(self.rx.fix_errors_m),
            },
            "segments": {"recorded": self.segments.count},
            "middleware": {
                "leader_changes": len(self.coordinator.leader_changes),
                "topics": {
                    name: {
                        "leader": meta.leader,
                        "epoch": meta.epoch,
                        "committed": self._committed_len(name),
                    }
                    for name, meta in self.coordinator.topics.items()
                },
            },
        }
        records = self.tx.records + self.rx.records
        if records:
            budget = configured_budget_ms(
                hop_ms=self.scenario.hop_ms,
                proc_ms=self.tx.cfg.proc_latency_ms,
                actuation_ms=self.scenario.servo.actuation_latency_ms,
            )
            rs = response_time_stats(records, budget_ms=budget)
            stats["response"] = {
                "mean_ms": rs.mean_ms,
                "p50_ms": rs.p50_ms,
                "p95_ms": rs.p95_ms,
                "count": rs.count,
                "mean_software_ms": rs.mean_software_ms,
                "mean_overhead_ms": rs.mean_overhead_ms,
                "budget_ms": budget,
            }
        return stats

    def _committed_len(self, topic: str) -> int:
        leader_id = self.coordinator.topics[topic].leader
        if leader_id is None:
            return 0
        return self.coordinator.brokers[leader_id].hw[topic]


def _rms(values: list[float]) -> Optional[float]:
    if not values:
        return None
    return float(np.sqrt(np.mean(np.square(values))))


def run_scenario(
    scenario: Scenario, out_dir: Path, render: bool = True, postprocess: bool = True
) -> RunOutputs:
    """Execute a virtual-mode scenario end to end and write every artifact."""
    out_dir = Path(out_dir)
    world = World(scenario, out_dir)
    world.run()
    return write_artifacts(world, out_dir, render=render, postprocess=postprocess)


def write_artifacts(
    world: World, out_dir: Path, render: bool = True, postprocess: bool = True
) -> RunOutputs:
    """Write every artifact for a completed world (virtual or paced live)."""
    scenario = world.scenario
    out_dir = Path(out_dir)
    telemetry_path = out_dir / "telemetry.ndjson"
    with telemetry_path.open("wb") as fh:
        for _, _, payload in world.committed_telemetry():
            fh.write(payload)
            fh.write(b"\n")

    interactions_path = out_dir / "interactions.ndjson"
    with interactions_path.open("w") as fh:
        for role, ctrl in (("tx", world.tx), ("rx", world.rx)):
            for r in ctrl.records:
                fh.write(
                    json.dumps(
                        {
                            "node": role,
                            "peer_seq": r.peer_seq,
                            "publish_t_ns": r.publish_t_ns,
                            "recv_t_ns": r.recv_t_ns,
                            "issue_t_ns": r.issue_t_ns,
                            "command_t_ns": r.command_t_ns,
                            "response_ms": r.response_ms,
                        },
                        sort_keys=True,
                    )
                    + "\n"
                )

    stats = world.build_stats()
    segments_dir = out_dir / "segments" if world.segments.count else None

    if segments_dir and postprocess:
        cal = make_calibration(_postproc_cfg(scenario))
        (out_dir / "calibration.json").write_text(cal.to_json())
        summary = run_postproc(
            segments_dir, telemetry_path, cal, out_dir / "postproc", _postproc_cfg(scenario)
        )
        stats["postproc"] = summary

    stats["artifacts"] = sorted(
        str(p.relative_to(out_dir)) for p in out_dir.rglob("*") if p.is_file()
    ) + ["stats.json"]
    stats_path = report.write_stats(stats, out_dir)

    figures: list[Path] = []
    if render:
        track = _track_for_map(world, out_dir)
        response_ms = [r.response_ms for r in world.tx.records + world.rx.records]
        figures = report.render_figures(out_dir, world.error_samples, response_ms, track)

    return RunOutputs(
        out_dir=out_dir,
        stats=stats,
        telemetry_log=telemetry_path,
        stats_report=stats_path,
        interactions_log=interactions_path,
        segments_dir=segments_dir,
        figures=figures,
    )


def _postproc_cfg(scenario: Scenario):
    from .postproc import PostprocConfig

    return PostprocConfig(pn=scenario.pn)


def _track_for_map(world: World, out_dir: Path) -> list[tuple[float, float, float]]:
    power_csv = out_dir / "postproc" / "power.csv"
    if power_csv.exists():
        track = []
        for line in power_csv.read_text().splitlines()[1:]:
            parts = line.split(",")
            power = float(parts[4]) if parts[4] else float("nan")
            track.append((float(parts[2]), float(parts[1]), power))
        if track:
            return track
    # fall back to the RX trail colored by pointing error
    track = []
    for t_s, _, rx_err in world.error_samples[:: 5]:
        try:
            pose = world._rx_truth(t_s)
        except Exception:
            continue
        track.append((pose.position.lon_deg, pose.position.lat_deg, rx_err))
    return track


def replay_stream(out_dir: Path, speed: float = 1.0):
    """Yield (wait_s, event_dict) for recorded telemetry at original or
    scaled inter-message gaps."""
    telemetry_path = Path(out_dir) / "telemetry.ndjson"
    if not telemetry_path.exists():
        raise FileNotFoundError(f"missing telemetry log in {out_dir}")
    prev_t = None
    for line in telemetry_path.read_text().splitlines():
        if not line.strip():
            continue
        doc = json.loads(line)
        t = doc["t_ns"]
        wait = 0.0 if prev_t is None else max(0.0, (t - prev_t) / NS_PER_S / speed)
        prev_t = t
        yield wait, {"type": "telemetry", "data": doc}
