"""Operator service: HTTP snapshot/command endpoints plus a WebSocket event
stream for the dashboard.

The service is read/relay only — dashboard commands are forwarded onto the
`commands` topic (or to the cluster fault hooks) and never touch controller
state directly. It can front either a live run (the scheduler paced against
the wall clock in a background thread) or a replay of a recorded run.
"""

from __future__ import annotations

import asyncio
import json
import queue
import threading
import time
from pathlib import Path
from typing import Optional

from fastapi import FastAPI, WebSocket, WebSocketDisconnect

from .controller import InteractionRecord, TelemetryMessage
from .orchestrator import RunOutputs, Scenario, World, replay_stream, run_scenario
from .sim import NS_PER_S, ns


class EventBus:
    """Fan-out of run events to any number of stream subscribers."""

    def __init__(self):
        self._lock = threading.Lock()
        self._subscribers: list[queue.Queue] = []

    def subscribe(self) -> queue.Queue:
        q: queue.Queue = queue.Queue(maxsize=10_000)
        with self._lock:
            self._subscribers.append(q)
        return q

    def unsubscribe(self, q: queue.Queue) -> None:
        with self._lock:
            if q in self._subscribers:
                self._subscribers.remove(q)

    def publish(self, event: dict) -> None:
        with self._lock:
            subs = list(self._subscribers)
        for q in subs:
            try:
                q.put_nowait(event)
            except queue.Full:
                pass  # a stalled client drops events rather than stalling the run


class LiveRun(threading.Thread):
    """Paces a scenario's virtual scheduler against the wall clock and taps
    telemetry, interactions, and run events onto the bus."""

    def __init__(self, scenario: Scenario, out_dir: Path, speed: float = 1.0):
        super().__init__(daemon=True)
        self.scenario = scenario
        self.out_dir = Path(out_dir)
        self.speed = speed
        self.bus = EventBus()
        self.status = "idle"
        self.outputs: Optional[RunOutputs] = None
        self._lock = threading.Lock()
        self._pending_commands: list[dict] = []
        self._cmd_results: queue.Queue = queue.Queue()
        self.world = World(scenario, self.out_dir)
        self._wire_taps()

    def _wire_taps(self) -> None:
        world = self.world

        def tap_topic(topic: str) -> None:
            def on_record(record) -> None:
                doc = json.loads(record.payload)
                self.bus.publish({"type": "telemetry", "data": doc})

            world.ops.subscribe(topic, 0, on_record)

        # delayed until brokers settle: subscribe once the run starts
        self._tap_topics = tap_topic
        world.on_event = lambda doc: self.bus.publish(
            {"type": doc.get("type", "event"), "data": doc}
        )

        def on_interaction(node_id: str, r: InteractionRecord) -> None:
            self.bus.publish(
                {
                    "type": "interaction",
                    "data": {"node": node_id, "peer_seq": r.peer_seq, "response_ms": r.response_ms},
                }
            )

        world.tx.on_interaction = on_interaction
        world.rx.on_interaction = on_interaction

    def submit_command(self, doc: dict) -> str:
        """Thread-safe command injection; applied between scheduler steps."""
        result: queue.Queue = queue.Queue()
        with self._lock:
            self._pending_commands.append({"doc": doc, "result": result})
        return result.get(timeout=10.0)

    def snapshot(self) -> dict:
        world = self.world
        with self._lock:
            last_err = world.error_samples[-1] if world.error_samples else None
            return {
                "status": self.status,
                "t_s": world.sched.now_ns / NS_PER_S,
                "nodes": {
                    role: {
                        "lease": bool(ctrl.lease),
                        "fix": _fix_doc(ctrl.latest_fix),
                        "recording": ctrl.recording,
                        "gain_db": ctrl.gain_db,
                        "interactions": len(ctrl.records),
                    }
                    for role, ctrl in (("tx", world.tx), ("rx", world.rx))
                },
                "pointing_error_deg": (
                    {"tx": last_err[1], "rx": last_err[2]} if last_err else None
                ),
                "rx_power_dbm": world.link_power_dbm(),
                "brokers": {
                    b.id: {"alive": b.alive} for b in world.coordinator.brokers.values()
                },
                "segments_recorded": world.segments.count,
            }

    def run(self) -> None:
        world = self.world
        self.status = "running"
        with self._lock:
            world.start()
            self._tap_topics("telemetry.tx")
            self._tap_topics("telemetry.rx")
        end_ns = ns(self.scenario.duration_s)
        wall_start = time.monotonic()
        while True:
            target_ns = min(end_ns, int((time.monotonic() - wall_start) * self.speed * NS_PER_S))
            with self._lock:
                for item in self._pending_commands:
                    item["result"].put(world.send_command(item["doc"]))
                self._pending_commands.clear()
                world.sched.run_until(target_ns)
            if target_ns >= end_ns:
                break
            time.sleep(0.01)
        with self._lock:
            world.tx.stop()
            world.rx.stop()
            self.status = "finishing"
        self.outputs = _finalize(world, self.out_dir)
        self.status = "done"
        self.bus.publish({"type": "run_complete", "data": {"out_dir": str(self.out_dir)}})


def _finalize(world: World, out_dir: Path) -> RunOutputs:
    from .orchestrator import write_artifacts

    return write_artifacts(world, out_dir)


class ReplayRun(threading.Thread):
    """Streams a recorded run's telemetry onto the bus at scaled speed."""

    def __init__(self, out_dir: Path, speed: float = 1.0):
        super().__init__(daemon=True)
        self.out_dir = Path(out_dir)
        self.speed = speed
        self.bus = EventBus()
        self.status = "idle"
        self.last_event: Optional[dict] = None

    def snapshot(self) -> dict:
        return {
            "status": self.status,
            "mode": "replay",
            "out_dir": str(self.out_dir),
            "last_event": self.last_event,
        }

    def submit_command(self, doc: dict) -> str:
        raise RuntimeError("replay is read-only; commands are not accepted")

    def run(self) -> None:
        self.status = "running"
        for wait_s, event in replay_stream(self.out_dir, self.speed):
            if wait_s > 0:
                time.sleep(wait_s)
            self.last_event = event
            self.bus.publish(event)
        self.status = "done"
        self.bus.publish({"type": "run_complete", "data": {"out_dir": str(self.out_dir)}})


def _fix_doc(fix) -> Optional[dict]:
    if fix is None:
        return None
    return {
        "lat_deg": fix.lat_deg,
        "lon_deg": fix.lon_deg,
        "alt_m": fix.alt_m,
        "rtk": fix.rtk_applied,
    }


def build_app(run) -> FastAPI:
    """FastAPI application fronting a LiveRun or ReplayRun."""
    app = FastAPI(title="beamtrack operator API")

    @app.get("/api/state")
    def state() -> dict:
        return run.snapshot()

    @app.post("/api/command")
    def command(payload: dict) -> dict:
        try:
            cmd_id = run.submit_command(payload)
        except Exception as exc:
            return {"accepted": False, "error": str(exc)}
        return {"accepted": True, "cmd_id": cmd_id}

    @app.websocket("/api/stream")
    async def stream(ws: WebSocket) -> None:
        await ws.accept()
        q = run.bus.subscribe()
        try:
            while True:
                try:
                    event = await asyncio.to_thread(q.get, True, 0.5)
                except queue.Empty:
                    if getattr(run, "status", "") == "done" and q.empty():
                        break
                    continue
                await ws.send_text(json.dumps(event, sort_keys=True) + "\n")
        except WebSocketDisconnect:
            pass
        finally:
            run.bus.unsubscribe(q)

    return app


def serve_operator(run, host: str, port: int) -> None:
    """Block serving the operator API for the given run handle."""
    import uvicorn

    run.start()
    uvicorn.run(build_app(run), host=host, port=port, log_level="warning")
