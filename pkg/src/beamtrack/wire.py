"""Live-mode wire framing: u32 little-endian length, u8 frame type, payload.

Payloads are UTF-8 JSON documents; the frame types cover the publish/poll/
registration traffic a remote client exchanges with an in-process cluster.
"""

from __future__ import annotations

import json
import socket
import struct
import threading
from typing import Callable, Optional

FRAME_PUBLISH = 1
FRAME_PUBLISH_ACK = 2
FRAME_POLL = 3
FRAME_POLL_RESPONSE = 4
FRAME_REGISTER = 5
FRAME_REGISTER_ACK = 6
FRAME_ERROR = 7

_HEADER = struct.Struct("<IB")


class FramingError(ValueError):
    pass


def encode_frame(frame_type: int, payload: dict) -> bytes:
    body = json.dumps(payload, sort_keys=True).encode("utf-8")
    return _HEADER.pack(len(body) + 1, frame_type) + body


def decode_frames(buffer: bytes) -> tuple[list[tuple[int, dict]], bytes]:
    """Decode complete frames from a byte stream; return (frames, remainder)."""
    frames = []
    while len(buffer) >= _HEADER.size:
        length, frame_type = _HEADER.unpack_from(buffer)
        if length < 1:
            raise FramingError(f"frame length {length} < 1")
        end = 4 + length
        if len(buffer) < end:
            break
        body = buffer[_HEADER.size : end]
        frames.append((frame_type, json.loads(body.decode("utf-8"))))
        buffer = buffer[end:]
    return frames, buffer


class LiveBrokerServer:
    """Socket front-end carrying the wire frames onto a broker cluster.

    One thread per connection; each request frame yields one response frame.
    """

    def __init__(self, coordinator, host: str = "127.0.0.1", port: int = 0):
        self.coordinator = coordinator
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._sock.bind((host, port))
        self._sock.listen(8)
        self.address = self._sock.getsockname()
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._accept_loop, daemon=True)

    def start(self) -> None:
        self._thread.start()

    def close(self) -> None:
        self._stop.set()
        self._sock.close()

    def _accept_loop(self) -> None:
        while not self._stop.is_set():
            try:
                conn, _ = self._sock.accept()
            except OSError:
                return
            threading.Thread(target=self._serve, args=(conn,), daemon=True).start()

    def _serve(self, conn: socket.socket) -> None:
        buffer = b""
        with conn:
            while not self._stop.is_set():
                data = conn.recv(65536)
                if not data:
                    return
                buffer += data
                frames, buffer = decode_frames(buffer)
                for frame_type, payload in frames:
                    conn.sendall(self._handle(frame_type, payload))

    def _handle(self, frame_type: int, payload: dict) -> bytes:
        try:
            if frame_type == FRAME_PUBLISH:
                return self._publish(payload)
            if frame_type == FRAME_POLL:
                return self._poll(payload)
            if frame_type == FRAME_REGISTER:
                lease = self.coordinator.register(
                    payload["node_id"], payload["role"], payload["endpoint"]
                )
                return encode_frame(
                    FRAME_REGISTER_ACK,
                    {"node_id": lease.node_id, "expiry_t_ns": lease.expiry_t_ns},
                )
            return encode_frame(FRAME_ERROR, {"error": f"unknown frame {frame_type}"})
        except Exception as exc:  # surface any failure to the remote peer
            return encode_frame(FRAME_ERROR, {"error": str(exc)})

    def _publish(self, payload: dict) -> bytes:
        topic = payload["topic"]
        leader_id = self.coordinator.leader_of(topic)
        if leader_id is None:
            return encode_frame(FRAME_ERROR, {"error": "no leader", "retryable": True})
        broker = self.coordinator.brokers[leader_id]
        result: dict = {}
        broker.handle_publish(
            topic,
            payload.get("key", "").encode(),
            json.dumps(payload["value"], sort_keys=True).encode(),
            lambda off: result.update(offset=off),
        )
        self.coordinator.sched.run_until(self.coordinator.sched.now_ns + 50_000_000)
        if result.get("offset") is None:
            return encode_frame(FRAME_ERROR, {"error": "unacknowledged", "retryable": True})
        return encode_frame(FRAME_PUBLISH_ACK, {"topic": topic, "offset": result["offset"]})

    def _poll(self, payload: dict) -> bytes:
        topic = payload["topic"]
        leader_id = self.coordinator.leader_of(topic)
        if leader_id is None:
            return encode_frame(FRAME_ERROR, {"error": "no leader", "retryable": True})
        broker = self.coordinator.brokers[leader_id]
        records: list = []
        broker.handle_poll(
            topic,
            payload.get("from_offset", 0),
            payload.get("max", 100),
            lambda recs: records.extend(recs or []),
        )
        return encode_frame(
            FRAME_POLL_RESPONSE,
            {
                "topic": topic,
                "records": [
                    {
                        "offset": r.offset,
                        "key": r.key.decode("utf-8", "replace"),
                        "value": json.loads(r.payload.decode("utf-8")),
                        "append_t_ns": r.append_t_ns,
                    }
                    for r in records
                ],
            },
        )


def request(sock: socket.socket, frame_type: int, payload: dict) -> tuple[int, dict]:
    """One blocking request/response exchange over a connected socket."""
    sock.sendall(encode_frame(frame_type, payload))
    buffer = b""
    while True:
        data = sock.recv(65536)
        if not data:
            raise FramingError("connection closed mid-response")
        buffer += data
        frames, buffer = decode_frames(buffer)
        if frames:
            return frames[0]
