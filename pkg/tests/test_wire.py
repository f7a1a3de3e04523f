"""Wire framing and the socket front-end onto a broker cluster."""

import socket

import pytest

from beamtrack.middleware import Fabric, build_cluster
from beamtrack.sim import Scheduler
from beamtrack.wire import (
    FRAME_ERROR,
    FRAME_POLL,
    FRAME_POLL_RESPONSE,
    FRAME_PUBLISH,
    FRAME_PUBLISH_ACK,
    FRAME_REGISTER,
    FRAME_REGISTER_ACK,
    FramingError,
    LiveBrokerServer,
    decode_frames,
    encode_frame,
    request,
)


class TestFraming:
    def test_roundtrip_single_frame(self):
        raw = encode_frame(FRAME_PUBLISH, {"topic": "t", "value": 1})
        frames, rest = decode_frames(raw)
        assert frames == [(FRAME_PUBLISH, {"topic": "t", "value": 1})]
        assert rest == b""

    def test_partial_frame_buffered(self):
        raw = encode_frame(FRAME_POLL, {"topic": "t"})
        frames, rest = decode_frames(raw[:-3])
        assert frames == []
        assert rest == raw[:-3]
        frames, rest = decode_frames(rest + raw[-3:])
        assert len(frames) == 1 and rest == b""

    def test_multiple_frames_in_one_buffer(self):
        raw = encode_frame(1, {"a": 1}) + encode_frame(2, {"b": 2})
        frames, rest = decode_frames(raw)
        assert [f[0] for f in frames] == [1, 2]
        assert rest == b""

    def test_header_layout(self):
        raw = encode_frame(7, {})
        # u32 LE length (type byte + body), u8 type, JSON body
        assert raw[4] == 7
        assert int.from_bytes(raw[0:4], "little") == len(raw) - 4

    def test_zero_length_frame_rejected(self):
        with pytest.raises(FramingError):
            decode_frames(b"\x00\x00\x00\x00\x01")


@pytest.fixture
def server():
    sched = Scheduler(0)
    coord = build_cluster(sched, Fabric(sched), 4)
    coord.create_topic("t", 3)
    srv = LiveBrokerServer(coord)
    srv.start()
    yield srv
    srv.close()


def _connect(srv):
    sock = socket.create_connection(srv.address, timeout=5)
    sock.settimeout(5)
    return sock


class TestLiveBrokerServer:
    def test_publish_then_poll(self, server):
        with _connect(server) as sock:
            ftype, doc = request(sock, FRAME_PUBLISH, {"topic": "t", "value": {"x": 1}})
            assert ftype == FRAME_PUBLISH_ACK
            assert doc["offset"] == 0
            ftype, doc = request(sock, FRAME_POLL, {"topic": "t", "from_offset": 0})
            assert ftype == FRAME_POLL_RESPONSE
            assert [r["value"] for r in doc["records"]] == [{"x": 1}]

    def test_register(self, server):
        with _connect(server) as sock:
            ftype, doc = request(
                sock, FRAME_REGISTER,
                {"node_id": "tx", "role": "controller", "endpoint": "node://tx"},
            )
            assert ftype == FRAME_REGISTER_ACK
            assert doc["node_id"] == "tx"

    def test_unknown_topic_is_error_frame(self, server):
        with _connect(server) as sock:
            ftype, doc = request(sock, FRAME_PUBLISH, {"topic": "nope", "value": 1})
            assert ftype == FRAME_ERROR
            assert "nope" in doc["error"] or "leader" in doc["error"]
