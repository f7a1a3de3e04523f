"""Replicated publish-subscribe broker cluster with coordinator-led leader
designation, a registration/lease service, and four-timestamp clock sync.

Every broker and the coordinator is an actor on the shared event scheduler;
all cross-actor traffic goes through the message fabric, which models per-hop
latency with per-link FIFO delivery. Replication is quorum-ack: a publish is
acknowledged only once ceil((rf+1)/2) replicas (leader included) hold the
record, and only committed records are visible to consumers. Delivery is
at-least-once; consumers deduplicate by publisher sequence.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

from .sim import Scheduler, ms_ns, ns

DEFAULT_HOP_MS = 2.0
DEFAULT_HOP_JITTER_MS = 0.5
DEFAULT_CLUSTER_SIZE = 4
DEFAULT_REPLICATION = 3
LEASE_TTL_S = 5.0
ELECTION_TIMEOUT_MS = 500.0
FAILURE_DETECTION_MS = 100.0
PUBLISH_TIMEOUT_MS = 100.0

SYSTEM_TOPICS = ("telemetry.tx", "telemetry.rx", "commands", "events")


class MiddlewareError(Exception):
    pass


class TopicExistsError(MiddlewareError):
    pass


class UnknownTopicError(MiddlewareError):
    pass


class CapacityError(MiddlewareError):
    pass


class UnavailableError(MiddlewareError):
    """Retryable: no leader currently serving the topic."""


class LeaseExpiredError(MiddlewareError):
    pass


def quorum(rf: int) -> int:
    return math.ceil((rf + 1) / 2)


@dataclass(frozen=True)
class LogRecord:
    topic: str
    offset: int
    key: bytes
    payload: bytes
    append_t_ns: int


@dataclass(frozen=True)
class Lease:
    node_id: str
    role: str
    endpoint: str
    expiry_t_ns: int


@dataclass(frozen=True)
class SyncSample:
    """Four-timestamp exchange: client send, server receive, server send,
    client receive."""

    t1: int
    t2: int
    t3: int
    t4: int

    def __post_init__(self) -> None:
        if self.t4 < self.t1 or self.t3 < self.t2:
            raise ValueError(f"inconsistent sync sample {self}")


def sync_offset(s: SyncSample) -> tuple[float, float]:
    """Clock offset and round-trip delay from a four-timestamp sample.

    offset = ((t2-t1)+(t3-t4))/2; delay = (t4-t1)-(t3-t2). A negative delay
    means the timestamps are untrustworthy and the sample is rejected.
    """
    delay = (s.t4 - s.t1) - (s.t3 - s.t2)
    if delay < 0:
        raise ValueError(f"negative round-trip delay {delay}")
    offset = ((s.t2 - s.t1) + (s.t3 - s.t4)) / 2.0
    return offset, delay


def select_sync_offset(samples: list[SyncSample]) -> float:
    """Minimum-delay filtering over a window of exchanges."""
    best = min(samples, key=lambda s: sync_offset(s)[1])
    return sync_offset(best)[0]


class Fabric:
    """In-process message fabric: seeded per-hop latency, FIFO per link."""

    def __init__(
        self,
        sched: Scheduler,
        hop_ms: float = DEFAULT_HOP_MS,
        jitter_ms: float = DEFAULT_HOP_JITTER_MS,
    ):
        self.sched = sched
        self.hop_ms = hop_ms
        self.jitter_ms = jitter_ms
        self.rng = sched.rng("fabric")
        self._last: dict[tuple[str, str], int] = {}

    def mean_hop_ms(self) -> float:
        return self.hop_ms

    def send(self, src: str, dst: str, fn: Callable[[], None]) -> None:
        latency = self.hop_ms + self.rng.uniform(-self.jitter_ms, self.jitter_ms)
        t = self.sched.now_ns + ms_ns(latency)
        link = (src, dst)
        t = max(t, self._last.get(link, 0) + 1)  # FIFO per link
        self._last[link] = t
        self.sched.at(t, fn)


@dataclass
class TopicMeta:
    name: str
    rf: int
    replicas: list[str]
    leader: Optional[str]
    epoch: int = 0


class Broker:
    """One replica node: holds topic logs, serves appends/fetches, and acts
    as leader where designated."""

    def __init__(self, broker_id: str, sched: Scheduler, fabric: Fabric):
        self.id = broker_id
        self.sched = sched
        self.fabric = fabric
        self.alive = True
        self.log: dict[str, list[LogRecord]] = {}
        self.hw: dict[str, int] = {}
        self.epoch: dict[str, int] = {}
        self.leading: dict[str, bool] = {}
        self.replicas: dict[str, list[str]] = {}
        self.peers: dict[str, "Broker"] = {}
        # leader-side state
        self._acks: dict[tuple[str, int], set[str]] = {}
        self._waiters: dict[tuple[str, int], list[Callable[[int], None]]] = {}
        self._subs: dict[str, dict[str, tuple[Callable[[LogRecord], None], int]]] = {}

    # -- topic lifecycle -------------------------------------------------

    def host_topic(self, topic: str, epoch: int, replicas: list[str], leader: bool):
        self.log.setdefault(topic, [])
        self.hw.setdefault(topic, 0)
        self.epoch[topic] = epoch
        self.leading[topic] = leader
        self.replicas[topic] = replicas
        if leader:
            self._subs.setdefault(topic, {})

    # -- leader path -----------------------------------------------------

    def handle_publish(
        self, topic: str, key: bytes, payload: bytes, reply: Callable[[Optional[int]], None]
    ) -> None:
        """reply(offset) on commit, reply(None) for not-leader rejection."""
        if not self.alive:
            return
        if not self.leading.get(topic, False):
            reply(None)
            return
        offset = len(self.log[topic])
        record = LogRecord(topic, offset, key, payload, self.sched.now_ns)
        self.log[topic].append(record)
        self._acks[(topic, offset)] = {self.id}
        self._waiters.setdefault((topic, offset), []).append(reply)
        for rid in self.replicas[topic]:
            if rid != self.id:
                self._send_append(rid, topic, offset)
        self._advance_commit(topic)

    def _send_append(self, rid: str, topic: str, offset: int) -> None:
        record = self.log[topic][offset]
        epoch = self.epoch[topic]
        hw = self.hw[topic]
        peer = self.peers[rid]
        self.fabric.send(
            self.id, rid, lambda: peer.handle_append(self, epoch, record, hw)
        )

    def handle_append_ack(self, topic: str, epoch: int, offset: int, rid: str) -> None:
        if not self.alive or epoch != self.epoch.get(topic) or not self.leading.get(topic):
            return
        self._acks.setdefault((topic, offset), set()).add(rid)
        self._advance_commit(topic)

    def _advance_commit(self, topic: str) -> None:
        rf = len(self.replicas[topic])
        need = quorum(rf)
        advanced = False
        while self.hw[topic] < len(self.log[topic]):
            offset = self.hw[topic]
            if len(self._acks.get((topic, offset), set())) < need:
                break
            self.hw[topic] = offset + 1
            advanced = True
            for reply in self._waiters.pop((topic, offset), []):
                reply(offset)
        if advanced:
            self._broadcast_hw(topic)
            self._push_subscribers(topic)

    def _broadcast_hw(self, topic: str) -> None:
        epoch, hw = self.epoch[topic], self.hw[topic]
        for rid in self.replicas[topic]:
            if rid != self.id:
                peer = self.peers[rid]
                self.fabric.send(
                    self.id, rid, lambda p=peer: p.handle_commit(topic, epoch, hw)
                )

    # -- follower path ---------------------------------------------------

    def handle_append(self, leader: "Broker", epoch: int, record: LogRecord, leader_hw: int) -> None:
        if not self.alive:
            return
        topic = record.topic
        if epoch < self.epoch.get(topic, 0):
            return  # stale leader
        self.epoch[topic] = epoch
        log = self.log.setdefault(topic, [])
        if record.offset < len(log):
            pass  # duplicate resync; already held
        elif record.offset == len(log):
            log.append(record)
        else:  # gap: ask the leader for the missing prefix
            self.fabric.send(
                self.id,
                leader.id,
                lambda: leader.handle_fetch(self, topic, len(log)),
            )
            return
        self.hw[topic] = max(self.hw.get(topic, 0), min(leader_hw, len(log)))
        self.fabric.send(
            self.id,
            leader.id,
            lambda: leader.handle_append_ack(topic, epoch, record.offset, self.id),
        )

    def handle_commit(self, topic: str, epoch: int, hw: int) -> None:
        if not self.alive or epoch < self.epoch.get(topic, 0):
            return
        self.hw[topic] = max(self.hw.get(topic, 0), min(hw, len(self.log.get(topic, []))))

    def handle_fetch(self, follower: "Broker", topic: str, from_offset: int) -> None:
        if not self.alive or not self.leading.get(topic):
            return
        for offset in range(from_offset, len(self.log[topic])):
            self._send_append(follower.id, topic, offset)

    # -- consumer path (leader only) ---------------------------------------

    def handle_poll(
        self, topic: str, from_offset: int, max_records: int, reply: Callable
    ) -> None:
        if not self.alive:
            return
        if not self.leading.get(topic, False):
            reply(None)
            return
        end = min(self.hw[topic], from_offset + max_records)
        reply(list(self.log[topic][from_offset:end]))

    def handle_subscribe(
        self, topic: str, sub_id: str, from_offset: int, deliver: Callable[[LogRecord], None]
    ) -> None:
        if not self.alive or not self.leading.get(topic, False):
            return
        self._subs.setdefault(topic, {})[sub_id] = (deliver, from_offset)
        self._push_subscribers(topic)

    def _push_subscribers(self, topic: str) -> None:
        subs = self._subs.get(topic, {})
        for sub_id, (deliver, next_off) in list(subs.items()):
            while next_off < self.hw[topic]:
                record = self.log[topic][next_off]
                self.fabric.send(self.id, sub_id, lambda r=record, d=deliver: d(r))
                next_off += 1
            subs[sub_id] = (deliver, next_off)

    # -- election support ---------------------------------------------------

    def handle_len_query(self, topic: str, reply: Callable[[str, int], None]) -> None:
        if not self.alive:
            return
        reply(self.id, len(self.log.get(topic, [])))

    def become_leader(self, topic: str, epoch: int, replicas: list[str]) -> None:
        if not self.alive:
            return
        self.host_topic(topic, epoch, replicas, leader=True)
        # Re-replicate the whole suffix beyond the commit point so committed
        # records from the previous epoch regain a quorum under this one.
        for offset in range(self.hw[topic], len(self.log[topic])):
            self._acks[(topic, offset)] = {self.id}
            for rid in replicas:
                if rid != self.id:
                    self._send_append(rid, topic, offset)
        self._advance_commit(topic)

    def become_follower(self, topic: str, epoch: int, leader: "Broker") -> None:
        if not self.alive:
            return
        self.leading[topic] = False
        self.epoch[topic] = max(self.epoch.get(topic, 0), epoch)
        self._subs.pop(topic, None)


class Coordinator:
    """Single logical coordination service: topic metadata, leader
    designation, registration leases, and the time reference."""

    def __init__(
        self,
        sched: Scheduler,
        fabric: Fabric,
        election_timeout_ms: float = ELECTION_TIMEOUT_MS,
        detection_delay_ms: float = FAILURE_DETECTION_MS,
    ):
        self.id = "coordinator"
        self.sched = sched
        self.fabric = fabric
        self.election_timeout_ns = ms_ns(election_timeout_ms)
        self.detection_delay_ns = ms_ns(detection_delay_ms)
        self.brokers: dict[str, Broker] = {}
        self.topics: dict[str, TopicMeta] = {}
        self.leases: dict[str, Lease] = {}
        self._topic_watchers: dict[str, list[Callable[[str, str], None]]] = {}
        self.leader_changes: list[tuple[int, str, Optional[str]]] = []

    # -- cluster admin ------------------------------------------------------

    def add_broker(self, broker: Broker) -> None:
        self.brokers[broker.id] = broker
        for other in self.brokers.values():
            other.peers[broker.id] = broker
            broker.peers[other.id] = other

    def live_brokers(self) -> list[str]:
        return [b.id for b in self.brokers.values() if b.alive]

    def create_topic(self, name: str, replication_factor: int = DEFAULT_REPLICATION) -> TopicMeta:
        if name in self.topics:
            raise TopicExistsError(name)
        live = self.live_brokers()
        if replication_factor > len(live):
            raise CapacityError(
                f"rf={replication_factor} exceeds {len(live)} live brokers"
            )
        replicas = live[:replication_factor]
        meta = TopicMeta(name, replication_factor, replicas, leader=replicas[0], epoch=1)
        self.topics[name] = meta
        for rid in replicas:
            self.brokers[rid].host_topic(name, 1, replicas, leader=(rid == meta.leader))
        self.leader_changes.append((self.sched.now_ns, name, meta.leader))
        return meta

    def leader_of(self, topic: str) -> Optional[str]:
        if topic not in self.topics:
            raise UnknownTopicError(topic)
        return self.topics[topic].leader

    def watch_leadership(self, topic: str, cb: Callable[[str, str], None]) -> None:
        """cb(topic, leader_id) fires after every leader change."""
        self._topic_watchers.setdefault(topic, []).append(cb)

    # -- failure handling -----------------------------------------------------

    def fail_broker(self, broker_id: str) -> None:
        broker = self.brokers[broker_id]
        broker.alive = False
        self.sched.after(self.detection_delay_ns, lambda: self._on_detected_down(broker_id))

    def _on_detected_down(self, broker_id: str) -> None:
        if self.brokers[broker_id].alive:
            return  # restored before detection
        for meta in self.topics.values():
            if meta.leader == broker_id:
                meta.leader = None
                self.leader_changes.append((self.sched.now_ns, meta.name, None))
                self._start_election(meta.name)

    def restore_broker(self, broker_id: str) -> None:
        broker = self.brokers[broker_id]
        broker.alive = True
        for meta in self.topics.values():
            if broker_id in meta.replicas and meta.leader not in (None, broker_id):
                leader = self.brokers[meta.leader]
                broker.leading[meta.name] = False
                broker.epoch[meta.name] = meta.epoch
                # catch up from the leader's log
                from_off = len(broker.log.get(meta.name, []))
                self.fabric.send(
                    self.id,
                    meta.leader,
                    lambda l=leader, t=meta.name, f=from_off, b=broker: l.handle_fetch(b, t, f),
                )
            elif broker_id in meta.replicas and meta.leader is None:
                self._start_election(meta.name)

    def _start_election(self, topic: str) -> None:
        meta = self.topics[topic]
        live = [rid for rid in meta.replicas if self.brokers[rid].alive]
        if not live:
            return  # unavailable until a replica is restored
        lengths: dict[str, int] = {}

        def on_len(rid: str, length: int) -> None:
            lengths[rid] = length
            if len(lengths) == len(live):
                self._conclude_election(topic, lengths)

        for rid in live:
            broker = self.brokers[rid]
            self.fabric.send(
                self.id,
                rid,
                lambda b=broker: b.handle_len_query(
                    topic, lambda i, n: self.fabric.send(b.id, self.id, lambda: on_len(i, n))
                ),
            )

    def _conclude_election(self, topic: str, lengths: dict[str, int]) -> None:
        meta = self.topics[topic]
        live = {rid: n for rid, n in lengths.items() if self.brokers[rid].alive}
        if not live:
            return
        # longest log first, lowest id breaks ties
        leader_id = min(live, key=lambda rid: (-live[rid], rid))
        meta.epoch += 1
        meta.leader = leader_id
        self.leader_changes.append((self.sched.now_ns, topic, leader_id))
        for rid in meta.replicas:
            broker = self.brokers[rid]
            if rid == leader_id:
                self.fabric.send(
                    self.id,
                    rid,
                    lambda b=broker, e=meta.epoch: b.become_leader(topic, e, meta.replicas),
                )
            else:
                self.fabric.send(
                    self.id,
                    rid,
                    lambda b=broker, e=meta.epoch: b.become_follower(
                        topic, e, self.brokers[leader_id]
                    ),
                )
        for cb in self._topic_watchers.get(topic, []):
            self.fabric.send(self.id, "watcher", lambda c=cb: c(topic, leader_id))

    # -- registration / leases ----------------------------------------------

    def register(self, node_id: str, role: str, endpoint: str) -> Lease:
        lease = Lease(node_id, role, endpoint, self.sched.now_ns + ns(LEASE_TTL_S))
        self.leases[node_id] = lease  # supersedes any previous lease
        return lease

    def renew(self, lease: Lease) -> Lease:
        current = self.leases.get(lease.node_id)
        if current is None or current.expiry_t_ns < self.sched.now_ns:
            raise LeaseExpiredError(lease.node_id)
        fresh = replace(current, expiry_t_ns=self.sched.now_ns + ns(LEASE_TTL_S))
        self.leases[lease.node_id] = fresh
        return fresh

    def lookup(self, role: str) -> list[str]:
        return [
            l.endpoint
            for l in self.leases.values()
            if l.role == role and l.expiry_t_ns >= self.sched.now_ns
        ]

    def live_leases(self) -> list[Lease]:
        return [l for l in self.leases.values() if l.expiry_t_ns >= self.sched.now_ns]

    # -- time service ---------------------------------------------------------

    def handle_sync_request(self, t1_local: int, reply: Callable[[int, int, int], None]) -> None:
        t2 = self.sched.now_ns  # coordinator clock is the reference
        reply(t1_local, t2, self.sched.now_ns)


class LocalClock:
    """Per-node clock: true time plus a fixed offset, corrected after sync."""

    def __init__(self, sched: Scheduler, offset_ns: int = 0):
        self.sched = sched
        self.offset_ns = offset_ns
        self.correction_ns = 0.0

    def raw_ns(self) -> int:
        return self.sched.now_ns + self.offset_ns

    def now_ns(self) -> int:
        """Synchronized time: local clock plus the estimated correction."""
        return int(self.raw_ns() + self.correction_ns)


class MiddlewareClient:
    """Client-side handle used by controllers: routed publish with retry,
    subscriptions that survive leader changes, polling, leases, and sync."""

    def __init__(
        self,
        node_id: str,
        sched: Scheduler,
        fabric: Fabric,
        coordinator: Coordinator,
        clock: Optional[LocalClock] = None,
    ):
        self.node_id = node_id
        self.sched = sched
        self.fabric = fabric
        self.coordinator = coordinator
        self.clock = clock or LocalClock(sched)
        self._pub_seq = 0
        self._queue: list[tuple[str, bytes, bytes, Callable[[int], None]]] = []
        self._in_flight = False
        self._subs: dict[str, tuple[Callable[[LogRecord], None], int]] = {}
        self.publish_timeout_ns = ms_ns(PUBLISH_TIMEOUT_MS)

    # -- publish ---------------------------------------------------------------

    def publish(
        self, topic: str, key: bytes, payload: bytes, on_ack: Callable[[int], None] = None
    ) -> None:
        """At-least-once publish; per-client ordering is preserved by keeping
        a single publish in flight."""
        self._queue.append((topic, key, payload, on_ack or (lambda off: None)))
        if not self._in_flight:
            self._next_publish()

    def _next_publish(self) -> None:
        if not self._queue:
            self._in_flight = False
            return
        self._in_flight = True
        topic, key, payload, on_ack = self._queue[0]
        self._attempt_publish(topic, key, payload, on_ack, attempt=0)

    def _attempt_publish(self, topic, key, payload, on_ack, attempt) -> None:
        leader_id = self.coordinator.topics[topic].leader if topic in self.coordinator.topics else None
        done = {"acked": False}

        def on_reply(offset: Optional[int]) -> None:
            if done["acked"]:
                return
            if offset is None:
                return  # not leader; let the timeout drive the retry
            done["acked"] = True
            self._queue.pop(0)
            on_ack(offset)
            self._next_publish()

        def on_timeout() -> None:
            if not done["acked"]:
                self._attempt_publish(topic, key, payload, on_ack, attempt + 1)

        if leader_id is not None and self.coordinator.brokers[leader_id].alive:
            broker = self.coordinator.brokers[leader_id]
            self.fabric.send(
                self.node_id,
                leader_id,
                lambda: broker.handle_publish(
                    topic,
                    key,
                    payload,
                    lambda off: self.fabric.send(leader_id, self.node_id, lambda: on_reply(off)),
                ),
            )
        self.sched.after(self.publish_timeout_ns, on_timeout)

    # -- consume ---------------------------------------------------------------

    def subscribe(self, topic: str, from_offset: int, on_record: Callable[[LogRecord], None]) -> None:
        self._subs[topic] = (on_record, from_offset)
        self.coordinator.watch_leadership(topic, lambda t, leader: self._resubscribe(t))
        self._attach(topic)

    def _attach(self, topic: str) -> None:
        meta = self.coordinator.topics[topic]
        if meta.leader is None:
            return
        broker = self.coordinator.brokers[meta.leader]
        on_record, next_off = self._subs[topic]

        def deliver(record: LogRecord) -> None:
            handler, expected = self._subs[topic]
            if record.offset < expected:
                return  # duplicate after re-subscribe
            if record.offset > expected:
                self._resubscribe(topic)  # gap across a leader change
                return
            self._subs[topic] = (handler, expected + 1)
            handler(record)

        self.fabric.send(
            self.node_id,
            meta.leader,
            lambda: broker.handle_subscribe(topic, self.node_id, next_off, deliver),
        )

    def _resubscribe(self, topic: str) -> None:
        if topic in self._subs:
            self._attach(topic)

    def poll(
        self, topic: str, from_offset: int, max_records: int, reply: Callable
    ) -> None:
        meta = self.coordinator.topics.get(topic)
        if meta is None:
            raise UnknownTopicError(topic)
        if meta.leader is None:
            raise UnavailableError(topic)
        broker = self.coordinator.brokers[meta.leader]
        self.fabric.send(
            self.node_id,
            meta.leader,
            lambda: broker.handle_poll(
                topic,
                from_offset,
                max_records,
                lambda recs: self.fabric.send(meta.leader, self.node_id, lambda: reply(recs)),
            ),
        )

    # -- leases -----------------------------------------------------------------

    def register(self, role: str, endpoint: str, cb: Callable[[Lease], None]) -> None:
        self.fabric.send(
            self.node_id,
            self.coordinator.id,
            lambda: self._registered(self.coordinator.register(self.node_id, role, endpoint), cb),
        )

    def _registered(self, lease: Lease, cb: Callable[[Lease], None]) -> None:
        self.fabric.send(self.coordinator.id, self.node_id, lambda: cb(lease))

    # -- clock sync ---------------------------------------------------------------

    def sync_clock(self, exchanges: int = 8, on_done: Callable[[float], None] = None) -> None:
        """Run a window of four-timestamp exchanges against the coordinator and
        apply the minimum-delay offset estimate to the local clock."""
        samples: list[SyncSample] = []

        def one_exchange() -> None:
            t1 = self.clock.raw_ns()

            def server_side() -> None:
                t2 = self.sched.now_ns
                t3 = self.sched.now_ns
                self.fabric.send(
                    self.coordinator.id, self.node_id, lambda: client_side(t2, t3)
                )

            def client_side(t2: int, t3: int) -> None:
                samples.append(SyncSample(t1, t2, t3, self.clock.raw_ns()))
                if len(samples) < exchanges:
                    one_exchange()
                else:
                    offset = select_sync_offset(samples)
                    self.clock.correction_ns = offset
                    if on_done:
                        on_done(offset)

            self.fabric.send(self.node_id, self.coordinator.id, server_side)

        one_exchange()


def build_cluster(
    sched: Scheduler,
    fabric: Fabric,
    n_brokers: int = DEFAULT_CLUSTER_SIZE,
    election_timeout_ms: float = ELECTION_TIMEOUT_MS,
    detection_delay_ms: float = FAILURE_DETECTION_MS,
) -> Coordinator:
    coordinator = Coordinator(sched, fabric, election_timeout_ms, detection_delay_ms)
    for i in range(n_brokers):
        coordinator.add_broker(Broker(f"b{i}", sched, fabric))
    return coordinator
