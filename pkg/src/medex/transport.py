"""Push-poll transport: synchronized priority/FIFO queue, polling client, RME gateways.

Producers push sealed frames into a queue of eight FIFO lanes indexed by the
header priority; a polling client drains it on a fixed period in strict
priority-then-FIFO order. Remote Message Exchange gateways federate entities
over persistent links with publish-subscribe fan-out, sending at most one copy
of a published message per peer link no matter how many remote automata
subscribe.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from collections import deque

from . import wire
from .runtime import PRIORITY_LIVENESS, Component, Runtime
from .telemetry import WORK_POLL

LANES = 8


class SyncQueue:
    """Eight FIFO lanes with strict priority dequeue and bounded capacity.

    Safe for concurrent producers and one consumer; in virtual mode everything
    runs single-threaded and the lock is uncontended.
    """

    def __init__(self, capacity_per_lane: int = 1024):
        self.capacity = capacity_per_lane
        self._lanes: list[deque[bytes]] = [deque() for _ in range(LANES)]
        self._lock = threading.Lock()
        self.enqueued = 0
        self.dequeued = 0
        self.rejected = 0

    def push(self, frame: bytes) -> bool:
        """Enqueue by the frame's header priority; False on a full lane."""
        priority = wire.decode_header(frame[: wire.HEADER_LEN]).priority
        with self._lock:
            lane = self._lanes[priority]
            if len(lane) >= self.capacity:
                self.rejected += 1
                return False
            lane.append(frame)
            self.enqueued += 1
            return True

    def poll(self, max_batch: int) -> list[bytes]:
        """Up to max_batch frames, highest priority first, FIFO within a lane."""
        out: list[bytes] = []
        with self._lock:
            for lane in reversed(self._lanes):
                while lane and len(out) < max_batch:
                    out.append(lane.popleft())
                if len(out) >= max_batch:
                    break
            self.dequeued += len(out)
        return out

    def depth(self) -> int:
        with self._lock:
            return sum(len(lane) for lane in self._lanes)


class PollingClient:
    """Drains a SyncQueue on its owner's clock at a fixed period."""

    def __init__(self, owner: Component, queue: SyncQueue, period_s: float, max_batch: int, handler):
        self.owner = owner
        self.queue = queue
        self.period_s = period_s
        self.max_batch = max_batch
        self.handler = handler

    def start(self) -> None:
        self.owner.every(self.period_s, self._poll)

    def _poll(self) -> None:
        rt = self.owner.rt
        rt.metrics.work(self.owner.endpoint, WORK_POLL)
        rt.metrics.sample_queue_depth(rt.now, self.owner.endpoint, self.queue.depth())
        batch = self.queue.poll(self.max_batch)
        if batch:
            self.handler(batch)


@dataclass(frozen=True)
class Subscription:
    """Interest in all copies of (destination unit, message type) publishes."""

    unit: int
    message_type: wire.MessageType
    subscriber: wire.Address

    @property
    def topic(self) -> tuple[int, int]:
        return (self.unit, int(self.message_type))


class SubscriptionError(Exception):
    pass


class RmeGateway(Component):
    """Entity border router: unicast forwarding plus single-copy publish fan-out.

    The gateway learns unit locations from the config server's unit-spec
    broadcasts and live automata from registrar I-am-starting/I-am-stopping
    relays. Peer gateways exchange keepalives carrying their subscription
    topic tables, so a publishing side knows which links need a copy.
    """

    def __init__(self, rt: Runtime, endpoint: str, entity: int, peers: dict[int, str]):
        super().__init__(rt, endpoint, entity, wire.Address(entity, 0, 0))
        self.peers = dict(peers)  # entity -> peer gateway endpoint
        self.local_units: dict[int, str] = {}  # unit -> registrar endpoint
        self.live_automata: dict[tuple, None] = {}  # ordered set of address tuples
        self.local_subs: dict[tuple[int, int], dict[tuple, None]] = {}
        self.remote_topics: dict[int, set[tuple[int, int]]] = {}
        rt.gateways[entity] = self

    def on_start(self, now: float) -> None:
        self.every(self.timing.config_heartbeat_s, self._keepalive)

    # -- subscription management (local API, validated against live automata) --

    def subscribe(self, sub: Subscription) -> None:
        if sub.subscriber.as_tuple() not in self.live_automata:
            self.trace("subscribe_rejected", subscriber=str(sub.subscriber), topic=list(sub.topic))
            raise SubscriptionError(f"{sub.subscriber} is not a registered automaton")
        members = self.local_subs.setdefault(sub.topic, {})
        if sub.subscriber.as_tuple() not in members:
            members[sub.subscriber.as_tuple()] = None
            self.trace("subscribed", subscriber=str(sub.subscriber), topic=list(sub.topic))
            self._keepalive()

    def unsubscribe(self, sub: Subscription) -> None:
        members = self.local_subs.get(sub.topic)
        if members is not None and sub.subscriber.as_tuple() in members:
            del members[sub.subscriber.as_tuple()]
            if not members:
                del self.local_subs[sub.topic]
            self.trace("unsubscribed", subscriber=str(sub.subscriber), topic=list(sub.topic))
            self._keepalive()

    def _topic_table(self) -> list[tuple[int, int]]:
        return sorted(self.local_subs.keys())

    def _keepalive(self) -> None:
        topics = self._topic_table()
        for entity, ep in self.peers.items():
            self.send_config(
                ep,
                wire.MessageType.HEARTBEAT,
                dst_addr=wire.Address(entity, 0, 0),
                priority=PRIORITY_LIVENESS,
                topics=topics,
            )

    # -- control-plane wiring ---------------------------------------------------

    def on_config(self, header, fields, src_ep, now):
        mtype = wire.MessageType(int(header.message_type))
        if mtype == wire.MessageType.UNIT_SPEC:
            self.local_units[fields["unit"]] = fields["endpoint"]
        elif mtype == wire.MessageType.I_AM_STARTING:
            self.live_automata[fields["address"].as_tuple()] = None
        elif mtype == wire.MessageType.I_AM_STOPPING:
            gone = header.source.as_tuple()
            self.live_automata.pop(gone, None)
            for members in list(self.local_subs.values()):
                members.pop(gone, None)
            self.local_subs = {t: m for t, m in self.local_subs.items() if m}
        elif mtype == wire.MessageType.HEARTBEAT and header.source.entity != self.entity:
            self.remote_topics[header.source.entity] = set(
                (u, t) for u, t in fields.get("topics", [])
            )

    # -- data plane ----------------------------------------------------------------

    def _dead_letter(self, header: wire.MessageHeader, reason: str) -> None:
        self.count("dead_letter")
        self.trace(
            "dead_letter",
            reason=reason,
            destination=str(header.destination),
            message_type=wire.message_name(int(header.message_type)),
        )

    def _deliver_local(self, data: bytes, dst: wire.Address) -> None:
        registrar_ep = self.local_units.get(dst.unit)
        if registrar_ep is None:
            self._deliver_dead(data, f"no registrar for unit {dst.unit}")
            return
        self.count("local_deliveries")
        self.send_raw(registrar_ep, data)

    def _deliver_dead(self, data: bytes, reason: str) -> None:
        header = wire.decode_header(data[: wire.HEADER_LEN])
        self._dead_letter(header, reason)

    def _fan_out_local(self, header: wire.MessageHeader, data: bytes) -> None:
        topic = (header.destination.unit, int(header.message_type))
        src = header.source.as_tuple()
        for member in self.local_subs.get(topic, {}):
            if member == src:
                continue
            frame = wire.readdress_frame(data, wire.Address(*member))
            self._deliver_local(frame, wire.Address(*member))

    def on_app_frame(self, header, data, src_ep, now):
        inbound = self.rt.net.entity_of(src_ep) != self.entity
        dst = header.destination
        if dst.automaton == 0:  # published to a (unit, type) topic
            self.count("publishes_received")
            self._fan_out_local(header, data)
            if not inbound:
                topic = (dst.unit, int(header.message_type))
                for entity, ep in self.peers.items():
                    if topic in self.remote_topics.get(entity, ()):  # one copy per link
                        self.count(f"link_frames_to_e{entity}")
                        self.send_raw(ep, data)
            return
        if dst.entity == self.entity:
            self._deliver_local(data, dst)
        elif inbound:
            self._dead_letter(header, "misrouted inter-entity frame")
        else:
            peer_ep = self.peers.get(dst.entity)
            if peer_ep is None:
                self._dead_letter(header, f"no link to entity {dst.entity}")
            else:
                self.count(f"link_frames_to_e{dst.entity}")
                self.send_raw(peer_ep, data)
