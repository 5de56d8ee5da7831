"""Deterministic simulated network: virtual clock, links with latency/loss/partitions.

The clock owns one ordered schedule; advancing it fires every due timer and
delivery in timestamp order (ties resolve by registration order), which makes
whole scenario runs bit-reproducible. Links apply latency, jitter, probabilistic
loss, bandwidth serialization delay, and scheduled partition windows, each from
a named seeded random stream.
"""

from __future__ import annotations

import heapq
import random
import zlib
from dataclasses import dataclass
from typing import Callable

from .telemetry import Metrics, Tracer


class TimerHandle:
    __slots__ = ("when", "cancelled")

    def __init__(self, when: float):
        self.when = when
        self.cancelled = False

    def cancel(self) -> None:
        self.cancelled = True


class VirtualClock:
    """Monotone virtual time with an explicit event schedule.

    In manual mode, time only moves through advance(); real-time mode is the
    same clock advanced by a wall-clock driver.
    """

    def __init__(self, mode: str = "manual"):
        if mode not in ("manual", "real-time"):
            raise ValueError(f"unknown clock mode {mode!r}")
        self.mode = mode
        self.now = 0.0
        self._heap: list[tuple[float, int, TimerHandle, Callable, tuple]] = []
        self._seq = 0

    def call_at(self, when: float, fn: Callable, *args) -> TimerHandle:
        # Scheduling in the past clamps to now so cascades within one
        # advance still fire during that advance.
        when = max(when, self.now)
        handle = TimerHandle(when)
        heapq.heappush(self._heap, (when, self._seq, handle, fn, args))
        self._seq += 1
        return handle

    def call_later(self, delay: float, fn: Callable, *args) -> TimerHandle:
        return self.call_at(self.now + delay, fn, *args)

    def next_time(self) -> float | None:
        while self._heap and self._heap[0][2].cancelled:
            heapq.heappop(self._heap)
        return self._heap[0][0] if self._heap else None

    def pending(self) -> int:
        return sum(1 for item in self._heap if not item[2].cancelled)

    def advance(self, target: float) -> int:
        """Fire everything scheduled at or before target, in order; returns fire count."""
        if target < self.now:
            raise ValueError(f"clock cannot move backwards ({target} < {self.now})")
        fired = 0
        while self._heap and self._heap[0][0] <= target:
            when, _, handle, fn, args = heapq.heappop(self._heap)
            if handle.cancelled:
                continue
            self.now = when
            fired += 1
            fn(*args)
        self.now = target
        return fired

    def advance_by(self, delta: float) -> int:
        return self.advance(self.now + delta)


@dataclass(frozen=True)
class LinkProfile:
    """Network conditions for one link."""

    latency_s: float = 0.0
    jitter_s: float = 0.0
    drop_probability: float = 0.0
    bandwidth_bps: float = 0.0  # 0 means unlimited
    partitions: tuple[tuple[float, float], ...] = ()

    def in_partition(self, t: float) -> bool:
        return any(start <= t < end for start, end in self.partitions)


def derive_seed(scenario_seed: int, name: str) -> int:
    """Stable per-link seed; hash() is salted per process so crc32 is used instead."""
    return (scenario_seed << 32) ^ zlib.crc32(name.encode())


class SimLink:
    """One bidirectional link; delivery scheduling is deterministic given the seed."""

    def __init__(
        self,
        name: str,
        profile: LinkProfile,
        clock: VirtualClock,
        seed: int,
        tracer: Tracer | None = None,
        metrics: Metrics | None = None,
    ):
        self.name = name
        self.profile = profile
        self.clock = clock
        self.seed = seed
        self.rng = random.Random(seed)
        self.tracer = tracer
        self.metrics = metrics
        self.forced_down = False
        self.sent = 0
        self.delivered = 0
        self.dropped = 0

    def set_up(self, up: bool) -> None:
        self.forced_down = not up
        if self.tracer:
            self.tracer.emit(self.clock.now, f"link:{self.name}", "link_state", up=up)

    def _drop(self, reason: str) -> None:
        self.dropped += 1
        if self.tracer:
            self.tracer.emit(self.clock.now, f"link:{self.name}", "frame_dropped", reason=reason)
        if self.metrics:
            self.metrics.inc(f"link:{self.name}", "dropped")

    def send(self, data: bytes, deliver: Callable[[bytes], None]) -> bool:
        """Schedule a delivery; returns False when the frame is dropped."""
        now = self.clock.now
        self.sent += 1
        if self.metrics:
            self.metrics.inc(f"link:{self.name}", "sent")
        if self.forced_down:
            self._drop("link_down")
            return False
        delay = self.profile.latency_s
        if self.profile.jitter_s:
            delay += self.rng.uniform(-self.profile.jitter_s, self.profile.jitter_s)
        begin = now + max(delay, 0.0)
        # Partition semantics: a frame is lost iff its delivery would begin
        # inside a scheduled window.
        if self.profile.in_partition(begin):
            self._drop("partition")
            return False
        if self.profile.drop_probability and self.rng.random() < self.profile.drop_probability:
            self._drop("loss")
            return False
        if self.profile.bandwidth_bps:
            begin += len(data) * 8 / self.profile.bandwidth_bps

        def complete():
            self.delivered += 1
            if self.metrics:
                self.metrics.inc(f"link:{self.name}", "delivered")
            deliver(data)

        self.clock.call_at(begin, complete)
        return True


PERFECT = LinkProfile()


class SimNetwork:
    """Endpoint registry plus link fabric.

    Endpoints are strings ("e1.u1.reg"); each belongs to an entity. Traffic
    within an entity rides that entity's local link (perfect by default);
    traffic between entities requires an inter-entity link, which only
    gateways are expected to use.
    """

    def __init__(self, clock: VirtualClock, tracer: Tracer, metrics: Metrics, seed: int = 0):
        self.clock = clock
        self.tracer = tracer
        self.metrics = metrics
        self.seed = seed
        self._handlers: dict[str, Callable[[bytes, str, float], None]] = {}
        self._entity_of: dict[str, int] = {}
        self._pair_links: dict[frozenset, SimLink] = {}
        self._local_links: dict[int, SimLink] = {}
        self._links_by_name: dict[str, SimLink] = {}

    def register(self, endpoint: str, entity: int, handler) -> None:
        self._handlers[endpoint] = handler
        self._entity_of[endpoint] = entity

    def unregister(self, endpoint: str) -> None:
        self._handlers.pop(endpoint, None)

    def is_registered(self, endpoint: str) -> bool:
        return endpoint in self._handlers

    def entity_of(self, endpoint: str) -> int | None:
        return self._entity_of.get(endpoint)

    def add_link(self, name: str, entity_a: int, entity_b: int, profile: LinkProfile) -> SimLink:
        link = SimLink(name, profile, self.clock, derive_seed(self.seed, name), self.tracer, self.metrics)
        self._pair_links[frozenset((entity_a, entity_b))] = link
        self._links_by_name[name] = link
        return link

    def link_named(self, name: str) -> SimLink | None:
        return self._links_by_name.get(name)

    def link_between(self, entity_a: int, entity_b: int) -> SimLink | None:
        return self._pair_links.get(frozenset((entity_a, entity_b)))

    def _local_link(self, entity: int) -> SimLink:
        if entity not in self._local_links:
            name = f"local:e{entity}"
            self._local_links[entity] = SimLink(
                name, PERFECT, self.clock, derive_seed(self.seed, name), self.tracer, self.metrics
            )
        return self._local_links[entity]

    def send(self, src_endpoint: str, dst_endpoint: str, data: bytes) -> bool:
        """Route one frame; returns False when it was dropped or unroutable."""
        src_entity = self._entity_of.get(src_endpoint)
        dst_entity = self._entity_of.get(dst_endpoint)
        if src_entity is None or dst_entity is None:
            self.tracer.emit(
                self.clock.now, "net", "frame_unroutable",
                src=src_endpoint, dst=dst_endpoint, reason="unknown_endpoint",
            )
            self.metrics.inc("net", "unroutable")
            return False
        if src_entity == dst_entity:
            link = self._local_link(src_entity)
        else:
            link = self.link_between(src_entity, dst_entity)
            if link is None:
                self.tracer.emit(
                    self.clock.now, "net", "frame_unroutable",
                    src=src_endpoint, dst=dst_endpoint, reason="no_link",
                )
                self.metrics.inc("net", "unroutable")
                return False

        def deliver(frame: bytes):
            handler = self._handlers.get(dst_endpoint)
            if handler is None:
                # Destination died (or never existed) while the frame was in flight.
                self.tracer.emit(
                    self.clock.now, "net", "frame_undeliverable", src=src_endpoint, dst=dst_endpoint
                )
                self.metrics.inc("net", "undeliverable")
                return
            handler(frame, src_endpoint, self.clock.now)

        return link.send(data, deliver)
