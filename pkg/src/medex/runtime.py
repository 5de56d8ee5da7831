"""Shared component plumbing: timing knobs, run context, and the event-loop base class.

Every protocol participant (config server, registrar, automaton agent,
gateway) is a Component: a serialized event loop owned by the simulation
driver. Components interact only by frames over the network fabric and by
timers on the shared clock; killing a component bumps its epoch so stale
timers become no-ops, and restarting builds a fresh instance.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import payloads, wire
from .simnet import SimNetwork, TimerHandle, VirtualClock
from .telemetry import WORK_FRAME, Metrics, Tracer

PRIORITY_LIVENESS = 7  # heartbeats, death notices, fail-over coordination
PRIORITY_CONTROL = 6   # registration handshakes and queries

DEMO_KEY = bytes(range(16))  # static pre-shared demo key; real deployments configure their own


@dataclass(frozen=True)
class Timing:
    """Protocol timing configuration (all virtual seconds)."""

    config_heartbeat_s: float = 5.0   # registrar <-> config server period
    unit_heartbeat_s: float = 5.0     # registrar <-> automaton period
    miss_threshold: int = 3           # consecutive misses that declare failure
    poll_period_s: float = 0.2
    poll_max_batch: int = 64
    queue_capacity: int = 1024
    discovery_retries: int = 10
    discovery_spacing_s: float = 1.0
    discovery_cooldown_s: float = 5.0
    reply_timeout_s: float = 5.0
    backoff_initial_s: float = 1.0
    backoff_cap_s: float = 32.0


@dataclass
class Runtime:
    """Everything a component needs to participate in a run."""

    clock: VirtualClock
    net: SimNetwork
    tracer: Tracer
    metrics: Metrics
    key: bytes = DEMO_KEY
    timing: Timing = field(default_factory=Timing)
    gateways: dict = field(default_factory=dict)  # entity -> RmeGateway, for the local subscribe API

    @property
    def now(self) -> float:
        return self.clock.now

    def gateway(self, entity: int):
        return self.gateways.get(entity)


class Component:
    """Base event loop: frame receive/dispatch, epoch-guarded timers, tracing."""

    def __init__(self, rt: Runtime, endpoint: str, entity: int, address: wire.Address):
        self.rt = rt
        self.timing = rt.timing  # bound at construction so per-entity overrides stick
        self.endpoint = endpoint
        self.entity = entity
        self.address = address
        self.alive = False
        self._epoch = 0
        self._timers: list[TimerHandle] = []

    # -- lifecycle -----------------------------------------------------------

    def start(self, now: float) -> None:
        self.alive = True
        self.rt.net.register(self.endpoint, self.entity, self._on_network)
        self.trace("started")
        self.on_start(now)

    def on_start(self, now: float) -> None:  # override
        pass

    def kill(self) -> None:
        """Hard stop: no more frames, all pending timers die with the epoch."""
        self.alive = False
        self._epoch += 1
        for h in self._timers:
            h.cancel()
        self._timers.clear()
        self.rt.net.unregister(self.endpoint)
        self.trace("killed")

    # -- timers ---------------------------------------------------------------

    def schedule(self, delay: float, fn, *args) -> TimerHandle:
        epoch = self._epoch

        def guarded():
            if self._epoch == epoch and self.alive:
                fn(*args)

        handle = self.rt.clock.call_later(delay, guarded)
        self._timers.append(handle)
        if len(self._timers) > 256:
            self._timers = [h for h in self._timers if not h.cancelled and h.when >= self.rt.now]
        return handle

    def every(self, period: float, fn) -> "RepeatingTimer":
        """Repeating timer; fn runs first after one full period."""
        timer = RepeatingTimer(self, period, fn, self._epoch)
        timer.start()
        return timer

    # -- telemetry -------------------------------------------------------------

    def trace(self, event: str, **fields) -> None:
        self.rt.tracer.emit(self.rt.now, self.endpoint, event, **fields)

    def count(self, name: str, n: int = 1) -> None:
        self.rt.metrics.inc(self.endpoint, name, n)

    # -- frame I/O --------------------------------------------------------------

    def _on_network(self, data: bytes, src_ep: str, now: float) -> None:
        if not self.alive:
            return
        self.rt.metrics.work(self.endpoint, WORK_FRAME)
        self.count("frames_received")
        try:
            header = wire.decode_header(data[: wire.HEADER_LEN])
        except wire.WireError as e:
            self.trace("frame_rejected", reason=str(e))
            self.count("frames_rejected")
            return
        kind = wire.message_kind(int(header.message_type))
        try:
            if kind == "configuration":
                h, plain = wire.open_frame(data, self.rt.key)
                fields = payloads.decode_config(wire.MessageType(int(h.message_type)), plain)
                self.on_config(h, fields, src_ep, now)
            elif kind == "application-data":
                self.on_app_frame(header, data, src_ep, now)
            else:
                self.trace("frame_rejected", reason="reserved message type")
                self.count("frames_rejected")
        except wire.WireError as e:
            self.trace("frame_rejected", reason=str(e))
            self.count("frames_rejected")

    def on_config(self, header: wire.MessageHeader, fields: dict, src_ep: str, now: float) -> None:
        pass  # override

    def on_app_frame(self, header: wire.MessageHeader, data: bytes, src_ep: str, now: float) -> None:
        pass  # override

    def send_config(
        self,
        dst_ep: str,
        mtype: wire.MessageType,
        dst_addr: wire.Address | None = None,
        src_addr: wire.Address | None = None,
        priority: int = PRIORITY_CONTROL,
        safe_state_uid: int = 0,
        **fields,
    ) -> bool:
        header = wire.MessageHeader(
            message_type=mtype,
            priority=priority,
            checksum_flag=True,
            open_loop_safe_state=safe_state_uid,
            source=src_addr or self.address,
            destination=dst_addr or wire.Address(0, 0, 0),
        )
        frame = wire.seal_frame(header, payloads.encode_config(mtype, **fields), self.rt.key)
        if mtype not in (wire.MessageType.HEARTBEAT, wire.MessageType.I_AM_RUNNING):
            # handshake-level traffic is traced; periodic liveness would drown it
            self.trace("config_sent", message_type=wire.message_name(int(mtype)), dst=dst_ep)
        self.count("frames_sent")
        return self.rt.net.send(self.endpoint, dst_ep, frame)

    def send_raw(self, dst_ep: str, frame: bytes) -> bool:
        self.count("frames_sent")
        return self.rt.net.send(self.endpoint, dst_ep, frame)


class RepeatingTimer:
    """A cancellable repeating schedule; cancel() stops the whole chain."""

    def __init__(self, owner: Component, period: float, fn, epoch: int):
        self.owner = owner
        self.period = period
        self.fn = fn
        self.epoch = epoch
        self.cancelled = False
        self._handle: TimerHandle | None = None

    def start(self) -> None:
        self._handle = self.owner.rt.clock.call_later(self.period, self._tick)
        self.owner._timers.append(self._handle)

    def _tick(self) -> None:
        if self.cancelled or self.owner._epoch != self.epoch or not self.owner.alive:
            return
        self.fn()
        if not self.cancelled and self.owner._epoch == self.epoch and self.owner.alive:
            self.start()

    def cancel(self) -> None:
        self.cancelled = True
        if self._handle:
            self._handle.cancel()
