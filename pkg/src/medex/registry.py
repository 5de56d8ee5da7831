"""Registration, heartbeat liveness, failure declaration, and ranked fail-over.

Three actors live here. The config server is the entity-wide directory: it
validates announce-registrar requests, answers location queries, and keeps
redundant ranked instances down to a single active one via I-am-running
suppression. The registrar admits and monitors one unit's automata and
relays membership changes. The automaton agent wraps a statechart instance
with the three-phase registration procedure, heartbeats, and the application
data plane (publish-subscribe through its entity gateway).

All timers obey a single discipline: a monitor expecting receipts every P
seconds declares failure at exactly N consecutive misses, i.e. N*P seconds
after the last receipt.
"""

from __future__ import annotations

from . import payloads, wire
from .automaton import AutomatonDef, AutomatonInstance, Event, Outbound
from .runtime import PRIORITY_LIVENESS, Component, Runtime
from .simnet import TimerHandle
from .telemetry import WORK_TRANSITION
from .transport import PollingClient, Subscription, SyncQueue
from .wire import Address, MessageType

REJECT_UNKNOWN_UNIT = 1
REJECT_UNIT_ACTIVE = 2
REJECT_DUPLICATE_AUTOMATON = 3
REJECT_WRONG_UNIT = 4

SYNC_TOPIC_TYPES = (
    MessageType.VITAL_SIGN,
    MessageType.STATE_TRANSITION_EVENT,
    MessageType.STATE_CONFIRMATION,
    MessageType.BEST_PRACTICE_COMMAND,
    MessageType.TIME_LOG,
)


class HeartbeatMonitor:
    """Miss counter: failure at exactly threshold consecutive silent periods."""

    def __init__(self, period: float, threshold: int, last_seen: float):
        self.period = period
        self.threshold = threshold
        self.last_seen = last_seen
        self.misses = 0

    def receipt(self, now: float) -> None:
        self.last_seen = now
        self.misses = 0

    def next_check(self) -> float:
        return self.last_seen + self.period * (self.misses + 1)

    def tick(self, now: float):
        """Returns 'ok', ('missed', k), or 'failed'."""
        if now >= self.next_check():
            self.misses += 1
            if self.misses >= self.threshold:
                return "failed"
            return ("missed", self.misses)
        return "ok"


class Watch:
    """Drives a HeartbeatMonitor on its owner's clock and reports failure once."""

    def __init__(self, owner: Component, period: float, threshold: int, on_failed, label: str):
        self.owner = owner
        self.monitor = HeartbeatMonitor(period, threshold, owner.rt.now)
        self.on_failed = on_failed
        self.label = label
        self._timer: TimerHandle | None = None
        self._arm()

    def _arm(self) -> None:
        if self._timer:
            self._timer.cancel()
        delay = self.monitor.next_check() - self.owner.rt.now
        self._timer = self.owner.schedule(delay, self._check)

    def _check(self) -> None:
        result = self.monitor.tick(self.owner.rt.now)
        if result == "failed":
            self.on_failed()
        elif result != "ok":
            self._arm()
        else:
            self._arm()

    def receipt(self) -> None:
        self.monitor.receipt(self.owner.rt.now)
        self._arm()

    def silent_for(self) -> float:
        return self.owner.rt.now - self.monitor.last_seen

    def cancel(self) -> None:
        if self._timer:
            self._timer.cancel()


class ConfigServer(Component):
    """Entity directory with ranked redundancy.

    Exactly one instance serves at a time: every active server tells all
    lower-ranked peers it is running; hearing that from a higher rank stops a
    server immediately (standby). A standby that stops hearing any higher
    rank for N periods promotes itself.
    """

    def __init__(
        self,
        rt: Runtime,
        endpoint: str,
        entity: int,
        rank: int,
        unit_table: set[int],
        peer_servers: list[tuple[int, str]],  # (rank, endpoint) of every instance, self included
        gateway_ep: str | None = None,
        active: bool | None = None,
    ):
        super().__init__(rt, endpoint, entity, Address(entity, 0, 0))
        self.rank = rank
        self.unit_table = set(unit_table)
        self.peer_servers = sorted(peer_servers)
        self.gateway_ep = gateway_ep
        lowest = min(r for r, _ in self.peer_servers) if self.peer_servers else rank
        self.active = (rank == lowest) if active is None else active
        self.unit_records: dict[int, dict] = {}  # unit -> {endpoint, watch, hb_timer}
        self._standby_watch: Watch | None = None
        self._running_timer: TimerHandle | None = None

    def on_start(self, now: float) -> None:
        if self.active:
            # At boot, peers may not be listening yet: first announcement
            # waits one period. A mid-run promotion announces immediately.
            self._start_active(announce_now=False)
        else:
            self._enter_standby()

    # -- rank coordination ------------------------------------------------------

    def _lower_ranked(self) -> list[str]:
        return [ep for r, ep in self.peer_servers if r > self.rank]

    def _start_active(self, announce_now: bool = True) -> None:
        self.active = True
        self.trace("cs_active", rank=self.rank)
        self.rt.metrics.mark(self.rt.now, "cs_active", endpoint=self.endpoint, rank=self.rank)
        if announce_now:
            self._announce_running()
        self._running_timer = self.every(self.timing.config_heartbeat_s, self._announce_running)

    def _announce_running(self) -> None:
        for ep in self._lower_ranked():
            self.send_config(ep, MessageType.I_AM_RUNNING, priority=PRIORITY_LIVENESS, rank=self.rank)

    def _enter_standby(self) -> None:
        self.active = False
        if self._running_timer:
            self._running_timer.cancel()
            self._running_timer = None
        for rec in self.unit_records.values():
            rec["watch"].cancel()
            rec["hb_timer"].cancel()
        self.unit_records.clear()
        t = self.timing
        self._standby_watch = Watch(
            self, t.config_heartbeat_s, t.miss_threshold, self._promote, "higher-ranked server"
        )
        self.trace("cs_standby", rank=self.rank)
        self.rt.metrics.mark(self.rt.now, "cs_standby", endpoint=self.endpoint, rank=self.rank)

    def _promote(self) -> None:
        if self._standby_watch:
            self._standby_watch.cancel()
            self._standby_watch = None
        self.trace("cs_promoted", rank=self.rank)
        self.rt.metrics.mark(self.rt.now, "cs_promoted", endpoint=self.endpoint, rank=self.rank)
        self._start_active()

    # -- request handling ----------------------------------------------------------

    def on_config(self, header, fields, src_ep, now):
        mtype = MessageType(int(header.message_type))
        if mtype == MessageType.I_AM_RUNNING:
            self._on_running(fields["rank"])
            return
        if not self.active:
            self.trace("ignored_inactive", message_type=wire.message_name(int(mtype)))
            return
        if mtype == MessageType.ANNOUNCE_REGISTRAR:
            self._handle_announce(header, fields, src_ep)
        elif mtype == MessageType.HEARTBEAT:
            rec = self.unit_records.get(header.source.unit)
            if rec and rec["endpoint"] == src_ep:
                rec["watch"].receipt()
        elif mtype == MessageType.CONFIG_SERVER_QUERY:
            self.send_config(
                src_ep, MessageType.CONFIGURATION_SERVER_LOCATED,
                dst_addr=header.source, rank=self.rank, endpoint=self.endpoint,
            )
        elif mtype == MessageType.REGISTRAR_QUERY:
            unit = fields["unit"]
            rec = self.unit_records.get(unit)
            if rec:
                self.send_config(
                    src_ep, MessageType.UNIT_SPEC, dst_addr=header.source,
                    unit=unit, endpoint=rec["endpoint"],
                )
            else:
                self.send_config(
                    src_ep, MessageType.REGISTRAR_UNKNOWN, dst_addr=header.source, unit=unit
                )

    def _on_running(self, sender_rank: int) -> None:
        if sender_rank < self.rank:
            if self.active:
                self.trace("cs_suppressed", by_rank=sender_rank)
                self._enter_standby()
            if self._standby_watch:
                self._standby_watch.receipt()

    def _handle_announce(self, header, fields, src_ep):
        unit = fields["unit"]
        endpoint = fields["endpoint"]
        if unit not in self.unit_table:
            self.trace("announce_rejected", unit=unit, reason="unknown_unit")
            self.send_config(
                src_ep, MessageType.REJECTION, dst_addr=header.source,
                reason_code=REJECT_UNKNOWN_UNIT, detail=f"unit {unit} not in entity table",
            )
            return
        if unit in self.unit_records:
            self.trace("announce_rejected", unit=unit, reason="unit_active")
            self.send_config(
                src_ep, MessageType.REJECTION, dst_addr=header.source,
                reason_code=REJECT_UNIT_ACTIVE, detail=f"unit {unit} already has a live registrar",
            )
            return
        t = self.timing
        others = [(u, rec["endpoint"]) for u, rec in self.unit_records.items()]
        self.unit_records[unit] = {
            "endpoint": endpoint,
            "watch": Watch(
                self, t.config_heartbeat_s, t.miss_threshold,
                lambda u=unit: self._registrar_dead(u), f"registrar u{unit}",
            ),
            "hb_timer": self.every(
                t.config_heartbeat_s,
                lambda ep=endpoint, u=unit: self.send_config(
                    ep, MessageType.HEARTBEAT, priority=PRIORITY_LIVENESS
                ),
            ),
        }
        self.trace("registrar_noted", unit=unit, endpoint=endpoint)
        self.rt.metrics.mark(self.rt.now, "registrar_noted", unit=unit, endpoint=endpoint)
        self.send_config(src_ep, MessageType.REGISTRAR_NOTED, dst_addr=header.source, unit=unit)
        # Spread the new unit's location: to every other registrar, or back to
        # the first-ever registrar itself when it is alone. The entity gateway
        # always gets a copy so it can route application frames by unit.
        if others:
            for _, ep in others:
                self.send_config(ep, MessageType.UNIT_SPEC, unit=unit, endpoint=endpoint)
        else:
            self.send_config(endpoint, MessageType.UNIT_SPEC, unit=unit, endpoint=endpoint)
        if self.gateway_ep:
            self.send_config(self.gateway_ep, MessageType.UNIT_SPEC, unit=unit, endpoint=endpoint)

    def _registrar_dead(self, unit: int) -> None:
        rec = self.unit_records.pop(unit, None)
        if not rec:
            return
        rec["watch"].cancel()
        rec["hb_timer"].cancel()
        self.trace("registrar_declared_dead", unit=unit, silent_for=self.rt.now - rec["watch"].monitor.last_seen)
        self.rt.metrics.mark(self.rt.now, "registrar_declared_dead", unit=unit)


class Registrar(Component):
    """Per-unit registration server: admits automata, monitors them, relays membership."""

    def __init__(
        self,
        rt: Runtime,
        endpoint: str,
        entity: int,
        unit: int,
        cs_endpoints: list[str],  # ordered highest rank first
        gateway_ep: str | None = None,
    ):
        super().__init__(rt, endpoint, entity, Address(entity, unit, 0))
        self.unit = unit
        self.cs_endpoints = list(cs_endpoints)
        self.gateway_ep = gateway_ep
        self.registered = False
        self.current_cs: str | None = None
        self.peer_registrars: dict[int, str] = {}
        self.automata: dict[int, dict] = {}  # uid -> {endpoint, watch, hb_timer}
        self.queue = SyncQueue(rt.timing.queue_capacity)
        self._poller = PollingClient(
            self, self.queue, rt.timing.poll_period_s, rt.timing.poll_max_batch, self._dispatch_batch
        )
        self._cs_watch: Watch | None = None
        self._cs_hb_timer: TimerHandle | None = None
        self._announce_timeout: TimerHandle | None = None
        self._announce_idx = 0
        self._backoff = rt.timing.backoff_initial_s

    def on_start(self, now: float) -> None:
        self._poller.start()
        self._announce()

    # -- registration with the config server -------------------------------------

    def _announce(self) -> None:
        target = self.cs_endpoints[self._announce_idx % len(self.cs_endpoints)]
        self.trace("announcing", config_server=target)
        self.send_config(target, MessageType.ANNOUNCE_REGISTRAR, unit=self.unit, endpoint=self.endpoint)
        t = self.timing
        window = t.miss_threshold * t.config_heartbeat_s
        self._announce_timeout = self.schedule(window, self._announce_next)

    def _announce_next(self) -> None:
        # No reply inside N*T: cycle to the next known config server address.
        self._announce_idx += 1
        self._announce()

    def _cancel_announce_timeout(self) -> None:
        if self._announce_timeout:
            self._announce_timeout.cancel()
            self._announce_timeout = None

    def _cs_lost(self) -> None:
        silent = self._cs_watch.silent_for() if self._cs_watch else None
        self.trace("config_server_lost", silent_for=silent)
        self.rt.metrics.mark(self.rt.now, "config_server_lost", unit=self.unit, endpoint=self.endpoint)
        self.registered = False
        self.current_cs = None
        if self._cs_watch:
            self._cs_watch.cancel()
            self._cs_watch = None
        if self._cs_hb_timer:
            self._cs_hb_timer.cancel()
            self._cs_hb_timer = None
        self._announce_idx = 0  # restart the cycle preferring the highest rank
        self._announce()

    # -- frame handling ------------------------------------------------------------

    def on_config(self, header, fields, src_ep, now):
        mtype = MessageType(int(header.message_type))
        if mtype == MessageType.REGISTRAR_NOTED:
            if self.registered:
                return
            self._cancel_announce_timeout()
            self.registered = True
            self.current_cs = src_ep
            self._backoff = self.timing.backoff_initial_s
            t = self.timing
            self._cs_hb_timer = self.every(
                t.config_heartbeat_s,
                lambda: self.send_config(self.current_cs, MessageType.HEARTBEAT, priority=PRIORITY_LIVENESS),
            )
            self._cs_watch = Watch(self, t.config_heartbeat_s, t.miss_threshold, self._cs_lost, "config server")
            self.trace("registered", config_server=src_ep)
            self.rt.metrics.mark(now, "registrar_registered", unit=self.unit, endpoint=self.endpoint)
        elif mtype == MessageType.REJECTION:
            self._cancel_announce_timeout()
            self.trace("announce_rejected", detail=fields.get("detail", ""))
            delay = self._backoff
            self._backoff = min(self._backoff * 2, self.timing.backoff_cap_s)
            self.schedule(delay, self._announce)
        elif mtype == MessageType.UNIT_SPEC:
            unit, ep = fields["unit"], fields["endpoint"]
            self.peer_registrars[unit] = ep
            self.trace("unit_spec", unit=unit, endpoint=ep, own=unit == self.unit)
        elif mtype == MessageType.HEARTBEAT:
            self._on_heartbeat(header, src_ep, now)
        elif mtype == MessageType.AUTOMATON_REGISTRATION:
            self._handle_registration(header, fields, src_ep)
        elif mtype == MessageType.I_AM_STARTING:
            # A peer registrar announced a new automaton: direct it to ours.
            for rec in self.automata.values():
                self.send_config(
                    rec["endpoint"], MessageType.I_AM_STARTING,
                    src_addr=header.source, address=fields["address"], endpoint=fields["endpoint"],
                )
        elif mtype == MessageType.I_AM_STOPPING:
            self._handle_stopping(header.source)

    def _on_heartbeat(self, header, src_ep, now):
        src = header.source
        if src.unit == 0 and src.automaton == 0:
            if src_ep == self.current_cs and self._cs_watch:
                self._cs_watch.receipt()
            return
        if src.unit != self.unit or src.automaton == 0:
            return
        rec = self.automata.get(src.automaton)
        if rec:
            rec["watch"].receipt()
        else:
            # A restarted registrar rebuilds its unit table from the ongoing
            # heartbeats of automata that were admitted before the restart.
            self._admit(src.automaton, src_ep, readmission=True)

    def _admit(self, uid: int, endpoint: str, readmission: bool) -> None:
        t = self.timing
        self.automata[uid] = {
            "endpoint": endpoint,
            "watch": Watch(
                self, t.unit_heartbeat_s, t.miss_threshold,
                lambda u=uid: self._automaton_dead(u), f"automaton {uid}",
            ),
            "hb_timer": self.every(
                t.unit_heartbeat_s,
                lambda ep=endpoint: self.send_config(ep, MessageType.HEARTBEAT, priority=PRIORITY_LIVENESS),
            ),
        }
        event = "automaton_readmitted" if readmission else "automaton_registered"
        self.trace(event, automaton=uid, endpoint=endpoint)
        self.rt.metrics.mark(self.rt.now, event, unit=self.unit, automaton=uid)

    def _handle_registration(self, header, fields, src_ep):
        src = header.source
        if src.unit != self.unit:
            self.send_config(
                src_ep, MessageType.REJECTION, dst_addr=src,
                reason_code=REJECT_WRONG_UNIT, detail=f"registrar serves unit {self.unit}",
            )
            return
        if src.automaton in self.automata:
            self.send_config(
                src_ep, MessageType.REJECTION, dst_addr=src,
                reason_code=REJECT_DUPLICATE_AUTOMATON,
                detail=f"automaton {src.automaton} already registered",
            )
            return
        endpoint = fields["endpoint"]
        others = [(uid, rec["endpoint"]) for uid, rec in self.automata.items()]
        self._admit(src.automaton, endpoint, readmission=False)
        # Introduce the newcomer to the gateway before acknowledging, so its
        # subscriptions are valid the moment it learns it is in. Then the ack,
        # then every sibling automaton and every peer registrar (which relays
        # to its own automata).
        if self.gateway_ep:
            self.send_config(self.gateway_ep, MessageType.I_AM_STARTING, address=src, endpoint=endpoint)
        self.send_config(src_ep, MessageType.YOU_ARE_IN, dst_addr=src)
        for _, ep in others:
            self.send_config(ep, MessageType.I_AM_STARTING, address=src, endpoint=endpoint)
        for unit, ep in self.peer_registrars.items():
            if ep != self.endpoint:
                self.send_config(ep, MessageType.I_AM_STARTING, address=src, endpoint=endpoint)

    def _automaton_dead(self, uid: int) -> None:
        rec = self.automata.pop(uid, None)
        if not rec:
            return
        rec["watch"].cancel()
        rec["hb_timer"].cancel()
        self.trace(
            "automaton_declared_dead", automaton=uid,
            silent_for=self.rt.now - rec["watch"].monitor.last_seen,
        )
        self.rt.metrics.mark(self.rt.now, "automaton_declared_dead", unit=self.unit, automaton=uid)
        self.send_config(
            rec["endpoint"], MessageType.YOU_ARE_DEAD,
            dst_addr=Address(self.entity, self.unit, uid), priority=PRIORITY_LIVENESS,
        )

    def _handle_stopping(self, source: Address) -> None:
        from_own_unit = source.unit == self.unit
        rec = self.automata.pop(source.automaton, None) if from_own_unit else None
        if rec:
            rec["watch"].cancel()
            rec["hb_timer"].cancel()
        self.trace("automaton_stopping", automaton=source.automaton, unit=source.unit)
        # Surviving unit members always learn of the termination.
        for rec2 in self.automata.values():
            self.send_config(
                rec2["endpoint"], MessageType.I_AM_STOPPING,
                src_addr=source, priority=PRIORITY_LIVENESS,
            )
        if not from_own_unit:
            return  # relayed notice from a peer registrar: do not re-relay
        for unit, ep in self.peer_registrars.items():
            if unit != self.unit:
                self.send_config(ep, MessageType.I_AM_STOPPING, src_addr=source, priority=PRIORITY_LIVENESS)
        if self.gateway_ep:
            self.send_config(self.gateway_ep, MessageType.I_AM_STOPPING, src_addr=source, priority=PRIORITY_LIVENESS)

    # -- application data plane -------------------------------------------------------

    def on_app_frame(self, header, data, src_ep, now):
        if not self.queue.push(data):
            self.count("queue_rejected")
            self.trace("queue_backpressure", priority=header.priority)

    def _dispatch_batch(self, batch: list[bytes]) -> None:
        for frame in batch:
            header = wire.decode_header(frame[: wire.HEADER_LEN])
            uid = header.destination.automaton
            if uid == 0:
                for rec in self.automata.values():
                    self.send_raw(rec["endpoint"], frame)
            else:
                rec = self.automata.get(uid)
                if rec:
                    self.send_raw(rec["endpoint"], frame)
                else:
                    self.count("undeliverable_app")
                    self.trace("app_undeliverable", automaton=uid)


class AutomatonAgent(Component):
    """Protocol shell around one statechart instance.

    Runs the three registration phases, exchanges heartbeats with its
    registrar, re-discovers it through the config server after failures, and
    moves all application traffic through the entity gateway's topics.
    """

    def __init__(
        self,
        rt: Runtime,
        endpoint: str,
        adef: AutomatonDef,
        cs_endpoints: list[str],
        gateway_ep: str,
        projection: dict[int, int] | None = None,
        authority: str = "center",
    ):
        super().__init__(rt, endpoint, adef.entity, Address(adef.entity, adef.unit, adef.automaton))
        self.adef = adef
        self.cs_endpoints = list(cs_endpoints)
        self.gateway_ep = gateway_ep
        self.projection = projection
        self.authority = authority
        self.instance: AutomatonInstance | None = None
        self.phase = "idle"  # discover | query | register | registered | stopped
        self.status: str | None = None
        self.registrar_ep: str | None = None
        self.cs_ep: str | None = None
        self.hung = False
        self.peers: dict[tuple, str] = {}
        self._attempts = 0
        self._backoff = rt.timing.backoff_initial_s
        self._phase_timer: TimerHandle | None = None
        self._hb_timer: TimerHandle | None = None
        self._registrar_watch: Watch | None = None
        self._dwell_timer: TimerHandle | None = None

    # -- lifecycle ---------------------------------------------------------------

    def on_start(self, now: float) -> None:
        self.instance = AutomatonInstance(
            self.adef, projection=self.projection, authority=self.authority, now=now
        )
        self._discover()

    def stop(self) -> None:
        """Voluntary shutdown: signal the registrar first, then go silent."""
        if self.registrar_ep:
            self.send_config(
                self.registrar_ep, MessageType.I_AM_STOPPING,
                priority=PRIORITY_LIVENESS, safe_state_uid=self._safe_uid(),
            )
        self.trace("stopped_voluntarily")
        self.phase = "stopped"
        self.kill()

    def hang(self) -> None:
        """Simulate a deadlock: no heartbeats, no work, but frames still arrive."""
        self.hung = True
        if self._hb_timer:
            self._hb_timer.cancel()
        if self._registrar_watch:
            self._registrar_watch.cancel()
        if self._dwell_timer:
            self._dwell_timer.cancel()
        self.trace("hung")

    def _safe_uid(self) -> int:
        return self.instance.queued_safe_uid if self.instance else 0

    # -- phase 1: locate the config server ----------------------------------------

    def _discover(self) -> None:
        if self.phase == "stopped":
            return
        self.phase = "discover"
        t = self.timing
        if self._attempts >= t.discovery_retries:
            self.status = "registration-impossible"
            self.trace("registration_impossible", attempts=self._attempts)
            self.rt.metrics.mark(self.rt.now, "registration_impossible", endpoint=self.endpoint)
            self._attempts = 0
            self._phase_timer = self.schedule(t.discovery_cooldown_s, self._discover)
            return
        target = self.cs_endpoints[self._attempts % len(self.cs_endpoints)]
        self._attempts += 1
        self.send_config(
            target, MessageType.CONFIG_SERVER_QUERY, safe_state_uid=self._safe_uid()
        )
        self._phase_timer = self.schedule(t.discovery_spacing_s, self._discover)

    # -- phase 2: locate the registrar ----------------------------------------------

    def _query_registrar(self) -> None:
        if self.phase == "stopped" or self.cs_ep is None:
            return
        self.send_config(
            self.cs_ep, MessageType.REGISTRAR_QUERY,
            unit=self.address.unit, safe_state_uid=self._safe_uid(),
        )
        self._phase_timer = self.schedule(self.timing.reply_timeout_s, self._phase2_timeout)

    def _phase2_timeout(self) -> None:
        # The config server vanished mid-procedure: full re-discovery.
        self._attempts = 0
        self._discover()

    # -- phase 3: register with the registrar ------------------------------------------

    def _register(self) -> None:
        if self.phase == "stopped" or self.registrar_ep is None:
            return
        self.phase = "register"
        self.send_config(
            self.registrar_ep, MessageType.AUTOMATON_REGISTRATION,
            endpoint=self.endpoint, safe_state_uid=self._safe_uid(),
        )
        self._phase_timer = self.schedule(self.timing.reply_timeout_s, self._phase2_timeout)

    def _cancel_phase_timer(self) -> None:
        if self._phase_timer:
            self._phase_timer.cancel()
            self._phase_timer = None

    # -- registrar liveness -----------------------------------------------------------

    def _registrar_lost(self) -> None:
        silent = self._registrar_watch.silent_for() if self._registrar_watch else None
        self.trace("registrar_lost", silent_for=silent)
        self.rt.metrics.mark(self.rt.now, "registrar_lost", endpoint=self.endpoint)
        self.status = "registrar-lost"
        # Heartbeats continue toward the last known endpoint (a restart at the
        # same address picks them up within one period) while the config
        # server is queried for the possibly new location.
        self.phase = "query"
        self._backoff = self.timing.backoff_initial_s
        if self.cs_ep:
            self._query_registrar()
        else:
            self._attempts = 0
            self._discover()

    def _reattach(self, endpoint: str) -> None:
        self.registrar_ep = endpoint
        if self._registrar_watch:
            self._registrar_watch.cancel()
        t = self.timing
        self._registrar_watch = Watch(
            self, t.unit_heartbeat_s, t.miss_threshold, self._registrar_lost, "registrar"
        )
        if not self._hb_timer:
            self._start_heartbeats()
        self.phase = "registered"
        self.status = "attached"
        self.trace("registrar_attached", endpoint=endpoint)

    def _start_heartbeats(self) -> None:
        t = self.timing
        self._hb_timer = self.every(t.unit_heartbeat_s, self._send_heartbeat)

    def _send_heartbeat(self) -> None:
        if self.registrar_ep:
            self.send_config(
                self.registrar_ep, MessageType.HEARTBEAT,
                priority=PRIORITY_LIVENESS, safe_state_uid=self._safe_uid(),
            )

    # -- frame handling -------------------------------------------------------------------

    def on_config(self, header, fields, src_ep, now):
        mtype = MessageType(int(header.message_type))
        if self.hung:
            if mtype == MessageType.YOU_ARE_DEAD:
                self._terminate_on_order()
            return
        if mtype == MessageType.CONFIGURATION_SERVER_LOCATED and self.phase == "discover":
            self._cancel_phase_timer()
            self._attempts = 0
            self.cs_ep = fields["endpoint"]
            self.phase = "query"
            self.trace("config_server_located", endpoint=self.cs_ep)
            self._query_registrar()
        elif mtype == MessageType.UNIT_SPEC and fields["unit"] == self.address.unit:
            self._cancel_phase_timer()
            if self.phase == "query":
                if self.status == "registrar-lost":
                    # Reattachment after a registrar failure needs no new
                    # registration: heartbeats repopulate the unit table.
                    self._reattach(fields["endpoint"])
                else:
                    self.registrar_ep = fields["endpoint"]
                    self._register()
        elif mtype == MessageType.REGISTRAR_UNKNOWN and self.phase == "query":
            self._cancel_phase_timer()
            self.status = "registrar-unknown"
            self.trace("registrar_unknown", backoff_s=self._backoff)
            delay = self._backoff
            self._backoff = min(self._backoff * 2, self.timing.backoff_cap_s)
            self._phase_timer = self.schedule(delay, self._query_registrar)
        elif mtype == MessageType.YOU_ARE_IN and self.phase == "register":
            self._cancel_phase_timer()
            self._backoff = self.timing.backoff_initial_s
            self.trace(
                "registered",
                state_uid=self.instance.current_uid,
                state=self.instance.current_state.name,
                queued_safe_uid=self.instance.queued_safe_uid,
            )
            self.rt.metrics.mark(now, "automaton_joined", endpoint=self.endpoint)
            self._reattach(src_ep)
            self._subscribe_topics()
        elif mtype == MessageType.REJECTION and self.phase in ("register", "query"):
            self._cancel_phase_timer()
            self.trace("registration_rejected", detail=fields.get("detail", ""))
            delay = self._backoff
            self._backoff = min(self._backoff * 2, self.timing.backoff_cap_s)
            self._phase_timer = self.schedule(delay, self._register)
        elif mtype == MessageType.HEARTBEAT:
            if src_ep == self.registrar_ep and self._registrar_watch:
                self._registrar_watch.receipt()
        elif mtype == MessageType.I_AM_STARTING:
            addr: Address = fields["address"]
            if addr.as_tuple() != self.address.as_tuple():
                self.peers[addr.as_tuple()] = fields["endpoint"]
                self.send_config(
                    fields["endpoint"], MessageType.I_AM_HERE,
                    dst_addr=addr, address=self.address, safe_state_uid=self._safe_uid(),
                )
        elif mtype == MessageType.I_AM_HERE:
            self.trace("peer_here", peer=str(fields["address"]))
            self.peers.setdefault(fields["address"].as_tuple(), src_ep)
        elif mtype == MessageType.I_AM_STOPPING:
            self.peers.pop(header.source.as_tuple(), None)
            self.trace("peer_stopped", peer=str(header.source))
        elif mtype == MessageType.YOU_ARE_DEAD:
            if self.phase == "registered":
                self._terminate_on_order()
            else:
                # aimed at a previous incarnation at this endpoint; a fresh
                # instance that never registered did not earn the order
                self.trace("death_order_ignored", phase=self.phase)

    def _terminate_on_order(self) -> None:
        # Presumed failed by the registrar: terminate immediately, acknowledging
        # with a stopping notice (the hung-automaton recovery path).
        if self.registrar_ep:
            self.send_config(
                self.registrar_ep, MessageType.I_AM_STOPPING,
                priority=PRIORITY_LIVENESS, safe_state_uid=self._safe_uid(),
            )
        self.trace("terminated_on_order")
        self.phase = "stopped"
        self.kill()

    def _subscribe_topics(self) -> None:
        gw = self.rt.gateway(self.entity)
        if gw is None:
            return
        for mtype in SYNC_TOPIC_TYPES:
            gw.subscribe(Subscription(self.address.unit, mtype, self.address))

    # -- application data plane ---------------------------------------------------------

    def on_app_frame(self, header, data, src_ep, now):
        if self.hung or self.instance is None:
            return
        _, plain = wire.open_frame(data, self.rt.key)
        payload = payloads.decode_app(plain)
        mtype = MessageType(int(header.message_type))
        src = header.source
        if src.as_tuple() == self.address.as_tuple():
            return  # never react to an echo of our own publish
        if mtype in (MessageType.STATE_TRANSITION_EVENT, MessageType.STATE_CONFIRMATION):
            if src.unit != self.address.unit or src.automaton != self.address.automaton:
                return  # synchronization is strictly with the counterpart instance
            if mtype == MessageType.STATE_TRANSITION_EVENT:
                self._run_instance(lambda: self.instance.apply_remote(payload, src.as_tuple(), now))
            else:
                self._run_instance(lambda: self.instance.on_confirmation(payload, src.as_tuple(), now))
        else:
            self.step_instance(Event.from_message(mtype, payload), now)

    def step_instance(self, event: Event, now: float) -> list[Outbound]:
        return self._run_instance(lambda: self.instance.step(event, now))

    def _run_instance(self, fn) -> list[Outbound]:
        """All instance interaction funnels through here: tracing, dwell timer, publish."""
        before = len(self.instance.event_log)
        out = fn()
        for rec in self.instance.event_log[before:]:
            if rec["event"] == "transition":
                self.rt.metrics.work(self.endpoint, WORK_TRANSITION)
                self.trace(
                    "transition", source=rec["source"], target=rec["target"],
                    target_uid=rec["target_uid"], reason=rec["reason"],
                    queued_safe_uid=rec["queued_safe_uid"],
                )
            elif rec["event"] in ("rejected_event", "protocol_error", "stale_discarded"):
                extra = {k: v for k, v in rec.items() if k not in ("t", "event")}
                self.trace(rec["event"], **extra)
        self._arm_dwell_timer()
        for msg in out:
            self.publish(msg)
        return out

    def _arm_dwell_timer(self) -> None:
        if self._dwell_timer:
            self._dwell_timer.cancel()
            self._dwell_timer = None
        inst = self.instance
        if inst.dwell_deadline is not None:
            epoch = inst.dwell_epoch
            delay = inst.dwell_deadline - self.rt.now
            self._dwell_timer = self.schedule(delay, self._dwell_tick, epoch)

    def _dwell_tick(self, epoch: int) -> None:
        if self.hung or self.instance is None:
            return
        self._run_instance(lambda: self.instance.step(Event("timeout", {"epoch": epoch}), self.rt.now))

    def publish(self, msg: Outbound) -> None:
        header = wire.MessageHeader(
            message_type=msg.message_type,
            priority=msg.priority,
            checksum_flag=True,
            open_loop_safe_state=msg.safe_state_uid,
            source=self.address,
            destination=Address(0, self.address.unit, 0),
        )
        frame = wire.seal_frame(header, payloads.encode_app(msg.payload), self.rt.key)
        self.count("app_published")
        self.trace(
            "app_publish",
            message_type=wire.message_name(int(msg.message_type)),
            priority=msg.priority,
            safe_state_uid=msg.safe_state_uid,
        )
        self.send_raw(self.gateway_ep, frame)

    def set_link_state(self, up: bool, now: float) -> None:
        if self.hung or self.instance is None:
            return
        self._run_instance(lambda: self.instance.on_link_change(up, now))

    def confirm_current(self) -> int:
        self._run_instance(lambda: self.instance.confirm(self.rt.now))
        return self.instance.current_uid

    def snapshot(self) -> dict:
        snap = self.instance.snapshot(self.rt.now) if self.instance else {}
        snap.update(
            {
                "endpoint": self.endpoint,
                "phase": self.phase,
                "status": self.status,
                "hung": self.hung,
                "alive": self.alive,
            }
        )
        return snap
