"""Executable statechart runtime: safety classes, dwell timers, cross-site sync.

States are either open-loop safe (always safe, no time bound) or transient
safe (safe only for a bounded dwell). Before any transition commits, the
target's open-loop-safe fallback is queued as the emergency option and stamped
into every message the automaton emits, so a counterpart losing contact always
knows where this automaton will land. A transient state whose dwell expires
falls back to the queued safe state on its own, link or no link.

Synchronization between a thin (rural) and a rich (center) instance of the
same care model uses a many-to-one projection from the rich state set onto
the thin one. The center side is authoritative: a rural instance adopts
projected center states, while a center instance answers conflicting rural
reports by re-asserting its own state.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field as dc_field

from .wire import MessageType

OPEN_LOOP_SAFE = "open_loop_safe"
TRANSIENT_SAFE = "transient_safe"

DEFAULT_DWELL_S = 300.0

# Message kinds an instance consumes, keyed by wire type.
_EVENT_KIND = {
    MessageType.VITAL_SIGN: "vital",
    MessageType.BEST_PRACTICE_COMMAND: "command",
    MessageType.TIME_LOG: "time_log",
}

_KIND_TO_TYPE = {v: k for k, v in _EVENT_KIND.items()}


class ModelError(Exception):
    """A model document violates the schema; message lists every violation."""

    def __init__(self, violations: list[str]):
        self.violations = violations
        super().__init__("; ".join(violations))


class SafetyValidationError(ModelError):
    """A model violates a safety rule (e.g. a transient state without a safe fallback)."""


class ProtocolError(Exception):
    """A remote event could not be interpreted (unknown state, bad projection)."""


@dataclass(frozen=True)
class StateDef:
    uid: int
    name: str
    safety: str = OPEN_LOOP_SAFE
    max_dwell_s: float | None = None
    fallback_uid: int | None = None

    @property
    def is_open_loop(self) -> bool:
        return self.safety == OPEN_LOOP_SAFE


_GUARD_RE = re.compile(
    r"^\s*([A-Za-z_]\w*)\s*(>=|<=|==|!=|>|<)\s*('[^']*'|\"[^\"]*\"|-?\d+(?:\.\d+)?)\s*$"
)

_OPS = {
    ">": lambda a, b: a > b,
    ">=": lambda a, b: a >= b,
    "<": lambda a, b: a < b,
    "<=": lambda a, b: a <= b,
    "==": lambda a, b: a == b,
    "!=": lambda a, b: a != b,
}


@dataclass(frozen=True)
class Guard:
    """A single threshold comparison over a named field, e.g. ``systolic_bp > 180``."""

    text: str
    field: str
    op: str
    value: float | str

    @classmethod
    def parse(cls, text: str) -> "Guard":
        m = _GUARD_RE.match(text)
        if not m:
            raise ValueError(f"unparseable guard {text!r}")
        name, op, raw = m.groups()
        value: float | str
        if raw[0] in "'\"":
            value = raw[1:-1]
        else:
            value = float(raw)
        return cls(text=text, field=name, op=op, value=value)

    def evaluate(self, context: dict) -> bool:
        if self.field not in context:
            return False
        actual = context[self.field]
        if isinstance(self.value, float) != isinstance(actual, (int, float)):
            return False
        try:
            return _OPS[self.op](actual, self.value)
        except TypeError:
            return False


@dataclass(frozen=True)
class ActionDef:
    """An extra outbound message emitted when a transition fires."""

    message_type: MessageType
    payload: dict
    priority: int = 3


@dataclass(frozen=True)
class TransitionDef:
    source_uid: int
    target_uid: int
    trigger: str  # "message" | "condition" | "timeout"
    message_type: MessageType | None = None
    guard: Guard | None = None
    actions: tuple[ActionDef, ...] = ()


@dataclass(frozen=True)
class AutomatonDef:
    name: str
    entity: int
    unit: int
    automaton: int
    measurements: dict[str, str]  # name -> unit of measure
    states: tuple[StateDef, ...]
    transitions: tuple[TransitionDef, ...]
    initial_uid: int

    def state(self, uid: int) -> StateDef:
        return self._by_uid[uid]

    @property
    def _by_uid(self) -> dict[int, StateDef]:
        # Cached lazily on the instance; frozen dataclass so stash via __dict__.
        cache = self.__dict__.get("_uid_cache")
        if cache is None:
            cache = {s.uid: s for s in self.states}
            self.__dict__["_uid_cache"] = cache
        return cache

    @property
    def open_loop_uids(self) -> frozenset[int]:
        cache = self.__dict__.get("_ols_cache")
        if cache is None:
            cache = frozenset(s.uid for s in self.states if s.is_open_loop)
            self.__dict__["_ols_cache"] = cache
        return cache


_PRIORITY_DEFAULTS = {
    MessageType.VITAL_SIGN: 5,
    MessageType.STATE_TRANSITION_EVENT: 5,
    MessageType.STATE_CONFIRMATION: 4,
    MessageType.BEST_PRACTICE_COMMAND: 6,
    MessageType.TIME_LOG: 1,
}


def default_priority(mtype: MessageType) -> int:
    return _PRIORITY_DEFAULTS.get(mtype, 3)


def load_model(doc: dict) -> AutomatonDef:
    """Validate a model document and build the definition.

    All violations are collected and reported together; safety violations
    raise SafetyValidationError, other schema problems ModelError.
    """
    violations: list[str] = []
    safety_violations: list[str] = []

    measurements = dict(doc.get("measurements", {}))
    states: list[StateDef] = []
    seen_uids: set[int] = set()
    for s in doc.get("states", []):
        uid = s.get("uid")
        name = s.get("name", f"state-{uid}")
        if not isinstance(uid, int) or not 0 <= uid < 256:
            violations.append(f"state {name!r}: uid {uid!r} is not an 8-bit value")
            continue
        if uid in seen_uids:
            violations.append(f"duplicate state uid {uid}")
            continue
        seen_uids.add(uid)
        safety = s.get("safety", OPEN_LOOP_SAFE)
        if safety not in (OPEN_LOOP_SAFE, TRANSIENT_SAFE):
            violations.append(f"state {name!r}: unknown safety class {safety!r}")
            continue
        states.append(
            StateDef(
                uid=uid,
                name=name,
                safety=safety,
                max_dwell_s=s.get("max_dwell_s", DEFAULT_DWELL_S if safety == TRANSIENT_SAFE else None),
                fallback_uid=s.get("fallback"),
            )
        )

    by_uid = {s.uid: s for s in states}
    for s in states:
        if s.safety == TRANSIENT_SAFE:
            if s.fallback_uid is None:
                safety_violations.append(f"transient state {s.name!r} has no fallback")
            elif s.fallback_uid not in by_uid:
                safety_violations.append(f"transient state {s.name!r}: fallback {s.fallback_uid} unknown")
            elif not by_uid[s.fallback_uid].is_open_loop:
                safety_violations.append(
                    f"transient state {s.name!r}: fallback {by_uid[s.fallback_uid].name!r} is not open-loop safe"
                )
            if s.max_dwell_s is None or s.max_dwell_s <= 0:
                safety_violations.append(f"transient state {s.name!r}: max_dwell_s must be positive")

    initial = doc.get("initial")
    if initial not in by_uid:
        violations.append(f"initial state {initial!r} is not a declared state")
    elif not by_uid[initial].is_open_loop:
        safety_violations.append(f"initial state {by_uid[initial].name!r} must be open-loop safe")

    transitions: list[TransitionDef] = []
    for i, t in enumerate(doc.get("transitions", [])):
        src, dst = t.get("source"), t.get("target")
        label = f"transition #{i} ({src}->{dst})"
        if src not in by_uid:
            violations.append(f"{label}: unknown source")
            continue
        if dst not in by_uid:
            violations.append(f"{label}: unknown target")
            continue
        trig = t.get("trigger", {})
        kind = trig.get("kind")
        mtype: MessageType | None = None
        guard: Guard | None = None
        if kind == "condition":
            raw = trig.get("guard")
            try:
                guard = Guard.parse(raw or "")
            except ValueError as e:
                violations.append(f"{label}: {e}")
                continue
            if guard.field not in measurements:
                violations.append(f"{label}: guard references undeclared measurement {guard.field!r}")
                continue
        elif kind == "message":
            try:
                mtype = MessageType[trig.get("type", "").upper().replace("-", "_")]
            except KeyError:
                violations.append(f"{label}: unknown message type {trig.get('type')!r}")
                continue
            if trig.get("guard"):
                try:
                    guard = Guard.parse(trig["guard"])
                except ValueError as e:
                    violations.append(f"{label}: {e}")
                    continue
        elif kind == "timeout":
            if not by_uid[dst].is_open_loop:
                safety_violations.append(f"{label}: timeout target must be open-loop safe")
                continue
        else:
            violations.append(f"{label}: unknown trigger kind {kind!r}")
            continue
        actions = []
        for a in t.get("actions", []):
            try:
                amtype = MessageType[a.get("type", "").upper().replace("-", "_")]
            except KeyError:
                violations.append(f"{label}: action with unknown message type {a.get('type')!r}")
                continue
            actions.append(
                ActionDef(amtype, dict(a.get("payload", {})), a.get("priority", default_priority(amtype)))
            )
        transitions.append(
            TransitionDef(
                source_uid=src,
                target_uid=dst,
                trigger=kind,
                message_type=mtype,
                guard=guard,
                actions=tuple(actions),
            )
        )

    if safety_violations:
        raise SafetyValidationError(safety_violations + violations)
    if violations:
        raise ModelError(violations)

    addr = doc.get("address", {})
    return AutomatonDef(
        name=doc.get("name", "unnamed"),
        entity=addr.get("entity", 0),
        unit=addr.get("unit", 1),
        automaton=addr.get("automaton", 1),
        measurements=measurements,
        states=tuple(states),
        transitions=tuple(transitions),
        initial_uid=initial,
    )


def project(center_state_uid: int, mapping: dict[int, int]) -> int:
    """Map a rich-model state onto its thin-model image."""
    if center_state_uid not in mapping:
        raise ProtocolError(f"state {center_state_uid} has no projection")
    return mapping[center_state_uid]


@dataclass(frozen=True)
class Event:
    """One input to an instance: a decoded application message or a timer tick."""

    kind: str  # "vital" | "command" | "timeout" | "time_log"
    payload: dict = dc_field(default_factory=dict)

    @classmethod
    def from_message(cls, mtype: MessageType, payload: dict) -> "Event":
        kind = _EVENT_KIND.get(mtype)
        if kind is None:
            raise ProtocolError(f"{mtype} is not an instance-consumable message type")
        return cls(kind=kind, payload=payload)


@dataclass
class Outbound:
    """A message the instance wants sent; its owner seals and routes it."""

    message_type: MessageType
    payload: dict
    priority: int
    safe_state_uid: int


class AutomatonInstance:
    """A running statechart with its dwell clock and synchronization ledger."""

    def __init__(
        self,
        adef: AutomatonDef,
        projection: dict[int, int] | None = None,
        authority: str = "center",
        now: float = 0.0,
    ):
        if authority not in ("center", "rural"):
            raise ValueError(f"authority must be 'center' or 'rural', got {authority!r}")
        self.adef = adef
        self.authority = authority
        # Forward projection (rich/center uid -> thin/rural uid); both sides
        # hold the same map and interpret it from their own end.
        self.projection = dict(projection) if projection else {s.uid: s.uid for s in adef.states}
        self._thin_uids = frozenset(self.projection.values())
        self.current_uid = adef.initial_uid
        # The initial state is open-loop safe by validation, so it queues itself.
        self.queued_safe_uid = adef.initial_uid
        self.dwell_deadline: float | None = None
        self.dwell_epoch = 0
        self.link_up = True
        self.measurements: dict[str, float] = {}
        self.event_log: list[dict] = []
        self.out_seq = 0
        self.last_remote_seq: dict[tuple, int] = {}
        self._log(now, "started", state=self.current_state.name)

    # -- introspection ------------------------------------------------------

    @property
    def current_state(self) -> StateDef:
        return self.adef.state(self.current_uid)

    def dwell_remaining(self, now: float) -> float | None:
        if self.dwell_deadline is None:
            return None
        return max(self.dwell_deadline - now, 0.0)

    def snapshot(self, now: float) -> dict:
        return {
            "name": self.adef.name,
            "address": [self.adef.entity, self.adef.unit, self.adef.automaton],
            "authority": self.authority,
            "current_uid": self.current_uid,
            "current_state": self.current_state.name,
            "queued_safe_uid": self.queued_safe_uid,
            "queued_safe_state": self.adef.state(self.queued_safe_uid).name,
            "dwell_deadline": self.dwell_deadline,
            "dwell_remaining_s": self.dwell_remaining(now),
            "link_up": self.link_up,
            "measurements": dict(self.measurements),
            "states": [
                {
                    "uid": s.uid,
                    "name": s.name,
                    "safety": s.safety,
                    "max_dwell_s": s.max_dwell_s,
                    "fallback": s.fallback_uid,
                }
                for s in self.adef.states
            ],
            "transitions": [
                {
                    "source": t.source_uid,
                    "target": t.target_uid,
                    "trigger": t.trigger,
                    "label": self._transition_label(t),
                }
                for t in self.adef.transitions
            ],
        }

    @staticmethod
    def _transition_label(t: TransitionDef) -> str:
        if t.trigger == "condition":
            return t.guard.text if t.guard else "condition"
        if t.trigger == "timeout":
            return "dwell timeout"
        label = t.message_type.name.lower().replace("_", "-") if t.message_type else "message"
        if t.guard:
            label += f" [{t.guard.text}]"
        return label

    # -- internals ----------------------------------------------------------

    def _log(self, now: float, event: str, **fields) -> None:
        rec = {"t": now, "event": event}
        rec.update(fields)
        self.event_log.append(rec)

    def _next_seq(self) -> int:
        self.out_seq += 1
        return self.out_seq

    def _emit(self, mtype: MessageType, payload: dict, priority: int | None = None) -> Outbound:
        body = {"seq": self._next_seq()}
        body.update(payload)
        return Outbound(
            message_type=mtype,
            payload=body,
            priority=default_priority(mtype) if priority is None else priority,
            safe_state_uid=self.queued_safe_uid,
        )

    def _commit(
        self, target_uid: int, now: float, reason: str, actions: tuple[ActionDef, ...] = (),
        announce: bool = True,
    ) -> list[Outbound]:
        target = self.adef.state(target_uid)
        # Queue the emergency option before committing: the target itself when
        # open-loop safe, otherwise its declared fallback.
        self.queued_safe_uid = target.uid if target.is_open_loop else target.fallback_uid
        previous = self.current_state.name
        self.current_uid = target.uid
        self.dwell_epoch += 1
        self.dwell_deadline = None if target.is_open_loop else now + target.max_dwell_s
        self._log(
            now, "transition",
            source=previous, target=target.name, target_uid=target.uid, reason=reason,
            queued_safe_uid=self.queued_safe_uid,
        )
        out: list[Outbound] = []
        if announce:
            out.append(
                self._emit(
                    MessageType.STATE_TRANSITION_EVENT,
                    {"state_uid": target.uid, "state": target.name, "reason": reason},
                )
            )
        else:
            out.append(
                self._emit(MessageType.STATE_CONFIRMATION, {"state_uid": target.uid, "reason": reason})
            )
        for a in actions:
            out.append(self._emit(a.message_type, dict(a.payload), a.priority))
        return out

    def _matches(self, t: TransitionDef, event: Event) -> bool:
        if t.source_uid != self.current_uid:
            return False
        if t.trigger == "condition":
            return event.kind == "vital" and t.guard.evaluate(self.measurements)
        if t.trigger == "message":
            if _EVENT_KIND.get(t.message_type) != event.kind:
                return False
            return t.guard.evaluate(event.payload) if t.guard else True
        return False  # timeout transitions fire only from dwell expiry

    # -- entry points -------------------------------------------------------

    def step(self, event: Event, now: float) -> list[Outbound]:
        """Feed one event; returns messages to send (possibly none)."""
        if event.kind == "timeout":
            return self._dwell_expired(event, now)

        if event.kind == "vital":
            name = event.payload.get("measurement")
            if name not in self.adef.measurements:
                self._log(now, "rejected_event", reason="undeclared_measurement", measurement=name)
                return []
            self.measurements[name] = event.payload.get("value")
            self._log(now, "vital", measurement=name, value=event.payload.get("value"))
        else:
            self._log(now, "received", kind=event.kind, payload=event.payload)

        for t in self.adef.transitions:
            if self._matches(t, event):
                return self._commit(t.target_uid, now, reason=event.kind, actions=t.actions)
        return []

    def _dwell_expired(self, event: Event, now: float) -> list[Outbound]:
        if event.payload.get("epoch") != self.dwell_epoch:
            return []  # stale tick from a state already left
        state = self.current_state
        if state.is_open_loop or self.dwell_deadline is None or now < self.dwell_deadline:
            return []
        # A declared timeout transition (validated open-loop safe) overrides
        # the default fall-back to the queued emergency option.
        for t in self.adef.transitions:
            if t.source_uid == self.current_uid and t.trigger == "timeout":
                return self._commit(t.target_uid, now, reason="dwell_timeout", actions=t.actions)
        return self._commit(self.queued_safe_uid, now, reason="dwell_fallback")

    def confirm(self, now: float) -> list[Outbound]:
        """An operator acknowledged the current state: tell the counterpart."""
        self._log(now, "operator_confirm", state_uid=self.current_uid)
        return [
            self._emit(
                MessageType.STATE_CONFIRMATION,
                {"state_uid": self.current_uid, "reason": "operator_confirm"},
            )
        ]

    def on_link_change(self, up: bool, now: float) -> list[Outbound]:
        """Track link state; a restored link triggers a re-sync confirmation."""
        if up == self.link_up:
            return []
        self.link_up = up
        self._log(now, "link", up=up)
        if up:
            return [
                self._emit(
                    MessageType.STATE_CONFIRMATION,
                    {"state_uid": self.current_uid, "reason": "link_restored"},
                )
            ]
        return []

    def _stale(self, src: tuple, seq: int | None, now: float) -> bool:
        if seq is None:
            return False
        last = self.last_remote_seq.get(src, 0)
        if seq <= last:
            self._log(now, "stale_discarded", src=list(src), seq=seq)
            return True
        self.last_remote_seq[src] = seq
        return False

    def _remote_known(self, remote_uid) -> bool:
        if self.authority == "rural":
            return remote_uid in self.projection  # counterpart reports rich states
        return remote_uid in self._thin_uids  # counterpart reports thin states

    def _consistent_with(self, remote_uid: int) -> bool:
        if self.authority == "rural":
            return self.projection[remote_uid] == self.current_uid
        return self.projection[self.current_uid] == remote_uid

    def _reassert(self) -> Outbound:
        return self._emit(
            MessageType.STATE_TRANSITION_EVENT,
            {"state_uid": self.current_uid, "state": self.current_state.name, "reason": "reassert"},
        )

    def apply_remote(self, payload: dict, src: tuple, now: float) -> list[Outbound]:
        """Handle a counterpart's state-transition-event."""
        if self._stale(src, payload.get("seq"), now):
            return []
        remote_uid = payload.get("state_uid")
        if not self._remote_known(remote_uid):
            self._log(now, "protocol_error", reason="unmappable_state", state_uid=remote_uid)
            return []
        if self._consistent_with(remote_uid):
            self._log(now, "remote_consistent", state_uid=remote_uid)
            return [
                self._emit(MessageType.STATE_CONFIRMATION, {"state_uid": self.current_uid, "reason": "consistent"})
            ]
        if self.authority == "center":
            # Center-side instances are authoritative: never adopt, re-assert.
            self._log(now, "remote_conflict", remote_uid=remote_uid, kept=self.current_uid)
            return [self._reassert()]
        return self._commit(self.projection[remote_uid], now, reason="remote_sync", announce=False)

    def on_confirmation(self, payload: dict, src: tuple, now: float) -> list[Outbound]:
        """Handle a counterpart's state-confirmation (mostly after link repair)."""
        if self._stale(src, payload.get("seq"), now):
            return []
        remote_uid = payload.get("state_uid")
        if not self._remote_known(remote_uid):
            self._log(now, "protocol_error", reason="unmappable_state", state_uid=remote_uid)
            return []
        if self._consistent_with(remote_uid):
            self._log(now, "confirmed", state_uid=remote_uid)
            return []
        if self.authority == "center":
            self._log(now, "remote_conflict", remote_uid=remote_uid, kept=self.current_uid)
            return [self._reassert()]
        return self._commit(self.projection[remote_uid], now, reason="remote_sync", announce=False)
