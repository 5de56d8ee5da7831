"""Run telemetry: the append-only trace log and metric counters.

Every component writes trace records through one Tracer so a scenario run
produces a single ordered JSON-lines log; metrics collect counters, queue
depth samples, a deterministic work-unit tally, and a timeline of
registration/failure events.
"""

from __future__ import annotations

import json
from collections import defaultdict
from typing import Callable


class Tracer:
    """Ordered trace of everything that happens in a run."""

    def __init__(self):
        self.records: list[dict] = []
        self._subscribers: list[Callable[[dict], None]] = []

    def emit(self, t: float, component: str, event: str, **fields) -> dict:
        rec = {"t": t, "component": component, "event": event}
        rec.update(fields)
        self.records.append(rec)
        for fn in self._subscribers:
            fn(rec)
        return rec

    def subscribe(self, fn: Callable[[dict], None]) -> None:
        self._subscribers.append(fn)

    def unsubscribe(self, fn: Callable[[dict], None]) -> None:
        if fn in self._subscribers:
            self._subscribers.remove(fn)

    def find(self, event: str | None = None, component: str | None = None, **fields) -> list[dict]:
        """Filter records; used heavily by trace-assertion tests."""
        out = []
        for rec in self.records:
            if event is not None and rec["event"] != event:
                continue
            if component is not None and rec["component"] != component:
                continue
            if any(rec.get(k) != v for k, v in fields.items()):
                continue
            out.append(rec)
        return out

    def jsonl(self) -> str:
        return "\n".join(json.dumps(rec, sort_keys=True) for rec in self.records)


# Work-unit weights per processed-event class. The absolute scale is
# arbitrary; only proportionality to load matters for the scaling analysis.
WORK_FRAME = 1.0
WORK_TRANSITION = 2.0
WORK_POLL = 0.1
WORK_TIMER = 0.05


class Metrics:
    """Counters and derived measurements for a run."""

    def __init__(self):
        self.counters: dict[str, dict[str, int]] = defaultdict(lambda: defaultdict(int))
        self.work_units: dict[str, float] = defaultdict(float)
        self.queue_depths: list[tuple[float, str, int]] = []
        self.timeline: list[dict] = []

    def inc(self, component: str, name: str, n: int = 1) -> None:
        self.counters[component][name] += n

    def get(self, component: str, name: str) -> int:
        return self.counters.get(component, {}).get(name, 0)

    def total(self, name: str) -> int:
        return sum(c.get(name, 0) for c in self.counters.values())

    def work(self, component: str, units: float) -> None:
        self.work_units[component] += units

    def total_work(self) -> float:
        return sum(self.work_units.values())

    def sample_queue_depth(self, t: float, component: str, depth: int) -> None:
        self.queue_depths.append((t, component, depth))

    def mark(self, t: float, kind: str, **fields) -> None:
        entry = {"t": t, "kind": kind}
        entry.update(fields)
        self.timeline.append(entry)

    def report(self) -> dict:
        return {
            "counters": {comp: dict(c) for comp, c in sorted(self.counters.items())},
            "work_units": dict(sorted(self.work_units.items())),
            "total_work_units": self.total_work(),
            "queue_depths": [list(s) for s in self.queue_depths],
            "timeline": self.timeline,
        }
