import type { AutomatonSnapshot, Snapshot, TraceEvent } from "../src/types.js";

export function automaton(overrides: Partial<AutomatonSnapshot> = {}): AutomatonSnapshot {
  return {
    name: "stroke-rural",
    address: [1, 1, 1],
    authority: "rural",
    current_uid: 1,
    current_state: "General Assessment",
    queued_safe_uid: 1,
    queued_safe_state: "General Assessment",
    dwell_deadline: null,
    dwell_remaining_s: null,
    link_up: true,
    measurements: {},
    states: [
      { uid: 1, name: "General Assessment", safety: "open_loop_safe", max_dwell_s: null, fallback: null },
      { uid: 3, name: "Ischemic Pathway", safety: "open_loop_safe", max_dwell_s: null, fallback: null },
      { uid: 5, name: "tPA Therapy", safety: "transient_safe", max_dwell_s: 300, fallback: 1 },
      { uid: 6, name: "Hypertension Control", safety: "open_loop_safe", max_dwell_s: null, fallback: null },
    ],
    transitions: [
      { source: 3, target: 6, trigger: "condition", label: "systolic_bp > 180" },
      { source: 3, target: 5, trigger: "message", label: "best-practice-command [command == 'start_tpa']" },
    ],
    endpoint: "e1.u1.a1",
    phase: "registered",
    status: "attached",
    hung: false,
    alive: true,
    ...overrides,
  };
}

export function snapshot(overrides: Partial<Snapshot> = {}): Snapshot {
  return {
    t: 10.0,
    automata: [
      automaton(),
      automaton({
        name: "stroke-center",
        address: [2, 1, 1],
        authority: "center",
        endpoint: "e2.u1.a1",
      }),
    ],
    components: [
      { endpoint: "e1.cs0", entity: 1, alive: true, kind: "config_server", rank: 0, active: true },
      { endpoint: "e1.u1.reg", entity: 1, alive: true, kind: "registrar", unit: 1, registered: true },
      { endpoint: "e1.u1.a1", entity: 1, alive: true, kind: "automaton", phase: "registered" },
      { endpoint: "e2.u1.a1", entity: 2, alive: true, kind: "automaton", phase: "registered" },
    ],
    links: [{ name: "rural-center", up: true }],
    events_cursor: 42,
    ...overrides,
  };
}

export function transitionEvent(
  component: string,
  targetUid: number,
  target: string,
  reason: string,
  t = 12.0,
): TraceEvent {
  return {
    t,
    component,
    event: "transition",
    source: "Ischemic Pathway",
    target,
    target_uid: targetUid,
    reason,
    queued_safe_uid: targetUid === 5 ? 1 : targetUid,
  };
}
