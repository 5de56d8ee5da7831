// Pure view state: a snapshot plus the trace stream fully determines the view.
// Nothing here talks to the network and nothing is updated optimistically, so
// reloading the page and replaying snapshot + stream reproduces the same view.

import type {
  AutomatonSnapshot,
  ComponentView,
  Snapshot,
  TraceEvent,
} from "./types.js";

export interface AutomatonView extends AutomatonSnapshot {
  lastTransitionReason: string | null;
}

export interface FeedEntry {
  t: number;
  component: string;
  label: string;
  kind: "command" | "transition" | "fault" | "info";
  auditId?: number;
}

export interface PendingConfirmation {
  unit: number;
  stateUid: number;
  state: string;
  since: number;
}

export interface ConsoleView {
  connected: boolean;
  /** latest virtual time reported by the server */
  serverTime: number;
  /** wall-clock ms at which serverTime was observed (for countdown interpolation) */
  serverTimeWall: number;
  /** virtual seconds per wall second, from the snapshot */
  speed: number;
  automata: Record<string, AutomatonView>;
  components: Record<string, ComponentView>;
  links: Record<string, boolean>;
  feed: FeedEntry[];
  pending: Record<number, PendingConfirmation>;
  cursor: number;
}

export const FEED_LIMIT = 200;

export function initialView(): ConsoleView {
  return {
    connected: false,
    serverTime: 0,
    serverTimeWall: 0,
    speed: 1,
    automata: {},
    components: {},
    links: {},
    feed: [],
    pending: {},
    cursor: 0,
  };
}

export function applySnapshot(view: ConsoleView, snap: Snapshot, wallNowMs: number): ConsoleView {
  const automata: Record<string, AutomatonView> = {};
  for (const a of snap.automata) {
    automata[a.endpoint] = { ...a, lastTransitionReason: null };
  }
  const components: Record<string, ComponentView> = {};
  for (const c of snap.components) {
    components[c.endpoint] = { ...c };
  }
  const links: Record<string, boolean> = {};
  for (const l of snap.links) {
    links[l.name] = l.up;
  }
  return {
    ...view,
    connected: true,
    serverTime: snap.t,
    serverTimeWall: wallNowMs,
    speed: (snap as unknown as { speed?: number }).speed ?? view.speed,
    automata,
    components,
    links,
    cursor: snap.events_cursor,
  };
}

function pushFeed(view: ConsoleView, entry: FeedEntry): void {
  view.feed.push(entry);
  if (view.feed.length > FEED_LIMIT) {
    view.feed.splice(0, view.feed.length - FEED_LIMIT);
  }
}

function unitOfEndpoint(view: ConsoleView, endpoint: string): number | null {
  const a = view.automata[endpoint];
  return a ? a.address[1] : null;
}

/** Apply one trace record; returns the same (mutated) view for chaining. */
export function applyTraceEvent(view: ConsoleView, rec: TraceEvent, wallNowMs: number): ConsoleView {
  if (rec.t > view.serverTime) {
    view.serverTime = rec.t;
    view.serverTimeWall = wallNowMs;
  }
  view.cursor += 1;
  const auto = view.automata[rec.component];
  switch (rec.event) {
    case "transition": {
      if (!auto) break;
      const targetUid = rec["target_uid"] as number;
      const target = auto.states.find((s) => s.uid === targetUid);
      auto.current_uid = targetUid;
      auto.current_state = (rec["target"] as string) ?? target?.name ?? String(targetUid);
      auto.queued_safe_uid = rec["queued_safe_uid"] as number;
      const queued = auto.states.find((s) => s.uid === auto.queued_safe_uid);
      auto.queued_safe_state = queued?.name ?? String(auto.queued_safe_uid);
      auto.dwell_deadline =
        target && target.safety === "transient_safe" && target.max_dwell_s != null
          ? rec.t + target.max_dwell_s
          : null;
      const reason = rec["reason"] as string;
      auto.lastTransitionReason = reason;
      pushFeed(view, {
        t: rec.t,
        component: rec.component,
        label: `${rec["source"]} → ${auto.current_state} (${reason})`,
        kind: "transition",
      });
      const unit = auto.address[1];
      if (auto.authority === "rural" && reason !== "remote_sync") {
        view.pending[unit] = {
          unit,
          stateUid: targetUid,
          state: auto.current_state,
          since: rec.t,
        };
      } else if (auto.authority === "rural" && reason === "remote_sync") {
        delete view.pending[unit];
      }
      break;
    }
    case "app_publish": {
      if (rec["message_type"] === "state-confirmation") {
        const unit = unitOfEndpoint(view, rec.component);
        if (unit != null) {
          delete view.pending[unit];
        }
        pushFeed(view, {
          t: rec.t,
          component: rec.component,
          label: `state confirmed`,
          kind: "info",
        });
      }
      break;
    }
    case "injected": {
      const what =
        rec["command"] != null
          ? `command ${rec["command"]}`
          : `${rec["measurement"]} = ${rec["value"]}`;
      pushFeed(view, {
        t: rec.t,
        component: rec.component,
        label: `injected ${what}`,
        kind: "command",
        auditId: rec["audit_id"] as number,
      });
      break;
    }
    case "carrier":
    case "link_state": {
      const name = rec.component.replace(/^link:/, "");
      view.links[name] = rec["up"] as boolean;
      pushFeed(view, {
        t: rec.t,
        component: rec.component,
        label: `link ${rec["up"] ? "up" : "down"}`,
        kind: "fault",
      });
      break;
    }
    case "killed": {
      const comp = view.components[rec.component];
      if (comp) comp.alive = false;
      if (auto) auto.alive = false;
      pushFeed(view, { t: rec.t, component: rec.component, label: "killed", kind: "fault" });
      break;
    }
    case "started": {
      const comp = view.components[rec.component];
      if (comp) comp.alive = true;
      pushFeed(view, { t: rec.t, component: rec.component, label: "started", kind: "info" });
      break;
    }
    case "registered": {
      // a (re)registered automaton reports its fresh state; adopt it wholesale
      if (auto && rec["state_uid"] != null) {
        auto.alive = true;
        auto.hung = false;
        auto.phase = "registered";
        auto.current_uid = rec["state_uid"] as number;
        const st = auto.states.find((s) => s.uid === auto.current_uid);
        auto.current_state = (rec["state"] as string) ?? st?.name ?? String(auto.current_uid);
        auto.queued_safe_uid = (rec["queued_safe_uid"] as number) ?? auto.current_uid;
        const queued = auto.states.find((s) => s.uid === auto.queued_safe_uid);
        auto.queued_safe_state = queued?.name ?? String(auto.queued_safe_uid);
        auto.dwell_deadline = null;
        delete view.pending[auto.address[1]];
      }
      pushFeed(view, { t: rec.t, component: rec.component, label: "registered", kind: "info" });
      break;
    }
    case "cs_active":
    case "cs_promoted": {
      const comp = view.components[rec.component];
      if (comp) comp.active = true;
      pushFeed(view, { t: rec.t, component: rec.component, label: rec.event, kind: "fault" });
      break;
    }
    case "cs_standby":
    case "cs_suppressed": {
      const comp = view.components[rec.component];
      if (comp) comp.active = false;
      pushFeed(view, { t: rec.t, component: rec.component, label: rec.event, kind: "fault" });
      break;
    }
    case "automaton_declared_dead":
    case "registrar_declared_dead":
    case "config_server_lost":
    case "registration_impossible":
    case "hung": {
      pushFeed(view, {
        t: rec.t,
        component: rec.component,
        label: rec.event.replace(/_/g, " "),
        kind: "fault",
      });
      break;
    }
    default:
      break; // heartbeat-level noise is not part of the view
  }
  return view;
}

export function applyTraceEvents(view: ConsoleView, recs: TraceEvent[], wallNowMs: number): ConsoleView {
  for (const rec of recs) {
    applyTraceEvent(view, rec, wallNowMs);
  }
  return view;
}

/** Best-known current virtual time, interpolated between server reports. */
export function estimatedServerTime(view: ConsoleView, wallNowMs: number): number {
  if (!view.connected) return view.serverTime;
  const elapsed = Math.max(0, wallNowMs - view.serverTimeWall) / 1000;
  return view.serverTime + elapsed * view.speed;
}

/** Dwell countdown in virtual seconds; never negative, null in open-loop states. */
export function dwellRemaining(a: AutomatonView, serverTime: number): number | null {
  if (a.dwell_deadline == null) return null;
  return Math.max(0, a.dwell_deadline - serverTime);
}

export function sitePanels(view: ConsoleView): { rural: AutomatonView[]; center: AutomatonView[] } {
  const rural: AutomatonView[] = [];
  const center: AutomatonView[] = [];
  for (const key of Object.keys(view.automata).sort()) {
    const a = view.automata[key]!;
    (a.authority === "rural" ? rural : center).push(a);
  }
  return { rural, center };
}
