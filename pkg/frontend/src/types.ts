// Wire types of the node control API (GET /api/state, /api/events, POST commands).

export interface StateDefView {
  uid: number;
  name: string;
  safety: "open_loop_safe" | "transient_safe";
  max_dwell_s: number | null;
  fallback: number | null;
}

export interface TransitionView {
  source: number;
  target: number;
  trigger: string;
  label: string;
}

export interface AutomatonSnapshot {
  name: string;
  address: [number, number, number];
  authority: "rural" | "center";
  current_uid: number;
  current_state: string;
  queued_safe_uid: number;
  queued_safe_state: string;
  dwell_deadline: number | null;
  dwell_remaining_s: number | null;
  link_up: boolean;
  measurements: Record<string, number>;
  states: StateDefView[];
  transitions: TransitionView[];
  endpoint: string;
  phase: string;
  status: string | null;
  hung: boolean;
  alive: boolean;
}

export interface ComponentView {
  endpoint: string;
  entity: number;
  alive: boolean;
  kind: "config_server" | "registrar" | "gateway" | "automaton";
  rank?: number;
  active?: boolean;
  unit?: number;
  registered?: boolean;
  phase?: string;
}

export interface LinkView {
  name: string;
  up: boolean;
}

export interface Snapshot {
  t: number;
  automata: AutomatonSnapshot[];
  components: ComponentView[];
  links: LinkView[];
  events_cursor: number;
}

// One trace record from /api/events or the WebSocket stream.
export interface TraceEvent {
  t: number;
  component: string;
  event: string;
  [key: string]: unknown;
}

export interface EventsPage {
  next: number;
  total: number;
  events: TraceEvent[];
}
