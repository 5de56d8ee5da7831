// Control API client: snapshot + command posts over fetch, the event stream
// over WebSocket with cursor-based polling as the fallback, and
// reconnect-with-backoff. Transports are injectable so tests run hermetically.

import type { EventsPage, Snapshot, TraceEvent } from "./types.js";

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export interface WebSocketLike {
  onmessage: ((ev: { data: string }) => void) | null;
  onclose: (() => void) | null;
  onerror: (() => void) | null;
  onopen: (() => void) | null;
  close(): void;
}

export type WsFactory = (url: string) => WebSocketLike;

export class ApiError extends Error {
  constructor(public status: number, public detail: unknown) {
    super(`API error ${status}: ${JSON.stringify(detail)}`);
  }
}

export class ApiClient {
  constructor(
    private base: string,
    private fetchFn: FetchLike = (url, init) => fetch(url, init),
  ) {}

  private async get<T>(path: string): Promise<T> {
    const res = await this.fetchFn(`${this.base}${path}`);
    if (!res.ok) throw new ApiError(res.status, await res.text());
    return (await res.json()) as T;
  }

  private async post<T>(path: string, body: unknown): Promise<T> {
    const res = await this.fetchFn(`${this.base}${path}`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
    if (!res.ok) {
      let detail: unknown;
      try {
        detail = await res.json();
      } catch {
        detail = await res.text();
      }
      throw new ApiError(res.status, detail);
    }
    return (await res.json()) as T;
  }

  snapshot(): Promise<Snapshot> {
    return this.get("/api/state");
  }

  events(since: number, limit = 2000): Promise<EventsPage> {
    return this.get(`/api/events?since=${since}&limit=${limit}`);
  }

  inject(entity: number, unit: number, measurement: string, value: number) {
    return this.post<{ audit_id: number }>("/api/inject", { entity, unit, measurement, value });
  }

  command(entity: number, unit: number, command: string) {
    return this.post<{ audit_id: number }>("/api/command", { entity, unit, command });
  }

  confirm(entity: number, unit: number, automaton = 1) {
    return this.post<{ confirmed_uid: number }>("/api/confirm", { entity, unit, automaton });
  }

  setLink(link: string, up: boolean) {
    return this.post("/api/link", { link, up });
  }

  kill(component: string) {
    return this.post("/api/kill", { component });
  }

  restart(component: string) {
    return this.post("/api/restart", { component });
  }
}

export const BACKOFF_INITIAL_MS = 500;
export const BACKOFF_CAP_MS = 8000;

export function nextBackoff(current: number): number {
  return Math.min(current * 2, BACKOFF_CAP_MS);
}

export type SessionStatus = "connecting" | "live" | "polling" | "disconnected";

export interface SessionCallbacks {
  onSnapshot(snap: Snapshot): void;
  onEvents(events: TraceEvent[]): void;
  onStatus(status: SessionStatus): void;
}

export interface SessionOptions {
  wsFactory?: WsFactory | null;
  pollIntervalMs?: number;
  setTimeoutFn?: typeof setTimeout;
  clearTimeoutFn?: typeof clearTimeout;
}

/**
 * A live session: loads the snapshot, then follows the stream. WebSocket when
 * available, cursor polling otherwise; on any failure it reconnects with
 * exponential backoff and re-snapshots so no stale state is ever shown.
 */
export class StreamSession {
  private cursor = 0;
  private backoff = BACKOFF_INITIAL_MS;
  private closed = false;
  private ws: WebSocketLike | null = null;
  private timer: ReturnType<typeof setTimeout> | null = null;
  private pollIntervalMs: number;
  private setTimeoutFn: typeof setTimeout;
  private clearTimeoutFn: typeof clearTimeout;

  constructor(
    private api: ApiClient,
    private wsUrl: string | null,
    private callbacks: SessionCallbacks,
    options: SessionOptions = {},
  ) {
    this.wsFactory = options.wsFactory ?? null;
    this.pollIntervalMs = options.pollIntervalMs ?? 500;
    this.setTimeoutFn = options.setTimeoutFn ?? setTimeout;
    this.clearTimeoutFn = options.clearTimeoutFn ?? clearTimeout;
  }

  private wsFactory: WsFactory | null;

  async start(): Promise<void> {
    this.callbacks.onStatus("connecting");
    try {
      const snap = await this.api.snapshot();
      this.cursor = snap.events_cursor;
      this.backoff = BACKOFF_INITIAL_MS;
      this.callbacks.onSnapshot(snap);
    } catch {
      this.scheduleReconnect();
      return;
    }
    if (this.wsFactory && this.wsUrl) {
      this.openWebSocket();
    } else {
      this.callbacks.onStatus("polling");
      this.schedulePoll();
    }
  }

  private openWebSocket(): void {
    const ws = this.wsFactory!(this.wsUrl!);
    this.ws = ws;
    ws.onopen = () => this.callbacks.onStatus("live");
    ws.onmessage = (ev) => {
      const rec = JSON.parse(ev.data) as TraceEvent;
      this.cursor += 1;
      this.callbacks.onEvents([rec]);
    };
    const drop = () => {
      if (!this.closed) this.scheduleReconnect();
    };
    ws.onclose = drop;
    ws.onerror = drop;
  }

  private schedulePoll(): void {
    if (this.closed) return;
    this.timer = this.setTimeoutFn(() => void this.pollOnce(), this.pollIntervalMs);
  }

  async pollOnce(): Promise<void> {
    if (this.closed) return;
    try {
      const page = await this.api.events(this.cursor);
      if (page.events.length) {
        this.cursor = page.next;
        this.callbacks.onEvents(page.events);
      }
      this.backoff = BACKOFF_INITIAL_MS;
      this.schedulePoll();
    } catch {
      this.scheduleReconnect();
    }
  }

  private scheduleReconnect(): void {
    if (this.closed) return;
    this.callbacks.onStatus("disconnected");
    if (this.ws) {
      this.ws.onclose = null;
      this.ws.onerror = null;
      this.ws.close();
      this.ws = null;
    }
    const delay = this.backoff;
    this.backoff = nextBackoff(this.backoff);
    this.timer = this.setTimeoutFn(() => void this.start(), delay);
  }

  close(): void {
    this.closed = true;
    if (this.timer != null) this.clearTimeoutFn(this.timer);
    if (this.ws) {
      this.ws.onclose = null;
      this.ws.close();
    }
  }
}
