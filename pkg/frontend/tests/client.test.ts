import { describe, expect, it, vi } from "vitest";

import {
  ApiClient,
  ApiError,
  BACKOFF_CAP_MS,
  BACKOFF_INITIAL_MS,
  StreamSession,
  nextBackoff,
  type FetchLike,
} from "../src/client.js";
import { snapshot } from "./fixtures.js";

function jsonResponse(body: unknown, status = 200): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "content-type": "application/json" },
  });
}

describe("backoff schedule", () => {
  it("doubles to a cap", () => {
    const seen = [];
    let b = BACKOFF_INITIAL_MS;
    for (let i = 0; i < 8; i++) {
      seen.push(b);
      b = nextBackoff(b);
    }
    expect(seen).toEqual([500, 1000, 2000, 4000, 8000, 8000, 8000, 8000]);
    expect(Math.max(...seen)).toBe(BACKOFF_CAP_MS);
  });
});

describe("ApiClient", () => {
  it("posts injections and surfaces validation rejections", async () => {
    const calls: Array<{ url: string; init?: RequestInit }> = [];
    const fetchFn: FetchLike = async (url, init) => {
      calls.push({ url, init });
      if (url.endsWith("/api/inject")) return jsonResponse({ audit_id: 9 });
      return jsonResponse({ detail: "nope" }, 400);
    };
    const api = new ApiClient("http://node", fetchFn);
    const out = await api.inject(1, 1, "systolic_bp", 185);
    expect(out.audit_id).toBe(9);
    expect(JSON.parse(String(calls[0]!.init!.body))).toEqual({
      entity: 1,
      unit: 1,
      measurement: "systolic_bp",
      value: 185,
    });
    await expect(api.kill("x")).rejects.toThrowError(ApiError);
  });
});

describe("StreamSession with polling fallback", () => {
  function fakeNode() {
    const snap = snapshot({ events_cursor: 2 });
    const allEvents = [
      { t: 1, component: "a", event: "x" },
      { t: 2, component: "a", event: "y" },
      { t: 3, component: "a", event: "z" },
      { t: 4, component: "b", event: "w" },
    ];
    let failing = false;
    const fetchFn: FetchLike = async (url) => {
      if (failing) return jsonResponse("down", 503);
      if (url.includes("/api/state")) return jsonResponse(snap);
      const m = /since=(\d+)/.exec(url)!;
      const since = Number(m[1]);
      const events = allEvents.slice(since);
      return jsonResponse({ next: since + events.length, total: allEvents.length, events });
    };
    return { fetchFn, setFailing: (f: boolean) => (failing = f), allEvents };
  }

  it("snapshots, then pages events from the snapshot cursor", async () => {
    vi.useFakeTimers();
    const nodeSim = fakeNode();
    const got: unknown[] = [];
    const statuses: string[] = [];
    const session = new StreamSession(
      new ApiClient("", nodeSim.fetchFn),
      null,
      {
        onSnapshot: (s) => got.push(["snap", s.t]),
        onEvents: (evs) => got.push(...evs.map((e) => e.event)),
        onStatus: (s) => statuses.push(s),
      },
      { wsFactory: null, pollIntervalMs: 100 },
    );
    await session.start();
    await vi.advanceTimersByTimeAsync(150);
    session.close();
    expect(got).toEqual([["snap", 10], "z", "w"]); // cursor 2 skips already-seen records
    expect(statuses).toEqual(["connecting", "polling"]);
    vi.useRealTimers();
  });

  it("reconnects with backoff and re-snapshots after an outage", async () => {
    vi.useFakeTimers();
    const nodeSim = fakeNode();
    const statuses: string[] = [];
    let snaps = 0;
    const session = new StreamSession(
      new ApiClient("", nodeSim.fetchFn),
      null,
      {
        onSnapshot: () => snaps++,
        onEvents: () => undefined,
        onStatus: (s) => statuses.push(s),
      },
      { wsFactory: null, pollIntervalMs: 100 },
    );
    await session.start();
    expect(snaps).toBe(1);
    nodeSim.setFailing(true);
    await vi.advanceTimersByTimeAsync(150); // poll fails -> disconnected
    expect(statuses).toContain("disconnected");
    nodeSim.setFailing(false);
    await vi.advanceTimersByTimeAsync(BACKOFF_INITIAL_MS + 50); // backoff elapses -> restart
    expect(snaps).toBe(2); // fresh snapshot: never interact with stale state
    session.close();
    vi.useRealTimers();
  });
});

describe("StreamSession over a fake websocket", () => {
  it("prefers the stream and counts its cursor", async () => {
    const sockets: Array<{ onmessage: ((ev: { data: string }) => void) | null }> = [];
    const wsFactory = () => {
      const ws = {
        onmessage: null as ((ev: { data: string }) => void) | null,
        onclose: null,
        onerror: null,
        onopen: null as (() => void) | null,
        close() {},
      };
      sockets.push(ws);
      queueMicrotask(() => ws.onopen && ws.onopen());
      return ws;
    };
    const fetchFn: FetchLike = async (url) =>
      url.includes("/api/state")
        ? jsonResponse(snapshot())
        : jsonResponse({ next: 0, total: 0, events: [] });
    const got: string[] = [];
    const statuses: string[] = [];
    const session = new StreamSession(
      new ApiClient("", fetchFn),
      "ws://node/api/stream",
      {
        onSnapshot: () => undefined,
        onEvents: (evs) => got.push(...evs.map((e) => e.event)),
        onStatus: (s) => statuses.push(s),
      },
      { wsFactory },
    );
    await session.start();
    await new Promise((r) => setTimeout(r, 0));
    sockets[0]!.onmessage!({ data: JSON.stringify({ t: 1, component: "x", event: "ping" }) });
    session.close();
    expect(got).toEqual(["ping"]);
    expect(statuses).toContain("live");
  });
});
