// DOM wiring: one StreamSession feeding the pure view model, panels re-rendered
// on a short timer (the countdown interpolates between server reports), and
// every control posting through the API client. No optimistic updates: the
// view changes only when server events say so.

import { ApiClient, ApiError, StreamSession, type SessionStatus } from "./client.js";
import { renderPanelHtml } from "./graph.js";
import {
  applySnapshot,
  applyTraceEvents,
  estimatedServerTime,
  initialView,
  sitePanels,
  type ConsoleView,
} from "./viewmodel.js";

const api = new ApiClient("");
let view: ConsoleView = initialView();
let status: SessionStatus = "connecting";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

function renderBanner(): void {
  const banner = el<HTMLDivElement>("banner");
  if (status === "disconnected" || status === "connecting") {
    banner.textContent =
      status === "disconnected" ? "disconnected from node, retrying…" : "connecting…";
    banner.className = "banner banner-down";
    document.body.classList.add("stale");
  } else {
    banner.textContent = status === "live" ? "live stream" : "polling";
    banner.className = "banner banner-up";
    document.body.classList.remove("stale");
  }
  // no stale interaction: controls stay disabled unless connected
  const disabled = status === "disconnected" || status === "connecting";
  document.querySelectorAll("button, input, select").forEach((n) => {
    (n as HTMLButtonElement).disabled = disabled;
  });
}

function renderPanels(): void {
  const t = estimatedServerTime(view, Date.now());
  const { rural, center } = sitePanels(view);
  el<HTMLDivElement>("rural-panel").innerHTML =
    rural.map((a) => renderPanelHtml(a, t)).join("") || "<p class='empty'>no rural automata</p>";
  el<HTMLDivElement>("center-panel").innerHTML =
    center.map((a) => renderPanelHtml(a, t)).join("") || "<p class='empty'>no center automata</p>";
  el<HTMLSpanElement>("clock").textContent = `t = ${t.toFixed(1)} s`;

  const links = Object.entries(view.links)
    .map(([name, up]) => `<span class="pill ${up ? "pill-safe" : "pill-down"}">${name}: ${up ? "up" : "DOWN"}</span>`)
    .join(" ");
  el<HTMLDivElement>("links").innerHTML = links || "<span class='pill pill-muted'>no links</span>";

  const pend = Object.values(view.pending)
    .map((p) => `<li>unit ${p.unit}: ${p.state} awaiting confirmation (since ${p.since.toFixed(1)} s)</li>`)
    .join("");
  el<HTMLUListElement>("pending").innerHTML = pend || "<li class='empty'>none</li>";
}

function renderFeed(): void {
  const feed = el<HTMLUListElement>("feed");
  feed.innerHTML = view.feed
    .slice(-60)
    .reverse()
    .map(
      (e) =>
        `<li class="feed-${e.kind}"><span class="feed-t">${e.t.toFixed(2)}</span> ` +
        `<span class="feed-c">${e.component}</span> ${e.label}` +
        (e.auditId != null ? ` <span class="feed-audit">#${e.auditId}</span>` : "") +
        `</li>`,
    )
    .join("");
}

function renderComponents(): void {
  const select = el<HTMLSelectElement>("component-select");
  const current = select.value;
  select.innerHTML = Object.values(view.components)
    .map((c) => `<option value="${c.endpoint}">${c.endpoint} (${c.kind}${c.alive ? "" : ", dead"})</option>`)
    .join("");
  if (current) select.value = current;
}

function renderAll(): void {
  renderBanner();
  renderPanels();
  renderFeed();
  renderComponents();
}

function reportError(err: unknown): void {
  const box = el<HTMLDivElement>("error");
  box.textContent =
    err instanceof ApiError ? `rejected: ${JSON.stringify(err.detail)}` : String(err);
  box.classList.add("visible");
  setTimeout(() => box.classList.remove("visible"), 5000);
}

function post(action: () => Promise<unknown>): void {
  action().catch(reportError);
}

function wireControls(): void {
  el<HTMLButtonElement>("inject-btn").onclick = () =>
    post(() =>
      api.inject(
        Number(el<HTMLSelectElement>("inject-entity").value),
        Number(el<HTMLInputElement>("inject-unit").value),
        el<HTMLSelectElement>("inject-measurement").value,
        Number(el<HTMLInputElement>("inject-value").value),
      ),
    );
  el<HTMLButtonElement>("command-btn").onclick = () =>
    post(() =>
      api.command(
        Number(el<HTMLSelectElement>("command-entity").value),
        Number(el<HTMLInputElement>("command-unit").value),
        el<HTMLInputElement>("command-name").value,
      ),
    );
  document.querySelectorAll<HTMLButtonElement>("[data-quick-command]").forEach((btn) => {
    btn.onclick = () =>
      post(() => {
        el<HTMLInputElement>("command-name").value = btn.dataset.quickCommand!;
        return api.command(2, Number(el<HTMLInputElement>("command-unit").value), btn.dataset.quickCommand!);
      });
  });
  el<HTMLButtonElement>("confirm-btn").onclick = () =>
    post(() => api.confirm(2, Number(el<HTMLInputElement>("command-unit").value)));
  el<HTMLButtonElement>("link-btn").onclick = () => {
    const name = Object.keys(view.links)[0];
    if (!name) return;
    post(() => api.setLink(name, !view.links[name]));
  };
  el<HTMLButtonElement>("kill-btn").onclick = () =>
    post(() => api.kill(el<HTMLSelectElement>("component-select").value));
  el<HTMLButtonElement>("restart-btn").onclick = () =>
    post(() => api.restart(el<HTMLSelectElement>("component-select").value));
}

function main(): void {
  wireControls();
  const wsUrl = `${location.protocol === "https:" ? "wss" : "ws"}://${location.host}/api/stream`;
  const session = new StreamSession(
    api,
    wsUrl,
    {
      onSnapshot: (snap) => {
        view = applySnapshot(initialView(), snap, Date.now());
        renderAll();
      },
      onEvents: (events) => {
        applyTraceEvents(view, events, Date.now());
        renderAll();
      },
      onStatus: (s) => {
        status = s;
        view.connected = s === "live" || s === "polling";
        renderBanner();
      },
    },
    { wsFactory: "WebSocket" in globalThis ? (url) => new WebSocket(url) as unknown as never : null },
  );
  void session.start();
  setInterval(renderPanels, 250); // countdown interpolation only; state comes from events
}

main();
