// SVG state-graph rendering. Pure string builders so the layout is testable
// without a DOM; the app injects the result via innerHTML.

import type { AutomatonView } from "./viewmodel.js";
import { dwellRemaining } from "./viewmodel.js";

const W = 460;
const H = 380;
const NODE_R = 27;

export interface NodePos {
  uid: number;
  x: number;
  y: number;
}

export function circularLayout(uids: number[], w = W, h = H): NodePos[] {
  const cx = w / 2;
  const cy = h / 2 + 6;
  const radius = Math.min(w, h) / 2 - NODE_R - 28;
  const n = uids.length;
  return uids.map((uid, i) => {
    const angle = -Math.PI / 2 + (2 * Math.PI * i) / Math.max(n, 1);
    return { uid, x: cx + radius * Math.cos(angle), y: cy + radius * Math.sin(angle) };
  });
}

function esc(s: string): string {
  return s.replace(/&/g, "&amp;").replace(/</g, "&lt;").replace(/>/g, "&gt;").replace(/"/g, "&quot;");
}

function shortName(name: string): string {
  return name.length > 16 ? name.slice(0, 15) + "…" : name;
}

export function renderGraphSvg(a: AutomatonView, serverTime: number): string {
  const layout = circularLayout(a.states.map((s) => s.uid));
  const pos = new Map(layout.map((p) => [p.uid, p]));
  const parts: string[] = [];
  parts.push(
    `<svg viewBox="0 0 ${W} ${H}" class="graph" role="img" aria-label="${esc(a.name)} state graph">`,
  );
  parts.push(
    `<defs><marker id="arrow" viewBox="0 0 10 10" refX="9" refY="5" markerWidth="7" markerHeight="7" orient="auto-start-reverse"><path d="M0 0 L10 5 L0 10 z" fill="#8a93a6"/></marker></defs>`,
  );

  for (const t of a.transitions) {
    const from = pos.get(t.source);
    const to = pos.get(t.target);
    if (!from || !to) continue;
    if (t.source === t.target) continue;
    const dx = to.x - from.x;
    const dy = to.y - from.y;
    const len = Math.hypot(dx, dy) || 1;
    const sx = from.x + (dx / len) * NODE_R;
    const sy = from.y + (dy / len) * NODE_R;
    const ex = to.x - (dx / len) * (NODE_R + 5);
    const ey = to.y - (dy / len) * (NODE_R + 5);
    // bow each edge slightly so opposite directions stay distinguishable
    const mx = (sx + ex) / 2 - (dy / len) * 14;
    const my = (sy + ey) / 2 + (dx / len) * 14;
    parts.push(
      `<path d="M ${sx.toFixed(1)} ${sy.toFixed(1)} Q ${mx.toFixed(1)} ${my.toFixed(1)} ${ex.toFixed(1)} ${ey.toFixed(1)}"` +
        ` class="edge" marker-end="url(#arrow)"><title>${esc(t.label)}</title></path>`,
    );
  }

  for (const s of a.states) {
    const p = pos.get(s.uid)!;
    const classes = ["node", s.safety === "open_loop_safe" ? "node-ols" : "node-transient"];
    if (s.uid === a.current_uid) classes.push("node-current");
    parts.push(`<g class="${classes.join(" ")}">`);
    if (s.uid === a.queued_safe_uid) {
      parts.push(
        `<circle cx="${p.x.toFixed(1)}" cy="${p.y.toFixed(1)}" r="${NODE_R + 6}" class="queued-ring"><title>queued safe state</title></circle>`,
      );
    }
    parts.push(
      `<circle cx="${p.x.toFixed(1)}" cy="${p.y.toFixed(1)}" r="${NODE_R}"><title>${esc(s.name)} (${s.safety === "open_loop_safe" ? "open-loop safe" : `transient, ${s.max_dwell_s ?? "?"} s`})</title></circle>`,
    );
    parts.push(
      `<text x="${p.x.toFixed(1)}" y="${(p.y + NODE_R + 14).toFixed(1)}" class="node-label">${esc(shortName(s.name))}</text>`,
    );
    if (s.uid === a.current_uid && a.dwell_deadline != null) {
      const left = dwellRemaining(a, serverTime);
      parts.push(
        `<text x="${p.x.toFixed(1)}" y="${(p.y + 5).toFixed(1)}" class="dwell-badge">${left!.toFixed(0)}s</text>`,
      );
    }
    parts.push("</g>");
  }
  parts.push("</svg>");
  return parts.join("");
}

export function renderPanelHtml(a: AutomatonView, serverTime: number): string {
  const left = dwellRemaining(a, serverTime);
  const dwell =
    left == null
      ? `<span class="pill pill-safe">open-loop safe</span>`
      : `<span class="pill pill-dwell">dwell ${left.toFixed(1)} s</span>`;
  const liveness = a.alive ? (a.hung ? "hung" : a.phase) : "dead";
  return (
    `<header><h3>${esc(a.name)}</h3>` +
    `<span class="pill">${esc(a.current_state)}</span> ${dwell}` +
    `<span class="pill pill-muted">queued: ${esc(a.queued_safe_state)}</span>` +
    `<span class="pill pill-muted">${esc(liveness)}</span></header>` +
    renderGraphSvg(a, serverTime)
  );
}
