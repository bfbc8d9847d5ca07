/**
 * HTML renderers: pure string builders over view state, so they are
 * testable without a browser. main.ts mounts the strings and binds events.
 */

import type { Beliefs, NodeSummary, TraceEvent } from "./api.js";
import { describeFinding, formatProb, ViewState } from "./state.js";

export function escapeHtml(text: string): string {
  return text.replace(/[&<>"']/g, (c) => (
    { "&": "&amp;", "<": "&lt;", ">": "&gt;", '"': "&quot;", "'": "&#39;" }[c] as string));
}

export function renderBeliefBars(nodes: NodeSummary[], beliefs: Beliefs,
                                 changed: Set<string>, findings: Set<string>): string {
  const rows: string[] = [];
  for (const node of nodes) {
    const vec = beliefs[node.name];
    if (!vec) continue;
    const classes = ["node-row"];
    if (changed.has(node.name)) classes.push("changed");
    const bars = node.values.map((value, i) => {
      const p = vec[i] ?? 0;
      return `<div class="bar-line">` +
        `<span class="value-label">${escapeHtml(value)}</span>` +
        `<div class="bar-track"><div class="bar" data-node="${escapeHtml(node.name)}"` +
        ` data-value="${escapeHtml(value)}" data-p="${p}" style="width:${(p * 100).toFixed(1)}%"></div></div>` +
        `<span class="prob">${formatProb(p)}</span></div>`;
    }).join("");
    const retract = findings.has(node.name)
      ? `<button class="retract" data-node="${escapeHtml(node.name)}">retract</button>` : "";
    rows.push(`<div class="${classes.join(" ")}" data-node="${escapeHtml(node.name)}">` +
      `<h4>${escapeHtml(node.name)}${retract}</h4>${bars}</div>`);
  }
  return rows.join("\n");
}

export function renderTaxonomy(classes: Record<string, { belief: number; status: string }>,
                               badges: Map<string, string>): string {
  const rows = Object.entries(classes).map(([name, row]) => {
    const badge = badges.get(name) ?? row.status;
    return `<li class="class-row status-${escapeHtml(badge)}" data-class="${escapeHtml(name)}">` +
      `<span class="badge">${escapeHtml(badge)}</span> ` +
      `<span class="class-name">${escapeHtml(name)}</span> ` +
      `<span class="prob">${formatProb(row.belief)}</span></li>`;
  });
  return `<ul class="taxonomy">${rows.join("")}</ul>`;
}

export function renderSuggestions(target: string | null,
                                  ranking: [string, number][]): string {
  if (target === null) return `<p class="hint">pick a target node to rank observations</p>`;
  const rows = ranking.map(([node, score], i) =>
    `<li class="suggestion" data-node="${escapeHtml(node)}">` +
    `<span class="rank">${i + 1}.</span> ${escapeHtml(node)} ` +
    `<span class="score">${score.toPrecision(3)}</span></li>`);
  return `<ol class="suggestions" data-target="${escapeHtml(target)}">${rows.join("")}</ol>`;
}

export function renderBasket(state: ViewState): string {
  if (!state.basket.length) return `<p class="hint">basket is empty</p>`;
  const rows = state.basket.map((f) =>
    `<li data-node="${escapeHtml(f.node)}">${escapeHtml(describeFinding(f))} ` +
    `<button class="basket-remove" data-node="${escapeHtml(f.node)}">x</button></li>`);
  return `<ul class="basket">${rows.join("")}</ul>`;
}

/** Side-by-side committed vs hypothetical; hypothetical cells are visually
 * distinct so sandbox numbers can never be mistaken for committed ones. */
export function renderWhatIfCompare(nodes: NodeSummary[], committed: Beliefs,
                                    hypothetical: Beliefs | null): string {
  if (hypothetical === null) return "";
  const rows: string[] = [];
  for (const node of nodes) {
    const before = committed[node.name];
    const after = hypothetical[node.name];
    if (!before || !after) continue;
    const cells = node.values.map((value, i) =>
      `<tr><td>${escapeHtml(node.name)}=${escapeHtml(value)}</td>` +
      `<td class="committed" data-p="${before[i]}">${formatProb(before[i] ?? 0)}</td>` +
      `<td class="hypo" data-p="${after[i]}">${formatProb(after[i] ?? 0)}</td></tr>`);
    rows.push(cells.join(""));
  }
  return `<table class="whatif-compare"><thead>` +
    `<tr><th>state</th><th>committed</th><th>what-if</th></tr></thead>` +
    `<tbody>${rows.join("")}</tbody></table>`;
}

export function renderEventLog(lines: string[]): string {
  return lines.map((l) => `<li>${escapeHtml(l)}</li>`).join("");
}

export function renderTraceEvents(events: TraceEvent[]): string {
  return events.map((e) =>
    `<li class="trace-${escapeHtml(e.event)}">#${e.step} ${escapeHtml(e.event)} ` +
    `${escapeHtml(e.class)} @ ${formatProb(e.belief)}</li>`).join("");
}

export function renderError(kind: string, message: string): string {
  return `<div class="error" data-kind="${escapeHtml(kind)}">${escapeHtml(message)}</div>`;
}
