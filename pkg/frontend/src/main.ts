/**
 * DOM bootstrap: binds the flow functions to the page. All numbers shown
 * are server responses; this file only routes clicks and mounts HTML.
 */

import { ApiClient, ApiError, Finding, TraceEvent } from "./api.js";
import * as flows from "./flows.js";
import {
  renderBasket,
  renderBeliefBars,
  renderError,
  renderEventLog,
  renderSuggestions,
  renderTaxonomy,
  renderTraceEvents,
  renderWhatIfCompare,
} from "./render.js";
import { ViewState, basketAdd, basketRemove, latestBadges } from "./state.js";

const client = new ApiClient("");
let state: ViewState | null = null;
let classifierId: string | null = null;
let traceEvents: TraceEvent[] = [];

function el<T extends HTMLElement>(id: string): T {
  const found = document.getElementById(id);
  if (!found) throw new Error(`missing #${id}`);
  return found as T;
}

function mount(id: string, html: string): void {
  el(id).innerHTML = html;
}

function paint(): void {
  if (!state) return;
  mount("beliefs", renderBeliefBars(state.nodes, state.beliefs, state.changed,
    new Set(state.findings.keys())));
  mount("suggestions", renderSuggestions(state.suggestionTarget, state.suggestions));
  mount("basket", renderBasket(state));
  mount("whatif-compare", renderWhatIfCompare(state.nodes, state.beliefs, state.hypothetical));
  mount("log", renderEventLog(state.log));
  el<HTMLElement>("revision").textContent = `revision ${state.revision}`;

  for (const button of el("beliefs").querySelectorAll<HTMLButtonElement>(".retract")) {
    button.addEventListener("click", () => retract(button.dataset.node ?? ""));
  }
  for (const item of el("suggestions").querySelectorAll<HTMLLIElement>(".suggestion")) {
    item.addEventListener("click", () => {
      el<HTMLSelectElement>("evidence-node").value = item.dataset.node ?? "";
      refreshValueChoices();
    });
  }
  for (const button of el("basket").querySelectorAll<HTMLButtonElement>(".basket-remove")) {
    button.addEventListener("click", () => {
      if (state) { state = basketRemove(state, button.dataset.node ?? ""); paint(); }
    });
  }
}

function showError(err: ApiError | null): void {
  mount("evidence-error", err ? renderError(err.kind, err.message) : "");
}

function currentFinding(): Finding | null {
  if (!state) return null;
  const node = el<HTMLSelectElement>("evidence-node").value;
  const mode = el<HTMLSelectElement>("evidence-mode").value;
  if (!node) return null;
  if (mode === "value") {
    return { node, value: el<HTMLSelectElement>("evidence-value").value };
  }
  const spec = el<HTMLInputElement>("evidence-likelihood").value;
  const weights = spec.split(":").map((x) => Number.parseFloat(x));
  if (weights.some((w) => Number.isNaN(w) || w < 0)) return null;
  return { node, likelihood: weights };
}

function refreshValueChoices(): void {
  if (!state) return;
  const nodeName = el<HTMLSelectElement>("evidence-node").value;
  const node = state.nodes.find((n) => n.name === nodeName);
  const select = el<HTMLSelectElement>("evidence-value");
  select.innerHTML = (node?.values ?? [])
    .map((v) => `<option value="${v}">${v}</option>`).join("");
}

async function submit(): Promise<void> {
  const finding = currentFinding();
  if (!state || !finding) return;
  const result = await flows.submitEvidence(client, state, finding);
  state = result.state;
  showError(result.error);
  paint();
}

async function retract(node: string): Promise<void> {
  if (!state || !node) return;
  const result = await flows.retractEvidence(client, state, node);
  state = result.state;
  showError(result.error);
  paint();
}

async function suggest(): Promise<void> {
  if (!state) return;
  const target = el<HTMLSelectElement>("impact-target").value;
  if (!target) return;
  state = await flows.steerSuggestions(client, state, target);
  paint();
}

async function refreshClassifier(): Promise<void> {
  if (!classifierId) return;
  const [beliefs, trace] = await Promise.all([
    client.classifierBeliefs(classifierId), client.trace(classifierId)]);
  traceEvents = trace.events;
  mount("taxonomy", renderTaxonomy(beliefs.classes, latestBadges(traceEvents)));
  mount("trace", renderTraceEvents(traceEvents));
}

async function boot(): Promise<void> {
  const summary = await client.model();
  const networks = Object.keys(summary.networks);
  const netSelect = el<HTMLSelectElement>("network-select");
  netSelect.innerHTML = networks.map((n) => `<option>${n}</option>`).join("");

  const open = async () => {
    state = await flows.openNetworkSession(client, netSelect.value);
    const nodeNames = state.nodes.map((n) => n.name);
    el<HTMLSelectElement>("evidence-node").innerHTML =
      nodeNames.map((n) => `<option>${n}</option>`).join("");
    el<HTMLSelectElement>("impact-target").innerHTML =
      nodeNames.map((n) => `<option>${n}</option>`).join("");
    refreshValueChoices();
    showError(null);
    paint();
  };

  el<HTMLButtonElement>("open-session").addEventListener("click", open);
  el<HTMLSelectElement>("evidence-node").addEventListener("change", refreshValueChoices);
  el<HTMLSelectElement>("evidence-mode").addEventListener("change", () => {
    const virtual = el<HTMLSelectElement>("evidence-mode").value === "likelihood";
    el<HTMLInputElement>("evidence-likelihood").hidden = !virtual;
    el<HTMLSelectElement>("evidence-value").hidden = virtual;
  });
  el<HTMLButtonElement>("evidence-submit").addEventListener("click", submit);
  el<HTMLButtonElement>("impact-go").addEventListener("click", suggest);

  el<HTMLButtonElement>("basket-add").addEventListener("click", () => {
    const finding = currentFinding();
    if (state && finding) { state = basketAdd(state, finding); paint(); }
  });
  el<HTMLButtonElement>("basket-preview").addEventListener("click", async () => {
    if (!state) return;
    const result = await flows.whatifPreview(client, state);
    state = result.state;
    showError(result.error);
    paint();
  });
  el<HTMLButtonElement>("basket-commit").addEventListener("click", async () => {
    if (!state) return;
    const result = await flows.whatifCommit(client, state);
    state = result.state;
    showError(result.error);
    paint();
  });
  el<HTMLButtonElement>("basket-cancel").addEventListener("click", () => {
    if (!state) return;
    state = flows.whatifCancel(state);
    paint();
  });

  const taxonomies = Object.keys(summary.taxonomies);
  if (taxonomies.length) {
    const taxSelect = el<HTMLSelectElement>("taxonomy-select");
    taxSelect.innerHTML = taxonomies.map((t) => `<option>${t}</option>`).join("");
    el<HTMLButtonElement>("open-classifier").addEventListener("click", async () => {
      const handle = await client.openSession("classifier", taxSelect.value);
      classifierId = handle.id;
      await refreshClassifier();
    });
    el<HTMLButtonElement>("classifier-step").addEventListener("click", async () => {
      if (!classifierId) return;
      const raw = el<HTMLTextAreaElement>("feed-input").value.trim();
      const findings = raw ? raw.split("\n").map((line) => JSON.parse(line)) : [];
      await client.step(classifierId, findings);
      el<HTMLTextAreaElement>("feed-input").value = "";
      await refreshClassifier();
    });
  }

  if (networks.length) {
    netSelect.value = networks[0] as string;
    await open();
  }
}

boot().catch((err) => {
  document.body.insertAdjacentHTML("afterbegin", renderError("boot", String(err)));
});
