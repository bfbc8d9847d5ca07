/**
 * Client view state and the pure helpers that evolve it. Numbers are
 * carried through untouched; the only "math" here is picking which server
 * value to show.
 */

import type { Beliefs, BeliefDelta, Finding, ImpactResponse, NodeSummary, TraceEvent } from "./api.js";

export interface ViewState {
  sessionId: string;
  network: string;
  nodes: NodeSummary[];
  revision: number;
  /** committed beliefs, exactly as last fetched */
  beliefs: Beliefs;
  /** nodes whose belief moved in the last mutation, for highlighting */
  changed: Set<string>;
  /** node names with a recorded finding (enables retract buttons) */
  findings: Map<string, Finding>;
  /** what-if basket, client-side only until committed */
  basket: Finding[];
  /** hypothetical beliefs from the last what-if preview, if any */
  hypothetical: Beliefs | null;
  /** impact ranking for the chosen target, server order preserved */
  suggestions: [string, number][];
  suggestionTarget: string | null;
  log: string[];
}

export function initialState(sessionId: string, network: string,
                             nodes: NodeSummary[], beliefs: Beliefs,
                             revision: number): ViewState {
  return {
    sessionId, network, nodes, revision, beliefs,
    changed: new Set(),
    findings: new Map(),
    basket: [],
    hypothetical: null,
    suggestions: [],
    suggestionTarget: null,
    log: [],
  };
}

export function changedNodes(deltas: BeliefDelta[]): Set<string> {
  return new Set(deltas.map((d) => d.node));
}

/** Impact rankings render in server order; sorting client-side could mask
 * service bugs and is exactly the arithmetic this UI must not do. */
export function orderedSuggestions(impact: ImpactResponse): [string, number][] {
  return impact.ranking.slice();
}

/** Latest establish/reject/suspend/activate event per class wins; `updated`
 * events carry beliefs but do not change a badge. */
export function latestBadges(events: TraceEvent[]): Map<string, string> {
  const badge = new Map<string, string>();
  for (const event of events) {
    if (event.event === "established" || event.event === "rejected"
        || event.event === "suspended" || event.event === "activated") {
      badge.set(event.class, event.event);
    }
  }
  return badge;
}

export function basketAdd(state: ViewState, finding: Finding): ViewState {
  const basket = state.basket.filter((f) => f.node !== finding.node);
  basket.push(finding);
  return { ...state, basket };
}

export function basketRemove(state: ViewState, node: string): ViewState {
  return { ...state, basket: state.basket.filter((f) => f.node !== node) };
}

/** Cancel is purely client-side: drop the basket and the preview. The
 * committed beliefs were never touched by a what-if. */
export function basketCancel(state: ViewState): ViewState {
  return { ...state, basket: [], hypothetical: null };
}

export function describeFinding(finding: Finding): string {
  if (finding.value !== undefined) return `${finding.node} = ${finding.value}`;
  return `${finding.node} ~ [${(finding.likelihood ?? []).join(", ")}]`;
}

/** Display formatting only: three decimals, value otherwise untouched. */
export function formatProb(x: number): string {
  return x.toFixed(3);
}
