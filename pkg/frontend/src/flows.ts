/**
 * User-level workflows, decoupled from the DOM so the scripted-server tests
 * can drive them end to end. Every flow follows poll-on-mutation: after a
 * 2xx mutation the client re-fetches beliefs rather than patching locally.
 */

import { ApiClient, ApiError, Finding } from "./api.js";
import {
  ViewState,
  basketCancel,
  changedNodes,
  describeFinding,
  initialState,
  orderedSuggestions,
} from "./state.js";

export interface FlowResult {
  state: ViewState;
  error: ApiError | null;
}

export async function openNetworkSession(client: ApiClient,
                                         network: string): Promise<ViewState> {
  const summary = await client.model();
  const net = summary.networks[network];
  if (!net) throw new Error(`model has no network ${network}`);
  const handle = await client.openSession("network", network);
  const beliefs = await client.beliefs(handle.id);
  return initialState(handle.id, network, net.nodes, beliefs.beliefs, beliefs.revision);
}

export async function submitEvidence(client: ApiClient, state: ViewState,
                                     finding: Finding): Promise<FlowResult> {
  try {
    const response = await client.assertEvidence(state.sessionId, finding);
    const fresh = await client.beliefs(state.sessionId);
    const findings = new Map(state.findings);
    findings.set(finding.node, finding);
    return {
      state: {
        ...state,
        beliefs: fresh.beliefs,
        revision: fresh.revision,
        changed: changedNodes(response.deltas),
        findings,
        log: [...state.log, `asserted ${describeFinding(finding)}`],
      },
      error: null,
    };
  } catch (err) {
    if (err instanceof ApiError) return { state, error: err };
    throw err;
  }
}

export async function retractEvidence(client: ApiClient, state: ViewState,
                                      node: string): Promise<FlowResult> {
  try {
    const response = await client.retractEvidence(state.sessionId, node);
    const fresh = await client.beliefs(state.sessionId);
    const findings = new Map(state.findings);
    findings.delete(node);
    return {
      state: {
        ...state,
        beliefs: fresh.beliefs,
        revision: fresh.revision,
        changed: changedNodes(response.deltas),
        findings,
        log: [...state.log, `retracted ${node}`],
      },
      error: null,
    };
  } catch (err) {
    if (err instanceof ApiError) return { state, error: err };
    throw err;
  }
}

export async function steerSuggestions(client: ApiClient, state: ViewState,
                                       target: string): Promise<ViewState> {
  const impact = await client.impact(state.sessionId, target);
  return {
    ...state,
    suggestionTarget: target,
    suggestions: orderedSuggestions(impact),
  };
}

export async function whatifPreview(client: ApiClient,
                                    state: ViewState): Promise<FlowResult> {
  try {
    const response = await client.whatif(state.sessionId, state.basket);
    return {
      state: { ...state, hypothetical: response.hypothetical },
      error: null,
    };
  } catch (err) {
    if (err instanceof ApiError) return { state, error: err };
    throw err;
  }
}

/** Committing replays the basket as real evidence, one finding at a time. */
export async function whatifCommit(client: ApiClient,
                                   state: ViewState): Promise<FlowResult> {
  let current = state;
  for (const finding of state.basket) {
    const result = await submitEvidence(client, current, finding);
    if (result.error) return { state: current, error: result.error };
    current = result.state;
  }
  return { state: basketCancel(current), error: null };
}

export function whatifCancel(state: ViewState): ViewState {
  return basketCancel(state);
}
