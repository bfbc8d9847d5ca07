/**
 * Typed client for the bart session service. Every displayed number comes
 * from these responses verbatim; the UI never does probability arithmetic.
 */

export interface ModelSummary {
  networks: Record<string, { nodes: NodeSummary[] }>;
  taxonomies: Record<string, { singletons: string[]; classes: Record<string, string[]> }>;
  diagrams: Record<string, { decisions: { name: string; alternatives: string[] }[]; chance: string[] }>;
}

export interface NodeSummary {
  name: string;
  values: string[];
  parents: string[];
}

export type Beliefs = Record<string, number[]>;

export interface SessionHandle {
  id: string;
  kind: "network" | "classifier";
  name: string;
  revision: number;
}

export interface Finding {
  node: string;
  value?: string;
  likelihood?: number[];
}

export interface BeliefDelta {
  node: string;
  old: number[];
  new: number[];
}

export interface EvidenceResponse {
  revision: number;
  deltas: BeliefDelta[];
  beliefs: Beliefs;
}

export interface BeliefsResponse {
  revision: number;
  beliefs: Beliefs;
}

export interface ClassifierBeliefs {
  revision: number;
  classes: Record<string, { belief: number; status: string }>;
  weights: Record<string, number>;
}

export interface ImpactResponse {
  target: string;
  metric: string;
  ranking: [string, number][];
}

export interface WhatIfResponse {
  revision: number;
  hypothetical: Beliefs;
  beliefs: Beliefs;
}

export interface TraceEvent {
  step: number;
  event: string;
  class: string;
  belief: number;
  [extra: string]: unknown;
}

export interface TraceResponse {
  revision: number;
  events: TraceEvent[];
  report: { most_specific: string[]; statuses: Record<string, string> };
}

export class ApiError extends Error {
  status: number;
  kind: string;

  constructor(status: number, body: { kind?: string; message?: string }) {
    super(body.message ?? `request failed with ${status}`);
    this.status = status;
    this.kind = body.kind ?? "error";
  }
}

type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  private base: string;
  private fetchFn: FetchLike;
  /** last revision seen per session, sent back on mutations */
  readonly revisions = new Map<string, number>();

  constructor(base = "", fetchFn: FetchLike = (u, i) => globalThis.fetch(u, i)) {
    this.base = base.replace(/\/$/, "");
    this.fetchFn = fetchFn;
  }

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const init: RequestInit = { method, headers: { "content-type": "application/json" } };
    if (body !== undefined) init.body = JSON.stringify(body);
    const response = await this.fetchFn(this.base + path, init);
    const payload = await response.json().catch(() => ({}));
    if (!response.ok) throw new ApiError(response.status, payload);
    return payload as T;
  }

  private track<T extends { revision?: number }>(sessionId: string, payload: T): T {
    if (typeof payload.revision === "number") this.revisions.set(sessionId, payload.revision);
    return payload;
  }

  model(): Promise<ModelSummary> {
    return this.request("GET", "/model");
  }

  async openSession(kind: "network" | "classifier", name: string): Promise<SessionHandle> {
    const handle = await this.request<SessionHandle>("POST", "/sessions", { kind, name });
    this.revisions.set(handle.id, handle.revision);
    return handle;
  }

  async beliefs(sessionId: string): Promise<BeliefsResponse> {
    return this.track(sessionId, await this.request<BeliefsResponse>(
      "GET", `/sessions/${sessionId}/beliefs`));
  }

  async classifierBeliefs(sessionId: string): Promise<ClassifierBeliefs> {
    return this.track(sessionId, await this.request<ClassifierBeliefs>(
      "GET", `/sessions/${sessionId}/beliefs`));
  }

  async assertEvidence(sessionId: string, finding: Finding): Promise<EvidenceResponse> {
    const body = { ...finding, revision: this.revisions.get(sessionId) };
    return this.track(sessionId, await this.request<EvidenceResponse>(
      "POST", `/sessions/${sessionId}/evidence`, body));
  }

  async retractEvidence(sessionId: string, node: string): Promise<EvidenceResponse> {
    return this.track(sessionId, await this.request<EvidenceResponse>(
      "DELETE", `/sessions/${sessionId}/evidence/${encodeURIComponent(node)}`));
  }

  mpe(sessionId: string): Promise<{ assignment: Record<string, string>; probability: number }> {
    return this.request("GET", `/sessions/${sessionId}/mpe`);
  }

  impact(sessionId: string, target: string): Promise<ImpactResponse> {
    return this.request("GET",
      `/sessions/${sessionId}/impact?target=${encodeURIComponent(target)}`);
  }

  whatif(sessionId: string, findings: Finding[]): Promise<WhatIfResponse> {
    return this.request("POST", `/sessions/${sessionId}/whatif`, { findings });
  }

  async step(sessionId: string, findings: object[] = []): Promise<TraceResponse> {
    return this.track(sessionId, await this.request<TraceResponse>(
      "POST", `/sessions/${sessionId}/step`, { findings }));
  }

  async trace(sessionId: string): Promise<TraceResponse> {
    return this.track(sessionId, await this.request<TraceResponse>(
      "GET", `/sessions/${sessionId}/trace`));
  }

  solve(diagram: string, evidence?: Record<string, string>, prune = true):
      Promise<{ policy: Record<string, Record<string, string>>; expected_utility: number }> {
    return this.request("POST", `/diagrams/${encodeURIComponent(diagram)}/solve`,
      { evidence, prune });
  }
}
