/**
 * Scripted server: a fetch stand-in with a route table and a request log,
 * so flow tests can assert exactly which calls the UI made.
 */

export interface Recorded {
  method: string;
  path: string;
  body: unknown;
}

type Handler = (body: unknown) => { status?: number; json: unknown };

export class ScriptedServer {
  readonly log: Recorded[] = [];
  private routes = new Map<string, Handler>();

  on(method: string, path: string, handler: Handler | unknown): this {
    const fn: Handler = typeof handler === "function"
      ? (handler as Handler)
      : () => ({ json: handler });
    this.routes.set(`${method} ${path}`, fn);
    return this;
  }

  requests(method?: string, pathPrefix?: string): Recorded[] {
    return this.log.filter((r) =>
      (!method || r.method === method) && (!pathPrefix || r.path.startsWith(pathPrefix)));
  }

  fetch = async (url: string, init?: RequestInit): Promise<Response> => {
    const method = init?.method ?? "GET";
    const path = url.replace(/^https?:\/\/[^/]+/, "");
    const body = init?.body ? JSON.parse(init.body as string) : undefined;
    this.log.push({ method, path, body });
    const handler = this.routes.get(`${method} ${path.split("?")[0]}`)
      ?? this.routes.get(`${method} ${path}`);
    if (!handler) {
      return new Response(JSON.stringify({ kind: "unknown-route", message: path }),
        { status: 404 });
    }
    const out = handler(body);
    return new Response(JSON.stringify(out.json), { status: out.status ?? 200 });
  };
}

export const CHAIN2_PRIOR = { A: [0.3, 0.7], B: [0.41, 0.59] };
export const CHAIN2_AFTER_BT = {
  A: [0.6585365853658537, 0.34146341463414637],
  B: [1.0, 0.0],
};

/** Routes for a chain2 network session that accepts B=t. */
export function chain2Server(): ScriptedServer {
  const server = new ScriptedServer();
  let asserted = false;
  const beliefs = () => (asserted ? CHAIN2_AFTER_BT : CHAIN2_PRIOR);
  server.on("GET", "/model", {
    networks: {
      chain2: {
        nodes: [
          { name: "A", values: ["t", "f"], parents: [] },
          { name: "B", values: ["t", "f"], parents: ["A"] },
        ],
      },
    },
    taxonomies: {},
    diagrams: {},
  });
  server.on("POST", "/sessions",
    { id: "s1", kind: "network", name: "chain2", revision: 0 });
  server.on("GET", "/sessions/s1/beliefs",
    () => ({ json: { revision: asserted ? 1 : 0, beliefs: beliefs() } }));
  server.on("POST", "/sessions/s1/evidence", (body) => {
    const finding = body as { node: string; value?: string };
    if (finding.node === "B" && finding.value === "t") {
      asserted = true;
      return {
        json: {
          revision: 1,
          deltas: [
            { node: "A", old: CHAIN2_PRIOR.A, new: CHAIN2_AFTER_BT.A },
            { node: "B", old: CHAIN2_PRIOR.B, new: CHAIN2_AFTER_BT.B },
          ],
          beliefs: beliefs(),
        },
      };
    }
    return {
      status: 409,
      json: { kind: "conflicting-instantiation", message: "already instantiated" },
    };
  });
  server.on("POST", "/sessions/s1/whatif", () => ({
    json: { revision: asserted ? 1 : 0, hypothetical: CHAIN2_AFTER_BT, beliefs: beliefs() },
  }));
  server.on("GET", "/sessions/s1/impact", {
    target: "A",
    metric: "l2",
    // deliberately not sorted by name, so a passthrough bug would show
    ranking: [["B", 0.12853], ["Z", 0.0021], ["M", 0.0007]],
  });
  return server;
}
