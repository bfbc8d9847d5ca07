import { describe, expect, it } from "vitest";

import {
  escapeHtml,
  renderBeliefBars,
  renderError,
  renderSuggestions,
  renderTaxonomy,
  renderTraceEvents,
} from "../src/render.js";

const NODES = [
  { name: "A", values: ["t", "f"], parents: [] },
  { name: "B", values: ["t", "f"], parents: ["A"] },
];

describe("belief bars", () => {
  it("renders one bar per value with the raw server number attached", () => {
    const html = renderBeliefBars(NODES, { A: [0.3, 0.7], B: [0.41, 0.59] },
      new Set(), new Set());
    expect(html).toContain('data-node="A" data-value="t" data-p="0.3"');
    expect(html).toContain("width:30.0%");
    expect(html).toContain("0.410");
  });

  it("marks changed nodes and offers retract for findings", () => {
    const html = renderBeliefBars(NODES, { A: [1, 0], B: [1, 0] },
      new Set(["A"]), new Set(["B"]));
    expect(html).toContain('class="node-row changed" data-node="A"');
    expect(html).toContain('<button class="retract" data-node="B">');
  });

  it("escapes markup in names", () => {
    const html = renderBeliefBars(
      [{ name: "<x>", values: ["a", "b"], parents: [] }],
      { "<x>": [0.5, 0.5] }, new Set(), new Set());
    expect(html).toContain("&lt;x&gt;");
    expect(html).not.toContain("<x>");
  });
});

describe("taxonomy and trace", () => {
  it("badges come from the trace, falling back to the status field", () => {
    const html = renderTaxonomy(
      { warship: { belief: 0.9, status: "established" },
        tanker: { belief: 0.1, status: "dormant" } },
      new Map([["warship", "established"]]));
    expect(html).toContain("status-established");
    expect(html).toContain("status-dormant");
    expect(html).toContain("0.900");
  });

  it("trace lines include step, kind, class, belief", () => {
    const html = renderTraceEvents([
      { step: 2, event: "established", class: "warship", belief: 0.903225806451613 }]);
    expect(html).toContain("trace-established");
    expect(html).toContain("#2 established warship @ 0.903");
  });
});

describe("suggestions and errors", () => {
  it("keeps endpoint order and numbers", () => {
    const html = renderSuggestions("A", [["B", 0.5], ["C", 0.9]]);
    const order = [...html.matchAll(/data-node="([^"]+)"/g)].map((m) => m[1]);
    expect(order).toEqual(["B", "C"]);
  });

  it("prompts for a target before ranking", () => {
    expect(renderSuggestions(null, [])).toContain("pick a target");
  });

  it("error boxes carry the machine-readable kind", () => {
    const html = renderError("conflicting-instantiation", "B already set");
    expect(html).toContain('data-kind="conflicting-instantiation"');
  });

  it("escapeHtml covers the usual five", () => {
    expect(escapeHtml(`<a href="x">&'</a>`))
      .toBe("&lt;a href=&quot;x&quot;&gt;&amp;&#39;&lt;/a&gt;");
  });
});
