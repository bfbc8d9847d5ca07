import { describe, expect, it } from "vitest";

import type { TraceEvent } from "../src/api.js";
import {
  basketAdd,
  basketCancel,
  basketRemove,
  changedNodes,
  describeFinding,
  formatProb,
  initialState,
  latestBadges,
  orderedSuggestions,
} from "../src/state.js";

const NODES = [{ name: "A", values: ["t", "f"], parents: [] }];

function freshState() {
  return initialState("s1", "chain2", NODES, { A: [0.3, 0.7] }, 0);
}

describe("badges", () => {
  it("mirror the latest status event per class", () => {
    const events: TraceEvent[] = [
      { step: 1, event: "updated", class: "warship", belief: 0.7 },
      { step: 1, event: "suspended", class: "warship", belief: 0.7 },
      { step: 2, event: "activated", class: "warship", belief: 0.9 },
      { step: 3, event: "established", class: "warship", belief: 0.9 },
      { step: 3, event: "rejected", class: "merchant", belief: 0.05 },
      { step: 4, event: "updated", class: "merchant", belief: 0.05 },
    ];
    const badges = latestBadges(events);
    expect(badges.get("warship")).toBe("established");
    expect(badges.get("merchant")).toBe("rejected");
  });

  it("ignores updated events entirely", () => {
    const badges = latestBadges([
      { step: 1, event: "updated", class: "c", belief: 0.4 }]);
    expect(badges.has("c")).toBe(false);
  });
});

describe("basket", () => {
  it("replaces a finding for the same node", () => {
    let state = basketAdd(freshState(), { node: "A", value: "t" });
    state = basketAdd(state, { node: "A", likelihood: [2, 1] });
    expect(state.basket).toEqual([{ node: "A", likelihood: [2, 1] }]);
  });

  it("remove and cancel", () => {
    let state = basketAdd(freshState(), { node: "A", value: "t" });
    state = basketRemove(state, "A");
    expect(state.basket).toEqual([]);
    state = basketAdd(state, { node: "A", value: "f" });
    state = { ...state, hypothetical: { A: [1, 0] } };
    state = basketCancel(state);
    expect(state.basket).toEqual([]);
    expect(state.hypothetical).toBeNull();
  });
});

describe("pure helpers", () => {
  it("changedNodes collects delta names", () => {
    expect(changedNodes([
      { node: "A", old: [0.3, 0.7], new: [0.6, 0.4] },
      { node: "B", old: [0.4, 0.6], new: [1, 0] },
    ])).toEqual(new Set(["A", "B"]));
  });

  it("orderedSuggestions is a pass-through copy, never sorted", () => {
    const ranking: [string, number][] = [["low", 0.1], ["high", 0.9]];
    const out = orderedSuggestions({ target: "T", metric: "l2", ranking });
    expect(out).toEqual(ranking);
    expect(out).not.toBe(ranking);
  });

  it("formatProb is display-only formatting", () => {
    expect(formatProb(0.6585365853658537)).toBe("0.659");
    expect(formatProb(1)).toBe("1.000");
  });

  it("describeFinding", () => {
    expect(describeFinding({ node: "B", value: "t" })).toBe("B = t");
    expect(describeFinding({ node: "B", likelihood: [2, 1] })).toBe("B ~ [2, 1]");
  });
});
