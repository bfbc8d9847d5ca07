"""Influence-diagram evaluation.

Diagrams are solved by converting them to a plain belief network (decisions
become uniform-prior roots; the value node becomes a binary chance node
whose "hit" probability is the affinely rescaled utility) and then rolling
out the decision tree depth-first, querying the inference engine for every
branch probability and leaf value. An admissible optimistic bound
(path mass x maximum scaled utility) prunes alternatives that provably
cannot beat a fully expanded sibling.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from . import model
from .errors import DegenerateUtilityError, Diagnostic, TooManyPathsError

MAX_LEAVES = 10 ** 6

# values this close count as tied, so "ties to the lowest alternative
# index" stays meaningful under floating-point evaluation order
TIE_EPS = 1e-12

HIT, MISS = "hit", "miss"


@dataclass(frozen=True)
class DecisionSpec:
    name: str
    alternatives: tuple[str, ...]
    informed_by: tuple[str, ...] = ()


@dataclass
class UtilitySpec:
    name: str
    parents: tuple[str, ...]
    table: np.ndarray  # shape = parent arities, original units

    def __eq__(self, other):
        return (isinstance(other, UtilitySpec) and self.name == other.name
                and self.parents == other.parents
                and np.array_equal(self.table, other.table))


class InfluenceDiagram:
    """Chance nodes (regular belief-network nodes whose parents may include
    decisions), totally ordered decision nodes, and exactly one value node."""

    def __init__(self, name: str, chance: list[model.Node],
                 decisions: list[DecisionSpec], utility: UtilitySpec):
        self.name = name
        self.chance = list(chance)
        self.decisions = list(decisions)
        self.utility = utility

    def __eq__(self, other):
        return (isinstance(other, InfluenceDiagram) and self.name == other.name
                and _chance_eq(self.chance, other.chance)
                and self.decisions == other.decisions and self.utility == other.utility)

    def __repr__(self):
        return f"InfluenceDiagram({self.name})"

    def arity(self, name: str) -> int:
        for d in self.decisions:
            if d.name == name:
                return len(d.alternatives)
        for c in self.chance:
            if c.name == name:
                return c.variable.arity
        raise KeyError(name)

    def to_json(self) -> dict:
        def node_json(n: model.Node) -> dict:
            parent_vars = [self._variable(p) for p in n.parents]
            tensor = np.asarray(n.quantification.expand(n.variable, parent_vars), dtype=float)
            return {"name": n.name, "values": list(n.variable.values),
                    "parents": list(n.parents), "shape": list(tensor.shape),
                    "tensor": tensor.reshape(-1).tolist()}

        return {
            "chance": [node_json(n) for n in self.chance],
            "decisions": [{"name": d.name, "alternatives": list(d.alternatives),
                           "informed_by": list(d.informed_by)} for d in self.decisions],
            "value": {"name": self.utility.name, "parents": list(self.utility.parents),
                      "shape": list(self.utility.table.shape),
                      "table": self.utility.table.reshape(-1).tolist()},
        }

    def _variable(self, name: str) -> model.Variable:
        for d in self.decisions:
            if d.name == name:
                return model.Variable(d.name, d.alternatives)
        for c in self.chance:
            if c.name == name:
                return c.variable
        raise KeyError(name)

    @staticmethod
    def from_json(name: str, d: dict) -> "InfluenceDiagram":
        chance = []
        for nd in d["chance"]:
            tensor = np.asarray(nd["tensor"], dtype=float).reshape(tuple(nd["shape"]))
            quant = model.Prior(tensor) if not nd["parents"] else model.Cpt(tensor)
            chance.append(model.Node(model.Variable(nd["name"], tuple(nd["values"])),
                                     tuple(nd["parents"]), quant))
        decisions = [DecisionSpec(x["name"], tuple(x["alternatives"]), tuple(x["informed_by"]))
                     for x in d["decisions"]]
        v = d["value"]
        table = np.asarray(v["table"], dtype=float).reshape(tuple(v["shape"]))
        return InfluenceDiagram(name, chance, decisions,
                                UtilitySpec(v["name"], tuple(v["parents"]), table))


def _chance_eq(a: list[model.Node], b: list[model.Node]) -> bool:
    if len(a) != len(b):
        return False
    for x, y in zip(a, b):
        if (x.variable != y.variable or x.parents != y.parents
                or x.quantification != y.quantification):
            return False
    return True


def validate_diagram(diagram: InfluenceDiagram) -> list[Diagnostic]:
    out: list[Diagnostic] = []
    names = set()
    for d in diagram.decisions:
        names.add(d.name)
    chance_names = {c.name for c in diagram.chance}
    names |= chance_names
    vname = diagram.utility.name

    for c in diagram.chance:
        for p in c.parents:
            if p == vname:
                out.append(Diagnostic("semantic-error", c.name,
                                      "value node cannot have children"))
            elif p not in names:
                out.append(Diagnostic("unresolved-reference", c.name,
                                      f"unknown parent {p!r}"))
    decision_order = {d.name: i for i, d in enumerate(diagram.decisions)}
    parents_map = {c.name: c.parents for c in diagram.chance}

    def decision_ancestors(name: str, seen=frozenset()) -> set[str]:
        out_set: set[str] = set()
        for p in parents_map.get(name, ()):
            if p in decision_order:
                out_set.add(p)
            elif p not in seen:
                out_set |= decision_ancestors(p, seen | {name})
        return out_set

    for d in diagram.decisions:
        for obs in d.informed_by:
            if obs not in chance_names:
                out.append(Diagnostic("unresolved-reference", d.name,
                                      f"informed_by references {obs!r}, which is not a "
                                      "chance node"))
            else:
                late = [a for a in decision_ancestors(obs)
                        if decision_order[a] >= decision_order[d.name]]
                if late:
                    out.append(Diagnostic(
                        "semantic-error", d.name,
                        f"{obs!r} cannot be observed before {d.name!r}: it depends on "
                        f"{sorted(late)}"))
    for p in diagram.utility.parents:
        if p not in names:
            out.append(Diagnostic("unresolved-reference", vname, f"unknown parent {p!r}"))

    # chance quantifications against resolved parent variables
    if not out:
        for c in diagram.chance:
            parent_vars = [diagram._variable(p) for p in c.parents]
            out.extend(c.quantification.check(c.name, c.variable, parent_vars))

    # acyclicity over chance-parent edges (decisions are roots)
    color: dict[str, int] = {}
    parents_of = {c.name: [p for p in c.parents if p in chance_names] for c in diagram.chance}

    def visit(n: str) -> bool:
        color[n] = 1
        for p in parents_of.get(n, ()):
            st = color.get(p, 0)
            if st == 1 or (st == 0 and visit(p)):
                return True
        color[n] = 2
        return False

    for c in chance_names:
        if color.get(c, 0) == 0 and visit(c):
            out.append(Diagnostic("cycle", c, "directed cycle among chance nodes"))
            break
    return out


@dataclass(frozen=True)
class UtilityScaling:
    """Affine map between original utilities and [0, 1] hit probabilities."""

    offset: float
    range: float

    def to_utility(self, hit_probability: float) -> float:
        return self.offset + self.range * hit_probability


def to_belief_network(diagram: InfluenceDiagram) -> tuple[model.BeliefNetwork, UtilityScaling]:
    """Cooper-style conversion: decisions become uniform chance roots; the
    value node becomes a binary node with P(hit) = (U - min U) / (max U - min U).
    Raises ``degenerate-utility`` when the utility is constant."""
    lo = float(diagram.utility.table.min())
    hi = float(diagram.utility.table.max())
    if hi == lo:
        raise DegenerateUtilityError(f"utility is constant at {lo}", expected_utility=lo)
    nodes: list[model.Node] = []
    for d in diagram.decisions:
        k = len(d.alternatives)
        nodes.append(model.Node(model.Variable(d.name, d.alternatives), (),
                                model.Prior(np.full(k, 1.0 / k))))
    nodes.extend(diagram.chance)
    hit = (diagram.utility.table - lo) / (hi - lo)
    tensor = np.stack([hit, 1.0 - hit], axis=-1)
    nodes.append(model.Node(model.Variable(diagram.utility.name, (HIT, MISS)),
                            diagram.utility.parents, model.Cpt(tensor)))
    return model.BeliefNetwork(diagram.name, nodes), UtilityScaling(lo, hi - lo)


@dataclass
class PolicyResult:
    """Optimal actions per decision per information state reached during the
    rollout, with the expected utility in original units."""

    policy: dict[str, dict[str, str]]
    expected_utility: float
    paths_expanded: int = 0
    paths_pruned: int = 0

    def action(self, decision: str, info: str = "") -> str:
        return self.policy[decision][info]

    def to_json(self) -> dict:
        return {"policy": self.policy, "expected_utility": self.expected_utility,
                "paths_expanded": self.paths_expanded, "paths_pruned": self.paths_pruned}


_Stage = tuple[str, str]  # ("observe", chance) | ("decide", decision)


def _stages(diagram: InfluenceDiagram, pre_observed: set[str]) -> list[_Stage]:
    stages: list[_Stage] = []
    seen = set(pre_observed)
    for d in diagram.decisions:
        for obs in d.informed_by:
            if obs not in seen:
                stages.append(("observe", obs))
                seen.add(obs)
        stages.append(("decide", d.name))
    return stages


def _static_leaves(diagram: InfluenceDiagram, stages: list[_Stage]) -> list[int]:
    """Suffix leaf counts: leaves of the full subtree from stage i on."""
    suffix = [1]
    for kind, name in reversed(stages):
        suffix.append(suffix[-1] * diagram.arity(name))
    return list(reversed(suffix))


def _normalize_policy(diagram: InfluenceDiagram, policy) -> dict[str, dict[str, str]]:
    out: dict[str, dict[str, str]] = {}
    for d in diagram.decisions:
        entry = policy[d.name]
        out[d.name] = {"": entry} if isinstance(entry, str) else dict(entry)
    return out


class _Rollout:
    def __init__(self, diagram: InfluenceDiagram, evidence: Optional[dict],
                 prune: bool, max_leaves: int):
        from . import compiler as _compiler  # deferred: compiler depends on this module
        from . import engine as _engine

        self.diagram = diagram
        self.prune = prune
        net, self.scaling = to_belief_network(diagram)
        compiled = _compiler.compile_network(net)
        self.session = _engine.Session(compiled)
        self.evidence = dict(evidence or {})
        for node, finding in self.evidence.items():
            self.session.assert_evidence(node, finding)
        self.stages = _stages(diagram, set(self.evidence))
        self.suffix = _static_leaves(diagram, self.stages)
        if self.suffix[0] > max_leaves:
            raise TooManyPathsError(
                f"rollout would expand {self.suffix[0]} leaves (limit {max_leaves})")
        self.vname = diagram.utility.name
        self.policy: dict[str, dict[str, str]] = {d.name: {} for d in diagram.decisions}
        self.expanded = 0
        self.pruned = 0

    def run(self) -> float:
        return self.value(0, 1.0, [], None)

    def value(self, i: int, mass: float, path: list, fixed_policy) -> float:
        if i == len(self.stages):
            self.expanded += 1
            bel = self.session.beliefs(self.vname)
            return mass * float(bel[0])
        kind, name = self.stages[i]
        if kind == "observe":
            bel = self.session.beliefs(name)
            node = self.session.net.by_name.get(name)
            values = node.values if node is not None else \
                self.session.original_values(name)
            total = 0.0
            for j, v in enumerate(values):
                p = float(bel[j])
                if p <= 0.0:
                    continue
                snap = self.session.snapshot()
                self.session.assert_evidence(name, v)
                total += self.value(i + 1, mass * p, path + [(name, v)], fixed_policy)
                self.session.restore(snap)
            return total
        return self._decide(i, name, mass, path, fixed_policy)

    def _decide(self, i: int, name: str, mass: float, path: list, fixed_policy) -> float:
        spec = next(d for d in self.diagram.decisions if d.name == name)
        info = ",".join(f"{n}={v}" for n, v in path)
        if fixed_policy is not None:
            action = fixed_policy[name].get(info, fixed_policy[name].get(""))
            if action is None:
                raise KeyError(f"policy for {name!r} has no action for state {info!r}")
            snap = self.session.snapshot()
            self.session.assert_evidence(name, action)
            val = self.value(i + 1, mass, path + [(name, action)], fixed_policy)
            self.session.restore(snap)
            return val
        best = None
        values: list[Optional[float]] = []
        for alt in spec.alternatives:
            if self.prune and best is not None and mass <= best:
                self.pruned += self.suffix[i + 1]
                values.append(None)
                continue
            snap = self.session.snapshot()
            self.session.assert_evidence(name, alt)
            val = self.value(i + 1, mass, path + [(name, alt)], None)
            self.session.restore(snap)
            values.append(val)
            if best is None or val > best:
                best = val
        best_action = next(alt for alt, val in zip(spec.alternatives, values)
                           if val is not None and val >= best - TIE_EPS)
        self.policy[name][info] = best_action
        return best if best is not None else 0.0


def solve(diagram: InfluenceDiagram, evidence: Optional[dict] = None,
          prune: bool = True, max_leaves: int = MAX_LEAVES) -> PolicyResult:
    """Optimal policy and expected utility by depth-first rollout.

    Alternatives are tried in declaration order and ties go to the first
    (lowest-index) alternative. With ``prune`` set, an alternative whose
    optimistic bound (path mass, since the scaled maximum utility is 1)
    cannot beat an already expanded sibling is skipped and its subtree
    counted in ``paths_pruned``.
    """
    lo = float(diagram.utility.table.min())
    hi = float(diagram.utility.table.max())
    if hi == lo:
        policy = {d.name: {"": d.alternatives[0]} for d in diagram.decisions}
        return PolicyResult(policy, lo, paths_expanded=0, paths_pruned=0)
    roll = _Rollout(diagram, evidence, prune, max_leaves)
    scaled = roll.run()
    return PolicyResult(roll.policy, roll.scaling.to_utility(scaled),
                        paths_expanded=roll.expanded, paths_pruned=roll.pruned)


def evaluate_policy(diagram: InfluenceDiagram, policy, evidence: Optional[dict] = None,
                    max_leaves: int = MAX_LEAVES) -> float:
    """Exact expected utility of a fixed policy (no maximization).

    ``policy`` maps each decision to an action, or to a dict from
    information-state keys (``"C=c1,D1=d2"``) to actions.
    """
    lo = float(diagram.utility.table.min())
    hi = float(diagram.utility.table.max())
    if hi == lo:
        return lo
    norm = _normalize_policy(diagram, policy)
    roll = _Rollout(diagram, evidence, prune=False, max_leaves=max_leaves)
    scaled = roll.value(0, 1.0, [], norm)
    return roll.scaling.to_utility(scaled)
