"""Compile parsed model sets into the runtime form the inference engine
consumes: gates expanded to dense tensors, loops removed by node
aggregation, canonical-gate fast paths tagged, and the whole thing
serializable as a versioned `.bartc` JSON document.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import lang, model
from .errors import (
    BadMagicError,
    ClusterTooLargeError,
    CompileError,
    CorruptTensorError,
    Diagnostic,
    VersionMismatchError,
)
from .influence import DecisionSpec, InfluenceDiagram, UtilitySpec, validate_diagram
from .lang import BAnd, BAtom, BNot, BoolDecl, BOr, CptDecl, GateDecl, PriorDecl
from .taxonomy import Binding, TaxonomySpec

FORMAT_VERSION = "bartc-1"
MAX_CLUSTER_STATES = 4096
MAX_TENSOR_CELLS = 1 << 22


# ---------------------------------------------------------------------------
# Canonical gates


class GateSpec:
    """Canonical interaction: noisy or/and/max/min or a Boolean function.

    Values are dominance-ordered strongest-first, so a binary gate's
    "present" state is value index 0. Or/and carry one causal strength per
    (binary) parent; max/min carry one distribution over the child's values
    per parent value; the optional leak is a strength (or/and) or a
    distribution (max/min).
    """

    def __init__(self, kind: str, params: dict[str, object], leak: Optional[object] = None,
                 expr: Optional[lang.BoolExpr] = None):
        self.kind = kind
        self.params = dict(params)
        self.leak = leak
        self.expr = expr

    def __eq__(self, other):
        if not isinstance(other, GateSpec):
            return NotImplemented
        return (self.kind == other.kind and self.expr == other.expr
                and _payload_eq(self.leak, other.leak)
                and self.params.keys() == other.params.keys()
                and all(_payload_eq(v, other.params[k]) for k, v in self.params.items()))

    def __repr__(self):
        return f"GateSpec({self.kind}, parents={list(self.params)})"

    # -- validation --------------------------------------------------------

    def check(self, node_name: str, child: model.Variable,
              parents: list[model.Variable]) -> list[Diagnostic]:
        out: list[Diagnostic] = []
        if self.kind == "bool":
            return self._check_bool(node_name, child, parents)
        names = {p.name for p in parents}
        if set(self.params) != names:
            out.append(Diagnostic(
                "arity-mismatch", node_name,
                f"gate parameters {sorted(self.params)} do not match parents {sorted(names)}"))
            return out
        if self.kind in ("noisy_or", "noisy_and"):
            if child.arity != 2:
                out.append(Diagnostic("arity-mismatch", node_name,
                                      f"{self.kind} child must be binary"))
            for p in parents:
                if p.arity != 2:
                    out.append(Diagnostic("arity-mismatch", node_name,
                                          f"{self.kind} parent {p.name!r} must be binary"))
                strength = self.params[p.name]
                if not isinstance(strength, (int, float)):
                    out.append(Diagnostic("arity-mismatch", node_name,
                                          f"{self.kind} takes one strength per parent"))
                elif not 0.0 <= float(strength) <= 1.0:
                    out.append(Diagnostic("unnormalized-parameter", node_name,
                                          f"strength for {p.name!r} outside [0, 1]"))
            if self.leak is not None and (
                    not isinstance(self.leak, (int, float)) or not 0.0 <= float(self.leak) <= 1.0):
                out.append(Diagnostic("unnormalized-parameter", node_name,
                                      "leak strength outside [0, 1]"))
        else:  # noisy_max / noisy_min
            for p in parents:
                table = np.asarray(self.params[p.name], dtype=float)
                if table.ndim != 2 or table.shape != (p.arity, child.arity):
                    out.append(Diagnostic(
                        "arity-mismatch", node_name,
                        f"table for {p.name!r} must be {p.arity}x{child.arity}"))
                    continue
                bad = np.flatnonzero(np.abs(table.sum(axis=1) - 1.0) > model.ROW_SUM_TOL)
                if bad.size or table.min() < 0:
                    out.append(Diagnostic("unnormalized-parameter", node_name,
                                          f"table rows for {p.name!r} are not distributions"))
            if self.leak is not None:
                leak = np.asarray(self.leak, dtype=float)
                if leak.shape != (child.arity,):
                    out.append(Diagnostic("arity-mismatch", node_name,
                                          "leak distribution length must match child values"))
                elif abs(leak.sum() - 1.0) > model.ROW_SUM_TOL or leak.min() < 0:
                    out.append(Diagnostic("unnormalized-parameter", node_name,
                                          "leak is not a distribution"))
        return out

    def _check_bool(self, node_name, child, parents) -> list[Diagnostic]:
        out = []
        if child.arity != 2:
            out.append(Diagnostic("arity-mismatch", node_name, "bool child must be binary"))
        by_name = {p.name: p for p in parents}

        def walk(e):
            if isinstance(e, BAtom):
                var = by_name.get(e.parent)
                if var is None:
                    out.append(Diagnostic("arity-mismatch", node_name,
                                          f"bool references non-parent {e.parent!r}"))
                elif e.value not in var.values:
                    out.append(Diagnostic("arity-mismatch", node_name,
                                          f"{e.value!r} is not a value of {e.parent!r}"))
            elif isinstance(e, BNot):
                walk(e.operand)
            elif isinstance(e, (BAnd, BOr)):
                walk(e.left)
                walk(e.right)

        walk(self.expr)
        return out

    # -- expansion ---------------------------------------------------------

    def candidate_tables(self, child: model.Variable,
                         parents: list[model.Variable]) -> tuple[list[np.ndarray], np.ndarray, str]:
        """Per-parent candidate-draw tables, the leak draw, and whether the
        child takes the dominance max or min of the draws."""
        m = child.arity
        if self.kind == "noisy_or":
            tables = []
            for p in parents:
                c = float(self.params[p.name])
                tables.append(np.array([[c, 1.0 - c], [0.0, 1.0]]))
            c0 = float(self.leak) if self.leak is not None else 0.0
            return tables, np.array([c0, 1.0 - c0]), "max"
        if self.kind == "noisy_and":
            tables = []
            for p in parents:
                c = float(self.params[p.name])
                tables.append(np.array([[1.0, 0.0], [1.0 - c, c]]))
            c0 = float(self.leak) if self.leak is not None else 0.0
            return tables, np.array([1.0 - c0, c0]), "min"
        if self.kind == "noisy_max":
            tables = [np.asarray(self.params[p.name], dtype=float) for p in parents]
            leak = np.asarray(self.leak, dtype=float) if self.leak is not None else _point_mass(m, m - 1)
            return tables, leak, "max"
        if self.kind == "noisy_min":
            tables = [np.asarray(self.params[p.name], dtype=float) for p in parents]
            leak = np.asarray(self.leak, dtype=float) if self.leak is not None else _point_mass(m, 0)
            return tables, leak, "min"
        raise ValueError(f"not a dominance gate: {self.kind}")

    def expand(self, child: model.Variable, parents: list[model.Variable]) -> np.ndarray:
        """Full conditional tensor equivalent to the gate."""
        if self.kind == "bool":
            return _expand_bool(self.expr, child, parents)
        tables, leak, mode = self.candidate_tables(child, parents)
        return expand_dominance(tables, leak, mode)

    def to_json(self) -> dict:
        def enc(v):
            if v is None or isinstance(v, (int, float)):
                return v
            return np.asarray(v, dtype=float).tolist()

        if self.kind == "bool":
            return {"kind": "bool", "expr": _bool_to_json(self.expr)}
        return {"kind": self.kind,
                "params": {k: enc(v) for k, v in self.params.items()},
                "leak": enc(self.leak)}

    @staticmethod
    def from_json(data: dict) -> "GateSpec":
        if data["kind"] == "bool":
            return GateSpec("bool", {}, expr=_bool_from_json(data["expr"]))
        params = {k: (v if isinstance(v, (int, float)) else np.asarray(v, dtype=float))
                  for k, v in data["params"].items()}
        leak = data.get("leak")
        if isinstance(leak, list):
            leak = np.asarray(leak, dtype=float)
        return GateSpec(data["kind"], params, leak)


def _payload_eq(a, b) -> bool:
    if a is None or b is None:
        return a is None and b is None
    if isinstance(a, (int, float)) and isinstance(b, (int, float)):
        return float(a) == float(b)
    return np.array_equal(np.asarray(a, dtype=float), np.asarray(b, dtype=float))


def _point_mass(n: int, i: int) -> np.ndarray:
    v = np.zeros(n)
    v[i] = 1.0
    return v


def expand_dominance(tables: list[np.ndarray], leak: np.ndarray, mode: str) -> np.ndarray:
    """Tensor for "every cause draws a candidate value, the child takes the
    dominance max (or min) of the draws and the leak draw".

    Values are strongest-first, so "max" keeps the lowest drawn index and
    "min" the highest. Computed through cumulative products of the
    candidate tail (or head) distributions.
    """
    m = leak.shape[0]
    if mode == "max":
        # P(draw index >= j), cumulated from the weak end
        cums = [np.cumsum(t[:, ::-1], axis=1)[:, ::-1] for t in tables]
        leak_cum = np.cumsum(leak[::-1])[::-1]
    else:
        cums = [np.cumsum(t, axis=1) for t in tables]
        leak_cum = np.cumsum(leak)
    rank = len(tables) + 1
    prod = np.ones([1] * (rank - 1) + [m])
    prod = prod * leak_cum
    for i, cum in enumerate(cums):
        shape = [1] * rank
        shape[i] = cum.shape[0]
        shape[-1] = m
        prod = prod * cum.reshape(shape)
    out = np.empty_like(prod)
    if mode == "max":
        out[..., :-1] = prod[..., :-1] - prod[..., 1:]
        out[..., -1] = prod[..., -1]
    else:
        out[..., 0] = prod[..., 0]
        out[..., 1:] = prod[..., 1:] - prod[..., :-1]
    return np.maximum(out, 0.0)


def _expand_bool(expr: lang.BoolExpr, child: model.Variable,
                 parents: list[model.Variable]) -> np.ndarray:
    index = {p.name: i for i, p in enumerate(parents)}

    def ev(e, combo) -> bool:
        if isinstance(e, BAtom):
            var = parents[index[e.parent]]
            return var.values[combo[index[e.parent]]] == e.value
        if isinstance(e, BNot):
            return not ev(e.operand, combo)
        if isinstance(e, BAnd):
            return ev(e.left, combo) and ev(e.right, combo)
        if isinstance(e, BOr):
            return ev(e.left, combo) or ev(e.right, combo)
        raise TypeError(e)

    shape = tuple(p.arity for p in parents) + (2,)
    out = np.zeros(shape)
    for combo in np.ndindex(shape[:-1]):
        out[combo + ((0,) if ev(expr, combo) else (1,))] = 1.0
    return out


def expand_gate(gate: GateSpec, parents: list[model.Variable],
                child: model.Variable) -> model.Cpt:
    """Expand a gate to its dense conditional probability tensor, after
    validating its parameters."""
    diags = gate.check(child.name, child, parents)
    if diags:
        raise CompileError(diags)
    return model.Cpt(gate.expand(child, parents))


def _bool_to_json(e) -> dict:
    if isinstance(e, BAtom):
        return {"op": "atom", "parent": e.parent, "value": e.value}
    if isinstance(e, BNot):
        return {"op": "not", "operand": _bool_to_json(e.operand)}
    if isinstance(e, BAnd):
        return {"op": "and", "left": _bool_to_json(e.left), "right": _bool_to_json(e.right)}
    if isinstance(e, BOr):
        return {"op": "or", "left": _bool_to_json(e.left), "right": _bool_to_json(e.right)}
    raise TypeError(e)


def _bool_from_json(d: dict):
    op = d["op"]
    if op == "atom":
        return BAtom(d["parent"], d["value"])
    if op == "not":
        return BNot(_bool_from_json(d["operand"]))
    if op == "and":
        return BAnd(_bool_from_json(d["left"]), _bool_from_json(d["right"]))
    return BOr(_bool_from_json(d["left"]), _bool_from_json(d["right"]))


# ---------------------------------------------------------------------------
# Loop detection and node aggregation


def _skeleton(parents_of: dict[str, tuple[str, ...]], order: list[str]) -> dict[str, list[str]]:
    adj: dict[str, set] = {n: set() for n in order}
    for child, parents in parents_of.items():
        for p in parents:
            if p != child:
                adj[child].add(p)
                adj[p].add(child)
    rank = {n: i for i, n in enumerate(order)}
    return {n: sorted(neigh, key=rank.__getitem__) for n, neigh in adj.items()}


def _fundamental_cycles(adj: dict[str, list[str]], order: list[str]) -> list[list[str]]:
    """DFS spanning-forest back-edge cycles, deterministic in ``order``."""
    disc: dict[str, int] = {}
    parent: dict[str, Optional[str]] = {}
    cycles: list[list[str]] = []
    counter = 0
    for root in order:
        if root in disc:
            continue
        stack = [(root, None)]
        while stack:
            node, par = stack.pop()
            if node in disc:
                continue
            disc[node] = counter
            counter += 1
            parent[node] = par
            for nb in reversed(adj[node]):
                if nb not in disc:
                    stack.append((nb, node))
                elif nb != par and disc[nb] < disc[node]:
                    path = [node]
                    cur = node
                    while cur != nb:
                        cur = parent[cur]
                        path.append(cur)
                    cycles.append(path)
    return cycles


def detect_loops(network: model.BeliefNetwork) -> list[list[str]]:
    """Undirected cycles of the network skeleton; empty iff it is a forest."""
    order = [n.name for n in network.nodes]
    parents_of = {n.name: n.parents for n in network.nodes}
    return _fundamental_cycles(_skeleton(parents_of, order), order)


def _cycle_broken(cycle: list, merged: frozenset) -> bool:
    """True when contracting ``merged`` leaves no cycle among this cycle's
    edges (the closed walk maps onto a tree)."""
    quot = ["*" if c in merged else c for c in cycle]
    edges = set()
    verts = set(quot)
    k = len(quot)
    for i in range(k):
        a, b = quot[i], quot[(i + 1) % k]
        if a != b:
            edges.add(frozenset((a, b)))
    return len(edges) <= len(verts) - 1


@dataclass
class AggregationMap:
    """How original nodes map into compound nodes and back."""

    compounds: dict[str, tuple[str, ...]] = field(default_factory=dict)
    member_of: dict[str, tuple[str, int]] = field(default_factory=dict)

    def compound_for(self, original: str) -> Optional[str]:
        entry = self.member_of.get(original)
        return entry[0] if entry else None

    def to_json(self) -> dict:
        return {"compounds": {k: list(v) for k, v in self.compounds.items()},
                "member_of": {k: [c, i] for k, (c, i) in self.member_of.items()}}

    @staticmethod
    def from_json(d: dict) -> "AggregationMap":
        return AggregationMap(
            {k: tuple(v) for k, v in d["compounds"].items()},
            {k: (v[0], int(v[1])) for k, v in d["member_of"].items()})


def aggregate(network: model.BeliefNetwork,
              max_cluster_states: int = MAX_CLUSTER_STATES
              ) -> tuple[model.BeliefNetwork, AggregationMap]:
    """Merge loop nodes into compound nodes until the skeleton is a forest.

    Repeatedly takes the smallest fundamental cycle, shrinks its node set to
    the members actually needed to break it, and fuses them into one
    compound whose state space is the members' Cartesian product and whose
    tensor is the product of the member tensors. Child tensors are rewired
    exactly (not just marginally). Raises ``cluster-too-large`` when a
    compound would exceed ``max_cluster_states`` states.
    """
    order = [n.name for n in network.nodes]
    rank = {n: i for i, n in enumerate(order)}
    arity = {n.name: n.variable.arity for n in network.nodes}
    orig_parents = {n.name: n.parents for n in network.nodes}

    clusters: dict[str, tuple[str, ...]] = {name: (name,) for name in order}

    def cluster_of() -> dict[str, str]:
        return {m: c for c, members in clusters.items() for m in members}

    def cluster_parents(owner: dict[str, str]) -> dict[str, tuple[str, ...]]:
        out = {}
        for cname, members in clusters.items():
            seen: list[str] = []
            for m in members:
                for p in orig_parents[m]:
                    pc = owner[p]
                    if pc != cname and pc not in seen:
                        seen.append(pc)
            seen.sort(key=lambda c: rank[clusters[c][0]])
            out[cname] = tuple(seen)
        return out

    def convex_closure(merged: frozenset, cparents: dict) -> frozenset:
        """Absorb any cluster lying on a directed path between two members,
        so the contracted cluster graph stays a DAG (no antiparallel edges)."""
        children: dict[str, list[str]] = {c: [] for c in clusters}
        for c, ps in cparents.items():
            for p in ps:
                children[p].append(c)

        def reach(start: frozenset, step: dict) -> set:
            seen: set[str] = set()
            frontier = list(start)
            while frontier:
                for nxt in step[frontier.pop()]:
                    if nxt not in seen:
                        seen.add(nxt)
                        frontier.append(nxt)
            return seen

        out = set(merged)
        while True:
            desc = reach(frozenset(out), children)
            anc = reach(frozenset(out), {c: list(p) for c, p in cparents.items()})
            extra = (desc & anc) - out
            if not extra:
                return frozenset(out)
            out |= extra

    while True:
        owner = cluster_of()
        cparents = cluster_parents(owner)
        corder = sorted(clusters, key=lambda c: rank[clusters[c][0]])
        # antiparallel cluster pairs are 2-cycles the deduped skeleton hides
        cycles: list[list[str]] = [
            [a, b] for a in corder for b in cparents[a]
            if rank[clusters[a][0]] < rank[clusters[b][0]] and a in cparents[b]]
        cycles.extend(_fundamental_cycles(_skeleton(cparents, corder), corder))
        if not cycles:
            break
        cycles.sort(key=lambda cyc: (len(cyc), tuple(sorted(rank[clusters[c][0]] for c in cyc))))
        cycle = cycles[0]
        merged = frozenset(cycle)
        for cand in sorted(cycle, key=lambda c: rank[clusters[c][0]]):
            trial = merged - {cand}
            if len(trial) >= 2 and _cycle_broken(cycle, trial):
                merged = trial
        merged = convex_closure(merged, cparents)
        members = tuple(sorted((m for c in merged for m in clusters[c]), key=rank.__getitem__))
        states = int(np.prod([arity[m] for m in members]))
        if states > max_cluster_states:
            raise ClusterTooLargeError(
                f"compound of {members} would have {states} states "
                f"(limit {max_cluster_states})")
        for c in merged:
            del clusters[c]
        clusters["+".join(members)] = members

    # Build the aggregated network from the original factors.
    owner = cluster_of()
    cparents = cluster_parents(owner)
    corder = sorted(clusters, key=lambda c: rank[clusters[c][0]])

    tensors = {n.name: np.asarray(
        n.quantification.expand(n.variable, [network.by_name[p].variable for p in n.parents]),
        dtype=float) for n in network.nodes}

    agg = AggregationMap()
    for cname, members in clusters.items():
        if len(members) > 1:
            agg.compounds[cname] = members
            for i, m in enumerate(members):
                agg.member_of[m] = (cname, i)

    def cluster_variable(cname: str) -> model.Variable:
        members = clusters[cname]
        if len(members) == 1:
            return network.by_name[members[0]].variable
        labels = [",".join(combo) for combo in _label_product(
            [network.by_name[m].variable.values for m in members])]
        return model.Variable(cname, tuple(labels))

    new_nodes = []
    for cname in corder:
        members = clusters[cname]
        parents = cparents[cname]
        plain = len(members) == 1 and all(len(clusters[p]) == 1 for p in parents)
        if plain:
            # untouched node: keep its own parent order, which is what the
            # tensor axes follow
            src = network.by_name[members[0]]
            quant: object = model.Prior(tensors[src.name]) if not src.parents \
                else model.Cpt(tensors[src.name])
            new_nodes.append(model.Node(src.variable, src.parents, quant))
            continue
        axis_names = [m for p in parents for m in clusters[p]] + list(members)
        axis_pos = {m: i for i, m in enumerate(axis_names)}
        shape = tuple(arity[m] for m in axis_names)
        if int(np.prod(shape)) > MAX_TENSOR_CELLS:
            raise ClusterTooLargeError(
                f"rewired tensor for {cname!r} would have {int(np.prod(shape))} cells")
        full = np.ones(shape)
        for m in members:
            axes = [axis_pos[p] for p in orig_parents[m]] + [axis_pos[m]]
            full = full * model._spread(tensors[m], axes, len(shape))
        flat_shape = tuple(int(np.prod([arity[m] for m in clusters[p]])) for p in parents)
        flat_shape += (int(np.prod([arity[m] for m in members])),)
        tensor = full.reshape(flat_shape)
        var = cluster_variable(cname)
        quant = model.Prior(tensor) if not parents else model.Cpt(tensor)
        new_nodes.append(model.Node(var, parents, quant))

    return model.BeliefNetwork(network.name, new_nodes), agg


def _label_product(value_lists: list[tuple[str, ...]]) -> list[tuple[str, ...]]:
    out: list[tuple[str, ...]] = [()]
    for values in value_lists:
        out = [combo + (v,) for combo in out for v in values]
    return out


# ---------------------------------------------------------------------------
# Compiled form


@dataclass
class GateTag:
    """Fast-path marker for a binary noisy or/and node that survived
    aggregation untouched."""

    kind: str  # noisy_or | noisy_and
    strengths: tuple[float, ...]  # aligned with the node's parents
    leak: float

    def to_json(self) -> dict:
        return {"kind": self.kind, "strengths": list(self.strengths), "leak": self.leak}

    @staticmethod
    def from_json(d: dict) -> "GateTag":
        return GateTag(d["kind"], tuple(d["strengths"]), float(d["leak"]))


class CompiledNode:
    def __init__(self, name: str, values: tuple[str, ...], parents: tuple[str, ...],
                 tensor: np.ndarray, gate: Optional[GateTag] = None):
        self.name = name
        self.values = tuple(values)
        self.parents = tuple(parents)
        self.tensor = np.asarray(tensor, dtype=float)
        self.gate = gate

    @property
    def arity(self) -> int:
        return len(self.values)

    def index(self, label: str) -> int:
        return self.values.index(label)

    def __eq__(self, other):
        return (isinstance(other, CompiledNode) and self.name == other.name
                and self.values == other.values and self.parents == other.parents
                and np.array_equal(self.tensor, other.tensor) and self.gate == other.gate)

    def __repr__(self):
        return f"CompiledNode({self.name}, parents={list(self.parents)})"

    def to_json(self) -> dict:
        return {"name": self.name, "values": list(self.values),
                "parents": list(self.parents),
                "shape": list(self.tensor.shape),
                "tensor": self.tensor.reshape(-1).tolist(),
                "gate": self.gate.to_json() if self.gate else None}

    @staticmethod
    def from_json(d: dict) -> "CompiledNode":
        shape = tuple(int(x) for x in d["shape"])
        flat = np.asarray(d["tensor"], dtype=float)
        if flat.size != int(np.prod(shape)):
            raise CorruptTensorError(
                f"tensor for {d.get('name')!r} has {flat.size} entries, expected "
                f"{int(np.prod(shape))}")
        gate = GateTag.from_json(d["gate"]) if d.get("gate") else None
        return CompiledNode(d["name"], tuple(d["values"]), tuple(d["parents"]),
                            flat.reshape(shape), gate)


class CompiledNetwork:
    """A polytree (or forest) ready for message passing, plus the original
    factorization kept for exact joint scoring."""

    def __init__(self, name: str, nodes: list[CompiledNode],
                 source_nodes: list[CompiledNode], aggregation: AggregationMap):
        self.name = name
        self.nodes = nodes
        self.source_nodes = source_nodes
        self.aggregation = aggregation
        self.by_name = {n.name: n for n in nodes}
        self.children: dict[str, list[str]] = {n.name: [] for n in nodes}
        for n in nodes:
            for p in n.parents:
                self.children[p].append(n.name)

    def __eq__(self, other):
        return (isinstance(other, CompiledNetwork) and self.name == other.name
                and self.nodes == other.nodes and self.source_nodes == other.source_nodes
                and self.aggregation == other.aggregation)

    def original_names(self) -> list[str]:
        return [n.name for n in self.source_nodes]

    def is_forest(self) -> bool:
        edges = sum(len(n.parents) for n in self.nodes)
        comps = _component_count({n.name: list(n.parents) for n in self.nodes})
        return edges == len(self.nodes) - comps

    def skeleton_diameter(self) -> int:
        adj = _skeleton({n.name: n.parents for n in self.nodes},
                        [n.name for n in self.nodes])
        best = 0
        for start in adj:
            depth = {start: 0}
            frontier = [start]
            while frontier:
                nxt = []
                for u in frontier:
                    for v in adj[u]:
                        if v not in depth:
                            depth[v] = depth[u] + 1
                            nxt.append(v)
                frontier = nxt
            best = max(best, max(depth.values(), default=0))
        return best

    def to_json(self) -> dict:
        return {"nodes": [n.to_json() for n in self.nodes],
                "source_nodes": [n.to_json() for n in self.source_nodes],
                "aggregation": self.aggregation.to_json()}

    @staticmethod
    def from_json(name: str, d: dict) -> "CompiledNetwork":
        return CompiledNetwork(
            name,
            [CompiledNode.from_json(x) for x in d["nodes"]],
            [CompiledNode.from_json(x) for x in d["source_nodes"]],
            AggregationMap.from_json(d["aggregation"]))


def _component_count(parents_of: dict[str, list[str]]) -> int:
    adj = _skeleton({k: tuple(v) for k, v in parents_of.items()}, list(parents_of))
    seen: set[str] = set()
    comps = 0
    for start in adj:
        if start in seen:
            continue
        comps += 1
        frontier = [start]
        seen.add(start)
        while frontier:
            u = frontier.pop()
            for v in adj[u]:
                if v not in seen:
                    seen.add(v)
                    frontier.append(v)
    return comps


class CompiledModel:
    def __init__(self, networks: dict[str, CompiledNetwork],
                 taxonomies: dict[str, TaxonomySpec],
                 diagrams: dict[str, InfluenceDiagram],
                 provenance: Optional[dict] = None):
        self.version = FORMAT_VERSION
        self.networks = networks
        self.taxonomies = taxonomies
        self.diagrams = diagrams
        self.provenance = provenance or {}

    def __eq__(self, other):
        return (isinstance(other, CompiledModel)
                and self.networks == other.networks
                and self.taxonomies == other.taxonomies
                and self.diagrams == other.diagrams
                and self.provenance == other.provenance)

    def network(self, name: str) -> CompiledNetwork:
        return self.networks[name]


# ---------------------------------------------------------------------------
# Compilation driver


@dataclass(frozen=True)
class CompileOptions:
    max_cluster_states: int = MAX_CLUSTER_STATES


def _resolve_network(decl: lang.NetworkDecl) -> tuple[model.BeliefNetwork, list[Diagnostic]]:
    diags: list[Diagnostic] = []
    declared = {n.name for n in decl.nodes()}
    nodes = []
    for nd in decl.nodes():
        for p in nd.parents:
            if p not in declared:
                diags.append(Diagnostic("unresolved-reference", nd.name,
                                        f"unknown parent {p!r}", nd.span))
        quant = _resolve_quant(nd, diags)
        nodes.append(model.Node(model.Variable(nd.name, nd.values), nd.parents, quant))
    return model.BeliefNetwork(decl.name, nodes), diags


def _resolve_quant(nd: lang.NodeDecl, diags: list[Diagnostic]):
    q = nd.quant
    if isinstance(q, PriorDecl):
        return model.Prior(np.asarray(q.values))
    if isinstance(q, CptDecl):
        child = len(nd.values)
        # row count is validated against resolved parent arities by check()
        flat = np.asarray(q.values, dtype=float)
        if flat.size % child:
            diags.append(Diagnostic("arity-mismatch", nd.name,
                                    f"cpt has {flat.size} entries, not a multiple of "
                                    f"{child} child values", nd.span))
            return model.Cpt(np.zeros((1, child)))
        rows = flat.size // child
        return model.Cpt(flat.reshape((rows, child)))
    if isinstance(q, GateDecl):
        params = {k: (tuple(map(tuple, v)) if isinstance(v, tuple) and v
                      and isinstance(v[0], tuple) else v)
                  for k, v in q.params}
        params = {k: (np.asarray(v, dtype=float) if isinstance(v, tuple) else v)
                  for k, v in params.items()}
        leak = q.leak
        if isinstance(leak, tuple):
            leak = np.asarray(leak, dtype=float)
        return GateSpec(q.kind, params, leak)
    if isinstance(q, BoolDecl):
        return GateSpec("bool", {}, expr=q.expr)
    raise TypeError(q)


def _reshape_cpts(net: model.BeliefNetwork, diags: list[Diagnostic]) -> None:
    """Give flat-parsed CPTs their true (parents..., child) shape."""
    for n in net.nodes:
        if not isinstance(n.quantification, model.Cpt):
            continue
        if any(p not in net.by_name for p in n.parents):
            continue
        want = tuple(net.by_name[p].variable.arity for p in n.parents) + (n.variable.arity,)
        tensor = n.quantification.tensor
        if tensor.size == int(np.prod(want)):
            n.quantification = model.Cpt(tensor.reshape(want))
        else:
            diags.append(Diagnostic(
                "arity-mismatch", n.name,
                f"cpt has {tensor.size} entries, shape {want} needs {int(np.prod(want))}"))


def resolve_network(decl: lang.NetworkDecl) -> model.BeliefNetwork:
    """Resolve one parsed network declaration into runtime form (CPTs get
    their true tensor shape). Raises ``compile-error`` on any diagnostic."""
    net, diags = _resolve_network(decl)
    if not diags:
        _reshape_cpts(net, diags)
    if diags:
        raise CompileError(diags)
    return net


def compile_network(net: model.BeliefNetwork,
                    options: CompileOptions = CompileOptions()) -> CompiledNetwork:
    """Validate, expand gates, aggregate loops away, and tag fast paths."""
    diags = model.validate(net)
    if diags:
        raise CompileError(diags)

    gates = {n.name: n.quantification for n in net.nodes
             if isinstance(n.quantification, GateSpec)}
    source_nodes = []
    materialized = []
    for n in net.nodes:
        parent_vars = [net.by_name[p].variable for p in n.parents]
        tensor = np.asarray(n.quantification.expand(n.variable, parent_vars), dtype=float)
        source_nodes.append(CompiledNode(n.name, n.variable.values, n.parents, tensor))
        quant = model.Prior(tensor) if not n.parents else model.Cpt(tensor)
        materialized.append(model.Node(n.variable, n.parents, quant))

    poly, agg = aggregate(model.BeliefNetwork(net.name, materialized),
                          options.max_cluster_states)

    compiled = []
    for n in poly.nodes:
        tag = None
        gate = gates.get(n.name)
        if (gate is not None and gate.kind in ("noisy_or", "noisy_and")
                and n.name not in agg.member_of
                and all(p not in agg.compounds for p in n.parents)):
            leak = float(gate.leak) if gate.leak is not None else 0.0
            tag = GateTag(gate.kind,
                          tuple(float(gate.params[p]) for p in n.parents), leak)
        tensor = np.asarray(n.quantification.expand(
            n.variable, [poly.by_name[p].variable for p in n.parents]), dtype=float)
        compiled.append(CompiledNode(n.name, n.variable.values, n.parents, tensor, tag))

    out = CompiledNetwork(net.name, compiled, source_nodes, agg)
    if not out.is_forest():
        raise CompileError([Diagnostic("cycle", net.name,
                                       "aggregation failed to produce a forest")])
    return out


def compile_modelset(ms: lang.ModelSet,
                     options: CompileOptions = CompileOptions()) -> CompiledModel:
    """Full pipeline: expand templates, resolve, validate, expand gates,
    aggregate, tag fast paths, and assemble the compiled model. All
    diagnostics are aggregated into one ``compile-error``."""
    ms = lang.expand_templates(ms)
    diags: list[Diagnostic] = []
    networks: dict[str, CompiledNetwork] = {}
    resolved: dict[str, model.BeliefNetwork] = {}
    for name, decl in ms.networks.items():
        net, nd = _resolve_network(decl)
        diags.extend(nd)
        if nd:
            continue
        _reshape_cpts(net, diags)
        resolved[name] = net
        try:
            networks[name] = compile_network(net, options)
        except CompileError as err:
            diags.extend(err.diagnostics)

    taxonomies: dict[str, TaxonomySpec] = {}
    for name, tdecl in ms.taxonomies.items():
        spec, td = _resolve_taxonomy(tdecl, resolved)
        diags.extend(td)
        if not td:
            taxonomies[name] = spec

    diagrams: dict[str, InfluenceDiagram] = {}
    for name, ddecl in ms.diagrams.items():
        spec, dd = _resolve_diagram(ddecl)
        diags.extend(dd)
        if not dd:
            diagrams[name] = spec

    if diags:
        raise CompileError(diags)

    source_hash = hashlib.sha256(lang.serialize(ms).encode()).hexdigest()
    return CompiledModel(networks, taxonomies, diagrams,
                         provenance={"source_sha256": source_hash})


def _resolve_taxonomy(decl: lang.TaxonomyDecl,
                      networks: dict[str, model.BeliefNetwork]
                      ) -> tuple[TaxonomySpec, list[Diagnostic]]:
    diags: list[Diagnostic] = []
    prior = None
    if decl.prior is not None:
        prior = np.asarray(decl.prior, dtype=float)
        if prior.min() <= 0:
            diags.append(Diagnostic("unnormalized-parameter", decl.name,
                                    "taxonomy prior weights must be positive"))
        elif abs(prior.sum() - 1.0) > model.ROW_SUM_TOL:
            diags.append(Diagnostic("unnormalized-parameter", decl.name,
                                    f"taxonomy prior sums to {prior.sum():.12g}"))
    classes = {}
    bindings = {}
    for cname, cdecl in decl.classes.items():
        classes[cname] = tuple(cdecl.members)
        if cdecl.binding is None:
            continue
        b = cdecl.binding
        net = networks.get(b.network)
        if net is None:
            diags.append(Diagnostic("unresolved-reference", f"{decl.name}.{cname}",
                                    f"binding references unknown network {b.network!r}"))
            continue
        node = net.by_name.get(b.node)
        if node is None:
            diags.append(Diagnostic("unresolved-reference", f"{decl.name}.{cname}",
                                    f"binding references unknown node {b.node!r}"))
            continue
        if b.value not in node.variable.values:
            diags.append(Diagnostic("unresolved-reference", f"{decl.name}.{cname}",
                                    f"{b.value!r} is not a value of {b.node!r}"))
            continue
        bindings[cname] = Binding(b.network, b.node, b.value)
    spec = TaxonomySpec(decl.name, tuple(decl.singletons), prior, classes, bindings)
    return spec, diags


def _resolve_diagram(decl: lang.DiagramDecl) -> tuple[InfluenceDiagram, list[Diagnostic]]:
    diags: list[Diagnostic] = []
    values = decl.value_nodes()
    if len(values) != 1:
        diags.append(Diagnostic("semantic-error", decl.name,
                                f"diagram needs exactly one value node, found {len(values)}"))
        return None, diags  # type: ignore[return-value]

    vd = values[0]
    arity: dict[str, int] = {}
    chance_nodes = []
    for nd in decl.chance():
        arity[nd.name] = len(nd.values)
    decisions = []
    for dd in decl.decisions():
        arity[dd.name] = len(dd.alternatives)
        decisions.append(DecisionSpec(dd.name, dd.alternatives, dd.informed_by))

    for nd in decl.chance():
        quant = _resolve_quant(nd, diags)
        for p in nd.parents:
            if p == vd.name:
                diags.append(Diagnostic("semantic-error", nd.name,
                                        "value node cannot have children", nd.span))
            elif p not in arity:
                diags.append(Diagnostic("unresolved-reference", nd.name,
                                        f"unknown parent {p!r}", nd.span))
        chance_nodes.append(model.Node(model.Variable(nd.name, nd.values), nd.parents, quant))

    for p in vd.parents:
        if p not in arity:
            diags.append(Diagnostic("unresolved-reference", vd.name,
                                    f"unknown parent {p!r}", vd.span))
    if diags:
        return None, diags  # type: ignore[return-value]

    want = int(np.prod([arity[p] for p in vd.parents])) if vd.parents else 1
    if len(vd.table) != want:
        diags.append(Diagnostic("arity-mismatch", vd.name,
                                f"utility table has {len(vd.table)} entries, needs {want}"))
        return None, diags  # type: ignore[return-value]
    table = np.asarray(vd.table, dtype=float).reshape(
        tuple(arity[p] for p in vd.parents) or (1,))
    utility = UtilitySpec(vd.name, vd.parents, table)

    diagram = InfluenceDiagram(decl.name, chance_nodes, decisions, utility)
    diags.extend(validate_diagram(diagram))
    return diagram, diags


# ---------------------------------------------------------------------------
# Persistence


def save(compiled: CompiledModel) -> bytes:
    """Self-describing JSON document; tensors flat row-major, axes in the
    declared order."""
    doc = {
        "version": compiled.version,
        "provenance": compiled.provenance,
        "networks": {k: v.to_json() for k, v in compiled.networks.items()},
        "taxonomies": {k: v.to_json() for k, v in compiled.taxonomies.items()},
        "diagrams": {k: v.to_json() for k, v in compiled.diagrams.items()},
    }
    return json.dumps(doc, sort_keys=True, indent=1).encode()


def load(data: bytes) -> CompiledModel:
    """Inverse of :func:`save`. Rejects non-model bytes (``bad-magic``),
    other format versions (``version-mismatch``), and tensors whose flat
    length disagrees with their shape (``corrupt-tensor``)."""
    text = data.decode("utf-8", errors="replace").lstrip()
    if not text.startswith("{"):
        raise BadMagicError("not a compiled model document")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as err:
        raise CorruptTensorError(f"truncated or damaged document: {err}") from None
    if not isinstance(doc, dict) or "version" not in doc:
        raise BadMagicError("missing version tag")
    if doc["version"] != FORMAT_VERSION:
        raise VersionMismatchError(
            f"cannot read version {doc['version']!r}, expected {FORMAT_VERSION!r}")
    networks = {k: CompiledNetwork.from_json(k, v) for k, v in doc["networks"].items()}
    taxonomies = {k: TaxonomySpec.from_json(k, v) for k, v in doc["taxonomies"].items()}
    diagrams = {k: InfluenceDiagram.from_json(k, v) for k, v in doc["diagrams"].items()}
    out = CompiledModel(networks, taxonomies, diagrams, provenance=doc.get("provenance", {}))
    return out


def compile_file(path: str, options: CompileOptions = CompileOptions()) -> CompiledModel:
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    return compile_modelset(lang.parse(text, filename=path), options)
