"""Core domain types for discrete belief networks, plus the brute-force
joint-enumeration routines the rest of the test suite treats as ground truth.

Conventions fixed here and relied on everywhere else:

* A node's tensor axes are its parents in declaration order, child last.
* Value order is significant: values are listed strongest-first, and the
  first value of a gated node is its "present" state.
* Probabilities are float64; every distribution row must sum to 1 within
  ``ROW_SUM_TOL``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Union

import numpy as np

from .errors import Diagnostic, InconsistentEvidenceError

ROW_SUM_TOL = 1e-9
BELIEF_TOL = 1e-9
DELTA_TOL = 1e-12


@dataclass(frozen=True)
class Variable:
    """A named discrete variable with at least two ordered value labels."""

    name: str
    values: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(self.values))
        if len(self.values) < 2:
            raise ValueError(f"variable {self.name!r} needs >= 2 values")
        if len(set(self.values)) != len(self.values):
            raise ValueError(f"variable {self.name!r} has duplicate value labels")

    @property
    def arity(self) -> int:
        return len(self.values)

    def index(self, label: str) -> int:
        try:
            return self.values.index(label)
        except ValueError:
            raise KeyError(f"{label!r} is not a value of {self.name!r}") from None


class Prior:
    """Unconditional distribution for a root node."""

    def __init__(self, table):
        self.table = np.asarray(table, dtype=float)

    def __eq__(self, other):
        return isinstance(other, Prior) and np.array_equal(self.table, other.table)

    def __repr__(self):
        return f"Prior({self.table.tolist()})"

    def check(self, node_name: str, child: Variable, parents: list[Variable]) -> list[Diagnostic]:
        out = []
        if parents:
            out.append(Diagnostic("arity-mismatch", node_name, "prior on a node with parents"))
        if self.table.shape != (child.arity,):
            out.append(Diagnostic(
                "arity-mismatch", node_name,
                f"prior has {self.table.size} entries, variable has {child.arity} values"))
        else:
            out.extend(_distribution_diagnostics(node_name, self.table[None, :]))
        return out

    def expand(self, child: Variable, parents: list[Variable]) -> np.ndarray:
        return self.table


class Cpt:
    """Dense conditional probability tensor P(child | parents).

    Shape is (|parent1|, ..., |parentN|, |child|); each slice along the last
    axis is a distribution.
    """

    def __init__(self, tensor):
        self.tensor = np.asarray(tensor, dtype=float)

    def __eq__(self, other):
        return isinstance(other, Cpt) and np.array_equal(self.tensor, other.tensor)

    def __repr__(self):
        return f"Cpt(shape={self.tensor.shape})"

    def check(self, node_name: str, child: Variable, parents: list[Variable]) -> list[Diagnostic]:
        want = tuple(p.arity for p in parents) + (child.arity,)
        if self.tensor.shape != want:
            return [Diagnostic(
                "arity-mismatch", node_name,
                f"cpt shape {self.tensor.shape} does not match parents/child shape {want}")]
        return _distribution_diagnostics(node_name, self.tensor.reshape(-1, child.arity))

    def expand(self, child: Variable, parents: list[Variable]) -> np.ndarray:
        return self.tensor


def _distribution_diagnostics(where: str, rows: np.ndarray) -> list[Diagnostic]:
    out = []
    if rows.size and (np.min(rows) < 0.0 or np.max(rows) > 1.0 + ROW_SUM_TOL):
        out.append(Diagnostic("bad-row-sum", where, "probability entries outside [0, 1]"))
    sums = rows.sum(axis=-1)
    bad = np.flatnonzero(np.abs(sums - 1.0) > ROW_SUM_TOL)
    for i in bad[:8]:
        out.append(Diagnostic("bad-row-sum", where, f"row {int(i)} sums to {sums[i]:.12g}"))
    return out


@dataclass
class Node:
    """One network node: variable, parent references (by name), and its
    quantification (Prior, Cpt, or a compiler GateSpec)."""

    variable: Variable
    parents: tuple[str, ...]
    quantification: object

    def __init__(self, variable: Variable, parents: Iterable[str], quantification):
        self.variable = variable
        self.parents = tuple(parents)
        self.quantification = quantification

    @property
    def name(self) -> str:
        return self.variable.name


class BeliefNetwork:
    """A DAG of nodes in declaration order. Declaration order is semantic:
    it fixes tensor axis order and the deterministic tie-breaks."""

    def __init__(self, name: str, nodes: Iterable[Node]):
        self.name = name
        self.nodes = list(nodes)
        self.by_name = {n.name: n for n in self.nodes}

    def node(self, name: str) -> Node:
        return self.by_name[name]

    def parents_of(self, node: Node) -> list[Node]:
        return [self.by_name[p] for p in node.parents]

    def children_of(self, name: str) -> list[Node]:
        return [n for n in self.nodes if name in n.parents]

    def topo_order(self) -> list[Node]:
        order, seen = [], set()

        def visit(n: Node, stack: tuple[str, ...]):
            if n.name in seen:
                return
            if n.name in stack:
                raise ValueError(f"cycle through {n.name}")
            for p in n.parents:
                visit(self.by_name[p], stack + (n.name,))
            seen.add(n.name)
            order.append(n)

        for n in self.nodes:
            visit(n, ())
        return order


Finding = Union["Instantiated", "Virtual"]


@dataclass(frozen=True)
class Instantiated:
    value: str


class Virtual:
    """Soft finding: nonnegative likelihood weights, one per value.

    Scale-free; any positive rescaling means the same evidence.
    """

    def __init__(self, weights):
        self.weights = np.asarray(weights, dtype=float)
        if self.weights.ndim != 1:
            raise ValueError("likelihood weights must be a vector")
        if np.min(self.weights) < 0 or not np.any(self.weights > 0):
            raise ValueError("likelihood weights must be nonnegative and not all zero")

    def __eq__(self, other):
        return isinstance(other, Virtual) and np.array_equal(self.weights, other.weights)

    def __repr__(self):
        return f"Virtual({self.weights.tolist()})"


@dataclass(frozen=True)
class LikelihoodVector:
    """Evidence weights over a variable's values; the coupling currency
    between knowledge groups and the taxonomy."""

    variable: str
    weights: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        if any(w < 0 for w in self.weights) or not any(w > 0 for w in self.weights):
            raise ValueError("weights must be nonnegative and not all zero")


class Evidence:
    """At most one finding per node, insertion-ordered (order is replayed
    verbatim on retraction)."""

    def __init__(self, findings: Optional[Mapping[str, Finding]] = None):
        self.findings: dict[str, Finding] = dict(findings or {})

    def __eq__(self, other):
        return isinstance(other, Evidence) and self.findings == other.findings

    def __len__(self):
        return len(self.findings)

    def items(self):
        return self.findings.items()

    def copy(self) -> "Evidence":
        return Evidence(self.findings)

    def weight_vector(self, var: Variable, name: str) -> Optional[np.ndarray]:
        """The multiplicative weight this evidence puts on ``name``, or None."""
        f = self.findings.get(name)
        if f is None:
            return None
        if isinstance(f, Instantiated):
            w = np.zeros(var.arity)
            w[var.index(f.value)] = 1.0
            return w
        return f.weights


BeliefTable = dict  # node name -> normalized probability vector


def validate(network: BeliefNetwork) -> list[Diagnostic]:
    """Structural and numeric validation; empty list means all invariants hold.

    Diagnostic kinds: ``duplicate-name``, ``cycle``, ``arity-mismatch``,
    ``bad-row-sum``.
    """
    out: list[Diagnostic] = []
    seen: set[str] = set()
    for n in network.nodes:
        if n.name in seen:
            out.append(Diagnostic("duplicate-name", n.name, "node name declared twice"))
        seen.add(n.name)

    for n in network.nodes:
        missing = [p for p in n.parents if p not in network.by_name]
        if missing:
            out.append(Diagnostic("arity-mismatch", n.name, f"unknown parents {missing}"))
            continue
        if len(set(n.parents)) != len(n.parents):
            out.append(Diagnostic("arity-mismatch", n.name, "duplicate parent reference"))
            continue
        parent_vars = [network.by_name[p].variable for p in n.parents]
        out.extend(n.quantification.check(n.name, n.variable, parent_vars))

    out.extend(_cycle_diagnostics(network))
    return out


def _cycle_diagnostics(network: BeliefNetwork) -> list[Diagnostic]:
    color: dict[str, int] = {}
    cycles = []

    def visit(name: str, trail: list[str]):
        color[name] = 1
        node = network.by_name.get(name)
        for p in (node.parents if node else ()):
            if p not in network.by_name:
                continue
            if color.get(p) == 1:
                cycles.append(trail + [name, p])
            elif color.get(p, 0) == 0:
                visit(p, trail + [name])
        color[name] = 2

    for n in network.nodes:
        if color.get(n.name, 0) == 0:
            visit(n.name, [])
    return [Diagnostic("cycle", c[-1], "directed cycle: " + " -> ".join(c)) for c in cycles]


def _materialized(network: BeliefNetwork) -> list[tuple[Node, np.ndarray]]:
    pairs = []
    for n in network.nodes:
        parent_vars = [network.by_name[p].variable for p in n.parents]
        pairs.append((n, np.asarray(n.quantification.expand(n.variable, parent_vars), dtype=float)))
    return pairs


def _joint_tensor(network: BeliefNetwork, evidence: Evidence) -> np.ndarray:
    """Full joint over all nodes in declaration order, evidence weights
    multiplied in after all CPT factors. Cost is exponential; intended for
    <= ~20 binary-equivalent nodes."""
    axis = {n.name: i for i, n in enumerate(network.nodes)}
    shape = tuple(n.variable.arity for n in network.nodes)
    rank = len(shape)
    joint = np.ones(shape)
    for n, tensor in _materialized(network):
        axes = [axis[p] for p in n.parents] + [axis[n.name]]
        joint = joint * _spread(tensor, axes, rank)
    for n in network.nodes:
        w = evidence.weight_vector(n.variable, n.name)
        if w is not None:
            joint = joint * _spread(w, [axis[n.name]], rank)
    return joint


def _spread(tensor: np.ndarray, axes: list[int], rank: int) -> np.ndarray:
    """Embed ``tensor`` (whose dimensions correspond to ``axes``) into a
    broadcastable view of the full ``rank``-dimensional joint."""
    order = np.argsort(axes)
    moved = np.transpose(tensor, order)
    shape = [1] * rank
    for ax, size in zip(sorted(axes), moved.shape):
        shape[ax] = size
    return moved.reshape(shape)


def joint_enumerate(network: BeliefNetwork, evidence: Evidence, query: str) -> np.ndarray:
    """Exact posterior P(query | evidence) by summing the full joint.

    This is the independent oracle: it never touches message passing.
    Raises ``inconsistent-evidence`` when the evidence has zero mass.
    """
    if query not in network.by_name:
        raise KeyError(f"unknown node {query!r}")
    joint = _joint_tensor(network, evidence)
    qax = [n.name for n in network.nodes].index(query)
    marg = joint.sum(axis=tuple(i for i in range(joint.ndim) if i != qax))
    total = marg.sum()
    if total <= 0.0:
        raise InconsistentEvidenceError(f"evidence mass is zero querying {query!r}")
    return marg / total


def joint_score(network: BeliefNetwork, evidence: Evidence, assignment: Mapping[str, str]) -> float:
    """Joint product of one full assignment, factors multiplied in the same
    order the enumeration tensor is built (so scores compare exactly)."""
    idx = {n.name: n.variable.index(assignment[n.name]) for n in network.nodes}
    acc = 1.0
    for n, tensor in _materialized(network):
        pos = tuple(idx[p] for p in n.parents) + (idx[n.name],)
        acc = acc * float(tensor[pos])
    for n in network.nodes:
        w = evidence.weight_vector(n.variable, n.name)
        if w is not None:
            acc = acc * float(w[idx[n.name]])
    return acc


def joint_mpe(network: BeliefNetwork, evidence: Evidence) -> tuple[dict[str, str], float]:
    """Most probable full assignment under the joint (times virtual weights).

    Ties break to the lexicographically smallest tuple of value indices in
    node declaration order.
    """
    joint = _joint_tensor(network, evidence)
    if not np.any(joint > 0.0):
        raise InconsistentEvidenceError("evidence mass is zero")
    flat = int(np.argmax(joint))  # first maximum == lexicographic tie-break
    pos = np.unravel_index(flat, joint.shape)
    assignment = {
        n.variable.name: n.variable.values[i] for n, i in zip(network.nodes, pos)
    }
    return assignment, float(joint[pos])


def enumerate_assignments(network: BeliefNetwork) -> Iterable[dict[str, str]]:
    """All full assignments in lexicographic value-index order."""
    names = [n.name for n in network.nodes]
    spaces = [n.variable.values for n in network.nodes]
    for combo in itertools.product(*spaces):
        yield dict(zip(names, combo))
