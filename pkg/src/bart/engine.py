"""Exact inference sessions over compiled polytree networks.

Sum-product belief updating follows the classic singly-connected
message-passing scheme: per node, lambda(x) = lambda_local(x) * prod_j
lambda_from_child_j(x); pi(x) = sum_u P(x|u) prod_i pi_from_parent_i(u_i);
BEL = alpha * lambda * pi; messages to parents and children are the
matching contractions of the node tensor. All products are computed as
tensor contractions against the incoming message vectors, with no
divisions (the product excluding one child is recomputed, so deterministic
zeros are safe). Replacing every sum with max gives belief revision (MPE).

Messages are stored normalized (they are scale-free), and every message is
a pure function of its input messages, so the settled fixpoint is
schedule-independent: FIFO, LIFO, random, and concurrent activation orders
reach identical beliefs.
"""

from __future__ import annotations

import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .compiler import CompiledModel, CompiledNetwork, CompiledNode, GateTag
from .errors import (
    ArityMismatchError,
    ConflictingInstantiationError,
    InconsistentEvidenceError,
    NoSuchFindingError,
    UnknownNetworkError,
    UnknownNodeError,
    UnknownValueError,
)
from .model import DELTA_TOL, Instantiated, Virtual

SCHEDULES = ("fifo", "lifo", "random", "concurrent")

FindingLike = Union[str, list, tuple, np.ndarray, Instantiated, Virtual]


def _norm(v: np.ndarray) -> np.ndarray:
    s = v.sum()
    return v / s if s > 0.0 else v


def _spread_axis(vec: np.ndarray, axis: int, rank: int) -> np.ndarray:
    shape = [1] * rank
    shape[axis] = vec.shape[0]
    return vec.reshape(shape)


def _contract_pi(tensor: np.ndarray, pi_in: list[np.ndarray], mode: str) -> np.ndarray:
    """sum_u P(x|u) prod_i pi_i(u_i) (or max over u)."""
    n = len(pi_in)
    acc = tensor
    for i, msg in enumerate(pi_in):
        acc = acc * _spread_axis(msg, i, n + 1)
    reducer = np.sum if mode == "sum" else np.max
    return reducer(acc, axis=tuple(range(n))) if n else acc


def _contract_lambda(tensor: np.ndarray, pi_in: list[np.ndarray], skip: int,
                     lam: np.ndarray, mode: str) -> np.ndarray:
    """sum_x lam(x) sum_{u minus u_skip} P(x|u) prod_{k != skip} pi_k(u_k)."""
    n = len(pi_in)
    acc = tensor * _spread_axis(lam, n, n + 1)
    for i, msg in enumerate(pi_in):
        if i != skip:
            acc = acc * _spread_axis(msg, i, n + 1)
    reducer = np.sum if mode == "sum" else np.max
    return reducer(acc, axis=tuple(i for i in range(n + 1) if i != skip))


def fast_path_messages(tag: GateTag, pi_in: list[np.ndarray],
                       lam: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
    """Closed-form pi value and lambda-to-parent messages for a binary
    noisy-or/and node, avoiding the 2^n tensor contraction.

    ``pi_in`` must be normalized parent messages and ``lam`` the node's
    combined lambda (local evidence times child messages), child value 0
    being "present". Results are unnormalized, like the raw contractions.
    """
    n = len(tag.strengths)
    if tag.kind == "noisy_or":
        # t_i: chance parent i contributes no "present" candidate
        t = np.array([1.0 - c * msg[0] for c, msg in zip(tag.strengths, pi_in)])
        base = 1.0 - tag.leak
    else:
        # t_i: chance parent i does not break the child
        t = np.array([1.0 - c * msg[1] for c, msg in zip(tag.strengths, pi_in)])
        base = 1.0 - tag.leak
    prefix = np.ones(n + 1)
    for i in range(n):
        prefix[i + 1] = prefix[i] * t[i]
    suffix = np.ones(n + 1)
    for i in range(n - 1, -1, -1):
        suffix[i] = suffix[i + 1] * t[i]
    total = base * prefix[n]

    if tag.kind == "noisy_or":
        pi_val = np.array([1.0 - total, total])
    else:
        pi_val = np.array([total, 1.0 - total])

    lam_out = []
    for i, c in enumerate(tag.strengths):
        rest = base * prefix[i] * suffix[i + 1]
        q = 1.0 - c
        if tag.kind == "noisy_or":
            # child absent iff every cause (and the leak) stays quiet
            absent_if_present = q * rest
            absent_if_absent = rest
            lam_out.append(np.array([
                lam[0] * (1.0 - absent_if_present) + lam[1] * absent_if_present,
                lam[0] * (1.0 - absent_if_absent) + lam[1] * absent_if_absent,
            ]))
        else:
            present_if_present = rest
            present_if_absent = q * rest
            lam_out.append(np.array([
                lam[0] * present_if_present + lam[1] * (1.0 - present_if_present),
                lam[0] * present_if_absent + lam[1] * (1.0 - present_if_absent),
            ]))
    return pi_val, lam_out


class MessageStore:
    """Per-edge pi/lambda slots plus per-node local lambda, pi, and BEL.

    Every stored vector is normalized to sum 1 (all quantities here are
    scale-free), except that an all-zero vector stays all-zero so
    inconsistent evidence surfaces at the end of settling.
    """

    def __init__(self, net: CompiledNetwork):
        self.pi_msg: dict[tuple[str, str], np.ndarray] = {}
        self.lambda_msg: dict[tuple[str, str], np.ndarray] = {}
        self.lambda_local: dict[str, np.ndarray] = {}
        self.pi_val: dict[str, np.ndarray] = {}
        self.bel: dict[str, np.ndarray] = {}
        for node in net.nodes:
            k = node.arity
            self.lambda_local[node.name] = np.full(k, 1.0 / k)
            self.pi_val[node.name] = np.full(k, 1.0 / k)
            self.bel[node.name] = np.full(k, 1.0 / k)
            for p in node.parents:
                pk = net.by_name[p].arity
                self.pi_msg[(p, node.name)] = np.full(pk, 1.0 / pk)
                self.lambda_msg[(node.name, p)] = np.full(pk, 1.0 / pk)

    def copy(self) -> "MessageStore":
        out = MessageStore.__new__(MessageStore)
        out.pi_msg = {k: v.copy() for k, v in self.pi_msg.items()}
        out.lambda_msg = {k: v.copy() for k, v in self.lambda_msg.items()}
        out.lambda_local = {k: v.copy() for k, v in self.lambda_local.items()}
        out.pi_val = {k: v.copy() for k, v in self.pi_val.items()}
        out.bel = {k: v.copy() for k, v in self.bel.items()}
        return out


@dataclass
class ImpactReport:
    """Candidates ranked by how much instantiating them is expected to move
    the target's posterior (descending, ties by name)."""

    target: str
    metric: str
    ranking: list[tuple[str, float]]

    def to_json(self) -> dict:
        return {"target": self.target, "metric": self.metric,
                "ranking": [[n, s] for n, s in self.ranking]}


class Session:
    """Mutable inference state over one compiled network.

    Evidence is keyed by original (pre-aggregation) node names; beliefs are
    reported for original nodes, marginalized out of compound nodes where
    needed. Single-writer: callers serialize mutations.
    """

    def __init__(self, net: CompiledNetwork, schedule: str = "fifo",
                 use_fast_paths: bool = True, seed: int = 0,
                 impact_metric: str = "l2"):
        if schedule not in SCHEDULES:
            raise ValueError(f"unknown schedule {schedule!r}")
        self.net = net
        self.schedule = schedule
        self.use_fast_paths = use_fast_paths
        self.impact_metric = impact_metric
        self._rng = random.Random(seed)
        self.evidence: dict[str, Union[Instantiated, Virtual]] = {}
        self.revision = 0
        self.last_sweeps = 0
        self._source = {n.name: n for n in net.source_nodes}
        self.store = MessageStore(net)
        self._settle(set(self.net.by_name), mode="sum", store=self.store)
        self._check_consistent(self.store)

    # -- public API ----------------------------------------------------------

    def original_names(self) -> list[str]:
        return [n.name for n in self.net.source_nodes]

    def original_values(self, name: str) -> tuple[str, ...]:
        try:
            return self._source[name].values
        except KeyError:
            raise UnknownNodeError(f"unknown node {name!r}") from None

    def assert_evidence(self, node: str, finding: FindingLike) -> list[dict]:
        """Record a finding and propagate. Returns the belief deltas
        (original nodes whose belief moved by more than 1e-12).

        Re-asserting over a virtual finding replaces it; asserting over an
        instantiated node raises ``conflicting-instantiation``; zero-mass
        evidence raises ``inconsistent-evidence`` and leaves the session
        unchanged.
        """
        finding = self._coerce_finding(node, finding)
        existing = self.evidence.get(node)
        if isinstance(existing, Instantiated):
            raise ConflictingInstantiationError(
                f"{node!r} is already instantiated to {existing.value!r}", node=node)
        before = self.beliefs()
        backup_store = self.store.copy()
        backup_evidence = dict(self.evidence)
        self.evidence[node] = finding
        try:
            self._refresh_local(node)
        except InconsistentEvidenceError:
            self.store = backup_store
            self.evidence = backup_evidence
            raise
        self.revision += 1
        return self._deltas(before)

    def retract_evidence(self, node: str) -> list[dict]:
        """Remove one finding; state is rebuilt by replaying the remaining
        findings from a fresh session."""
        if node not in self.evidence:
            raise NoSuchFindingError(f"no finding recorded for {node!r}", node=node)
        before = self.beliefs()
        del self.evidence[node]
        self._rebuild()
        self.revision += 1
        return self._deltas(before)

    def beliefs(self, node: Optional[str] = None):
        """Settled BEL for one original node, or for all of them."""
        if node is not None:
            return self._original_belief(node)
        return {name: self._original_belief(name) for name in self.original_names()}

    def whatif(self, findings: list[tuple[str, FindingLike]]) -> dict:
        """Beliefs under temporary findings; the session is left exactly as
        it was (revision included)."""
        backup_store = self.store.copy()
        backup_evidence = dict(self.evidence)
        try:
            for node, finding in findings:
                finding = self._coerce_finding(node, finding)
                existing = self.evidence.get(node)
                if isinstance(existing, Instantiated):
                    raise ConflictingInstantiationError(
                        f"{node!r} is already instantiated to {existing.value!r}", node=node)
                self.evidence[node] = finding
                self._refresh_local(node)
            return self.beliefs()
        finally:
            self.store = backup_store
            self.evidence = backup_evidence

    def snapshot(self):
        return (self.store.copy(), dict(self.evidence))

    def restore(self, snap) -> None:
        self.store = snap[0].copy()
        self.evidence = dict(snap[1])

    def mpe(self) -> tuple[dict[str, str], float]:
        """Categorical belief commitment for every node via max-product
        propagation; ties break to the lowest value index. The returned
        probability is the committed assignment's joint product (times any
        virtual-evidence weights), recomputed on the original factors."""
        store = MessageStore(self.net)
        for name in self.net.by_name:
            store.lambda_local[name] = self.store.lambda_local[name].copy()
        self._settle(set(self.net.by_name), mode="max", store=store)
        assignment: dict[str, str] = {}
        for node in self.net.nodes:
            bel = store.bel[node.name]
            if not np.any(bel > 0.0):
                raise InconsistentEvidenceError("zero mass in belief revision")
            best = int(np.argmax(bel))
            members = self.net.aggregation.compounds.get(node.name)
            if members is None:
                assignment[node.name] = node.values[best]
            else:
                arities = [len(self._source[m].values) for m in members]
                for m, idx in zip(members, np.unravel_index(best, arities)):
                    assignment[m] = self._source[m].values[int(idx)]
        return assignment, self._score(assignment)

    def impact(self, target: str, metric: Optional[str] = None) -> ImpactReport:
        """Error-based impact of instantiating each uninstantiated node on
        the target's posterior: sum_x P(X=x|e) * d(BEL_{e+X=x}(T), BEL_e(T))
        with d the squared-error sum (or L1 when configured)."""
        metric = metric or self.impact_metric
        if metric not in ("l2", "l1"):
            raise ValueError(f"unknown impact metric {metric!r}")
        base = self._original_belief(target)
        scores: list[tuple[str, float]] = []
        for name in self.original_names():
            if name == target or isinstance(self.evidence.get(name), Instantiated):
                continue
            px = self._original_belief(name)
            values = self.original_values(name)
            score = 0.0
            for j, v in enumerate(values):
                if px[j] <= 0.0:
                    continue
                snap = self.snapshot()
                try:
                    self.evidence[name] = Instantiated(v)
                    self._refresh_local(name)
                    probed = self._original_belief(target)
                finally:
                    self.restore(snap)
                diff = probed - base
                d = float(np.sum(diff * diff)) if metric == "l2" else float(np.sum(np.abs(diff)))
                score += float(px[j]) * d
            scores.append((name, score))
        scores.sort(key=lambda item: (-item[1], item[0]))
        return ImpactReport(target, metric, scores)

    # -- evidence plumbing -----------------------------------------------------

    def _coerce_finding(self, node: str, finding: FindingLike):
        values = self.original_values(node)
        if isinstance(finding, Instantiated):
            finding = finding.value
        if isinstance(finding, str):
            if finding not in values:
                raise UnknownValueError(
                    f"{finding!r} is not a value of {node!r}", node=node, value=finding)
            return Instantiated(finding)
        if isinstance(finding, Virtual):
            weights = finding.weights
        else:
            weights = np.asarray(finding, dtype=float)
        if weights.shape != (len(values),):
            raise ArityMismatchError(
                f"likelihood for {node!r} needs {len(values)} weights")
        return Virtual(weights)

    def _compiled_home(self, name: str) -> str:
        compound = self.net.aggregation.compound_for(name)
        return compound if compound else name

    def _lifted_weight(self, name: str, weights: np.ndarray) -> tuple[str, np.ndarray]:
        """Map a weight vector on an original node onto its compiled node."""
        home = self._compiled_home(name)
        if home == name:
            return name, weights
        members = self.net.aggregation.compounds[home]
        axis = self.net.aggregation.member_of[name][1]
        arities = [len(self._source[m].values) for m in members]
        lifted = np.ones(arities)
        lifted = lifted * _spread_axis(weights, axis, len(arities))
        return home, lifted.reshape(-1)

    def _local_vector(self, compiled_name: str) -> np.ndarray:
        node = self.net.by_name[compiled_name]
        members = self.net.aggregation.compounds.get(compiled_name, (compiled_name,))
        out = np.ones(node.arity)
        for m in members:
            finding = self.evidence.get(m)
            if finding is None:
                continue
            if isinstance(finding, Instantiated):
                w = np.zeros(len(self._source[m].values))
                w[self._source[m].values.index(finding.value)] = 1.0
            else:
                w = finding.weights
            _, lifted = self._lifted_weight(m, w)
            out = out * lifted
        return _norm(out)

    def _refresh_local(self, name: str) -> None:
        if name not in self._source:
            raise UnknownNodeError(f"unknown node {name!r}", node=name)
        home = self._compiled_home(name)
        self.store.lambda_local[home] = self._local_vector(home)
        self._settle({home}, mode="sum", store=self.store)
        self._check_consistent(self.store)

    def _rebuild(self) -> None:
        self.store = MessageStore(self.net)
        for name in {self._compiled_home(n) for n in self.evidence}:
            self.store.lambda_local[name] = self._local_vector(name)
        self._settle(set(self.net.by_name), mode="sum", store=self.store)
        self._check_consistent(self.store)

    def _check_consistent(self, store: MessageStore) -> None:
        for name, bel in store.bel.items():
            if not np.any(bel > 0.0):
                raise InconsistentEvidenceError(
                    f"evidence leaves zero mass at {name!r}", node=name)

    # -- propagation -----------------------------------------------------------

    def _settle(self, dirty: set[str], mode: str, store: MessageStore) -> None:
        if self.schedule == "concurrent" or mode == "max":
            self._settle_rounds(dirty, mode, store,
                                parallel=self.schedule == "concurrent")
            return
        queue = list(dirty)
        queued = set(dirty)
        sweeps = 0
        while queue:
            if self.schedule == "fifo":
                name = queue.pop(0)
            elif self.schedule == "lifo":
                name = queue.pop()
            else:
                name = queue.pop(self._rng.randrange(len(queue)))
            queued.discard(name)
            sweeps += 1
            for receiver in self._activate(name, mode, store):
                if receiver not in queued:
                    queued.add(receiver)
                    queue.append(receiver)
        self.last_sweeps = sweeps

    def _settle_rounds(self, dirty: set[str], mode: str, store: MessageStore,
                       parallel: bool) -> None:
        rounds = 0
        current = set(dirty)
        while current:
            rounds += 1
            batch = sorted(current)
            if parallel and len(batch) > 1:
                with ThreadPoolExecutor(max_workers=min(8, len(batch))) as pool:
                    changed_sets = list(pool.map(
                        lambda n: self._activate(n, mode, store), batch))
            else:
                changed_sets = [self._activate(n, mode, store) for n in batch]
            current = set()
            for changed in changed_sets:
                current |= changed
        self.last_sweeps = rounds

    def _activate(self, name: str, mode: str, store: MessageStore) -> set[str]:
        """Recompute one node's value and outgoing messages; returns the
        neighbors whose incoming message changed."""
        node = self.net.by_name[name]
        parents = node.parents
        children = self.net.children[name]
        pi_in = [store.pi_msg[(p, name)] for p in parents]
        lam_children = [store.lambda_msg[(c, name)] for c in children]
        lam_local = store.lambda_local[name]

        lam = lam_local.copy()
        for msg in lam_children:
            lam = lam * msg

        fast = (self.use_fast_paths and mode == "sum" and node.gate is not None)
        lam_out: list[np.ndarray]
        if fast:
            pi_val, lam_out = fast_path_messages(node.gate, pi_in, lam)
        else:
            pi_val = node.tensor if not parents else _contract_pi(node.tensor, pi_in, mode)
            lam_out = [_contract_lambda(node.tensor, pi_in, i, lam, mode)
                       for i in range(len(parents))]

        pi_val = _norm(pi_val)
        store.pi_val[name] = pi_val
        store.bel[name] = _norm(pi_val * lam)

        changed: set[str] = set()
        for p, msg in zip(parents, lam_out):
            new = _norm(msg)
            if not np.array_equal(store.lambda_msg[(name, p)], new):
                store.lambda_msg[(name, p)] = new
                changed.add(p)

        if children:
            k = len(lam_children)
            prefix = [np.ones_like(lam_local) for _ in range(k + 1)]
            for i in range(k):
                prefix[i + 1] = prefix[i] * lam_children[i]
            suffix = [np.ones_like(lam_local) for _ in range(k + 1)]
            for i in range(k - 1, -1, -1):
                suffix[i] = suffix[i + 1] * lam_children[i]
            for j, c in enumerate(children):
                out = _norm(pi_val * lam_local * prefix[j] * suffix[j + 1])
                if not np.array_equal(store.pi_msg[(name, c)], out):
                    store.pi_msg[(name, c)] = out
                    changed.add(c)
        return changed

    # -- readout ----------------------------------------------------------------

    def _original_belief(self, name: str) -> np.ndarray:
        if name not in self._source:
            raise UnknownNodeError(f"unknown node {name!r}", node=name)
        compound = self.net.aggregation.compound_for(name)
        if compound is None:
            return self.store.bel[name].copy()
        members = self.net.aggregation.compounds[compound]
        axis = self.net.aggregation.member_of[name][1]
        arities = [len(self._source[m].values) for m in members]
        cube = self.store.bel[compound].reshape(arities)
        marg = cube.sum(axis=tuple(i for i in range(len(arities)) if i != axis))
        return _norm(marg)

    def _deltas(self, before: dict) -> list[dict]:
        out = []
        for name in self.original_names():
            new = self._original_belief(name)
            old = before[name]
            if float(np.max(np.abs(new - old))) > DELTA_TOL:
                out.append({"node": name, "old": old.tolist(), "new": new.tolist()})
        return out

    def _score(self, assignment: dict[str, str]) -> float:
        """Joint product of a full original-node assignment, factor order
        matching the enumeration oracle exactly."""
        idx = {n.name: n.values.index(assignment[n.name]) for n in self.net.source_nodes}
        acc = 1.0
        for n in self.net.source_nodes:
            pos = tuple(idx[p] for p in n.parents) + (idx[n.name],)
            acc = acc * float(n.tensor[pos])
        for n in self.net.source_nodes:
            finding = self.evidence.get(n.name)
            if finding is None:
                continue
            if isinstance(finding, Instantiated):
                acc = acc * (1.0 if finding.value == assignment[n.name] else 0.0)
            else:
                acc = acc * float(finding.weights[idx[n.name]])
        return acc


def open_session(compiled: CompiledModel, network: str, **kwargs) -> Session:
    """Open a settled session on one network of a compiled model."""
    try:
        net = compiled.networks[network]
    except KeyError:
        raise UnknownNetworkError(f"no network named {network!r}", network=network) from None
    return Session(net, **kwargs)
