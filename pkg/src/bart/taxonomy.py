"""Belief maintenance over class-subclass hierarchies.

Only singleton weights are stored; a class's belief is the sum of its
member singletons' weights, so overlapping classes (a DAG of hypotheses,
not just a tree) compose without double counting. Evidence multiplies
weights and renormalizes; it is scale-free and order-independent.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional, Union

import numpy as np

from .errors import AllMassDestroyedError, Diagnostic
from .model import ROW_SUM_TOL


@dataclass(frozen=True)
class Binding:
    """Knowledge-group binding: the network whose report node confirms a
    class, and which of the report's values means "confirmed"."""

    network: str
    node: str
    value: str

    def to_json(self) -> dict:
        return {"network": self.network, "node": self.node, "value": self.value}


@dataclass(frozen=True)
class ClassEvidence:
    """Likelihood pair for one class: weight for members, weight for the
    rest. Scale-free; both zero is meaningless and rejected."""

    cls: str
    lam_in: float
    lam_out: float

    def __post_init__(self):
        if self.lam_in < 0 or self.lam_out < 0:
            raise ValueError("likelihoods must be nonnegative")
        if self.lam_in == 0 and self.lam_out == 0:
            raise ValueError("likelihood pair cannot be all zero")


@dataclass
class TaxonomySpec:
    """Declarative form of a taxonomy, as stored in compiled models."""

    name: str
    singletons: tuple[str, ...]
    prior: Optional[np.ndarray]
    classes: dict[str, tuple[str, ...]]
    bindings: dict[str, Binding] = field(default_factory=dict)

    def __eq__(self, other):
        if not isinstance(other, TaxonomySpec):
            return NotImplemented
        pa = None if self.prior is None else np.asarray(self.prior).tolist()
        pb = None if other.prior is None else np.asarray(other.prior).tolist()
        return (self.name == other.name and self.singletons == other.singletons
                and pa == pb and self.classes == other.classes
                and self.bindings == other.bindings)

    def to_json(self) -> dict:
        return {
            "singletons": list(self.singletons),
            "prior": None if self.prior is None else np.asarray(self.prior).tolist(),
            "classes": {
                c: {"members": list(m),
                    "binding": self.bindings[c].to_json() if c in self.bindings else None}
                for c, m in self.classes.items()},
        }

    @staticmethod
    def from_json(name: str, d: dict) -> "TaxonomySpec":
        classes = {c: tuple(v["members"]) for c, v in d["classes"].items()}
        bindings = {c: Binding(**v["binding"]) for c, v in d["classes"].items()
                    if v.get("binding")}
        prior = None if d.get("prior") is None else np.asarray(d["prior"], dtype=float)
        return TaxonomySpec(name, tuple(d["singletons"]), prior, classes, bindings)

    def validate(self) -> list[Diagnostic]:
        out = []
        if len(self.singletons) < 1:
            out.append(Diagnostic("semantic-error", self.name, "taxonomy has no singletons"))
        for c, members in self.classes.items():
            if not members:
                out.append(Diagnostic("semantic-error", c, "class is empty"))
            unknown = [m for m in members if m not in self.singletons]
            if unknown:
                out.append(Diagnostic("unresolved-reference", c,
                                      f"unknown singletons {unknown}"))
        if self.prior is not None:
            p = np.asarray(self.prior, dtype=float)
            if p.shape != (len(self.singletons),):
                out.append(Diagnostic("arity-mismatch", self.name,
                                      "prior length must match singletons"))
            elif p.min() <= 0 or abs(p.sum() - 1.0) > ROW_SUM_TOL:
                out.append(Diagnostic("unnormalized-parameter", self.name,
                                      "prior must be positive and sum to 1"))
        return out


ClassRef = Union[str, Iterable[str]]


class Taxonomy:
    """Live weight table over the singleton hypotheses of a TaxonomySpec."""

    def __init__(self, spec: TaxonomySpec):
        self.spec = spec
        self.singletons = tuple(spec.singletons)
        self._index = {s: i for i, s in enumerate(self.singletons)}
        if spec.prior is not None:
            self.prior = np.asarray(spec.prior, dtype=float).copy()
        else:
            self.prior = np.full(len(self.singletons), 1.0 / len(self.singletons))
        self.weights = self.prior.copy()

    # -- structure ---------------------------------------------------------

    def members(self, ref: ClassRef) -> tuple[str, ...]:
        if isinstance(ref, str):
            try:
                return self.spec.classes[ref]
            except KeyError:
                raise KeyError(f"unknown class {ref!r}") from None
        return tuple(ref)

    def mask(self, ref: ClassRef) -> np.ndarray:
        mask = np.zeros(len(self.singletons), dtype=bool)
        for m in self.members(ref):
            mask[self._index[m]] = True
        return mask

    def subclasses(self, cls: str) -> list[str]:
        """Direct subclasses: maximal proper subsets among declared classes."""
        mine = set(self.members(cls))
        proper = [c for c in self.spec.classes
                  if c != cls and set(self.members(c)) < mine]
        out = []
        for c in proper:
            cm = set(self.members(c))
            if not any(cm < set(self.members(d)) for d in proper if d != c):
                out.append(c)
        return sorted(out)

    def descendants(self, cls: str) -> list[str]:
        mine = set(self.members(cls))
        return sorted(c for c in self.spec.classes
                      if c != cls and set(self.members(c)) < mine)

    def roots(self) -> list[str]:
        """Classes not strictly contained in any other declared class."""
        out = []
        for c in self.spec.classes:
            cm = set(self.members(c))
            if not any(cm < set(self.members(d)) for d in self.spec.classes if d != c):
                out.append(c)
        return sorted(out)

    # -- belief updates ----------------------------------------------------

    def apply_class_evidence(self, ev: ClassEvidence) -> np.ndarray:
        """Multiply member weights by lam_in, the rest by lam_out, then
        renormalize. Raises ``all-mass-destroyed`` when nothing survives."""
        mask = self.mask(ev.cls)
        lam = np.where(mask, ev.lam_in, ev.lam_out)
        return self.apply_singleton_likelihood(lam)

    def apply_singleton_likelihood(self, lam) -> np.ndarray:
        """General form: elementwise multiply by a per-singleton likelihood
        and renormalize."""
        lam = np.asarray(lam, dtype=float)
        if lam.shape != self.weights.shape:
            raise ValueError("likelihood length must match singletons")
        if lam.min() < 0:
            raise ValueError("likelihood weights must be nonnegative")
        updated = self.weights * lam
        total = updated.sum()
        if total <= 0.0:
            raise AllMassDestroyedError(
                f"likelihood destroyed all weight in taxonomy {self.spec.name!r}")
        self.weights = updated / total
        return self.weights

    def class_belief(self, ref: ClassRef) -> float:
        """Sum of the member singletons' weights."""
        return float(self.weights[self.mask(ref)].sum())

    def singleton_beliefs(self) -> dict[str, float]:
        return {s: float(w) for s, w in zip(self.singletons, self.weights)}

    def class_beliefs(self) -> dict[str, float]:
        return {c: self.class_belief(c) for c in self.spec.classes}

    def reset(self) -> None:
        self.weights = self.prior.copy()

    def copy(self) -> "Taxonomy":
        t = Taxonomy(self.spec)
        t.weights = self.weights.copy()
        return t
