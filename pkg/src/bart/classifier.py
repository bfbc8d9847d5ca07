"""Establish-refine classification over a taxonomy of hypotheses.

Each class may own a knowledge group: a belief network whose report node's
posterior is turned into a likelihood pair for the taxonomy. The agenda
pops the highest-belief active class, feeds its group any pending findings,
refreshes that group's likelihood contribution (a group's report replaces
its previous one, so re-reporting is idempotent and the final weights
depend only on the total feed), and then establishes, rejects, or suspends
the class against the configured thresholds. Establishing activates the
direct subclasses; rejecting rules out every descendant; suspended classes
wake up when new findings arrive for their group or their belief crosses a
threshold.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

from . import engine
from .compiler import CompiledModel
from .errors import (
    BartError,
    ConflictingInstantiationError,
    InconsistentEvidenceError,
    StepLimitExceededError,
    UnboundClassError,
    UnknownNetworkError,
)
from .taxonomy import Binding, ClassEvidence, Taxonomy

DORMANT, ACTIVE, ESTABLISHED, REJECTED, SUSPENDED = (
    "dormant", "active", "established", "rejected", "suspended")


@dataclass(frozen=True)
class ControllerConfig:
    tau_establish: float = 0.8
    tau_reject: float = 0.1
    max_steps: int = 10000

    def __post_init__(self):
        if not 0.0 < self.tau_establish <= 1.0:
            raise ValueError("tau_establish must be in (0, 1]")
        if not 0.0 <= self.tau_reject < self.tau_establish:
            raise ValueError("tau_reject must be in [0, tau_establish)")


@dataclass(frozen=True)
class FeedItem:
    """One data-feed line: a finding routed to a network."""

    network: str
    node: str
    value: Optional[str] = None
    likelihood: Optional[tuple[float, ...]] = None

    def finding(self):
        return self.value if self.value is not None else list(self.likelihood)

    @staticmethod
    def from_json(obj: dict) -> "FeedItem":
        value = obj.get("value")
        likelihood = obj.get("likelihood")
        if (value is None) == (likelihood is None):
            raise BartError("feed item needs exactly one of value or likelihood")
        return FeedItem(obj["network"], obj["node"], value,
                        tuple(likelihood) if likelihood is not None else None)


class DataFeed:
    """Findings in arrival order. Consumption cursors live in the
    controller (one per knowledge group), so pushing more items later
    simply re-activates whoever they are routed to."""

    def __init__(self, items: Optional[list[FeedItem]] = None):
        self.items: list[FeedItem] = list(items or [])

    def push(self, item: FeedItem) -> None:
        self.items.append(item)

    def for_network(self, network: str) -> list[FeedItem]:
        return [it for it in self.items if it.network == network]

    @staticmethod
    def from_jsonl(text: str) -> "DataFeed":
        items = []
        for line in text.splitlines():
            line = line.strip()
            if line:
                items.append(FeedItem.from_json(json.loads(line)))
        return DataFeed(items)


def group_likelihood(session: engine.Session, report_node: str,
                     confirm_value: str) -> tuple[float, float]:
    """(lambda_in, lambda_out) = (BEL(report=confirm), 1 - BEL(report=confirm))."""
    bel = session.beliefs(report_node)
    values = session.original_values(report_node)
    p = float(bel[values.index(confirm_value)])
    return p, 1.0 - p


@dataclass
class ClassificationReport:
    taxonomy: str
    most_specific: list[str]
    statuses: dict[str, str]
    class_beliefs: dict[str, float]
    weights: dict[str, float]
    events: list[dict]
    steps: int

    def to_json(self) -> dict:
        return {
            "taxonomy": self.taxonomy,
            "most_specific": self.most_specific,
            "statuses": self.statuses,
            "class_beliefs": self.class_beliefs,
            "weights": self.weights,
            "steps": self.steps,
            "events": self.events,
        }


class Controller:
    """Single-writer establish-refine driver bound to one taxonomy of a
    compiled model."""

    def __init__(self, compiled: CompiledModel, taxonomy: str,
                 config: ControllerConfig = ControllerConfig(),
                 session_kwargs: Optional[dict] = None):
        try:
            spec = compiled.taxonomies[taxonomy]
        except KeyError:
            raise UnknownNetworkError(f"no taxonomy named {taxonomy!r}") from None
        self.model = compiled
        self.config = config
        self.tax = Taxonomy(spec)
        self.bindings: dict[str, Binding] = dict(spec.bindings)
        self._session_kwargs = dict(session_kwargs or {})
        self.sessions: dict[str, engine.Session] = {}
        self.reports: dict[str, tuple[float, float]] = {}
        self.cursors: dict[str, int] = {c: 0 for c in spec.classes}
        self.statuses: dict[str, str] = {c: DORMANT for c in spec.classes}
        for root in self.tax.roots():
            self.statuses[root] = ACTIVE
        self.events: list[dict] = []
        self.steps = 0

    # -- plumbing ------------------------------------------------------------

    def session_for(self, cls: str) -> engine.Session:
        binding = self.bindings.get(cls)
        if binding is None:
            raise UnboundClassError(f"class {cls!r} has no knowledge group", cls=cls)
        if cls not in self.sessions:
            self.sessions[cls] = engine.open_session(
                self.model, binding.network, **self._session_kwargs)
        return self.sessions[cls]

    def _pending(self, cls: str, feed: DataFeed) -> list[FeedItem]:
        binding = self.bindings.get(cls)
        if binding is None:
            return []
        return feed.for_network(binding.network)[self.cursors[cls]:]

    def _emit(self, event: str, cls: str, **extra) -> dict:
        record = {"step": self.steps, "event": event, "class": cls,
                  "belief": self.tax.class_belief(cls)}
        record.update(extra)
        self.events.append(record)
        return record

    def _rebuild_weights(self) -> None:
        """Weights = prior times every group's current report, applied in
        sorted class order. Replacing (not stacking) reports keeps the final
        weights a function of the total feed alone."""
        self.tax.reset()
        for cls in sorted(self.reports):
            lam_in, lam_out = self.reports[cls]
            self.tax.apply_class_evidence(ClassEvidence(cls, lam_in, lam_out))

    def _reactivate(self, feed: DataFeed) -> list[dict]:
        out = []
        for cls in sorted(self.statuses):
            if self.statuses[cls] != SUSPENDED:
                continue
            belief = self.tax.class_belief(cls)
            crossed = belief >= self.config.tau_establish or belief <= self.config.tau_reject
            if self._pending(cls, feed) or crossed:
                self.statuses[cls] = ACTIVE
                out.append(self._emit("activated", cls))
        return out

    def _reject_closure(self, cls: str) -> list[dict]:
        out = [self._emit("rejected", cls)]
        self.statuses[cls] = REJECTED
        for sub in self.tax.descendants(cls):
            if self.statuses[sub] != REJECTED:
                self.statuses[sub] = REJECTED
                out.append(self._emit("rejected", sub))
        return out

    # -- the establish-refine step ---------------------------------------------

    def step(self, feed: DataFeed) -> list[dict]:
        """One agenda pop. Returns the events it produced; empty means the
        agenda is empty (nothing active, nothing to wake up)."""
        self.steps += 1
        emitted: list[dict] = []
        emitted.extend(self._reactivate(feed))
        agenda = [c for c, s in self.statuses.items() if s == ACTIVE]
        if not agenda:
            self.steps -= 1
            del self.events[len(self.events) - len(emitted):]
            return []
        agenda.sort(key=lambda c: (-self.tax.class_belief(c), c))
        cls = agenda[0]
        binding = self.bindings.get(cls)
        if binding is None and not self.tax.subclasses(cls):
            raise UnboundClassError(
                f"active class {cls!r} has no knowledge group and no subclasses", cls=cls)

        if binding is not None:
            session = self.session_for(cls)
            pending = self._pending(cls, feed)
            consumed = 0
            ignored = 0
            for item in pending:
                try:
                    session.assert_evidence(item.node, item.finding())
                    consumed += 1
                except (ConflictingInstantiationError, InconsistentEvidenceError):
                    ignored += 1
            self.cursors[cls] += len(pending)
            lam_in, lam_out = group_likelihood(session, binding.node, binding.value)
            self.reports[cls] = (lam_in, lam_out)
            self._rebuild_weights()
            emitted.append(self._emit("updated", cls, consumed=consumed, ignored=ignored,
                                      likelihood=[lam_in, lam_out]))

        belief = self.tax.class_belief(cls)
        if belief >= self.config.tau_establish:
            self.statuses[cls] = ESTABLISHED
            emitted.append(self._emit("established", cls))
            for sub in self.tax.subclasses(cls):
                if self.statuses[sub] == DORMANT:
                    self.statuses[sub] = ACTIVE
                    emitted.append(self._emit("activated", sub))
        elif belief <= self.config.tau_reject:
            emitted.extend(self._reject_closure(cls))
        elif not self._pending(cls, feed):
            self.statuses[cls] = SUSPENDED
            emitted.append(self._emit("suspended", cls))
        return emitted

    def run(self, feed: DataFeed) -> ClassificationReport:
        """Step until the agenda stays empty or the step limit trips."""
        while True:
            if self.steps >= self.config.max_steps:
                raise StepLimitExceededError(
                    f"no quiescence after {self.steps} steps")
            if not self.step(feed):
                break
        return self.report()

    def report(self) -> ClassificationReport:
        established = [c for c, s in sorted(self.statuses.items()) if s == ESTABLISHED]
        most_specific = [
            c for c in established
            if not any(d != c and self.statuses[d] == ESTABLISHED
                       and set(self.tax.members(d)) < set(self.tax.members(c))
                       for d in established)
        ]
        return ClassificationReport(
            taxonomy=self.tax.spec.name,
            most_specific=most_specific,
            statuses=dict(sorted(self.statuses.items())),
            class_beliefs={c: self.tax.class_belief(c) for c in sorted(self.tax.spec.classes)},
            weights=dict(sorted(self.tax.singleton_beliefs().items())),
            events=list(self.events),
            steps=self.steps,
        )

    def suggest_evidence(self, cls: str) -> engine.ImpactReport:
        """Impact ranking inside the class's knowledge group, against its
        report node: which observation to chase next."""
        binding = self.bindings.get(cls)
        if binding is None:
            raise UnboundClassError(f"class {cls!r} has no knowledge group", cls=cls)
        return self.session_for(cls).impact(binding.node)
