"""HTTP session service over a compiled model.

JSON API (all bodies and responses are JSON):

    GET    /model                                  model summary
    POST   /sessions {kind, name}                  open network/classifier session
    GET    /sessions/{id}                          handle info
    GET    /sessions/{id}/snapshot                 full state, save-to-disk friendly
    DELETE /sessions/{id}
    GET    /sessions/{id}/beliefs
    POST   /sessions/{id}/evidence {node, value | likelihood, revision?}
    DELETE /sessions/{id}/evidence/{node}
    GET    /sessions/{id}/mpe
    GET    /sessions/{id}/impact?target=X
    POST   /sessions/{id}/whatif {findings: [{node, value|likelihood}, ...]}
    POST   /sessions/{id}/step {findings?: [...]}  classifier sessions
    GET    /sessions/{id}/trace                    classifier sessions
    POST   /diagrams/{name}/solve {evidence?, prune?}

Errors: 404 unknown id/name, 409 conflicting instantiation or stale
revision, 422 invalid finding or inconsistent evidence, all as
``{"kind": ..., "message": ...}``. Requests to distinct sessions run
concurrently; a session's requests are serialized, and mutating calls may
carry the revision they expect to guard against lost updates.
"""

from __future__ import annotations

import itertools
import threading
from typing import Optional

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from . import engine, influence
from .classifier import Controller, ControllerConfig, DataFeed, FeedItem
from .compiler import CompiledModel
from .model import Instantiated
from .errors import (
    BartError,
    ConflictingInstantiationError,
    StaleRevisionError,
    UnknownNetworkError,
)

_CONFLICT = (ConflictingInstantiationError, StaleRevisionError)


class EvidenceBody(BaseModel):
    node: str
    value: Optional[str] = None
    likelihood: Optional[list[float]] = None
    revision: Optional[int] = None

    def finding(self):
        if (self.value is None) == (self.likelihood is None):
            raise BartError("exactly one of value or likelihood is required")
        return self.value if self.value is not None else self.likelihood


class WhatIfBody(BaseModel):
    findings: list[EvidenceBody]


class StepBody(BaseModel):
    findings: Optional[list[dict]] = None
    revision: Optional[int] = None


class SolveBody(BaseModel):
    evidence: Optional[dict] = None
    prune: bool = True


class SessionBody(BaseModel):
    kind: str
    name: str
    tau_establish: Optional[float] = None
    tau_reject: Optional[float] = None


class _Handle:
    _ids = itertools.count(1)

    def __init__(self, kind: str, name: str, worker):
        self.id = f"s{next(_Handle._ids)}"
        self.kind = kind
        self.name = name
        self.worker = worker  # engine.Session or classifier Controller
        self.lock = threading.Lock()
        self.feed = DataFeed() if kind == "classifier" else None

    @property
    def revision(self) -> int:
        if self.kind == "network":
            return self.worker.revision
        return self.worker.steps

    def info(self) -> dict:
        return {"id": self.id, "kind": self.kind, "name": self.name,
                "revision": self.revision}


def _beliefs_json(session: engine.Session) -> dict:
    return {name: [float(x) for x in vec] for name, vec in session.beliefs().items()}


def create_app(compiled: CompiledModel, static_dir: Optional[str] = None) -> FastAPI:
    app = FastAPI(title="bart session service")
    registry: dict[str, _Handle] = {}
    registry_lock = threading.Lock()

    @app.exception_handler(BartError)
    async def bart_error(_: Request, err: BartError):
        if isinstance(err, _CONFLICT):
            status = 409
        elif isinstance(err, UnknownNetworkError):
            status = 404
        else:
            status = 422
        return JSONResponse(status_code=status, content=err.to_json())

    def handle(session_id: str) -> _Handle:
        with registry_lock:
            h = registry.get(session_id)
        if h is None:
            raise UnknownNetworkError(f"no session {session_id!r}")
        return h

    def check_revision(h: _Handle, expected: Optional[int]):
        if expected is not None and expected != h.revision:
            raise StaleRevisionError(
                f"expected revision {expected}, session is at {h.revision}",
                revision=h.revision)

    @app.get("/model")
    def model_summary():
        return {
            "networks": {
                name: {"nodes": [
                    {"name": n.name, "values": list(n.values), "parents": list(n.parents)}
                    for n in net.source_nodes]}
                for name, net in compiled.networks.items()},
            "taxonomies": {
                name: {"singletons": list(t.singletons),
                       "classes": {c: list(m) for c, m in t.classes.items()}}
                for name, t in compiled.taxonomies.items()},
            "diagrams": {
                name: {"decisions": [{"name": d.name, "alternatives": list(d.alternatives)}
                                     for d in dia.decisions],
                       "chance": [c.name for c in dia.chance]}
                for name, dia in compiled.diagrams.items()},
        }

    @app.post("/sessions", status_code=201)
    def open_session(body: SessionBody):
        if body.kind == "network":
            worker = engine.open_session(compiled, body.name)
        elif body.kind == "classifier":
            kwargs = {}
            if body.tau_establish is not None:
                kwargs["tau_establish"] = body.tau_establish
            if body.tau_reject is not None:
                kwargs["tau_reject"] = body.tau_reject
            worker = Controller(compiled, body.name, ControllerConfig(**kwargs))
        else:
            raise BartError(f"unknown session kind {body.kind!r}")
        h = _Handle(body.kind, body.name, worker)
        with registry_lock:
            registry[h.id] = h
        return h.info()

    @app.get("/sessions/{session_id}")
    def session_info(session_id: str):
        return handle(session_id).info()

    @app.delete("/sessions/{session_id}")
    def close_session(session_id: str):
        h = handle(session_id)
        with registry_lock:
            registry.pop(h.id, None)
        return {"closed": h.id}

    @app.get("/sessions/{session_id}/snapshot")
    def snapshot(session_id: str):
        """Full session state as JSON, for saving to disk and inspection."""
        h = handle(session_id)
        with h.lock:
            if h.kind == "network":
                worker: engine.Session = h.worker
                evidence = {}
                for node, finding in worker.evidence.items():
                    if isinstance(finding, Instantiated):
                        evidence[node] = {"value": finding.value}
                    else:
                        evidence[node] = {"likelihood": finding.weights.tolist()}
                return {**h.info(), "evidence": evidence,
                        "beliefs": _beliefs_json(worker)}
            ctl: Controller = h.worker
            return {**h.info(), "report": ctl.report().to_json()}

    @app.get("/sessions/{session_id}/beliefs")
    def beliefs(session_id: str):
        h = handle(session_id)
        with h.lock:
            if h.kind == "network":
                return {"revision": h.revision, "beliefs": _beliefs_json(h.worker)}
            ctl: Controller = h.worker
            return {"revision": h.revision,
                    "classes": {c: {"belief": ctl.tax.class_belief(c),
                                    "status": ctl.statuses[c]}
                                for c in sorted(ctl.tax.spec.classes)},
                    "weights": ctl.tax.singleton_beliefs()}

    @app.post("/sessions/{session_id}/evidence")
    def assert_evidence(session_id: str, body: EvidenceBody):
        h = handle(session_id)
        if h.kind != "network":
            raise BartError("evidence endpoint is for network sessions")
        with h.lock:
            check_revision(h, body.revision)
            deltas = h.worker.assert_evidence(body.node, body.finding())
            return {"revision": h.revision, "deltas": deltas,
                    "beliefs": _beliefs_json(h.worker)}

    @app.delete("/sessions/{session_id}/evidence/{node}")
    def retract_evidence(session_id: str, node: str):
        h = handle(session_id)
        if h.kind != "network":
            raise BartError("evidence endpoint is for network sessions")
        with h.lock:
            deltas = h.worker.retract_evidence(node)
            return {"revision": h.revision, "deltas": deltas,
                    "beliefs": _beliefs_json(h.worker)}

    @app.get("/sessions/{session_id}/mpe")
    def mpe(session_id: str):
        h = handle(session_id)
        with h.lock:
            assignment, probability = h.worker.mpe()
            return {"assignment": assignment, "probability": probability}

    @app.get("/sessions/{session_id}/impact")
    def impact(session_id: str, target: str, metric: Optional[str] = None):
        h = handle(session_id)
        with h.lock:
            report = h.worker.impact(target, metric=metric)
            return report.to_json()

    @app.post("/sessions/{session_id}/whatif")
    def whatif(session_id: str, body: WhatIfBody):
        h = handle(session_id)
        if h.kind != "network":
            raise BartError("what-if endpoint is for network sessions")
        with h.lock:
            findings = [(f.node, f.finding()) for f in body.findings]
            hypo = h.worker.whatif(findings)
            return {"revision": h.revision,
                    "hypothetical": {k: [float(x) for x in v] for k, v in hypo.items()},
                    "beliefs": _beliefs_json(h.worker)}

    @app.post("/sessions/{session_id}/step")
    def step(session_id: str, body: StepBody):
        h = handle(session_id)
        if h.kind != "classifier":
            raise BartError("step endpoint is for classifier sessions")
        with h.lock:
            check_revision(h, body.revision)
            for obj in body.findings or []:
                h.feed.push(FeedItem.from_json(obj))
            events = h.worker.step(h.feed)
            return {"revision": h.revision, "events": events,
                    "report": h.worker.report().to_json()}

    @app.get("/sessions/{session_id}/trace")
    def trace(session_id: str):
        h = handle(session_id)
        if h.kind != "classifier":
            raise BartError("trace endpoint is for classifier sessions")
        with h.lock:
            return {"revision": h.revision, "events": h.worker.events,
                    "report": h.worker.report().to_json()}

    @app.post("/diagrams/{name}/solve")
    def solve_diagram(name: str, body: SolveBody):
        try:
            diagram = compiled.diagrams[name]
        except KeyError:
            raise UnknownNetworkError(f"no diagram named {name!r}") from None
        result = influence.solve(diagram, evidence=body.evidence, prune=body.prune)
        return result.to_json()

    if static_dir:
        app.mount("/", StaticFiles(directory=static_dir, html=True), name="ui")

    return app
