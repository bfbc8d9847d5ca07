"""Batch command-line interface.

Results go to stdout as JSON; diagnostics go to stderr. Exit codes:
0 success, 1 usage, 2 compile or semantic error, 3 runtime inference error.
"""

from __future__ import annotations

import json
import os
import sys
from typing import Optional

import click

from . import compiler, engine, influence, lang
from .classifier import Controller, ControllerConfig, DataFeed
from .errors import (
    BadMagicError,
    BartError,
    BartSemanticError,
    BartSyntaxError,
    ClusterTooLargeError,
    CompileError,
    CorruptTensorError,
    UnknownNetworkError,
    UnknownNodeError,
    UnknownValueError,
    VersionMismatchError,
)

# exit 2: the invocation or the model is wrong; exit 3: inference failed
_COMPILE_ERRORS = (BartSyntaxError, BartSemanticError, CompileError,
                   BadMagicError, CorruptTensorError, VersionMismatchError,
                   ClusterTooLargeError, UnknownNetworkError, UnknownNodeError,
                   UnknownValueError)


def _print(payload) -> None:
    click.echo(json.dumps(payload, sort_keys=True))


def _load_model(path: str) -> compiler.CompiledModel:
    with open(path, "rb") as fh:
        return compiler.load(fh.read())


def _parse_findings(spec: Optional[str]) -> list[tuple[str, object]]:
    """``a=v,b=w`` instantiates; ``a=0.9:0.1`` enters a likelihood."""
    out: list[tuple[str, object]] = []
    if not spec:
        return out
    for part in spec.split(","):
        part = part.strip()
        if not part:
            continue
        if "=" not in part:
            raise click.UsageError(f"finding {part!r} is not node=value")
        node, _, value = part.partition("=")
        if ":" in value:
            weights = [float(x) for x in value.split(":")]
            out.append((node.strip(), weights))
        else:
            out.append((node.strip(), value.strip()))
    return out


@click.group()
def cli():
    """Belief-network toolkit: compile models, query sessions, solve
    decision problems, run classifications, serve the HTTP API."""


@cli.command("compile")
@click.argument("source", type=click.Path(exists=True, dir_okay=False))
@click.option("-o", "--output", type=click.Path(dir_okay=False), default=None,
              help="Output path; defaults to the source with a .bartc suffix.")
@click.option("--max-cluster-states", type=int, default=compiler.MAX_CLUSTER_STATES,
              show_default=True, help="Aggregation guard: refuse larger compounds.")
def compile_cmd(source: str, output: Optional[str], max_cluster_states: int):
    """Compile a .bart model file into a .bartc compiled model."""
    options = compiler.CompileOptions(max_cluster_states=max_cluster_states)
    compiled = compiler.compile_file(source, options)
    if output is None:
        base, _ = os.path.splitext(source)
        output = base + ".bartc"
    with open(output, "wb") as fh:
        fh.write(compiler.save(compiled))
    _print({"compiled": output,
            "networks": sorted(compiled.networks),
            "taxonomies": sorted(compiled.taxonomies),
            "diagrams": sorted(compiled.diagrams)})


@cli.command("query")
@click.argument("model", type=click.Path(exists=True, dir_okay=False))
@click.option("--network", required=True)
@click.option("--evidence", default=None, help="a=v,b=w or a=0.9:0.1 for likelihoods.")
@click.option("--node", "node_", default=None, help="Report one node instead of all.")
@click.option("--mpe", is_flag=True, help="Also report the most probable explanation.")
@click.option("--impact", "impact_target", default=None,
              help="Also rank uninstantiated nodes by impact on this target.")
def query_cmd(model, network, evidence, node_, mpe, impact_target):
    """Assert evidence on a network and print posterior beliefs."""
    session = engine.open_session(_load_model(model), network)
    for node, finding in _parse_findings(evidence):
        session.assert_evidence(node, finding)
    if node_ is not None:
        payload = {node_: [float(x) for x in session.beliefs(node_)]}
    else:
        payload = {name: [float(x) for x in vec] for name, vec in session.beliefs().items()}
    if mpe:
        assignment, probability = session.mpe()
        payload = {"beliefs": payload, "mpe": {"assignment": assignment,
                                               "probability": probability}}
    if impact_target is not None:
        report = session.impact(impact_target)
        if isinstance(payload, dict) and "beliefs" not in payload:
            payload = {"beliefs": payload}
        payload["impact"] = report.to_json()
    _print(payload)


@cli.command("solve")
@click.argument("model", type=click.Path(exists=True, dir_okay=False))
@click.option("--diagram", required=True)
@click.option("--evidence", default=None)
@click.option("--no-prune", is_flag=True, help="Disable branch-and-bound pruning.")
def solve_cmd(model, diagram, evidence, no_prune):
    """Solve an influence diagram: optimal policy and expected utility."""
    compiled = _load_model(model)
    try:
        spec = compiled.diagrams[diagram]
    except KeyError:
        raise BartError(f"no diagram named {diagram!r}") from None
    ev = {node: finding for node, finding in _parse_findings(evidence)}
    result = influence.solve(spec, evidence=ev or None, prune=not no_prune)
    _print(result.to_json())


@cli.command("classify")
@click.argument("model", type=click.Path(exists=True, dir_okay=False))
@click.option("--taxonomy", required=True)
@click.option("--feed", "feed_path", required=True,
              type=click.Path(exists=True, dir_okay=False),
              help="JSON-lines findings file, consumed in order.")
@click.option("--tau-establish", type=float, default=0.8, show_default=True)
@click.option("--tau-reject", type=float, default=0.1, show_default=True)
@click.option("--trace", "trace_path", type=click.Path(dir_okay=False), default=None,
              help="Also write the full event trace to this file.")
def classify_cmd(model, taxonomy, feed_path, tau_establish, tau_reject, trace_path):
    """Run establish-refine classification against a data feed."""
    compiled = _load_model(model)
    with open(feed_path, "r", encoding="utf-8") as fh:
        feed = DataFeed.from_jsonl(fh.read())
    config = ControllerConfig(tau_establish=tau_establish, tau_reject=tau_reject)
    controller = Controller(compiled, taxonomy, config)
    report = controller.run(feed)
    if trace_path:
        with open(trace_path, "w", encoding="utf-8") as fh:
            json.dump(report.to_json(), fh, indent=1, sort_keys=True)
            fh.write("\n")
    _print(report.to_json())


@cli.command("repl")
@click.argument("model", type=click.Path(exists=True, dir_okay=False))
@click.option("--network", default=None, help="Network to open immediately.")
def repl_cmd(model, network):
    """Interactive session: open, assert, retract, beliefs, mpe, impact."""
    compiled = _load_model(model)
    session = engine.open_session(compiled, network) if network else None
    click.echo("commands: open N | assert X=v | retract X | beliefs [X] | "
               "mpe | impact T | quit", err=True)
    while True:
        try:
            line = input("bart> ").strip()
        except EOFError:
            break
        if not line:
            continue
        cmd, _, arg = line.partition(" ")
        arg = arg.strip()
        try:
            if cmd == "quit":
                break
            elif cmd == "open":
                session = engine.open_session(compiled, arg)
                _print({"opened": arg})
            elif session is None:
                click.echo("no open session; use: open <network>", err=True)
            elif cmd == "assert":
                for node, finding in _parse_findings(arg):
                    deltas = session.assert_evidence(node, finding)
                    _print({"deltas": deltas})
            elif cmd == "retract":
                _print({"deltas": session.retract_evidence(arg)})
            elif cmd == "beliefs":
                if arg:
                    _print({arg: [float(x) for x in session.beliefs(arg)]})
                else:
                    _print({k: [float(x) for x in v] for k, v in session.beliefs().items()})
            elif cmd == "mpe":
                assignment, p = session.mpe()
                _print({"assignment": assignment, "probability": p})
            elif cmd == "impact":
                _print(session.impact(arg).to_json())
            else:
                click.echo(f"unknown command {cmd!r}", err=True)
        except BartError as err:
            click.echo(json.dumps(err.to_json()), err=True)
    return


@cli.command("serve")
@click.argument("model", type=click.Path(exists=True, dir_okay=False))
@click.option("--port", type=int, default=None,
              help="Port; overrides BART_PORT (default 8023).")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--static", "static_dir", type=click.Path(exists=True, file_okay=False),
              default=None, help="Serve this directory (the UI build) at /.")
def serve_cmd(model, port, host, static_dir):
    """Serve the HTTP session API (and optionally the browser UI)."""
    import uvicorn

    from .service import create_app

    compiled = _load_model(model)
    app = create_app(compiled, static_dir=static_dir)
    if port is None:
        port = int(os.environ.get("BART_PORT", "8023"))
    level = os.environ.get("BART_LOG", "info")
    uvicorn.run(app, host=host, port=port, log_level=level)


def main(argv: Optional[list[str]] = None) -> int:
    """Entry point with the documented exit codes."""
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return 1
    except click.UsageError as err:
        click.echo(f"usage error: {err.format_message()}", err=True)
        return 1
    except _COMPILE_ERRORS as err:
        click.echo(json.dumps(err.to_json()), err=True)
        return 2
    except BartError as err:
        click.echo(json.dumps(err.to_json()), err=True)
        return 3


if __name__ == "__main__":
    sys.exit(main())
