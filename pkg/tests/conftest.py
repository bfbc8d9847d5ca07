import pathlib

import pytest

from bart import compiler, lang, model

ROOT = pathlib.Path(__file__).resolve().parent.parent
MODELS = ROOT / "models"
GOLDEN = pathlib.Path(__file__).resolve().parent / "golden"

CHAIN2_SRC = (MODELS / "chain2.bart").read_text()
DIAMOND_SRC = (MODELS / "diamond.bart").read_text()


@pytest.fixture(scope="session")
def chain2_net() -> model.BeliefNetwork:
    return compiler.resolve_network(lang.parse(CHAIN2_SRC).networks["chain2"])


@pytest.fixture(scope="session")
def diamond_net() -> model.BeliefNetwork:
    return compiler.resolve_network(lang.parse(DIAMOND_SRC).networks["diamond"])


@pytest.fixture(scope="session")
def fixture_sources() -> dict[str, str]:
    return {p.name: p.read_text() for p in sorted(MODELS.glob("*.bart"))}


@pytest.fixture(scope="session")
def compiled_all() -> compiler.CompiledModel:
    """All shipped fixtures compiled into one model."""
    text = "\n".join(p.read_text() for p in sorted(MODELS.glob("*.bart")))
    return compiler.compile_modelset(lang.parse(text))
