import numpy as np
import pytest

from bart import compiler, lang, model
from bart.errors import DegenerateUtilityError, TooManyPathsError
from bart.influence import (
    InfluenceDiagram,
    UtilitySpec,
    evaluate_policy,
    solve,
    to_belief_network,
    validate_diagram,
)

from .generators import enumerate_policy_oracle, random_diagram

TOL = 1e-9

ONESHOT_SRC = """
diagram one_shot {
  decision D { alternatives: [d1, d2]; }
  node C { values: [c1, c2]; prior: [0.6, 0.4]; }
  value V { parents: [D, C]; table: {10, 0; 5, 5}; }
}
"""


@pytest.fixture(scope="module")
def oneshot() -> InfluenceDiagram:
    return compiler.compile_modelset(lang.parse(ONESHOT_SRC)).diagrams["one_shot"]


class TestConversion:
    def test_affine_scaling(self, oneshot):
        net, scaling = to_belief_network(oneshot)
        assert scaling.offset == 0.0 and scaling.range == 10.0
        v = net.by_name["V"]
        np.testing.assert_allclose(v.quantification.tensor[..., 0],
                                   [[1.0, 0.0], [0.5, 0.5]], atol=0)

    def test_converted_network_validates(self, oneshot):
        net, _ = to_belief_network(oneshot)
        assert model.validate(net) == []

    def test_decisions_become_uniform_roots(self, oneshot):
        net, _ = to_belief_network(oneshot)
        d = net.by_name["D"]
        assert d.parents == ()
        np.testing.assert_allclose(d.quantification.table, [0.5, 0.5], atol=0)

    def test_degenerate_utility(self):
        dia = InfluenceDiagram(
            "flat", [], [next(iter(compiler.compile_modelset(
                lang.parse(ONESHOT_SRC)).diagrams.values())).decisions[0]],
            UtilitySpec("V", ("D",), np.array([7.0, 7.0])))
        with pytest.raises(DegenerateUtilityError):
            to_belief_network(dia)
        result = solve(dia)
        assert result.expected_utility == 7.0
        assert result.policy == {"D": {"": "d1"}}


class TestSolve:
    def test_oneshot(self, oneshot):
        result = solve(oneshot, prune=False)
        assert result.action("D") == "d1"
        assert result.expected_utility == pytest.approx(6.0, abs=TOL)

    def test_prune_equivalent(self, oneshot):
        on, off = solve(oneshot, prune=True), solve(oneshot, prune=False)
        assert on.policy == off.policy
        assert on.expected_utility == pytest.approx(off.expected_utility, abs=TOL)
        assert on.paths_pruned >= 0

    def test_evidence_changes_action(self, oneshot):
        result = solve(oneshot, evidence={"C": "c2"})
        assert result.action("D") == "d2"
        assert result.expected_utility == pytest.approx(5.0, abs=TOL)

    def test_prune_actually_fires_when_max_is_hit(self):
        # first alternative deterministically achieves the maximum utility,
        # so every later alternative is bounded out
        src = """
        diagram sure {
          decision D { alternatives: [best, worse, worst]; }
          value V { parents: [D]; table: {10; 3; 1}; }
        }
        """
        dia = compiler.compile_modelset(lang.parse(src)).diagrams["sure"]
        on, off = solve(dia, prune=True), solve(dia, prune=False)
        assert on.expected_utility == off.expected_utility == 10.0
        assert on.action("D") == off.action("D") == "best"
        assert on.paths_pruned == 2
        assert on.paths_expanded == 1

    def test_observation_stage(self):
        src = """
        diagram observed {
          node C { values: [c1, c2]; prior: [0.6, 0.4]; }
          decision D { alternatives: [d1, d2]; informed_by: [C]; }
          value V { parents: [D, C]; table: {10, 0; 5, 5}; }
        }
        """
        dia = compiler.compile_modelset(lang.parse(src)).diagrams["observed"]
        result = solve(dia)
        # seeing C lets the decision split: d1 when c1, d2 when c2
        assert result.policy["D"] == {"C=c1": "d1", "C=c2": "d2"}
        assert result.expected_utility == pytest.approx(0.6 * 10 + 0.4 * 5, abs=TOL)

    def test_path_cap(self, oneshot):
        with pytest.raises(TooManyPathsError):
            solve(oneshot, max_leaves=1)


class TestEvaluatePolicy:
    def test_constant_policies(self, oneshot):
        assert evaluate_policy(oneshot, {"D": "d1"}) == pytest.approx(6.0, abs=TOL)
        assert evaluate_policy(oneshot, {"D": "d2"}) == pytest.approx(5.0, abs=TOL)

    def test_solve_policy_reproduces_eu(self, oneshot):
        result = solve(oneshot)
        assert evaluate_policy(oneshot, result.policy) == pytest.approx(
            result.expected_utility, abs=TOL)

    def test_value_between_extremes(self, oneshot):
        lo = min(evaluate_policy(oneshot, {"D": a}) for a in ("d1", "d2"))
        hi = max(evaluate_policy(oneshot, {"D": a}) for a in ("d1", "d2"))
        mixed = evaluate_policy(oneshot, {"D": {"": "d1"}})
        assert lo - TOL <= mixed <= hi + TOL


class TestValidation:
    def test_value_node_cannot_have_children(self):
        src = """
        diagram bad {
          decision D { alternatives: [a, b]; }
          node C { values: [x, y]; parents: [V]; cpt: {1, 0; 0, 1}; }
          value V { parents: [D]; table: {1; 2}; }
        }
        """
        with pytest.raises(compiler.CompileError) as err:
            compiler.compile_modelset(lang.parse(src))
        assert any("value node" in d.message for d in err.value.diagnostics)

    def test_table_size_checked(self):
        src = """
        diagram bad {
          decision D { alternatives: [a, b]; }
          value V { parents: [D]; table: {1; 2; 3}; }
        }
        """
        with pytest.raises(compiler.CompileError) as err:
            compiler.compile_modelset(lang.parse(src))
        assert any(d.kind == "arity-mismatch" for d in err.value.diagnostics)

    def test_informed_by_must_be_chance(self):
        src = """
        diagram bad {
          decision D1 { alternatives: [a, b]; }
          decision D2 { alternatives: [a, b]; informed_by: [D1]; }
          value V { parents: [D2]; table: {1; 2}; }
        }
        """
        with pytest.raises(compiler.CompileError) as err:
            compiler.compile_modelset(lang.parse(src))
        assert any(d.kind == "unresolved-reference" for d in err.value.diagnostics)

    def test_diagram_validate_clean(self, oneshot):
        assert validate_diagram(oneshot) == []


def assert_policies_agree(on, off):
    """Pruned solves skip subtrees that provably cannot win, so their policy
    map may cover fewer information states; every state both explored must
    carry the same action."""
    assert set(on.policy) == set(off.policy)
    for decision, states in on.policy.items():
        for info, action in states.items():
            assert off.policy[decision][info] == action, (decision, info)


class TestRandomDiagrams:
    def test_prune_equivalence_and_oracle(self):
        rng = np.random.default_rng(41)
        for _ in range(15):
            dia = random_diagram(rng)
            off = solve(dia, prune=False)
            on = solve(dia, prune=True)
            assert_policies_agree(on, off)
            assert on.expected_utility == pytest.approx(off.expected_utility, abs=TOL)
            assert on.paths_pruned >= 0
            _, oracle_eu = enumerate_policy_oracle(dia)
            assert off.expected_utility == pytest.approx(oracle_eu, abs=TOL)

    def test_affine_invariance(self):
        rng = np.random.default_rng(42)
        for _ in range(8):
            dia = random_diagram(rng)
            a, b = float(rng.uniform(0.5, 3.0)), float(rng.uniform(-40, 40))
            scaled = InfluenceDiagram(
                dia.name, dia.chance, dia.decisions,
                UtilitySpec(dia.utility.name, dia.utility.parents,
                            a * dia.utility.table + b))
            base = solve(dia, prune=False)
            moved = solve(scaled, prune=False)
            assert moved.expected_utility == pytest.approx(
                a * base.expected_utility + b, abs=1e-7)
            assert_policies_agree(moved, base)
