import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bart import model
from bart.errors import InconsistentEvidenceError

from .generators import random_evidence, random_polytree

TOL = 1e-9


def chain2_with(cpt_row0=(0.9, 0.1)):
    a = model.Node(model.Variable("A", ("t", "f")), (), model.Prior([0.3, 0.7]))
    b = model.Node(model.Variable("B", ("t", "f")), ("A",),
                   model.Cpt([list(cpt_row0), [0.2, 0.8]]))
    return model.BeliefNetwork("chain2", [a, b])


class TestValidate:
    def test_valid_fixture(self, chain2_net):
        assert model.validate(chain2_net) == []

    def test_two_node_cycle(self):
        a = model.Node(model.Variable("A", ("t", "f")), ("B",),
                       model.Cpt([[0.5, 0.5], [0.5, 0.5]]))
        b = model.Node(model.Variable("B", ("t", "f")), ("A",),
                       model.Cpt([[0.9, 0.1], [0.2, 0.8]]))
        diags = model.validate(model.BeliefNetwork("n", [a, b]))
        assert [d.kind for d in diags] == ["cycle"]

    def test_bad_row_sum(self):
        diags = model.validate(chain2_with(cpt_row0=(0.9, 0.2)))
        assert [d.kind for d in diags] == ["bad-row-sum"]
        assert diags[0].where == "B"

    def test_duplicate_name(self):
        a1 = model.Node(model.Variable("A", ("t", "f")), (), model.Prior([0.3, 0.7]))
        a2 = model.Node(model.Variable("A", ("t", "f")), (), model.Prior([0.5, 0.5]))
        diags = model.validate(model.BeliefNetwork("n", [a1, a2]))
        assert "duplicate-name" in [d.kind for d in diags]

    def test_arity_mismatch(self):
        bad = chain2_with()
        bad.nodes[1].quantification = model.Cpt(np.full((3, 2), 0.5))
        assert [d.kind for d in model.validate(bad)] == ["arity-mismatch"]


class TestJointEnumerate:
    def test_root_prior_returned(self, chain2_net):
        np.testing.assert_allclose(
            model.joint_enumerate(chain2_net, model.Evidence(), "A"), [0.3, 0.7], atol=0)

    def test_marginal_of_child(self, chain2_net):
        # 0.3 * 0.9 + 0.7 * 0.2 by hand
        np.testing.assert_allclose(
            model.joint_enumerate(chain2_net, model.Evidence(), "B"),
            [0.41, 0.59], atol=TOL)

    def test_posterior_given_child(self, chain2_net):
        ev = model.Evidence({"B": model.Instantiated("t")})
        np.testing.assert_allclose(
            model.joint_enumerate(chain2_net, ev, "A"),
            [0.27 / 0.41, 0.14 / 0.41], atol=TOL)

    def test_inconsistent_evidence_raises(self):
        net = chain2_with(cpt_row0=(1.0, 0.0))
        ev = model.Evidence({"A": model.Instantiated("t"),
                             "B": model.Instantiated("f")})
        with pytest.raises(InconsistentEvidenceError):
            model.joint_enumerate(net, ev, "A")

    def test_sums_to_one_random(self):
        rng = np.random.default_rng(7)
        for _ in range(25):
            net = random_polytree(rng, max_nodes=8)
            ev = random_evidence(rng, net)
            for node in net.nodes:
                vec = model.joint_enumerate(net, ev, node.name)
                assert abs(vec.sum() - 1.0) <= TOL


class TestJointMpe:
    def test_with_child_evidence(self, chain2_net):
        ev = model.Evidence({"B": model.Instantiated("t")})
        assignment, p = model.joint_mpe(chain2_net, ev)
        assert assignment == {"A": "t", "B": "t"}
        assert p == pytest.approx(0.27, abs=0)

    def test_no_evidence(self, chain2_net):
        assignment, p = model.joint_mpe(chain2_net, model.Evidence())
        assert assignment == {"A": "f", "B": "f"}
        assert p == pytest.approx(0.7 * 0.8, abs=TOL)

    def test_fully_instantiated(self, chain2_net):
        ev = model.Evidence({"A": model.Instantiated("f"), "B": model.Instantiated("t")})
        assignment, p = model.joint_mpe(chain2_net, ev)
        assert assignment == {"A": "f", "B": "t"}
        assert p == pytest.approx(0.14, abs=TOL)

    def test_probability_is_joint_product_exactly(self):
        rng = np.random.default_rng(11)
        for _ in range(25):
            net = random_polytree(rng, max_nodes=7)
            ev = random_evidence(rng, net)
            assignment, p = model.joint_mpe(net, ev)
            assert p == model.joint_score(net, ev, assignment)
            assert p <= 1.0 + 1e-12

    def test_tie_breaks_lexicographic(self):
        a = model.Node(model.Variable("A", ("x", "y")), (), model.Prior([0.5, 0.5]))
        net = model.BeliefNetwork("n", [a])
        assignment, _ = model.joint_mpe(net, model.Evidence())
        assert assignment == {"A": "x"}


# exact zeros are meaningful (hard exclusion); tiny denormals are not, and
# only test float underflow rather than the scale-freeness property
_weight = st.one_of(st.just(0.0), st.floats(1e-3, 5.0))


@given(weights=st.lists(_weight, min_size=2, max_size=2).filter(lambda w: sum(w) > 0))
@settings(max_examples=50, deadline=None)
def test_virtual_evidence_scale_free(weights):
    net = chain2_with()
    ev1 = model.Evidence({"B": model.Virtual(weights)})
    ev2 = model.Evidence({"B": model.Virtual([w * 7.5 for w in weights])})
    try:
        p1 = model.joint_enumerate(net, ev1, "A")
    except InconsistentEvidenceError:
        with pytest.raises(InconsistentEvidenceError):
            model.joint_enumerate(net, ev2, "A")
        return
    p2 = model.joint_enumerate(net, ev2, "A")
    np.testing.assert_allclose(p1, p2, atol=1e-12)
