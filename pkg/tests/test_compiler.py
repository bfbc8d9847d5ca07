import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bart import compiler, lang, model
from bart.compiler import GateSpec, aggregate, detect_loops, expand_gate
from bart.errors import (
    BadMagicError,
    ClusterTooLargeError,
    CompileError,
    CorruptTensorError,
    VersionMismatchError,
)

from .generators import dirichlet_rows, random_evidence, random_loopy

TOL = 1e-9


def binary_vars(n):
    return [model.Variable(f"u{i}", ("t", "f")) for i in range(n)]


def or_oracle(strengths, leak, states):
    """Product-of-inhibitors closed form, written independently."""
    q = 1.0 - leak
    for c, present in zip(strengths, states):
        if present:
            q *= 1.0 - c
    return 1.0 - q


class TestExpandGate:
    def test_noisy_or_both_present(self):
        parents = binary_vars(2)
        child = model.Variable("x", ("t", "f"))
        cpt = expand_gate(GateSpec("noisy_or", {"u0": 0.8, "u1": 0.9}), parents, child)
        assert cpt.tensor[0, 0, 0] == pytest.approx(0.98, abs=TOL)

    def test_noisy_or_all_absent_no_leak(self):
        parents = binary_vars(3)
        child = model.Variable("x", ("t", "f"))
        cpt = expand_gate(GateSpec("noisy_or", {"u0": 0.8, "u1": 0.9, "u2": 0.4}),
                          parents, child)
        assert cpt.tensor[1, 1, 1, 0] == 0.0

    def test_noisy_or_matches_inhibitor_oracle(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            n = int(rng.integers(1, 5))
            strengths = rng.uniform(0, 1, size=n)
            leak = float(rng.uniform(0, 0.5))
            parents = binary_vars(n)
            child = model.Variable("x", ("t", "f"))
            spec = GateSpec("noisy_or", {f"u{i}": float(s) for i, s in enumerate(strengths)},
                            leak)
            tensor = spec.expand(child, parents)
            for states in itertools.product([True, False], repeat=n):
                idx = tuple(0 if s else 1 for s in states)
                want = or_oracle(strengths, leak, states)
                assert tensor[idx + (0,)] == pytest.approx(want, abs=TOL)

    def test_noisy_and_demorgan_dual(self):
        rng = np.random.default_rng(4)
        n = 3
        strengths = {f"u{i}": float(rng.uniform(0, 1)) for i in range(n)}
        parents = binary_vars(n)
        child = model.Variable("x", ("t", "f"))
        and_t = GateSpec("noisy_and", strengths).expand(child, parents)
        for states in itertools.product([True, False], repeat=n):
            idx = tuple(0 if s else 1 for s in states)
            want = 1.0
            for i, present in enumerate(states):
                if not present:
                    want *= 1.0 - strengths[f"u{i}"]
            assert and_t[idx + (0,)] == pytest.approx(want, abs=TOL)

    def test_noisy_max_single_parent_no_leak_is_identity(self):
        parent = model.Variable("u0", ("a", "b", "c"))
        child = model.Variable("x", ("hi", "mid", "lo"))
        rows = dirichlet_rows(np.random.default_rng(5), 3, 3)
        tensor = GateSpec("noisy_max", {"u0": rows}).expand(child, [parent])
        np.testing.assert_allclose(tensor, rows, atol=TOL)

    def test_noisy_max_brute_force(self):
        # enumerate candidate draws directly as the independent oracle
        rng = np.random.default_rng(6)
        p1 = model.Variable("u0", ("a", "b"))
        p2 = model.Variable("u1", ("a", "b", "c"))
        child = model.Variable("x", ("s0", "s1", "s2"))
        t1 = dirichlet_rows(rng, 2, 3)
        t2 = dirichlet_rows(rng, 3, 3)
        leak = dirichlet_rows(rng, 1, 3)[0]
        tensor = GateSpec("noisy_max", {"u0": t1, "u1": t2}, leak).expand(child, [p1, p2])
        for i, j in itertools.product(range(2), range(3)):
            dist = np.zeros(3)
            for d1, d2, dl in itertools.product(range(3), repeat=3):
                dist[min(d1, d2, dl)] += t1[i, d1] * t2[j, d2] * leak[dl]
            np.testing.assert_allclose(tensor[i, j], dist, atol=TOL)

    def test_noisy_min_brute_force(self):
        rng = np.random.default_rng(7)
        p1 = model.Variable("u0", ("a", "b"))
        child = model.Variable("x", ("s0", "s1", "s2"))
        t1 = dirichlet_rows(rng, 2, 3)
        leak = dirichlet_rows(rng, 1, 3)[0]
        tensor = GateSpec("noisy_min", {"u0": t1}, leak).expand(child, [p1])
        for i in range(2):
            dist = np.zeros(3)
            for d1, dl in itertools.product(range(3), repeat=2):
                dist[max(d1, dl)] += t1[i, d1] * leak[dl]
            np.testing.assert_allclose(tensor[i], dist, atol=TOL)

    def test_bool_and_truth_table(self):
        parents = binary_vars(2)
        child = model.Variable("x", ("t", "f"))
        expr = lang.BAnd(lang.BAtom("u0", "t"), lang.BAtom("u1", "t"))
        tensor = GateSpec("bool", {}, expr=expr).expand(child, parents)
        assert tensor[0, 0, 0] == 1.0
        for idx in [(0, 1), (1, 0), (1, 1)]:
            assert tensor[idx + (1,)] == 1.0

    def test_gate_validation_errors(self):
        parents = binary_vars(2)
        child = model.Variable("x", ("t", "f"))
        with pytest.raises(CompileError) as err:
            expand_gate(GateSpec("noisy_or", {"u0": 0.8}), parents, child)
        assert any(d.kind == "arity-mismatch" for d in err.value.diagnostics)
        with pytest.raises(CompileError) as err:
            expand_gate(GateSpec("noisy_or", {"u0": 1.4, "u1": 0.2}), parents, child)
        assert any(d.kind == "unnormalized-parameter" for d in err.value.diagnostics)

    def test_rows_always_normalized_property(self):
        rng = np.random.default_rng(8)
        for kind in ("noisy_or", "noisy_and", "noisy_max", "noisy_min"):
            for _ in range(10):
                from .generators import random_gate_params
                spec, parents, child = random_gate_params(
                    rng, kind, int(rng.integers(1, 5)),
                    child_arity=2 if kind in ("noisy_or", "noisy_and")
                    else int(rng.integers(2, 5)))
                tensor = spec.expand(child, parents)
                sums = tensor.sum(axis=-1)
                np.testing.assert_allclose(sums, np.ones_like(sums), atol=TOL)


class TestDetectLoops:
    def test_chain_has_none(self, chain2_net):
        assert detect_loops(chain2_net) == []

    def test_diamond_single_cycle(self, diamond_net):
        cycles = detect_loops(diamond_net)
        assert len(cycles) == 1
        assert sorted(cycles[0]) == ["A", "B", "C", "D"]

    def test_forest_of_chains(self):
        nodes = []
        for stem in ("a", "b"):
            root = model.Node(model.Variable(f"{stem}0", ("t", "f")), (),
                              model.Prior([0.5, 0.5]))
            leaf = model.Node(model.Variable(f"{stem}1", ("t", "f")), (f"{stem}0",),
                              model.Cpt([[0.9, 0.1], [0.2, 0.8]]))
            nodes += [root, leaf]
        assert detect_loops(model.BeliefNetwork("forest", nodes)) == []


class TestAggregate:
    def test_diamond_merges_interior(self, diamond_net):
        poly, agg = aggregate(diamond_net)
        assert agg.compounds == {"B+C": ("B", "C")}
        names = [n.name for n in poly.nodes]
        assert names == ["A", "B+C", "D"]
        assert poly.by_name["B+C"].parents == ("A",)
        assert poly.by_name["D"].parents == ("B+C",)
        assert poly.by_name["B+C"].variable.arity == 4

    def test_polytree_unchanged(self, chain2_net):
        poly, agg = aggregate(chain2_net)
        assert agg.compounds == {}
        assert [n.name for n in poly.nodes] == ["A", "B"]
        assert np.array_equal(poly.by_name["B"].quantification.tensor,
                              chain2_net.by_name["B"].quantification.tensor)

    def test_diamond_posteriors_match_oracle_20_random(self):
        rng = np.random.default_rng(9)
        for _ in range(20):
            nodes = [
                model.Node(model.Variable("A", ("t", "f")), (),
                           model.Prior(dirichlet_rows(rng, 1, 2)[0])),
                model.Node(model.Variable("B", ("t", "f")), ("A",),
                           model.Cpt(dirichlet_rows(rng, 2, 2).reshape(2, 2))),
                model.Node(model.Variable("C", ("t", "f")), ("A",),
                           model.Cpt(dirichlet_rows(rng, 2, 2).reshape(2, 2))),
                model.Node(model.Variable("D", ("t", "f")), ("B", "C"),
                           model.Cpt(dirichlet_rows(rng, 4, 2).reshape(2, 2, 2))),
            ]
            net = model.BeliefNetwork("dia", nodes)
            poly, agg = aggregate(net)
            assert detect_loops(poly) == []
            # compare every original node's posterior through the compound
            ev = model.Evidence({"D": model.Instantiated("t")})
            poly_ev = model.Evidence({"D": model.Instantiated("t")})
            for name in ("A", "B", "C"):
                want = model.joint_enumerate(net, ev, name)
                if name in agg.member_of:
                    compound, axis = agg.member_of[name]
                    vec = model.joint_enumerate(poly, poly_ev, compound)
                    cube = vec.reshape(2, 2)
                    got = cube.sum(axis=1 - axis)
                else:
                    got = model.joint_enumerate(poly, poly_ev, name)
                np.testing.assert_allclose(got, want, atol=TOL)

    def test_aggregation_terminates_and_forests(self):
        rng = np.random.default_rng(10)
        for _ in range(30):
            net = random_loopy(rng, max_nodes=9)
            try:
                poly, _ = aggregate(net)
            except ClusterTooLargeError:
                continue
            assert detect_loops(poly) == []

    def test_cluster_guard(self, diamond_net):
        with pytest.raises(ClusterTooLargeError):
            aggregate(diamond_net, max_cluster_states=3)


class TestCompile:
    def test_chain2(self, fixture_sources):
        cm = compiler.compile_modelset(lang.parse(fixture_sources["chain2.bart"]))
        net = cm.networks["chain2"]
        assert net.aggregation.compounds == {}
        assert net.is_forest()

    def test_diamond_compound(self, fixture_sources):
        cm = compiler.compile_modelset(lang.parse(fixture_sources["diamond.bart"]))
        net = cm.networks["diamond"]
        assert len(net.aggregation.compounds) == 1
        (members,) = net.aggregation.compounds.values()
        assert members == ("B", "C")

    def test_gate_nodes_tagged_and_expanded(self, fixture_sources):
        cm = compiler.compile_modelset(lang.parse(fixture_sources["gates.bart"]))
        net = cm.networks["gates"]
        alarm = net.by_name["alarm"]
        assert alarm.gate is not None and alarm.gate.kind == "noisy_or"
        assert alarm.gate.strengths == (0.95, 0.3)
        assert alarm.tensor.shape == (2, 2, 2)  # tensor present alongside the tag
        assert net.by_name["siren"].gate.kind == "noisy_and"
        assert net.by_name["damage"].gate is None  # max gates have no fast path

    def test_compile_report_aggregates_diagnostics(self):
        src = """
        network broken {
          node A { values: [t, f]; prior: [0.6, 0.6]; }
          node B { values: [t, f]; parents: [ghost]; cpt: {1, 0; 0, 1}; }
        }
        """
        with pytest.raises(CompileError) as err:
            compiler.compile_modelset(lang.parse(src))
        kinds = {d.kind for d in err.value.diagnostics}
        assert "unresolved-reference" in kinds

    def test_forest_invariant(self):
        rng = np.random.default_rng(12)
        for _ in range(20):
            net = random_loopy(rng, max_nodes=8)
            try:
                compiled = compiler.compile_network(net)
            except ClusterTooLargeError:
                continue
            edges = sum(len(n.parents) for n in compiled.nodes)
            comps = compiler._component_count(
                {n.name: list(n.parents) for n in compiled.nodes})
            assert edges == len(compiled.nodes) - comps


class TestSaveLoad:
    def test_round_trip(self, compiled_all):
        blob = compiler.save(compiled_all)
        again = compiler.load(blob)
        assert again == compiled_all
        assert compiler.save(again) == blob

    def test_truncated_file(self, compiled_all):
        blob = compiler.save(compiled_all)
        with pytest.raises(CorruptTensorError):
            compiler.load(blob[: len(blob) // 2])

    def test_version_mismatch(self):
        with pytest.raises(VersionMismatchError):
            compiler.load(b'{"version": "bartc-0", "networks": {}}')

    def test_bad_magic(self):
        with pytest.raises(BadMagicError):
            compiler.load(b"MZ\x90\x00 not json at all")
        with pytest.raises(BadMagicError):
            compiler.load(b'{"no_version": true}')

    def test_tensor_length_mismatch(self, compiled_all):
        import json

        doc = json.loads(compiler.save(compiled_all))
        net = doc["networks"]["chain2"]
        net["nodes"][0]["tensor"] = [0.5]
        with pytest.raises(CorruptTensorError):
            compiler.load(json.dumps(doc).encode())


@given(strengths=st.lists(st.floats(0.0, 1.0), min_size=1, max_size=6),
       leak=st.floats(0.0, 1.0))
@settings(max_examples=60, deadline=None)
def test_noisy_or_property(strengths, leak):
    parents = binary_vars(len(strengths))
    child = model.Variable("x", ("t", "f"))
    spec = GateSpec("noisy_or", {f"u{i}": s for i, s in enumerate(strengths)}, leak)
    tensor = spec.expand(child, parents)
    for states in itertools.product([True, False], repeat=len(strengths)):
        idx = tuple(0 if s else 1 for s in states)
        assert tensor[idx + (0,)] == pytest.approx(
            or_oracle(strengths, leak, states), abs=TOL)
