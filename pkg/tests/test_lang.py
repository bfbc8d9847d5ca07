import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bart import lang
from bart.errors import (
    ArityMismatchError,
    BartSemanticError,
    BartSyntaxError,
    DuplicateNameError,
    TemplateCycleError,
)

CHAIN2 = """
network chain2 {
  node A { values: [t, f]; prior: [0.3, 0.7]; }
  node B { values: [t, f]; parents: [A]; cpt: {0.9, 0.1; 0.2, 0.8}; }
}
"""


class TestParse:
    def test_chain2_shape(self):
        ms = lang.parse(CHAIN2)
        assert list(ms.networks) == ["chain2"]
        nodes = ms.networks["chain2"].nodes()
        assert [n.name for n in nodes] == ["A", "B"]
        assert nodes[1].parents == ("A",)
        assert nodes[1].quant == lang.CptDecl((0.9, 0.1, 0.2, 0.8))

    def test_single_value_variable_rejected(self):
        with pytest.raises(BartSemanticError, match=">= 2 values"):
            lang.parse("network n { node A { values: [t]; prior: [1.0]; } }")

    def test_rows_are_cosmetic(self):
        a = lang.parse("network n { node A { values: [t,f]; prior: [0.5,0.5]; } "
                       "node B { values:[t,f]; parents:[A]; cpt:{0.9,0.1; 0.2,0.8}; } }")
        b = lang.parse("network n { node A { values: [t,f]; prior: [0.5,0.5]; } "
                       "node B { values:[t,f]; parents:[A]; cpt:{0.9,0.1,0.2,0.8}; } }")
        assert a == b

    def test_syntax_error_has_span_and_expectations(self):
        with pytest.raises(BartSyntaxError) as err:
            lang.parse("network n { node A { values [t,f]; } }", "m.bart")
        assert err.value.span.file == "m.bart"
        assert err.value.span.start_line == 1
        assert err.value.expected

    def test_duplicate_top_level(self):
        with pytest.raises(DuplicateNameError):
            lang.parse("network n { } network n { }")

    def test_comments_and_whitespace(self):
        ms = lang.parse("# header\nnetwork n {\n# inner\n  node A { values: [t, f];"
                        " prior: [1, 0]; } }")
        assert "n" in ms.networks

    def test_taxonomy_with_binding(self):
        ms = lang.parse("""
        taxonomy tx {
          singletons: [s1, s2, s3];
          prior: [0.5, 0.25, 0.25];
          class top = [s1, s2] group net rep = yes;
        }
        """)
        decl = ms.taxonomies["tx"].classes["top"]
        assert decl.binding == lang.BindingDecl("net", "rep", "yes")

    def test_diagram(self):
        ms = lang.parse("""
        diagram d {
          decision D { alternatives: [a, b]; informed_by: [C]; }
          node C { values: [c1, c2]; prior: [0.6, 0.4]; }
          value V { parents: [D, C]; table: {10, 0; 5, 5}; }
        }
        """)
        dia = ms.diagrams["d"]
        assert [x.name for x in dia.decisions()] == ["D"]
        assert dia.value_nodes()[0].table == (10.0, 0.0, 5.0, 5.0)

    def test_gate_forms(self):
        ms = lang.parse("""
        network n {
          node U { values: [t, f]; prior: [0.5, 0.5]; }
          node W { values: [t, f]; prior: [0.5, 0.5]; }
          node X { values: [t, f]; parents: [U, W]; model: noisy_or(U: 0.8, W: 0.9, leak: 0.1); }
          node Y { values: [t, f]; parents: [U, W]; model: bool(U=t & !(W=f)); }
          node Z { values: [hi, lo]; parents: [U]; model: noisy_max(U: {0.9, 0.1; 0.2, 0.8}, leak: [0.0, 1.0]); }
        }
        """)
        x = ms.networks["n"].nodes()[2]
        assert x.quant.kind == "noisy_or"
        assert x.quant.leak == 0.1


class TestSerialize:
    def test_round_trip_chain2(self):
        ms = lang.parse(CHAIN2)
        text = lang.serialize(ms)
        assert lang.parse(text) == ms

    def test_serialize_is_canonical(self):
        ms = lang.parse(CHAIN2)
        once = lang.serialize(ms)
        assert lang.serialize(lang.parse(once)) == once

    def test_templates_survive_unexpanded(self):
        src = """
        template t(p) { node X { values: [a, b]; parents: [p]; cpt: {1, 0; 0, 1}; } }
        network n { node R { values: [a, b]; prior: [0.5, 0.5]; } use t(R) as one; }
        """
        ms = lang.parse(src)
        text = lang.serialize(ms)
        assert "template t(p)" in text
        assert "use t(R) as one;" in text
        assert lang.parse(text) == ms

    def test_sorted_declarations(self):
        ms = lang.parse("network b { } network a { }")
        text = lang.serialize(ms)
        assert text.index("network a") < text.index("network b")


class TestTemplates:
    def test_double_instantiation(self):
        src = """
        template pair() { node X { values: [t, f]; prior: [0.5, 0.5]; } }
        network n { use pair() as p; use pair() as q; }
        """
        out = lang.expand_templates(lang.parse(src))
        assert [n.name for n in out.networks["n"].nodes()] == ["p.X", "q.X"]

    def test_self_reference_cycles(self):
        src = "template t() { use t() as inner; } network n { use t() as a; }"
        with pytest.raises(TemplateCycleError):
            lang.expand_templates(lang.parse(src))

    def test_mutual_cycle(self):
        src = """
        template a() { use b() as x; }
        template b() { use a() as y; }
        network n { use a() as go; }
        """
        with pytest.raises(TemplateCycleError):
            lang.expand_templates(lang.parse(src))

    def test_arity_mismatch(self):
        src = """
        template t(p, q, r) { node X { values: [a, b]; prior: [1, 0]; } }
        network n { use t(X, Y) as u; }
        """
        with pytest.raises(ArityMismatchError):
            lang.expand_templates(lang.parse(src))

    def test_formals_substitute_into_references(self):
        src = """
        template watch(target) {
          node S { values: [t, f]; parents: [target]; cpt: {0.9, 0.1; 0.2, 0.8}; }
        }
        network n {
          node Base { values: [t, f]; prior: [0.4, 0.6]; }
          use watch(Base) as w1;
          use watch(w1.S) as w2;
        }
        """
        out = lang.expand_templates(lang.parse(src))
        nodes = {n.name: n for n in out.networks["n"].nodes()}
        assert nodes["w1.S"].parents == ("Base",)
        assert nodes["w2.S"].parents == ("w1.S",)

    def test_top_level_use_becomes_network(self):
        src = """
        template g() { node R { values: [y, n]; prior: [0.5, 0.5]; } }
        use g() as standalone;
        """
        out = lang.expand_templates(lang.parse(src))
        assert [n.name for n in out.networks["standalone"].nodes()] == ["standalone.R"]

    def test_idempotent(self):
        src = """
        template pair() { node X { values: [t, f]; prior: [0.5, 0.5]; } }
        network n { use pair() as p; }
        """
        once = lang.expand_templates(lang.parse(src))
        assert lang.expand_templates(once) == once
        assert not once.templates and not once.uses


# -- property tests ----------------------------------------------------------

_ident = st.from_regex(r"[a-z][a-z0-9_]{0,6}", fullmatch=True)


@st.composite
def modelsets(draw) -> lang.ModelSet:
    n_nodes = draw(st.integers(1, 5))
    names = draw(st.lists(_ident, min_size=n_nodes, max_size=n_nodes, unique=True))
    items = []
    for i, name in enumerate(names):
        arity = draw(st.integers(2, 3))
        values = tuple(f"v{k}" for k in range(arity))
        max_parents = min(i, 2)
        k = draw(st.integers(0, max_parents))
        parents = tuple(draw(st.permutations(names[:i]))[:k])
        rows = int(np.prod([len(items[names.index(p)].values) for p in parents])) if parents else 1
        flat = tuple(
            x for _ in range(rows)
            for x in _simplex(draw, arity))
        quant = lang.PriorDecl(flat) if not parents else lang.CptDecl(flat)
        items.append(lang.NodeDecl(name, values, parents, quant))
    net = lang.NetworkDecl(draw(_ident), items)
    return lang.ModelSet(networks={net.name: net})


def _simplex(draw, k: int) -> tuple[float, ...]:
    raw = [draw(st.integers(1, 1000)) for _ in range(k)]
    total = sum(raw)
    vals = [round(x / total, 6) for x in raw[:-1]]
    vals.append(round(1.0 - sum(vals), 6))
    return tuple(vals)


@given(ms=modelsets())
@settings(max_examples=60, deadline=None)
def test_round_trip_property(ms):
    text = lang.serialize(ms)
    again = lang.parse(text)
    assert again == ms
    assert lang.serialize(again) == text


@given(text=st.text(max_size=200))
@settings(max_examples=300, deadline=None)
def test_parser_total_on_arbitrary_text(text):
    try:
        lang.parse(text)
    except BartSyntaxError as err:
        assert err.span is not None
        assert 1 <= err.span.start_line <= text.count("\n") + 1
    except BartSemanticError:
        pass
