"""The `.bart` model-description language: parser, canonical serializer,
and the template/library mechanism.

Grammar (authoritative; `#` comments run to end of line, whitespace is free):

    modelset  := { network | taxonomy | diagram | template | use }
    network   := "network" IDENT "{" { node | use } "}"
    node      := "node" IDENT "{" "values" ":" identlist ";"
                 [ "parents" ":" identlist ";" ] quant "}"
    quant     := "prior" ":" problist ";"
               | "cpt" ":" "{" numrow { ";" numrow } "}" ";"
               | "model" ":" gate ";"
    gate      := ("noisy_or"|"noisy_and"|"noisy_max"|"noisy_min")
                     "(" gateparam { "," gateparam } ")"
               | "bool" "(" boolexpr ")"
    gateparam := IDENT ":" NUMBER                       # or/and strength, or "leak"
               | IDENT ":" "{" numrow { ";" numrow } "}"  # max/min per-parent rows
               | "leak" ":" problist                    # max/min leak distribution
    boolexpr  := andexpr { "|" andexpr }
    andexpr   := unary { "&" unary }
    unary     := "!" unary | "(" boolexpr ")" | IDENT "=" IDENT
    taxonomy  := "taxonomy" IDENT "{" "singletons" ":" identlist ";"
                 [ "prior" ":" problist ";" ] { class } "}"
    class     := "class" IDENT "=" identlist [ "group" IDENT IDENT "=" IDENT ] ";"
    diagram   := "diagram" IDENT "{" { node | decision | value } "}"
    decision  := "decision" IDENT "{" "alternatives" ":" identlist ";"
                 [ "informed_by" ":" identlist ";" ] "}"
    value     := "value" IDENT "{" "parents" ":" identlist ";"
                 "table" ":" "{" numrow { ";" numrow } "}" ";" "}"
    template  := "template" IDENT "(" [ IDENT { "," IDENT } ] ")" "{" { node | use } "}"
    use       := "use" IDENT "(" [ IDENT { "," IDENT } ] ")" "as" IDENT ";"
    problist  := "[" NUMBER { "," NUMBER } "]"
    identlist := "[" [ IDENT { "," IDENT } ] "]"
    numrow    := NUMBER { "," NUMBER }

Notes fixed by this module:

* Value lists are ordered strongest-first (the dominance order used by the
  canonical gates); a gated node's first value is its "present" state.
* The `;` between cpt/table rows is cosmetic: rows are flattened row-major
  over the parent axes, child axis last.
* `leak` is reserved inside gate parameter lists.
* Node names produced by template expansion carry `prefix.` segments, so
  IDENT admits interior dots; the `group NETWORK NODE = VALUE` binding form
  is whitespace-separated for that reason.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable, Optional, Union

from .errors import (
    ArityMismatchError,
    BartSemanticError,
    BartSyntaxError,
    DuplicateNameError,
    SourceSpan,
    TemplateCycleError,
    UnresolvedReferenceError,
)

# ---------------------------------------------------------------------------
# AST


@dataclass(frozen=True)
class PriorDecl:
    values: tuple[float, ...]


@dataclass(frozen=True)
class CptDecl:
    values: tuple[float, ...]  # flattened row-major


@dataclass(frozen=True)
class GateDecl:
    kind: str  # noisy_or | noisy_and | noisy_max | noisy_min
    params: tuple[tuple[str, object], ...]  # (parent, strength | row tuple)
    leak: Optional[object] = None  # float for or/and, tuple for max/min

    def param_map(self) -> dict[str, object]:
        return dict(self.params)


class BoolExpr:
    pass


@dataclass(frozen=True)
class BAtom(BoolExpr):
    parent: str
    value: str


@dataclass(frozen=True)
class BNot(BoolExpr):
    operand: BoolExpr


@dataclass(frozen=True)
class BAnd(BoolExpr):
    left: BoolExpr
    right: BoolExpr


@dataclass(frozen=True)
class BOr(BoolExpr):
    left: BoolExpr
    right: BoolExpr


@dataclass(frozen=True)
class BoolDecl:
    expr: BoolExpr


Quant = Union[PriorDecl, CptDecl, GateDecl, BoolDecl]


@dataclass
class NodeDecl:
    name: str
    values: tuple[str, ...]
    parents: tuple[str, ...]
    quant: Quant
    span: Optional[SourceSpan] = field(default=None, compare=False)


@dataclass
class UseDecl:
    template: str
    args: tuple[str, ...]
    prefix: str
    span: Optional[SourceSpan] = field(default=None, compare=False)


@dataclass
class NetworkDecl:
    name: str
    items: list  # NodeDecl | UseDecl, declaration order is semantic
    span: Optional[SourceSpan] = field(default=None, compare=False)

    def nodes(self) -> list[NodeDecl]:
        return [i for i in self.items if isinstance(i, NodeDecl)]


@dataclass(frozen=True)
class BindingDecl:
    network: str
    node: str
    value: str


@dataclass
class ClassDecl:
    name: str
    members: tuple[str, ...]
    binding: Optional[BindingDecl] = None
    span: Optional[SourceSpan] = field(default=None, compare=False)


@dataclass
class TaxonomyDecl:
    name: str
    singletons: tuple[str, ...]
    prior: Optional[tuple[float, ...]]
    classes: dict[str, ClassDecl]
    span: Optional[SourceSpan] = field(default=None, compare=False)


@dataclass
class DecisionDecl:
    name: str
    alternatives: tuple[str, ...]
    informed_by: tuple[str, ...]
    span: Optional[SourceSpan] = field(default=None, compare=False)


@dataclass
class ValueDecl:
    name: str
    parents: tuple[str, ...]
    table: tuple[float, ...]  # flattened row-major
    span: Optional[SourceSpan] = field(default=None, compare=False)


@dataclass
class DiagramDecl:
    name: str
    items: list  # NodeDecl | DecisionDecl | ValueDecl, order is semantic
    span: Optional[SourceSpan] = field(default=None, compare=False)

    def chance(self) -> list[NodeDecl]:
        return [i for i in self.items if isinstance(i, NodeDecl)]

    def decisions(self) -> list[DecisionDecl]:
        return [i for i in self.items if isinstance(i, DecisionDecl)]

    def value_nodes(self) -> list[ValueDecl]:
        return [i for i in self.items if isinstance(i, ValueDecl)]


@dataclass
class TemplateDecl:
    name: str
    formals: tuple[str, ...]
    body: list  # NodeDecl | UseDecl
    span: Optional[SourceSpan] = field(default=None, compare=False)


@dataclass
class ModelSet:
    networks: dict[str, NetworkDecl] = field(default_factory=dict)
    taxonomies: dict[str, TaxonomyDecl] = field(default_factory=dict)
    diagrams: dict[str, DiagramDecl] = field(default_factory=dict)
    templates: dict[str, TemplateDecl] = field(default_factory=dict)
    uses: dict[str, UseDecl] = field(default_factory=dict)  # keyed by prefix

    def top_level_names(self) -> list[str]:
        return (list(self.networks) + list(self.taxonomies) + list(self.diagrams)
                + list(self.templates) + list(self.uses))


# ---------------------------------------------------------------------------
# Lexer

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r\n]+)
  | (?P<comment>\#[^\n]*)
  | (?P<number>-?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*(?:\.[A-Za-z0-9_]+)*)
  | (?P<punct>[{}\[\]():;,=&|!])
    """,
    re.VERBOSE,
)

GATE_KINDS = ("noisy_or", "noisy_and", "noisy_max", "noisy_min")


@dataclass(frozen=True)
class Token:
    type: str  # ident | number | punct | eof
    text: str
    span: SourceSpan


def _lex(text: str, filename: str) -> list[Token]:
    tokens = []
    line, col = 1, 1
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            span = SourceSpan(filename, line, col, line, col + 1)
            raise BartSyntaxError(f"unexpected character {text[pos]!r}", span)
        lexeme = m.group(0)
        start_line, start_col = line, col
        newlines = lexeme.count("\n")
        if newlines:
            line += newlines
            col = len(lexeme) - lexeme.rfind("\n")
        else:
            col += len(lexeme)
        kind = m.lastgroup
        if kind not in ("ws", "comment"):
            span = SourceSpan(filename, start_line, start_col, line, col)
            tokens.append(Token(kind, lexeme, span))
        pos = m.end()
    tokens.append(Token("eof", "", SourceSpan(filename, line, col, line, col)))
    return tokens


class _Stream:
    def __init__(self, tokens: list[Token]):
        self._tokens = tokens
        self._i = 0

    @property
    def current(self) -> Token:
        return self._tokens[self._i]

    def consume(self) -> Token:
        tok = self._tokens[self._i]
        if tok.type != "eof":
            self._i += 1
        return tok

    def accept(self, text: Optional[str] = None, type: Optional[str] = None) -> Optional[Token]:
        tok = self.current
        if type is not None and tok.type != type:
            return None
        if text is not None and tok.text != text:
            return None
        return self.consume()

    def expect(self, text: Optional[str] = None, type: Optional[str] = None,
               what: Optional[str] = None) -> Token:
        tok = self.accept(text, type)
        if tok is None:
            expected = frozenset([what or text or type or "?"])
            cur = self.current
            got = cur.text or "end of input"
            raise BartSyntaxError(
                f"expected {what or text or type}, got {got!r}", cur.span, expected)
        return tok

    def error(self, message: str, expected: Iterable[str] = ()) -> BartSyntaxError:
        return BartSyntaxError(message, self.current.span, frozenset(expected))


# ---------------------------------------------------------------------------
# Parser


def parse(text: str, filename: str = "<string>") -> ModelSet:
    """Parse `.bart` source into a ModelSet.

    Raises ``syntax-error`` (with span and expected-token set),
    ``duplicate-name``, or ``semantic-error`` for locally-checkable
    violations (for example a variable with fewer than two values).
    Cross-declaration references are resolved at compile time, after
    template expansion.
    """
    s = _Stream(_lex(text, filename))
    ms = ModelSet()
    while s.current.type != "eof":
        tok = s.current
        if tok.text == "network":
            decl = _parse_network(s)
            _declare(ms, decl.name, tok.span)
            ms.networks[decl.name] = decl
        elif tok.text == "taxonomy":
            decl = _parse_taxonomy(s)
            _declare(ms, decl.name, tok.span)
            ms.taxonomies[decl.name] = decl
        elif tok.text == "diagram":
            decl = _parse_diagram(s)
            _declare(ms, decl.name, tok.span)
            ms.diagrams[decl.name] = decl
        elif tok.text == "template":
            decl = _parse_template(s)
            _declare(ms, decl.name, tok.span)
            ms.templates[decl.name] = decl
        elif tok.text == "use":
            use = _parse_use(s)
            _declare(ms, use.prefix, tok.span)
            ms.uses[use.prefix] = use
        else:
            raise s.error(
                f"expected a declaration, got {tok.text!r}",
                ["network", "taxonomy", "diagram", "template", "use"])
    return ms


def _declare(ms: ModelSet, name: str, span: SourceSpan):
    if name in set(ms.top_level_names()):
        raise DuplicateNameError(f"top-level name {name!r} declared twice", span)


def _parse_network(s: _Stream) -> NetworkDecl:
    start = s.expect("network")
    name = s.expect(type="ident", what="network name").text
    s.expect("{")
    items: list = []
    names: set[str] = set()
    while not s.accept("}"):
        if s.current.text == "node":
            node = _parse_node(s)
            if node.name in names:
                raise DuplicateNameError(
                    f"node {node.name!r} declared twice in network {name!r}", node.span)
            names.add(node.name)
            items.append(node)
        elif s.current.text == "use":
            items.append(_parse_use(s))
        else:
            raise s.error(f"expected node or use, got {s.current.text!r}", ["node", "use", "}"])
    return NetworkDecl(name, items, span=start.span)


def _parse_node(s: _Stream) -> NodeDecl:
    start = s.expect("node")
    name = s.expect(type="ident", what="node name").text
    s.expect("{")
    s.expect("values")
    s.expect(":")
    values = _parse_identlist(s)
    s.expect(";")
    if len(values) < 2:
        raise BartSemanticError(f"variable {name!r} needs >= 2 values", start.span)
    if len(set(values)) != len(values):
        raise DuplicateNameError(f"duplicate value label in {name!r}", start.span)
    parents: tuple[str, ...] = ()
    if s.accept("parents"):
        s.expect(":")
        parents = _parse_identlist(s)
        s.expect(";")
    quant = _parse_quant(s, name, values, parents)
    s.expect("}")
    return NodeDecl(name, values, parents, quant, span=start.span)


def _parse_quant(s: _Stream, name: str, values, parents) -> Quant:
    tok = s.current
    if s.accept("prior"):
        s.expect(":")
        probs = _parse_problist(s)
        s.expect(";")
        if len(probs) != len(values):
            raise BartSemanticError(
                f"prior for {name!r} has {len(probs)} entries, needs {len(values)}", tok.span)
        return PriorDecl(probs)
    if s.accept("cpt"):
        s.expect(":")
        rows = _parse_numblock(s)
        s.expect(";")
        return CptDecl(tuple(x for row in rows for x in row))
    if s.accept("model"):
        s.expect(":")
        gate = _parse_gate(s, parents)
        s.expect(";")
        return gate
    raise s.error(f"expected quantification for node {name!r}", ["prior", "cpt", "model"])


def _parse_gate(s: _Stream, parents) -> Quant:
    tok = s.current
    if tok.text in GATE_KINDS:
        s.consume()
        s.expect("(")
        params: list[tuple[str, object]] = []
        leak = None
        while True:
            pname = s.expect(type="ident", what="gate parameter name").text
            s.expect(":")
            if s.current.text == "{":
                rows = _parse_numblock(s)
                payload: object = tuple(rows)
            elif s.current.text == "[":
                payload = _parse_problist(s)
            else:
                payload = float(s.expect(type="number", what="gate strength").text)
            if pname == "leak":
                if leak is not None:
                    raise BartSemanticError("leak given twice", tok.span)
                leak = payload
            else:
                if pname in dict(params):
                    raise DuplicateNameError(f"gate parameter {pname!r} given twice", tok.span)
                params.append((pname, payload))
            if not s.accept(","):
                break
        s.expect(")")
        return GateDecl(tok.text, tuple(params), leak)
    if s.accept("bool"):
        s.expect("(")
        expr = _parse_boolexpr(s)
        s.expect(")")
        return BoolDecl(expr)
    raise s.error(f"expected gate kind, got {tok.text!r}", list(GATE_KINDS) + ["bool"])


def _parse_boolexpr(s: _Stream) -> BoolExpr:
    expr = _parse_booland(s)
    while s.accept("|"):
        expr = BOr(expr, _parse_booland(s))
    return expr


def _parse_booland(s: _Stream) -> BoolExpr:
    expr = _parse_boolunary(s)
    while s.accept("&"):
        expr = BAnd(expr, _parse_boolunary(s))
    return expr


def _parse_boolunary(s: _Stream) -> BoolExpr:
    if s.accept("!"):
        return BNot(_parse_boolunary(s))
    if s.accept("("):
        expr = _parse_boolexpr(s)
        s.expect(")")
        return expr
    parent = s.expect(type="ident", what="parent name").text
    s.expect("=")
    value = s.expect(type="ident", what="value label").text
    return BAtom(parent, value)


def _parse_taxonomy(s: _Stream) -> TaxonomyDecl:
    start = s.expect("taxonomy")
    name = s.expect(type="ident", what="taxonomy name").text
    s.expect("{")
    s.expect("singletons")
    s.expect(":")
    singletons = _parse_identlist(s)
    s.expect(";")
    if len(set(singletons)) != len(singletons):
        raise DuplicateNameError(f"duplicate singleton in taxonomy {name!r}", start.span)
    prior = None
    if s.accept("prior"):
        s.expect(":")
        prior = _parse_problist(s)
        s.expect(";")
        if len(prior) != len(singletons):
            raise BartSemanticError(
                f"taxonomy prior has {len(prior)} entries, needs {len(singletons)}", start.span)
    classes: dict[str, ClassDecl] = {}
    while not s.accept("}"):
        ctok = s.expect("class")
        cname = s.expect(type="ident", what="class name").text
        s.expect("=")
        members = _parse_identlist(s)
        binding = None
        if s.accept("group"):
            network = s.expect(type="ident", what="network name").text
            node = s.expect(type="ident", what="report node name").text
            s.expect("=")
            value = s.expect(type="ident", what="confirm value").text
            binding = BindingDecl(network, node, value)
        s.expect(";")
        if cname in classes:
            raise DuplicateNameError(f"class {cname!r} declared twice", ctok.span)
        if not members:
            raise BartSemanticError(f"class {cname!r} is empty", ctok.span)
        unknown = [m for m in members if m not in singletons]
        if unknown:
            raise UnresolvedReferenceError(
                f"class {cname!r} references unknown singletons {unknown}", ctok.span)
        classes[cname] = ClassDecl(cname, members, binding, span=ctok.span)
    return TaxonomyDecl(name, singletons, prior, classes, span=start.span)


def _parse_diagram(s: _Stream) -> DiagramDecl:
    start = s.expect("diagram")
    name = s.expect(type="ident", what="diagram name").text
    s.expect("{")
    items: list = []
    names: set[str] = set()

    def check(n: str, span):
        if n in names:
            raise DuplicateNameError(f"{n!r} declared twice in diagram {name!r}", span)
        names.add(n)

    while not s.accept("}"):
        if s.current.text == "node":
            node = _parse_node(s)
            check(node.name, node.span)
            items.append(node)
        elif s.current.text == "decision":
            dtok = s.expect("decision")
            dname = s.expect(type="ident", what="decision name").text
            s.expect("{")
            s.expect("alternatives")
            s.expect(":")
            alts = _parse_identlist(s)
            s.expect(";")
            if len(alts) < 2:
                raise BartSemanticError(f"decision {dname!r} needs >= 2 alternatives", dtok.span)
            informed: tuple[str, ...] = ()
            if s.accept("informed_by"):
                s.expect(":")
                informed = _parse_identlist(s)
                s.expect(";")
            s.expect("}")
            check(dname, dtok.span)
            items.append(DecisionDecl(dname, alts, informed, span=dtok.span))
        elif s.current.text == "value":
            vtok = s.expect("value")
            vname = s.expect(type="ident", what="value node name").text
            s.expect("{")
            s.expect("parents")
            s.expect(":")
            parents = _parse_identlist(s)
            s.expect(";")
            s.expect("table")
            s.expect(":")
            rows = _parse_numblock(s)
            s.expect(";")
            s.expect("}")
            check(vname, vtok.span)
            items.append(ValueDecl(vname, parents, tuple(x for r in rows for x in r), span=vtok.span))
        else:
            raise s.error(
                f"expected node, decision or value, got {s.current.text!r}",
                ["node", "decision", "value", "}"])
    return DiagramDecl(name, items, span=start.span)


def _parse_template(s: _Stream) -> TemplateDecl:
    start = s.expect("template")
    name = s.expect(type="ident", what="template name").text
    s.expect("(")
    formals: list[str] = []
    if s.current.text != ")":
        formals.append(s.expect(type="ident", what="formal parameter").text)
        while s.accept(","):
            formals.append(s.expect(type="ident", what="formal parameter").text)
    s.expect(")")
    if len(set(formals)) != len(formals):
        raise DuplicateNameError(f"duplicate formal in template {name!r}", start.span)
    s.expect("{")
    body: list = []
    while not s.accept("}"):
        if s.current.text == "node":
            node = _parse_node(s)
            if node.name in formals:
                raise BartSemanticError(
                    f"template node {node.name!r} shadows a formal parameter", node.span)
            body.append(node)
        elif s.current.text == "use":
            body.append(_parse_use(s))
        else:
            raise s.error(f"expected node or use, got {s.current.text!r}", ["node", "use", "}"])
    return TemplateDecl(name, tuple(formals), body, span=start.span)


def _parse_use(s: _Stream) -> UseDecl:
    start = s.expect("use")
    template = s.expect(type="ident", what="template name").text
    s.expect("(")
    args: list[str] = []
    if s.current.text != ")":
        args.append(s.expect(type="ident", what="argument").text)
        while s.accept(","):
            args.append(s.expect(type="ident", what="argument").text)
    s.expect(")")
    s.expect("as")
    prefix = s.expect(type="ident", what="instance prefix").text
    s.expect(";")
    return UseDecl(template, tuple(args), prefix, span=start.span)


def _parse_identlist(s: _Stream) -> tuple[str, ...]:
    s.expect("[")
    out: list[str] = []
    if s.current.text != "]":
        out.append(s.expect(type="ident", what="identifier").text)
        while s.accept(","):
            out.append(s.expect(type="ident", what="identifier").text)
    s.expect("]")
    return tuple(out)


def _parse_problist(s: _Stream) -> tuple[float, ...]:
    s.expect("[")
    out = [float(s.expect(type="number", what="number").text)]
    while s.accept(","):
        out.append(float(s.expect(type="number", what="number").text))
    s.expect("]")
    return tuple(out)


def _parse_numblock(s: _Stream) -> list[tuple[float, ...]]:
    s.expect("{")
    rows = [_parse_numrow(s)]
    while s.accept(";"):
        if s.current.text == "}":  # tolerate trailing separator
            break
        rows.append(_parse_numrow(s))
    s.expect("}")
    return rows


def _parse_numrow(s: _Stream) -> tuple[float, ...]:
    out = [float(s.expect(type="number", what="number").text)]
    while s.accept(","):
        out.append(float(s.expect(type="number", what="number").text))
    return tuple(out)


# ---------------------------------------------------------------------------
# Serializer


def fmt_num(x: float) -> str:
    """Canonical number format: up to 12 significant digits, no noise."""
    return format(float(x), ".12g")


def serialize(ms: ModelSet) -> str:
    """Canonical text for a ModelSet: declarations sorted by kind then name,
    two-space indentation, numbers at <= 12 significant digits. Parsing the
    output reproduces the input structurally, and serializing twice is
    byte-identical."""
    out: list[str] = []
    for name in sorted(ms.networks):
        out.append(_fmt_network(ms.networks[name]))
    for name in sorted(ms.taxonomies):
        out.append(_fmt_taxonomy(ms.taxonomies[name]))
    for name in sorted(ms.diagrams):
        out.append(_fmt_diagram(ms, ms.diagrams[name]))
    for name in sorted(ms.templates):
        out.append(_fmt_template(ms.templates[name]))
    for prefix in sorted(ms.uses):
        out.append(_fmt_use(ms.uses[prefix], indent=""))
    return "\n".join(out) + ("\n" if out else "")


def _fmt_identlist(idents: Iterable[str]) -> str:
    return "[" + ", ".join(idents) + "]"


def _fmt_problist(nums: Iterable[float]) -> str:
    return "[" + ", ".join(fmt_num(x) for x in nums) + "]"


def _fmt_rows(flat: tuple[float, ...], width: int) -> str:
    if width <= 0 or len(flat) % width:
        width = len(flat)
    rows = [flat[i:i + width] for i in range(0, len(flat), width)]
    return "{" + "; ".join(", ".join(fmt_num(x) for x in row) for row in rows) + "}"


def _fmt_network(net: NetworkDecl) -> str:
    lines = [f"network {net.name} {{"]
    for item in net.items:
        if isinstance(item, NodeDecl):
            lines.append(_fmt_node(item, indent="  "))
        else:
            lines.append(_fmt_use(item, indent="  "))
    lines.append("}")
    return "\n".join(lines)


def _fmt_node(node: NodeDecl, indent: str) -> str:
    lines = [f"{indent}node {node.name} {{"]
    lines.append(f"{indent}  values: {_fmt_identlist(node.values)};")
    if node.parents:
        lines.append(f"{indent}  parents: {_fmt_identlist(node.parents)};")
    q = node.quant
    if isinstance(q, PriorDecl):
        lines.append(f"{indent}  prior: {_fmt_problist(q.values)};")
    elif isinstance(q, CptDecl):
        lines.append(f"{indent}  cpt: {_fmt_rows(q.values, len(node.values))};")
    elif isinstance(q, GateDecl):
        lines.append(f"{indent}  model: {_fmt_gate(q, node)};")
    elif isinstance(q, BoolDecl):
        lines.append(f"{indent}  model: bool({_fmt_bool(q.expr)});")
    lines.append(indent + "}")
    return "\n".join(lines)


def _fmt_gate(gate: GateDecl, node: NodeDecl) -> str:
    params = gate.param_map()
    parts = []
    order = [p for p in node.parents if p in params]
    order += [p for p, _ in gate.params if p not in order]
    for pname in order:
        payload = params[pname]
        if isinstance(payload, tuple):
            parts.append(f"{pname}: {_fmt_rows(tuple(x for r in payload for x in r), len(payload[0]) if payload else 0)}")
        else:
            parts.append(f"{pname}: {fmt_num(payload)}")
    if gate.leak is not None:
        if isinstance(gate.leak, tuple):
            parts.append(f"leak: {_fmt_problist(gate.leak)}")
        else:
            parts.append(f"leak: {fmt_num(gate.leak)}")
    return f"{gate.kind}(" + ", ".join(parts) + ")"


def _fmt_bool(expr: BoolExpr, parent_prec: int = 0) -> str:
    # precedence: | = 1, & = 2, ! = 3
    if isinstance(expr, BAtom):
        return f"{expr.parent}={expr.value}"
    if isinstance(expr, BNot):
        return "!" + _fmt_bool(expr.operand, 3)
    if isinstance(expr, BAnd):
        text = f"{_fmt_bool(expr.left, 2)} & {_fmt_bool(expr.right, 3)}"
        return f"({text})" if parent_prec > 2 else text
    if isinstance(expr, BOr):
        text = f"{_fmt_bool(expr.left, 1)} | {_fmt_bool(expr.right, 2)}"
        return f"({text})" if parent_prec > 1 else text
    raise TypeError(expr)


def _fmt_taxonomy(tax: TaxonomyDecl) -> str:
    lines = [f"taxonomy {tax.name} {{"]
    lines.append(f"  singletons: {_fmt_identlist(tax.singletons)};")
    if tax.prior is not None:
        lines.append(f"  prior: {_fmt_problist(tax.prior)};")
    for cname in tax.classes:  # declaration order
        c = tax.classes[cname]
        binding = ""
        if c.binding:
            b = c.binding
            binding = f" group {b.network} {b.node} = {b.value}"
        lines.append(f"  class {c.name} = {_fmt_identlist(c.members)}{binding};")
    lines.append("}")
    return "\n".join(lines)


def _fmt_diagram(ms: ModelSet, dia: DiagramDecl) -> str:
    arities = {}
    for item in dia.items:
        if isinstance(item, NodeDecl):
            arities[item.name] = len(item.values)
        elif isinstance(item, DecisionDecl):
            arities[item.name] = len(item.alternatives)
    lines = [f"diagram {dia.name} {{"]
    for item in dia.items:
        if isinstance(item, NodeDecl):
            lines.append(_fmt_node(item, indent="  "))
        elif isinstance(item, DecisionDecl):
            lines.append(f"  decision {item.name} {{")
            lines.append(f"    alternatives: {_fmt_identlist(item.alternatives)};")
            if item.informed_by:
                lines.append(f"    informed_by: {_fmt_identlist(item.informed_by)};")
            lines.append("  }")
        elif isinstance(item, ValueDecl):
            width = arities.get(item.parents[-1], 0) if item.parents else 0
            lines.append(f"  value {item.name} {{")
            lines.append(f"    parents: {_fmt_identlist(item.parents)};")
            lines.append(f"    table: {_fmt_rows(item.table, width)};")
            lines.append("  }")
    lines.append("}")
    return "\n".join(lines)


def _fmt_template(tpl: TemplateDecl) -> str:
    lines = [f"template {tpl.name}(" + ", ".join(tpl.formals) + ") {"]
    for item in tpl.body:
        if isinstance(item, NodeDecl):
            lines.append(_fmt_node(item, indent="  "))
        else:
            lines.append(_fmt_use(item, indent="  "))
    lines.append("}")
    return "\n".join(lines)


def _fmt_use(use: UseDecl, indent: str) -> str:
    return f"{indent}use {use.template}(" + ", ".join(use.args) + f") as {use.prefix};"


# ---------------------------------------------------------------------------
# Template expansion


def expand_templates(ms: ModelSet) -> ModelSet:
    """Replace every `use` with the named template's body: formals are
    substituted by the arguments, and every name declared inside the body is
    prefixed with `prefix.`. A top-level use becomes a network named by its
    prefix. The result carries no templates or uses, so expansion is
    idempotent."""
    out = ModelSet(taxonomies=dict(ms.taxonomies), diagrams=dict(ms.diagrams))
    for name, net in ms.networks.items():
        items: list = []
        for item in net.items:
            if isinstance(item, UseDecl):
                items.extend(_expand_use(ms, item, ()))
            else:
                items.append(item)
        _check_unique_nodes(name, items)
        out.networks[name] = NetworkDecl(name, items, span=net.span)
    for prefix, use in ms.uses.items():
        items = list(_expand_use(ms, use, ()))
        _check_unique_nodes(prefix, items)
        if prefix in out.networks:
            raise DuplicateNameError(f"use prefix {prefix!r} collides with a network", use.span)
        out.networks[prefix] = NetworkDecl(prefix, items, span=use.span)
    return out


def _check_unique_nodes(where: str, items: list):
    seen: set[str] = set()
    for item in items:
        if item.name in seen:
            raise DuplicateNameError(f"node {item.name!r} declared twice in {where!r}", item.span)
        seen.add(item.name)


def _expand_use(ms: ModelSet, use: UseDecl, stack: tuple[str, ...]) -> list[NodeDecl]:
    tpl = ms.templates.get(use.template)
    if tpl is None:
        raise UnresolvedReferenceError(f"unknown template {use.template!r}", use.span)
    if use.template in stack:
        raise TemplateCycleError(
            "template cycle: " + " -> ".join(stack + (use.template,)), use.span)
    if len(use.args) != len(tpl.formals):
        raise ArityMismatchError(
            f"template {tpl.name!r} takes {len(tpl.formals)} arguments, got {len(use.args)}",
            use.span)
    subst = dict(zip(tpl.formals, use.args))

    # Nodes from nested uses arrive already renamed by their own expansion;
    # the outer pass then prefixes them like any other internal name.
    body: list[NodeDecl] = []
    for item in tpl.body:
        if isinstance(item, NodeDecl):
            body.append(item)
        else:
            inner = UseDecl(item.template, tuple(subst.get(a, a) for a in item.args),
                            item.prefix, span=item.span)
            body.extend(_expand_use(ms, inner, stack + (use.template,)))

    internal = {n.name for n in body}

    def ref(x: str) -> str:
        """Node references: formal substitution, then internal prefixing."""
        if x in subst:
            return subst[x]
        if x in internal:
            return f"{use.prefix}.{x}"
        return x

    def label(x: str) -> str:
        """Value labels: formal substitution only, never prefixed."""
        return subst.get(x, x)

    renamed = []
    for n in body:
        renamed.append(NodeDecl(
            f"{use.prefix}.{n.name}",
            tuple(label(v) for v in n.values),
            tuple(ref(p) for p in n.parents),
            _subst_quant(n.quant, ref, label), span=n.span))
    return renamed


def _subst_quant(q: Quant, ref, label) -> Quant:
    if isinstance(q, GateDecl):
        return GateDecl(q.kind, tuple((ref(p), payload) for p, payload in q.params), q.leak)
    if isinstance(q, BoolDecl):
        return BoolDecl(_subst_bool(q.expr, ref, label))
    return q


def _subst_bool(e: BoolExpr, ref, label) -> BoolExpr:
    if isinstance(e, BAtom):
        return BAtom(ref(e.parent), label(e.value))
    if isinstance(e, BNot):
        return BNot(_subst_bool(e.operand, ref, label))
    if isinstance(e, BAnd):
        return BAnd(_subst_bool(e.left, ref, label), _subst_bool(e.right, ref, label))
    if isinstance(e, BOr):
        return BOr(_subst_bool(e.left, ref, label), _subst_bool(e.right, ref, label))
    raise TypeError(e)
