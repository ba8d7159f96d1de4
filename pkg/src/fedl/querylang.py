"""Path-pattern query language: parsing, rendering and lowering.

Grammar (keywords are case-sensitive uppercase)::

    query     = "SELECT" item { "," item } "FROM" STRING "MATCH"
                [ IDENT "=" ] [ "ALL" "SHORTEST" ] element { element }
    item      = IDENT [ "." IDENT ] | IDENT "(" item { "," item } ")"
    element   = "->" | "<-" | node | group
    node      = "(" [ IDENT ] [ ":" IDENT { "|" IDENT } ] [ "WHERE" STRING ] ")"
    group     = "(" element { element } ")" "{" INT "," INT "}"

WHERE strings use a small Lucene-like filter syntax::

    filter    = clause { "AND" clause }
    clause    = field ":" ( value | range )
    range     = ( "{" | "[" ) bound "TO" bound ( "}" | "]" )
    bound     = number | PARAM | "*"

``{``/``}`` are exclusive bounds, ``[``/``]`` inclusive.  ALL-CAPS
identifiers (``START``, ``PERSON_ID`` ...) are parameters bound at
execution time.

Adjacent node patterns without an arrow between them denote the same
node, except that a bare reference to an already bound variable, such as
``(mid)``, starts a new branch from that node.  Entity and edge labels
alternate along arrows; edges are stored as documents with ``src`` and
``dst`` key fields (see :data:`FINBENCH`).
"""

from __future__ import annotations

import itertools
import re
from dataclasses import dataclass, field
from typing import Mapping, Sequence, Union

from .filters import MATCH_ALL, Filter, Param, Range, Term, normalize_value
from .pathquery import ALL_SHORTEST, ALL_UP_TO_L, Hop, PathQuerySpec, PathSchema, Segment
from .planner import JoinNode, LogicalPlan, ScanNode


class QueryError(Exception):
    code = "query_error"

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        where = f" at line {line}, column {column}" if line is not None else ""
        super().__init__(message + where)
        self.message = message
        self.line = line
        self.column = column

    def as_record(self) -> dict:
        return {"code": self.code, "message": self.message, "line": self.line, "column": self.column}


class QuerySyntaxError(QueryError):
    code = "syntax_error"


class UnboundVariableError(QueryError):
    code = "unbound_variable"


class QuantifierError(QueryError):
    code = "invalid_quantifier"


class FilterSyntaxError(QueryError):
    code = "filter_syntax_error"


class UnknownLabelError(QueryError):
    code = "unknown_label"


class LoweringError(QueryError):
    code = "lowering_error"


class UnsupportedFeatureError(QueryError):
    code = "unsupported_feature"

    def __init__(self, feature: str, construct: str):
        super().__init__(f"unsupported feature: {feature} ({construct})")
        self.feature = feature
        self.construct = construct


CYCLE = "cycle"
DEGREE_CONDITION = "degree condition"
LABEL_DISJUNCTION = "label disjunction"
CROSS_NODE_REFERENCE = "cross-node WHERE reference"
SET_SIMILARITY = "set similarity function"


# -- AST ---------------------------------------------------------------------------------

@dataclass(frozen=True)
class FieldRef:
    var: str
    field: str | None = None

    def render(self) -> str:
        return self.var if self.field is None else f"{self.var}.{self.field}"


@dataclass(frozen=True)
class Call:
    name: str
    args: tuple[FieldRef, ...]

    def render(self) -> str:
        return f"{self.name}({', '.join(a.render() for a in self.args)})"


SelectItem = Union[FieldRef, Call]


@dataclass(frozen=True)
class NodePattern:
    var: str | None = None
    labels: tuple[str, ...] = ()
    where: str | None = None
    line: int = 0
    column: int = 0

    @property
    def is_bare_ref(self) -> bool:
        return self.var is not None and not self.labels and self.where is None

    def render(self) -> str:
        out = self.var or ""
        if self.labels:
            out += ":" + "|".join(self.labels)
        if self.where is not None:
            out += f' WHERE "{self.where}"'
        return f"({out})"

    def __eq__(self, other):
        return isinstance(other, NodePattern) and (self.var, self.labels, self.where) == (
            other.var, other.labels, other.where)

    def __hash__(self):
        return hash((self.var, self.labels, self.where))


@dataclass(frozen=True)
class Arrow:
    direction: str  # "->" or "<-"

    def render(self) -> str:
        return self.direction


@dataclass(frozen=True)
class Group:
    elements: tuple
    min: int
    max: int

    def render(self) -> str:
        return "(" + _render_elements(self.elements) + f"){{{self.min},{self.max}}}"


Element = Union[NodePattern, Arrow, Group]


@dataclass(frozen=True)
class QueryAst:
    select: tuple[SelectItem, ...]
    source: str
    elements: tuple[Element, ...]
    path_var: str | None = None
    all_shortest: bool = False

    def variables(self) -> set[str]:
        return _vars(self.elements)

    @property
    def has_group(self) -> bool:
        return any(isinstance(e, Group) for e in self.elements)


def _vars(elements) -> set[str]:
    out = set()
    for e in elements:
        if isinstance(e, NodePattern) and e.var:
            out.add(e.var)
        elif isinstance(e, Group):
            out |= _vars(e.elements)
    return out


def _render_elements(elements) -> str:
    parts = []
    for e in elements:
        if isinstance(e, Arrow) or (parts and parts[-1] in ("->", "<-")):
            parts.append(e.render())
        else:
            parts.append((" " if parts else "") + e.render())
    return "".join(parts)


def render(ast: QueryAst) -> str:
    lines = ["SELECT " + ", ".join(s.render() for s in ast.select), f'FROM "{ast.source}"']
    head = "MATCH "
    if ast.path_var:
        head += f"{ast.path_var} = "
    if ast.all_shortest:
        head += "ALL SHORTEST "
    lines.append(head + _render_elements(ast.elements))
    return "\n".join(lines)


# -- tokenizer ----------------------------------------------------------------------------

KEYWORDS = {"SELECT", "FROM", "MATCH", "WHERE", "ALL", "SHORTEST"}

_TOKEN = re.compile(r"""
    (?P<ws>\s+)
  | (?P<string>"[^"\n]*")
  | (?P<arrow>->|<-)
  | (?P<int>\d+)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<punct>[(){},.:=|])
""", re.VERBOSE)


@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    line: int
    column: int


def tokenize(text: str) -> list[Token]:
    tokens = []
    pos, line, line_start = 0, 1, 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        col = pos - line_start + 1
        if m is None:
            raise QuerySyntaxError(f"unexpected character {text[pos]!r}", line, col)
        kind = m.lastgroup
        value = m.group()
        if kind == "ident" and value in KEYWORDS:
            kind = "keyword"
        if kind != "ws":
            tokens.append(Token(kind, value, line, col))
        newlines = value.count("\n")
        if newlines:
            line += newlines
            line_start = pos + value.rindex("\n") + 1
        pos = m.end()
    tokens.append(Token("eof", "", line, pos - line_start + 1))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.tokens = tokenize(text)
        self.i = 0

    @property
    def tok(self) -> Token:
        return self.tokens[self.i]

    def peek(self, offset: int = 1) -> Token:
        return self.tokens[min(self.i + offset, len(self.tokens) - 1)]

    def error(self, message: str, tok: Token | None = None, cls=QuerySyntaxError):
        tok = tok or self.tok
        return cls(message, tok.line, tok.column)

    def accept(self, kind: str, text: str | None = None) -> Token | None:
        t = self.tok
        if t.kind == kind and (text is None or t.text == text):
            self.i += 1
            return t
        return None

    def expect(self, kind: str, text: str | None = None) -> Token:
        t = self.accept(kind, text)
        if t is None:
            want = text or kind
            got = self.tok.text or "end of input"
            raise self.error(f"expected {want!r}, found {got!r}")
        return t

    def query(self) -> QueryAst:
        self.expect("keyword", "SELECT")
        select = [self.item()]
        while self.accept("punct", ","):
            select.append(self.item())
        self.expect("keyword", "FROM")
        source = self.expect("string").text[1:-1]
        self.expect("keyword", "MATCH")
        path_var = None
        if self.tok.kind == "ident" and self.peek().text == "=":
            path_var = self.expect("ident").text
            self.expect("punct", "=")
        all_shortest = False
        if self.accept("keyword", "ALL"):
            self.expect("keyword", "SHORTEST")
            all_shortest = True
        elements = self.elements(top=True)
        self.expect("eof")
        return QueryAst(tuple(select), source, tuple(elements), path_var, all_shortest)

    def item(self) -> SelectItem:
        name = self.expect("ident").text
        if self.accept("punct", "("):
            args = [self.item()]
            while self.accept("punct", ","):
                args.append(self.item())
            self.expect("punct", ")")
            if any(isinstance(a, Call) for a in args):
                raise self.error("nested function calls are not allowed")
            return Call(name, tuple(args))
        if self.accept("punct", "."):
            return FieldRef(name, self.expect("ident").text)
        return FieldRef(name)

    def elements(self, top: bool) -> list[Element]:
        out: list[Element] = []
        while True:
            t = self.tok
            if t.kind == "arrow":
                self.i += 1
                out.append(Arrow(t.text))
            elif t.kind == "punct" and t.text == "(":
                out.append(self.paren())
            else:
                break
        if not out:
            raise self.error("expected a pattern")
        if isinstance(out[0], Arrow) or isinstance(out[-1], Arrow):
            raise self.error("a pattern cannot start or end with an arrow")
        for a, b in zip(out, out[1:]):
            if isinstance(a, Arrow) and isinstance(b, Arrow):
                raise self.error("two consecutive arrows")
        return out

    def paren(self) -> Element:
        open_tok = self.expect("punct", "(")
        if self.tok.text == "(" or self.tok.kind == "arrow":
            inner = self.elements(top=False)
            self.expect("punct", ")")
            q = self.tok
            self.expect("punct", "{")
            lo = int(self.expect("int").text)
            self.expect("punct", ",")
            hi = int(self.expect("int").text)
            self.expect("punct", "}")
            if not 1 <= lo <= hi:
                raise QuantifierError(f"quantifier {{{lo},{hi}}} must satisfy 1 <= min <= max", q.line, q.column)
            return Group(tuple(inner), lo, hi)
        var = None
        if self.tok.kind == "ident":
            var = self.expect("ident").text
        labels: list[str] = []
        if self.accept("punct", ":"):
            labels.append(self.expect("ident").text)
            while self.accept("punct", "|"):
                labels.append(self.expect("ident").text)
        where = None
        if self.accept("keyword", "WHERE"):
            where = self.expect("string").text[1:-1]
        self.expect("punct", ")")
        return NodePattern(var, tuple(labels), where, open_tok.line, open_tok.column)


def parse_query(text: str) -> QueryAst:
    parser = _Parser(text)
    ast = parser.query()
    bound = ast.variables()
    if ast.path_var:
        bound.add(ast.path_var)
    for item in ast.select:
        refs = item.args if isinstance(item, Call) else (item,)
        for r in refs:
            if r.var not in bound:
                raise UnboundVariableError(f"select references unbound variable {r.var!r}", 1, 1)
    return ast


# -- filters ------------------------------------------------------------------------------

_PARAM = re.compile(r"^[A-Z][A-Z0-9_]*$")
_NUMBER = re.compile(r"^-?\d+(\.\d+)?([eE][-+]?\d+)?$")
_FTOKEN = re.compile(r"""(?P<ws>\s+)|(?P<open>[{\[])|(?P<close>[}\]])|(?P<colon>:)|(?P<word>[^\s:{}\[\]]+)""")


def _scalar(word: str):
    if _NUMBER.match(word):
        return normalize_value(float(word)) if any(c in word for c in ".eE") else int(word)
    if _PARAM.match(word):
        return Param(word)
    return word


def parse_filter(text: str) -> Filter:
    """Parse a WHERE string into a conjunction of term and range clauses."""
    toks = []
    for m in _FTOKEN.finditer(text):
        if m.lastgroup != "ws":
            toks.append((m.lastgroup, m.group(), m.start() + 1))
    if not toks:
        return MATCH_ALL
    i = 0

    def take(kind=None, text_=None):
        nonlocal i
        if i >= len(toks):
            raise FilterSyntaxError("unexpected end of filter", 1, len(text) + 1)
        k, t, col = toks[i]
        if (kind and k != kind) or (text_ and t != text_):
            raise FilterSyntaxError(f"expected {text_ or kind}, found {t!r}", 1, col)
        i += 1
        return t, col

    clauses = []
    while True:
        field_name, _ = take("word")
        take("colon")
        k, t, col = toks[i] if i < len(toks) else ("eof", "", len(text) + 1)
        if k == "open":
            i += 1
            lo_raw, lo_col = take("word")
            take("word", "TO")
            hi_raw, hi_col = take("word")
            close, close_col = take("close")
            bounds = []
            for raw, c in ((lo_raw, lo_col), (hi_raw, hi_col)):
                if raw == "*":
                    bounds.append(None)
                    continue
                v = _scalar(raw)
                if isinstance(v, str):
                    raise FilterSyntaxError(f"range bound {raw!r} is not numeric", 1, c)
                bounds.append(v)
            clauses.append(Range(field_name, bounds[0], bounds[1], t == "[", close == "]"))
        else:
            value, _ = take("word")
            clauses.append(Term(field_name, _scalar(value)))
        if i >= len(toks):
            break
        take("word", "AND")
    return Filter(tuple(clauses))


# -- catalog --------------------------------------------------------------------------------

@dataclass(frozen=True)
class LabelInfo:
    label: str
    index: str
    kind: str            # "entity" | "edge"
    key: str = "id"
    src: str = "src"
    dst: str = "dst"


@dataclass
class Catalog:
    name: str
    labels: dict[str, LabelInfo]

    def resolve(self, label: str, node: NodePattern | None = None) -> LabelInfo:
        info = self.labels.get(label)
        if info is None:
            line, col = (node.line, node.column) if node is not None else (None, None)
            raise UnknownLabelError(f"unknown label {label!r} in catalog {self.name!r}", line, col)
        return info


FINBENCH_ENTITIES = ("Person", "Account", "Loan", "Medium", "Company")
FINBENCH_EDGES = (
    "AccountTransferAccount", "AccountWithdrawAccount", "AccountRepayLoan",
    "LoanDepositAccount", "MediumSignInAccount", "PersonOwnAccount", "CompanyOwnAccount",
    "PersonApplyLoan", "PersonGuaranteePerson", "PersonInvestCompany",
)

FINBENCH = Catalog("ldbc-finbench", {
    **{l: LabelInfo(l, l, "entity") for l in FINBENCH_ENTITIES},
    **{l: LabelInfo(l, l, "edge") for l in FINBENCH_EDGES},
})

CATALOGS = {FINBENCH.name: FINBENCH}


# -- lowering ---------------------------------------------------------------------------------

@dataclass
class _Slot:
    sid: int
    info: LabelInfo
    filters: list[Filter]
    var: str | None

    @property
    def filter(self) -> Filter:
        out = MATCH_ALL
        for f in self.filters:
            out = out & f
        return out


@dataclass
class PatternGraph:
    """Nodes of a (repetition-expanded) pattern and the key equalities linking them."""

    slots: list[_Slot] = field(default_factory=list)
    # (slot a, field on a, slot b, field on b)
    links: list[tuple[int, str, int, str]] = field(default_factory=list)
    vars: dict[str, int] = field(default_factory=dict)


def _link_fields(a: LabelInfo, b: LabelInfo, direction: str) -> tuple[str, str]:
    if a.kind == "entity" and b.kind == "edge":
        return (a.key, b.src) if direction == "->" else (a.key, b.dst)
    if a.kind == "edge" and b.kind == "entity":
        return (a.dst, b.key) if direction == "->" else (a.src, b.key)
    raise LoweringError(f"arrow between {a.label} and {b.label}: entity and edge labels must alternate")


def _expand(elements: Sequence[Element], reps: dict[int, int], counter: itertools.count) -> list:
    out = []
    for e in elements:
        if isinstance(e, Group):
            r = reps[id(e)]
            for i in range(r):
                tag = next(counter)
                out.extend(_rename(_expand(e.elements, reps, counter), tag))
        else:
            out.append(e)
    return out


def _rename(elements, tag: int):
    # group-local variables get one copy per repetition
    return [NodePattern(f"{e.var}#{tag}", e.labels, e.where, e.line, e.column)
            if isinstance(e, NodePattern) and e.var else e for e in elements]


def _groups(elements) -> list[Group]:
    out = []
    for e in elements:
        if isinstance(e, Group):
            out.append(e)
            out.extend(_groups(e.elements))
    return out


def _walk_nodes(elements):
    for e in elements:
        if isinstance(e, NodePattern):
            yield e
        elif isinstance(e, Group):
            yield from _walk_nodes(e.elements)


def check_supported(ast: QueryAst) -> None:
    """Raise :class:`UnsupportedFeatureError` for constructs the engine cannot plan."""
    for item in ast.select:
        if isinstance(item, Call):
            if item.name.upper() == "JACCARD":
                raise UnsupportedFeatureError(SET_SIMILARITY, item.render())
            raise UnsupportedFeatureError(f"function {item.name}", item.render())
    nodes = list(_walk_nodes(ast.elements))
    for n in nodes:
        if len(n.labels) > 1:
            raise UnsupportedFeatureError(LABEL_DISJUNCTION, "|".join(n.labels))
    for n in nodes:
        if n.where and re.search(r"\b(COUNT|DEGREE)\s*\(", n.where):
            raise UnsupportedFeatureError(DEGREE_CONDITION, n.where)
    bound = ast.variables()
    for n in nodes:
        if n.where:
            for m in re.finditer(r":\s*([A-Za-z_]\w*)\.([A-Za-z_]\w*)", n.where):
                if m.group(1) in bound:
                    raise UnsupportedFeatureError(CROSS_NODE_REFERENCE, m.group(0).lstrip(": "))
    _check_cycles(ast.elements)


def _check_cycles(elements) -> None:
    bound: set[str] = set()
    prev_arrow = False
    for e in elements:
        if isinstance(e, Arrow):
            prev_arrow = True
            continue
        if isinstance(e, NodePattern) and e.var:
            if prev_arrow and e.var in bound:
                raise UnsupportedFeatureError(CYCLE, f"->{e.render()}")
            bound.add(e.var)
        prev_arrow = False


def build_pattern_graph(elements: Sequence[Element], catalog: Catalog) -> PatternGraph:
    """Unify juxtaposed nodes and turn arrows into key equalities."""
    g = PatternGraph()
    prev: int | None = None
    arrow: str | None = None

    def new_slot(node: NodePattern) -> int:
        if not node.labels:
            raise LoweringError(f"node {node.render()} needs a label", node.line, node.column)
        info = catalog.resolve(node.labels[0], node)
        flt = [parse_filter(node.where)] if node.where else []
        slot = _Slot(len(g.slots), info, flt, node.var)
        g.slots.append(slot)
        if node.var:
            g.vars[node.var] = slot.sid
        return slot.sid

    for e in elements:
        if isinstance(e, Arrow):
            if prev is None:
                raise LoweringError("arrow without a preceding node")
            arrow = e.direction
            continue
        if isinstance(e, Group):
            raise LoweringError("groups must be expanded before building the pattern graph")
        if arrow is not None:
            if e.var and e.var in g.vars:
                raise UnsupportedFeatureError(CYCLE, f"{arrow}{e.render()}")
            sid = new_slot(e)
            fa, fb = _link_fields(g.slots[prev].info, g.slots[sid].info, arrow)
            g.links.append((prev, fa, sid, fb))
            prev, arrow = sid, None
        elif e.var and e.var in g.vars and e.is_bare_ref:
            prev = g.vars[e.var]
        elif prev is None:
            prev = new_slot(e)
        else:
            slot = g.slots[prev]
            if e.labels:
                info = catalog.resolve(e.labels[0], e)
                if info.label != slot.info.label:
                    raise LoweringError(f"adjacent nodes {slot.info.label} and {info.label} cannot denote "
                                        "the same node", e.line, e.column)
            if e.where:
                slot.filters.append(parse_filter(e.where))
            if e.var:
                if slot.var and slot.var != e.var:
                    raise LoweringError(f"variables {slot.var!r} and {e.var!r} denote the same node",
                                        e.line, e.column)
                slot.var = e.var
                g.vars[e.var] = prev
    return g


@dataclass
class SelectColumn:
    var: str
    field: str

    @property
    def name(self) -> str:
        return f"{self.var}.{self.field}"


@dataclass
class UnionPlan:
    """One plan per repetition count of the quantified groups; rows are unioned by binding."""

    plans: list[LogicalPlan]
    columns: list[SelectColumn]
    select_vars: list[str]


@dataclass
class PathPlan:
    spec: PathQuerySpec
    path_var: str


def _bind_filter(f: Filter, params: Mapping | None) -> Filter:
    return f if params is None or not f.params() else f.bind(params)


def _join_tree(g: PatternGraph, root: int, selected: set[int], fields: dict[int, list[str]],
               params: Mapping | None) -> ScanNode:
    adj: dict[int, list[tuple[str, int, str]]] = {s.sid: [] for s in g.slots}
    for a, fa, b, fb in g.links:
        adj[a].append((fa, b, fb))
        adj[b].append((fb, a, fa))

    def contains_selected(sid: int, parent: int | None) -> bool:
        if sid in selected:
            return True
        return any(contains_selected(n, sid) for _, n, _ in adj[sid] if n != parent)

    def build(sid: int, parent: int | None) -> ScanNode:
        slot = g.slots[sid]
        joins = []
        for pf, n, cf in adj[sid]:
            if n == parent:
                continue
            kind = "inner" if contains_selected(n, sid) else "semi"
            joins.append(JoinNode(kind, pf, cf, build(n, sid)))
        alias = slot.var if slot.var and "#" not in slot.var else f"_{sid}"
        return ScanNode(slot.info.index, _bind_filter(slot.filter, params), tuple(fields.get(sid, ())),
                        tuple(joins), alias=alias)

    return build(root, None)


def lower_to_plan(ast: QueryAst, catalog: Catalog | Mapping | None = None,
                  params: Mapping | None = None) -> UnionPlan | PathPlan:
    """Lower a parsed query to join plans (one per repetition count) or a path query."""
    if catalog is None:
        catalog = CATALOGS.get(ast.source)
        if catalog is None:
            raise LoweringError(f"unknown catalog {ast.source!r}")
    check_supported(ast)
    path_selected = ast.path_var is not None and any(
        isinstance(s, FieldRef) and s.field is None and s.var == ast.path_var for s in ast.select)
    if ast.all_shortest or path_selected:
        return _lower_path(ast, catalog, params)

    columns = []
    for item in ast.select:
        if item.field is None:
            raise LoweringError(f"select item {item.render()} needs a field")
        columns.append(SelectColumn(item.var, item.field))
    select_vars = list(dict.fromkeys(c.var for c in columns))

    groups = _groups(ast.elements)
    plans = []
    ranges = [range(gr.min, gr.max + 1) for gr in groups]
    for combo in itertools.product(*ranges):
        reps = {id(gr): r for gr, r in zip(groups, combo)}
        elements = _expand(ast.elements, reps, itertools.count(1))
        g = build_pattern_graph(elements, catalog)
        for v in select_vars:
            if v not in g.vars:
                raise LoweringError(f"variable {v!r} inside a quantified group cannot be selected")
        fields: dict[int, list[str]] = {}
        for c in columns:
            fields.setdefault(g.vars[c.var], [])
            if c.field not in fields[g.vars[c.var]]:
                fields[g.vars[c.var]].append(c.field)
        root = g.vars[select_vars[0]]
        tree = _join_tree(g, root, {g.vars[v] for v in select_vars}, fields, params)
        name = "q" + ("" if not combo else "_r" + "_".join(map(str, combo)))
        plans.append(LogicalPlan(tree, name))
    return UnionPlan(plans, columns, select_vars)


def _chain(elements: Sequence[Element], catalog: Catalog) -> PatternGraph:
    g = build_pattern_graph(elements, catalog)
    n = len(g.slots)
    expected = [(i, i + 1) for i in range(n - 1)]
    if [(a, b) for a, _, b, _ in g.links] != expected:
        raise LoweringError("path patterns must be linear")
    return g


def _hops(g: PatternGraph, params) -> tuple[Hop, ...]:
    return tuple(Hop(fa, g.slots[b].info.index, fb, _bind_filter(g.slots[b].filter, params))
                 for a, fa, b, fb in g.links)


def _lower_path(ast: QueryAst, catalog: Catalog, params) -> PathPlan:
    top_groups = [i for i, e in enumerate(ast.elements) if isinstance(e, Group)]
    if len(top_groups) > 1 or _groups([e for e in ast.elements if isinstance(e, Group)]) != [
            ast.elements[i] for i in top_groups]:
        raise LoweringError("path queries support a single, non-nested quantified group")
    if not top_groups:
        g = _chain(ast.elements, catalog)
        first, last = g.slots[0], g.slots[-1]
        schema = PathSchema(first.info.index, prefix=Segment(first.info.index, _hops(g, params)))
        spec = PathQuerySpec(schema, _bind_filter(first.filter, params), _bind_filter(last.filter, params),
                             1, 1, ALL_SHORTEST if ast.all_shortest else ALL_UP_TO_L)
        return PathPlan(spec, ast.path_var or "trace")

    gi = top_groups[0]
    group: Group = ast.elements[gi]
    before, after = ast.elements[:gi], ast.elements[gi + 1:]
    for part in (before, after):
        if part and isinstance(part[0 if part is after else -1], Arrow):
            raise LoweringError("a quantified group must be joined to its neighbours by juxtaposition")
    gg = _chain(group.elements, catalog)
    if len(gg.slots) < 2:
        raise LoweringError("a quantified group needs at least one hop")
    g_first, g_last = gg.slots[0], gg.slots[-1]
    if g_first.info.label != g_last.info.label:
        raise LoweringError("a repeated group must start and end on the same label")
    group_seg = Segment(g_first.info.index, _hops(gg, params), _bind_filter(g_first.filter, params))

    prefix = None
    source = MATCH_ALL
    start = g_first.info.index
    if before:
        pg = _chain(before, catalog)
        start = pg.slots[0].info.index
        source = _bind_filter(pg.slots[0].filter, params)
        if pg.slots[-1].info.label != g_first.info.label:
            raise LoweringError("group entry label differs from the preceding node")
        if len(pg.slots) > 1:
            # the prefix's last node filter travels on its final hop, not on every repetition
            prefix = Segment(start, _hops(pg, params))

    suffix = None
    target = MATCH_ALL
    if after:
        sg = _chain(after, catalog)
        if sg.slots[0].info.label != g_last.info.label:
            raise LoweringError("node after the group must carry the group's exit label")
        suffix = Segment(sg.slots[0].info.index, _hops(sg, params), _bind_filter(sg.slots[0].filter, params))
        target = _bind_filter(sg.slots[-1].filter, params)
    schema = PathSchema(start, group=group_seg, prefix=prefix, suffix=suffix)
    spec = PathQuerySpec(schema, source, target, group.min, group.max,
                         ALL_SHORTEST if ast.all_shortest else ALL_UP_TO_L)
    return PathPlan(spec, ast.path_var or "trace")


def parse_params(pairs: Sequence[str]) -> dict:
    """``["K=V", ...]`` to a parameter map; numeric values become numbers."""
    out = {}
    for p in pairs:
        if "=" not in p:
            raise ValueError(f"parameter {p!r} must look like NAME=VALUE")
        k, v = p.split("=", 1)
        out[k.strip()] = _scalar(v.strip()) if _NUMBER.match(v.strip()) else v.strip()
    return out
