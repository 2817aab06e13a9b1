"""Query language front end.

Tokenizer, recursive-descent parser, semantic validation against stream
schemas, canonical rendering (used as the table key for standing queries),
and translation to named-function call expressions.

The operator vocabulary is an extensible registry: a new operator kind
registers its keyword, argument slots, and a semantic validator, and the
parser picks it up without modification.

Concrete syntax notes, where the abstract grammar leaves room:
- operator keywords are case-insensitive; stream and attribute names are not
- the leading format argument (DataStream or Data) is optional everywhere it
  is allowed and defaults to DataStream
- identifiers may contain underscores (stream aliases like GPS_S1 need them)
- numbers may be decimal (heat-map cell sizes) and may carry a leading minus
- the two children of SEQUENCE are separated by "->" (the unicode arrow is
  accepted as an alias)
- "&" and "|" in boolean expressions share one precedence level and associate
  to the left
- time literals (nn:nn:nn.nnn) are accepted lexically but no built-in
  operator consumes them yet
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

from .packet import Name, Schema

__all__ = [
    "QueryError",
    "LexError",
    "ParseError",
    "SemanticError",
    "Token",
    "tokenize",
    "Duration",
    "AttrRef",
    "NumberLit",
    "TimeLit",
    "Comparison",
    "BoolOp",
    "BoolExpr",
    "OperatorNode",
    "OperatorDef",
    "register_operator",
    "operator_defs",
    "StreamBinding",
    "StreamRegistry",
    "default_streams",
    "SchemaCtx",
    "parse_query",
    "create_operator_graph",
    "to_nfn_expression",
    "canonical_text",
    "query_hash",
    "GPS_SCHEMA",
    "PLUG_SCHEMA",
    "PREDICTION_SCHEMA",
]


class QueryError(ValueError):
    """Base for all query front-end failures."""


class LexError(QueryError):
    def __init__(self, message: str, pos: int) -> None:
        super().__init__("%s (at offset %d)" % (message, pos))
        self.pos = pos


class ParseError(QueryError):
    """Syntax-level rejection: unbalanced parentheses, missing tokens."""


class SemanticError(QueryError):
    """Unknown operator, bad parameter count or kind, unresolvable attribute."""


# ---------------------------------------------------------------------------
# schemas


GPS_SCHEMA = Schema(
    "gps",
    ("ts", "s_id", "latitude", "longitude", "altitude", "accuracy", "distance", "speed"),
)
PLUG_SCHEMA = Schema(
    "plug",
    ("ts", "id", "value", "property", "plug_id", "household_id", "house_id"),
)
PREDICTION_SCHEMA = Schema(
    "prediction",
    ("ts", "plug_id", "household_id", "house_id", "predicted_load"),
)
AGG_SCHEMA = Schema("agg", ("ts", "value"))
BOOL_SCHEMA = Schema("bool", ("ts", "matched"))
GRID_SCHEMA = Schema("grid", ("ts", "grid"))


@dataclass(frozen=True)
class StreamBinding:
    """Maps a query-level alias to a producer stream name and its schema."""

    alias: str
    name: Name
    schema: Schema


StreamRegistry = dict[str, StreamBinding]


def default_streams() -> StreamRegistry:
    """Built-in alias table used when no scenario supplies one."""
    table = [
        StreamBinding("GPS_S1", Name.from_uri("/node/p1/gps"), GPS_SCHEMA),
        StreamBinding("GPS_S2", Name.from_uri("/node/p2/gps"), GPS_SCHEMA),
        StreamBinding("PLUG_S1", Name.from_uri("/node/p1/plug"), PLUG_SCHEMA),
        StreamBinding("PLUG_S2", Name.from_uri("/node/p2/plug"), PLUG_SCHEMA),
    ]
    return {b.alias: b for b in table}


# ---------------------------------------------------------------------------
# tokens


@dataclass(frozen=True)
class Token:
    kind: str  # IDENT NUMBER DURATION ATTR TIME LPAREN RPAREN COMMA DOT CMP AMP PIPE ARROW
    text: str
    pos: int
    value: object = None


_TIME_RE = re.compile(r"\d{2}:\d{2}:\d{2}\.\d{3}")
_WORD_RE = re.compile(r"[A-Za-z0-9_]+")
_NUM_RE = re.compile(r"\d+(\.\d+)?")


def tokenize(text: str) -> list[Token]:
    """Split query text into tokens; offsets are kept for diagnostics."""
    toks: list[Token] = []
    i = 0
    n = len(text)
    while i < n:
        c = text[i]
        if c.isspace():
            i += 1
            continue
        if c == "(":
            toks.append(Token("LPAREN", c, i))
            i += 1
        elif c == ")":
            toks.append(Token("RPAREN", c, i))
            i += 1
        elif c == ",":
            toks.append(Token("COMMA", c, i))
            i += 1
        elif c == ".":
            toks.append(Token("DOT", c, i))
            i += 1
        elif c == "&":
            toks.append(Token("AMP", c, i))
            i += 1
        elif c == "|":
            toks.append(Token("PIPE", c, i))
            i += 1
        elif c == "→":
            toks.append(Token("ARROW", "->", i))
            i += 1
        elif c == "-":
            if text.startswith("->", i):
                toks.append(Token("ARROW", "->", i))
                i += 2
            elif i + 1 < n and text[i + 1].isdigit():
                m = _NUM_RE.match(text, i + 1)
                lit = "-" + m.group(0)
                toks.append(Token("NUMBER", lit, i, float(lit)))
                i += len(lit)
            else:
                raise LexError("stray '-'", i)
        elif c in "<>=":
            if text.startswith("<=", i) or text.startswith(">=", i):
                toks.append(Token("CMP", text[i : i + 2], i))
                i += 2
            else:
                toks.append(Token("CMP", c, i))
                i += 1
        elif c == "'":
            end = text.find("'", i + 1)
            if end < 0:
                raise LexError("unterminated quote", i)
            toks.append(Token("ATTR", text[i + 1 : end], i, text[i + 1 : end]))
            i = end + 1
        elif c.isdigit():
            m = _TIME_RE.match(text, i)
            if m:
                toks.append(Token("TIME", m.group(0), i, m.group(0)))
                i = m.end()
                continue
            w = _WORD_RE.match(text, i).group(0)
            if re.fullmatch(r"\d+[sm]", w):
                if int(w[:-1]) < 1:
                    raise LexError("duration must be at least 1 unit", i)
                toks.append(Token("DURATION", w, i, Duration(int(w[:-1]), w[-1])))
            else:
                m2 = _NUM_RE.match(text, i)
                # decimal forms like 0.25: the word regex stops at the dot
                if m2 and m2.end() - i > len(w):
                    toks.append(Token("NUMBER", m2.group(0), i, float(m2.group(0))))
                    i = m2.end()
                    continue
                if _NUM_RE.fullmatch(w):
                    toks.append(Token("NUMBER", w, i, float(w)))
                else:
                    toks.append(Token("IDENT", w, i, w))
            i += len(w)
        elif c.isalpha() or c == "_":
            w = _WORD_RE.match(text, i).group(0)
            toks.append(Token("IDENT", w, i, w))
            i += len(w)
        else:
            raise LexError("illegal character %r" % c, i)
    return toks


# ---------------------------------------------------------------------------
# expression values


@dataclass(frozen=True)
class Duration:
    magnitude: int
    unit: str  # "s" or "m"

    def __post_init__(self) -> None:
        if self.magnitude < 1:
            raise ValueError("duration magnitude must be >= 1")
        if self.unit not in ("s", "m"):
            raise ValueError("duration unit must be s or m")

    @property
    def ms(self) -> int:
        return self.magnitude * (1000 if self.unit == "s" else 60_000)

    def __str__(self) -> str:
        return "%d%s" % (self.magnitude, self.unit)


@dataclass(frozen=True)
class AttrRef:
    name: str
    alias: Optional[str] = None

    def __str__(self) -> str:
        if self.alias:
            return "%s.'%s'" % (self.alias, self.name)
        return "'%s'" % self.name


@dataclass(frozen=True)
class NumberLit:
    value: float

    def __str__(self) -> str:
        return _fmt_number(self.value)


@dataclass(frozen=True)
class TimeLit:
    text: str

    def __str__(self) -> str:
        return self.text


Operand = Union[AttrRef, NumberLit, TimeLit]


@dataclass(frozen=True)
class Comparison:
    left: Operand
    op: str  # < > = <= >=
    right: Operand

    def __str__(self) -> str:
        return "%s%s%s" % (self.left, self.op, self.right)


@dataclass(frozen=True)
class BoolOp:
    op: str  # & or |
    left: "BoolExpr"
    right: "BoolExpr"

    def __str__(self) -> str:
        return "%s%s%s" % (self.left, self.op, self.right)


BoolExpr = Union[Comparison, BoolOp]


def _fmt_number(v: float) -> str:
    if v == int(v):
        return str(int(v))
    return repr(v)


# ---------------------------------------------------------------------------
# schema context: how attribute references resolve across join segments


@dataclass(frozen=True)
class SchemaCtx:
    """Positional attribute layout of an operator's output tuples.

    A join concatenates its inputs, so one output carries several aliased
    segments; qualified references pick the segment, unqualified ones take
    the first segment that knows the attribute.
    """

    schema_id: str
    segments: tuple[tuple[Optional[str], Schema, int], ...]  # (alias, schema, offset)

    @classmethod
    def single(cls, alias: Optional[str], schema: Schema) -> "SchemaCtx":
        return cls(schema_id=schema.schema_id, segments=((alias, schema, 0),))

    @property
    def width(self) -> int:
        alias, schema, off = self.segments[-1]
        return off + len(schema.attribute_names)

    def join(self, other: "SchemaCtx") -> "SchemaCtx":
        shifted = tuple(
            (alias, schema, off + self.width) for alias, schema, off in other.segments
        )
        return SchemaCtx(
            schema_id="join(%s,%s)" % (self.schema_id, other.schema_id),
            segments=self.segments + shifted,
        )

    def resolve(self, ref: AttrRef) -> int:
        """Index of the referenced attribute in the output values."""
        for alias, schema, off in self.segments:
            if ref.alias is not None and alias != ref.alias:
                continue
            try:
                return off + schema.index_of(ref.name)
            except KeyError:
                if ref.alias is not None:
                    break
        raise SemanticError("attribute %s not in schema %s" % (ref, self.schema_id))

    def aliases(self) -> set[str]:
        return {a for a, _, _ in self.segments if a is not None}


# ---------------------------------------------------------------------------
# operator tree


@dataclass
class OperatorNode:
    """Vertex of the binary operator tree."""

    kind: str
    params: list
    left: Optional["OperatorNode"] = None
    right: Optional["OperatorNode"] = None
    fmt: str = "DataStream"
    index: int = field(default=-1, compare=False)
    assigned_node: Optional[str] = field(default=None, compare=False)
    nfn: Optional[str] = field(default=None, compare=False)
    ctx: Optional[SchemaCtx] = field(default=None, compare=False)

    @property
    def children(self) -> list["OperatorNode"]:
        return [c for c in (self.left, self.right) if c is not None]

    @property
    def is_leaf(self) -> bool:
        return self.left is None and self.right is None

    @property
    def stream_alias(self) -> Optional[str]:
        if self.kind == "WINDOW":
            return self.params[0]
        return None

    def walk(self):
        """Pre-order traversal."""
        yield self
        for child in self.children:
            yield from child.walk()

    def stream_aliases(self) -> set[str]:
        out = set()
        for node in self.walk():
            alias = node.stream_alias
            if alias:
                out.add(alias)
        return out

    def depth_map(self) -> dict[int, int]:
        """index -> depth (root at 0); indices must be assigned first."""
        out: dict[int, int] = {}

        def visit(node: "OperatorNode", d: int) -> None:
            out[node.index] = d
            for child in node.children:
                visit(child, d + 1)

        visit(self, 0)
        return out


# ---------------------------------------------------------------------------
# operator registry (factory pattern: new kinds plug in here)


@dataclass(frozen=True)
class OperatorDef:
    keyword: str
    slots: tuple[str, ...]  # each: expr boolexp attr stream extent number duration
    nfn_name: str
    accepts_format: bool = True
    arrow: bool = False  # children separated by -> instead of commas
    child_kind: Optional[str] = None  # required kind of every child, if any
    # returns the output SchemaCtx; raises SemanticError on bad params
    semantics: Callable[["OperatorNode", list[SchemaCtx], StreamRegistry], SchemaCtx] = None  # type: ignore[assignment]

    @property
    def child_count(self) -> int:
        return sum(1 for s in self.slots if s == "expr")


_REGISTRY: dict[str, OperatorDef] = {}


def register_operator(op: OperatorDef) -> None:
    key = op.keyword.upper()
    if key in _REGISTRY:
        raise ValueError("operator %s already registered" % key)
    _REGISTRY[key] = op


def operator_defs() -> dict[str, OperatorDef]:
    return dict(_REGISTRY)


def _sem_window(node: OperatorNode, child_ctxs, streams: StreamRegistry) -> SchemaCtx:
    alias = node.params[0]
    if alias not in streams:
        raise SemanticError("unknown stream alias %r" % alias)
    return SchemaCtx.single(alias, streams[alias].schema)


def _check_boolexpr(expr: BoolExpr, ctx: SchemaCtx) -> None:
    if isinstance(expr, BoolOp):
        _check_boolexpr(expr.left, ctx)
        _check_boolexpr(expr.right, ctx)
        return
    for side in (expr.left, expr.right):
        if isinstance(side, AttrRef):
            ctx.resolve(side)


def _sem_filter(node: OperatorNode, child_ctxs, streams) -> SchemaCtx:
    ctx = child_ctxs[0]
    _check_boolexpr(node.params[0], ctx)
    return ctx


def _sem_join(node: OperatorNode, child_ctxs, streams) -> SchemaCtx:
    ctx = child_ctxs[0].join(child_ctxs[1])
    _check_boolexpr(node.params[0], ctx)
    return ctx


def _sem_sequence(node: OperatorNode, child_ctxs, streams) -> SchemaCtx:
    return SchemaCtx.single(None, BOOL_SCHEMA)


def _sem_agg(node: OperatorNode, child_ctxs, streams) -> SchemaCtx:
    child_ctxs[0].resolve(node.params[0])
    return SchemaCtx.single(None, AGG_SCHEMA)


def _sem_heatmap(node: OperatorNode, child_ctxs, streams) -> SchemaCtx:
    cell, lat_min, lat_max, long_min, long_max = node.params[:5]
    if cell <= 0:
        raise SemanticError("cell size must be positive")
    if lat_max <= lat_min or long_max <= long_min:
        raise SemanticError("degenerate heat-map bounds")
    ctx = child_ctxs[0]
    ctx.resolve(AttrRef("latitude"))
    ctx.resolve(AttrRef("longitude"))
    return SchemaCtx.single(None, GRID_SCHEMA)


def _sem_predict(node: OperatorNode, child_ctxs, streams) -> SchemaCtx:
    ctx = child_ctxs[0]
    for attr in ("value", "plug_id", "household_id", "house_id"):
        ctx.resolve(AttrRef(attr))
    # predictions stay joinable on the source alias
    alias = next(iter(ctx.aliases()), None)
    return SchemaCtx.single(alias, PREDICTION_SCHEMA)


def _register_builtins() -> None:
    register_operator(
        OperatorDef("WINDOW", ("stream", "extent"), "Window", accepts_format=False,
                    semantics=_sem_window)
    )
    register_operator(
        OperatorDef("FILTER", ("expr", "boolexp"), "Filter", semantics=_sem_filter)
    )
    register_operator(
        OperatorDef("JOIN", ("expr", "expr", "boolexp"), "Join", semantics=_sem_join)
    )
    register_operator(
        OperatorDef("SEQUENCE", ("expr", "expr"), "Sequence", arrow=True,
                    semantics=_sem_sequence)
    )
    for agg in ("SUM", "MIN", "MAX", "AVG", "COUNT"):
        register_operator(
            OperatorDef(agg, ("attr", "expr"), agg.capitalize(),
                        child_kind="WINDOW", semantics=_sem_agg)
        )
    register_operator(
        OperatorDef(
            "HEATMAP",
            ("number", "number", "number", "number", "number", "expr"),
            "Heatmap",
            semantics=_sem_heatmap,
        )
    )
    register_operator(
        OperatorDef(
            "PREDICT",
            ("duration", "expr"),
            "Predict",
            child_kind="WINDOW",
            semantics=_sem_predict,
        )
    )


_register_builtins()


# ---------------------------------------------------------------------------
# parser


class _Parser:
    def __init__(self, toks: list[Token], streams: StreamRegistry) -> None:
        self.toks = toks
        self.pos = 0
        self.streams = streams

    def peek(self) -> Optional[Token]:
        if self.pos < len(self.toks):
            return self.toks[self.pos]
        return None

    def next(self) -> Token:
        tok = self.peek()
        if tok is None:
            raise ParseError("unexpected end of query")
        self.pos += 1
        return tok

    def expect(self, kind: str) -> Token:
        tok = self.peek()
        if tok is None:
            raise ParseError("unexpected end of query, expected %s" % kind)
        if tok.kind != kind:
            raise ParseError(
                "expected %s but found %r at offset %d" % (kind, tok.text, tok.pos)
            )
        self.pos += 1
        return tok

    # -- expressions --------------------------------------------------------

    def parse_expr(self) -> OperatorNode:
        tok = self.peek()
        if tok is None:
            raise ParseError("unexpected end of query")
        if tok.kind != "IDENT":
            raise ParseError("expected operator at offset %d, found %r" % (tok.pos, tok.text))
        keyword = tok.text.upper()
        op = _REGISTRY.get(keyword)
        if op is None:
            raise SemanticError("unknown operator %r" % tok.text)
        self.next()
        self.expect("LPAREN")
        fmt = "DataStream"
        if op.accepts_format:
            t = self.peek()
            if (
                t is not None
                and t.kind == "IDENT"
                and t.text.upper() in ("DATASTREAM", "DATA")
                and self._followed_by_comma()
            ):
                fmt = "Data" if t.text.upper() == "DATA" else "DataStream"
                self.next()
                self.expect("COMMA")
        params: list = []
        children: list[OperatorNode] = []
        for slot_no, slot in enumerate(op.slots):
            if slot_no > 0:
                if op.arrow and slot == "expr" and children:
                    self.expect("ARROW")
                else:
                    tok = self.peek()
                    if tok is None or tok.kind == "RPAREN":
                        raise SemanticError(
                            "%s takes %d arguments" % (keyword, len(op.slots))
                        )
                    self.expect("COMMA")
            if slot == "expr":
                children.append(self.parse_expr())
            elif slot == "boolexp":
                params.append(self.parse_boolexpr())
            elif slot == "attr":
                params.append(self._parse_attr_param())
            elif slot == "stream":
                params.append(self.expect("IDENT").text)
            elif slot == "extent":
                params.append(self._parse_extent())
            elif slot == "number":
                tok = self.expect("NUMBER")
                params.append(tok.value)
            elif slot == "duration":
                tok = self.expect("DURATION")
                params.append(tok.value)
            else:  # pragma: no cover - registry misuse
                raise AssertionError("bad slot kind %r" % slot)
        tok = self.peek()
        if tok is not None and tok.kind == "COMMA":
            raise SemanticError("%s takes %d arguments" % (keyword, len(op.slots)))
        self.expect("RPAREN")
        node = OperatorNode(kind=keyword, params=params, fmt=fmt)
        if children:
            node.left = children[0]
        if len(children) > 1:
            node.right = children[1]
        if op.child_kind is not None:
            for child in node.children:
                if child.kind != op.child_kind:
                    raise SemanticError(
                        "%s requires %s children, found %s"
                        % (keyword, op.child_kind, child.kind)
                    )
        return node

    def _followed_by_comma(self) -> bool:
        nxt = self.pos + 1
        return nxt < len(self.toks) and self.toks[nxt].kind == "COMMA"

    def _parse_attr_param(self) -> AttrRef:
        tok = self.peek()
        if tok is not None and tok.kind == "ATTR":
            self.next()
            return AttrRef(tok.value)
        if tok is not None and tok.kind == "IDENT":
            self.next()
            return AttrRef(tok.text)
        raise SemanticError("expected an attribute name")

    def _parse_extent(self):
        tok = self.peek()
        if tok is not None and tok.kind == "DURATION":
            self.next()
            return tok.value
        if tok is not None and tok.kind == "NUMBER":
            self.next()
            if tok.value != int(tok.value) or tok.value < 1:
                raise SemanticError("window size must be a positive whole number")
            return int(tok.value)
        raise SemanticError("window size must be numeric")

    # -- boolean expressions -------------------------------------------------

    def parse_boolexpr(self) -> BoolExpr:
        expr: BoolExpr = self._parse_comparison()
        while True:
            tok = self.peek()
            if tok is None or tok.kind not in ("AMP", "PIPE"):
                return expr
            self.next()
            rhs = self._parse_comparison()
            expr = BoolOp(op="&" if tok.kind == "AMP" else "|", left=expr, right=rhs)

    def _parse_comparison(self) -> Comparison:
        left = self._parse_operand()
        tok = self.expect("CMP")
        right = self._parse_operand()
        return Comparison(left=left, op=tok.text, right=right)

    def _parse_operand(self) -> Operand:
        tok = self.next()
        if tok.kind == "NUMBER":
            return NumberLit(tok.value)
        if tok.kind == "TIME":
            return TimeLit(tok.text)
        if tok.kind == "ATTR":
            return AttrRef(tok.value)
        if tok.kind == "IDENT":
            nxt = self.peek()
            if nxt is not None and nxt.kind == "DOT":
                self.next()
                attr = self.expect("ATTR")
                return AttrRef(attr.value, alias=tok.text)
            return AttrRef(tok.text)
        raise ParseError("bad operand %r at offset %d" % (tok.text, tok.pos))


def _validate(node: OperatorNode, streams: StreamRegistry) -> SchemaCtx:
    child_ctxs = [_validate(c, streams) for c in node.children]
    op = _REGISTRY[node.kind]
    ctx = op.semantics(node, child_ctxs, streams)
    node.ctx = ctx
    return ctx


def parse_query(query: str, streams: Optional[StreamRegistry] = None) -> OperatorNode:
    """Parse and validate a query, returning the operator tree."""
    if streams is None:
        streams = default_streams()
    toks = tokenize(query)
    if not toks:
        raise ParseError("empty query")
    parser = _Parser(toks, streams)
    tree = parser.parse_expr()
    if parser.peek() is not None:
        tok = parser.peek()
        raise ParseError("trailing input %r at offset %d" % (tok.text, tok.pos))
    _validate(tree, streams)
    return tree


# ---------------------------------------------------------------------------
# rendering: canonical text, lambda expressions


def _render_param(p) -> str:
    if isinstance(p, Duration):
        return str(p)
    if isinstance(p, float):
        return _fmt_number(p)
    if isinstance(p, int):
        return str(p)
    if isinstance(p, (AttrRef, NumberLit, TimeLit, Comparison, BoolOp)):
        return str(p)
    return str(p)


def canonical_text(node: OperatorNode) -> str:
    """Whitespace-free rendering; re-parsing it yields an equal tree.

    Standing queries are keyed by this form, so formatting differences in
    consumer-supplied text cannot create duplicate table entries.
    """
    op = _REGISTRY[node.kind]
    parts: list[str] = []
    if node.fmt == "Data":
        parts.append("Data")
    children = list(node.children)
    params = list(node.params)
    ci = pi = 0
    rendered: list[str] = []
    for slot in op.slots:
        if slot == "expr":
            rendered.append(canonical_text(children[ci]))
            ci += 1
        else:
            rendered.append(_render_param(params[pi]))
            pi += 1
    if op.arrow:
        body = "->".join(rendered)
    else:
        body = ",".join(rendered)
    if parts:
        body = parts[0] + "," + body
    return "%s(%s)" % (node.kind, body)


def query_hash(canonical: str, salt: str = "") -> str:
    digest = hashlib.sha1((canonical + "|" + salt).encode("utf-8")).hexdigest()
    return digest[:12]


def to_nfn_expression(node: OperatorNode) -> str:
    """Nested (call ...) text for the subtree rooted at node.

    The call arity is one for the service name plus one per child plus one
    per literal parameter. Unplaced operators carry the nodeQuery
    placeholder; assignment rewrites it to the hosting node id.
    """
    op = _REGISTRY[node.kind]
    host = node.assigned_node or "nodeQuery"
    args = [to_nfn_expression(c) for c in node.children]
    args += [_render_param(p) for p in node.params]
    n = 1 + len(node.params) + len(node.children)
    return "(call %d /node/%s/nfn_service_%s %s)" % (n, host, op.nfn_name, " ".join(args))


def create_operator_graph(
    query: str, streams: Optional[StreamRegistry] = None
) -> OperatorNode:
    """Parse plus plan-node bookkeeping: pre-order indices and lambda text."""
    tree = parse_query(query, streams)
    for i, node in enumerate(tree.walk()):
        node.index = i
    for node in tree.walk():
        node.nfn = to_nfn_expression(node)
    return tree
