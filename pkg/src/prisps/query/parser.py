"""Hand-written lexer and recursive-descent parser for the query subset.

Grammar::

    query      := annotation* stream_def+ from select insert
    annotation := '@' IDENT '(' [IDENT '=' STRING (',' IDENT '=' STRING)*] ')'
    stream_def := 'define' 'stream' IDENT '(' IDENT TYPE (',' IDENT TYPE)* ')' ';'
    from       := 'from' 'every' binding ('->' binding)* ['within' INT ('min'|'sec')]
    binding    := IDENT '=' IDENT ['[' cmp (('and'|'AND') cmp)* ']']
    cmp        := IDENT OP literal
    select     := 'select' item (',' item)*
    item       := 'count' '(' ref ')' ['as' IDENT] | ref ['as' IDENT]
    ref        := IDENT '.' IDENT
    insert     := 'insert' 'into' IDENT ';'
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from ..events import FIELD_TYPES, StreamSchema, value_conforms
from ..exceptions import ParseError, SemanticError
from .ast import (
    COMPARISON_OPS,
    RESERVED_FIELDS,
    TIME_UNITS,
    Annotation,
    Binding,
    Comparison,
    Duration,
    FieldRef,
    Predicate,
    QueryAst,
    SelectItem,
)

KEYWORDS = frozenset(
    {"define", "stream", "from", "every", "within", "select", "insert", "into", "as", "count", "and", "AND"}
)

_TOKEN_SPEC = [
    ("WS", r"[ \t\r\n]+"),
    ("COMMENT", r"--[^\n]*"),
    ("ARROW", r"->"),
    ("NUMBER", r"-?\d+(?:\.\d+)?(?:[eE][+-]?\d+)?"),
    ("STRING", r"'(?:[^'\\\n]|\\.)*'"),
    ("OP", r"==|!=|<=|>=|<|>"),
    ("IDENT", r"[A-Za-z_][A-Za-z0-9_]*"),
    ("PUNCT", r"[()\[\],;=.@]"),
]
_TOKEN_RE = re.compile("|".join(f"(?P<{name}>{pattern})" for name, pattern in _TOKEN_SPEC))


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
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1)
        kind, chunk = m.lastgroup, m.group()
        if kind not in ("WS", "COMMENT"):
            if kind == "IDENT" and chunk in KEYWORDS:
                kind = "KEYWORD"
            tokens.append(Token(kind, chunk, line, pos - line_start + 1))
        newlines = chunk.count("\n")
        if newlines:
            line += newlines
            line_start = pos + chunk.rfind("\n") + 1
        pos = m.end()
    tokens.append(Token("EOF", "", line, pos - line_start + 1))
    return tokens


def _unquote(token: str) -> str:
    return re.sub(r"\\(.)", r"\1", token[1:-1])


class _Parser:
    def __init__(self, text: str):
        self.tokens = tokenize(text)
        self.i = 0

    @property
    def tok(self) -> Token:
        return self.tokens[self.i]

    def fail(self, *expected):
        tok = self.tok
        found = "end of input" if tok.kind == "EOF" else repr(tok.text)
        raise ParseError(f"unexpected {found}", tok.line, tok.column, expected)

    def at(self, text: str) -> bool:
        return self.tok.text == text and self.tok.kind in ("KEYWORD", "PUNCT", "ARROW", "OP")

    def accept(self, text: str) -> bool:
        if self.at(text):
            self.i += 1
            return True
        return False

    def expect(self, text: str) -> Token:
        if not self.at(text):
            self.fail(repr(text))
        tok = self.tok
        self.i += 1
        return tok

    def ident(self, what: str = "identifier") -> str:
        if self.tok.kind != "IDENT":
            self.fail(what)
        tok = self.tok
        self.i += 1
        return tok.text

    def parse(self) -> QueryAst:
        annotations = []
        while self.at("@"):
            annotations.append(self.annotation())
        defs = [self.stream_def()]
        while self.at("define"):
            defs.append(self.stream_def())
        if not self.at("from"):
            self.fail("'define'", "'from'")
        bindings, within = self.from_clause()
        select = self.select_clause()
        self.expect("insert")
        self.expect("into")
        target = self.ident("stream name")
        self.expect(";")
        if self.tok.kind != "EOF":
            self.fail("end of input")
        return QueryAst(tuple(defs), tuple(bindings), tuple(select), target, within, tuple(annotations))

    def annotation(self) -> Annotation:
        self.expect("@")
        name = self.ident("annotation name")
        self.expect("(")
        params = []
        if not self.at(")"):
            while True:
                key = self.ident("annotation key")
                self.expect("=")
                if self.tok.kind != "STRING":
                    self.fail("string literal")
                params.append((key, _unquote(self.tok.text)))
                self.i += 1
                if not self.accept(","):
                    break
        self.expect(")")
        return Annotation(name, tuple(params))

    def stream_def(self) -> StreamSchema:
        self.expect("define")
        self.expect("stream")
        name = self.ident("stream name")
        self.expect("(")
        fields = []
        while True:
            fname = self.ident("field name")
            if self.tok.kind != "IDENT" or self.tok.text not in FIELD_TYPES:
                self.fail(*FIELD_TYPES)
            fields.append((fname, self.tok.text))
            self.i += 1
            if not self.accept(","):
                break
        self.expect(")")
        self.expect(";")
        if len({f for f, _ in fields}) != len(fields):
            raise SemanticError(f"stream {name} declares a field twice")
        return StreamSchema(name, tuple(fields))

    def from_clause(self):
        self.expect("from")
        self.expect("every")
        bindings = [self.binding()]
        while self.accept("->"):
            bindings.append(self.binding())
        within = None
        if self.accept("within"):
            tok = self.tok
            if tok.kind != "NUMBER" or not re.fullmatch(r"\d+", tok.text):
                self.fail("positive integer")
            self.i += 1
            unit = self.tok.text if self.tok.kind == "IDENT" else None
            if unit not in TIME_UNITS:
                self.fail(*TIME_UNITS)
            self.i += 1
            within = Duration(int(tok.text), unit)
        return bindings, within

    def binding(self) -> Binding:
        name = self.ident("binding name")
        self.expect("=")
        stream = self.ident("stream name")
        predicate = None
        if self.accept("["):
            comparisons = [self.comparison()]
            while self.accept("and") or self.accept("AND"):
                comparisons.append(self.comparison())
            self.expect("]")
            predicate = Predicate(tuple(comparisons))
        return Binding(name, stream, predicate)

    def comparison(self) -> Comparison:
        fname = self.ident("field name")
        if self.tok.kind != "OP":
            self.fail(*COMPARISON_OPS)
        op = self.tok.text
        self.i += 1
        tok = self.tok
        if tok.kind == "STRING":
            value = _unquote(tok.text)
        elif tok.kind == "NUMBER":
            value = float(tok.text) if any(ch in tok.text for ch in ".eE") else int(tok.text)
        else:
            self.fail("literal")
        self.i += 1
        return Comparison(fname, op, value)

    def select_clause(self) -> list[SelectItem]:
        self.expect("select")
        items = [self.select_item()]
        while self.accept(","):
            items.append(self.select_item())
        return items

    def select_item(self) -> SelectItem:
        aggregate = None
        if self.accept("count"):
            aggregate = "count"
            self.expect("(")
            ref = self.ref()
            self.expect(")")
        else:
            ref = self.ref()
        alias = self.ident("alias") if self.accept("as") else None
        return SelectItem(ref, aggregate, alias)

    def ref(self) -> FieldRef:
        binding = self.ident("binding name")
        self.expect(".")
        return FieldRef(binding, self.ident("field name"))


def _field_type(ast: QueryAst, stream: str, name: str) -> str | None:
    schema = ast.schema(stream)
    declared = schema.field_type(name) if schema else None
    return declared or RESERVED_FIELDS.get(name)


def check_semantics(ast: QueryAst) -> QueryAst:
    """Raise :class:`SemanticError` for ill-formed but parseable queries."""
    names = [s.name for s in ast.stream_defs]
    if len(set(names)) != len(names):
        raise SemanticError("stream defined more than once")
    streams_of = {}
    for b in ast.bindings:
        if b.name in streams_of:
            raise SemanticError(f"duplicate binding {b.name!r}")
        if ast.schema(b.stream) is None:
            raise SemanticError(f"unknown stream {b.stream!r} in binding {b.name!r}")
        streams_of[b.name] = b.stream
        for c in b.predicate.comparisons if b.predicate else ():
            ftype = _field_type(ast, b.stream, c.field)
            if ftype is None:
                raise SemanticError(f"unknown field {c.field!r} on stream {b.stream!r}")
            if not value_conforms(c.value, ftype):
                raise SemanticError(f"literal {c.value!r} is not compatible with {c.field} ({ftype})")
    for item in ast.select:
        if item.ref.binding not in streams_of:
            raise SemanticError(f"select references unknown binding {item.ref.binding!r}")
        if _field_type(ast, streams_of[item.ref.binding], item.ref.field) is None:
            raise SemanticError(f"unknown field {item.ref.binding}.{item.ref.field}")
    if ast.within is not None and ast.within.value <= 0:
        raise SemanticError("within duration must be positive")
    return ast


def parse_query(text: str) -> QueryAst:
    """Parse and semantically check one query."""
    if isinstance(text, bytes):
        try:
            text = text.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ParseError("query is not valid UTF-8", 1, exc.start + 1) from exc
    return check_semantics(_Parser(text).parse())
