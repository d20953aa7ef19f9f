"""Expression language for equation skeletons.

A skeleton is a short multi-line program with exactly one line per target.
Differential lines use the ``d<name>/dt = <expr>`` form, algebraic lines the
``<name> = <expr>`` form.  Right-hand sides are built from numeric literals,
in-scope variable names, parameter placeholders ``p0, p1, ...``, the operators
``+ - * / ^`` and a fixed set of unary functions.  ``^`` is limited to
constant integer exponents in [-4, 4].

Grammar (EBNF, also published in the README):

    skeleton  = line , { newline , line } ;
    line      = target , "=" , expr ;
    target    = "d" , name , "/dt"          (* differential  *)
              | name ;                      (* algebraic     *)
    expr      = term , { ( "+" | "-" ) , term } ;
    term      = unary , { ( "*" | "/" ) , unary } ;
    unary     = "-" , unary | power ;
    power     = atom , { "^" , exponent } ;
    exponent  = [ "-" ] , integer
              | "(" , [ "-" ] , integer , ")" ;
    atom      = number | name | param
              | function , "(" , expr , ")"
              | "(" , expr , ")" ;
    param     = "p" , digits ;

``parse`` is the accept/reject gate for generated candidates: a skeleton that
parses against the current symbol scope is guaranteed to evaluate without
unbound-symbol failures on any sample whose columns cover that scope.
Everything in this module is immutable and purely functional, so skeletons
can be shared freely across worker threads.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Iterator, Mapping, Sequence, Union

FUNCTIONS: tuple[str, ...] = ("sin", "cos", "tan", "exp", "log", "sqrt", "tanh", "abs")
MAX_EXPONENT = 4

_PARAM_RE = re.compile(r"^p(\d+)$")
_NUMBER_RE = re.compile(r"\d+\.?\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?")
_IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")


class ParseError(ValueError):
    """Skeleton text rejected; names the first offending token."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        loc = ""
        if line is not None:
            loc = f" (line {line}" + (f", col {column}" if column is not None else "") + ")"
        super().__init__(message + loc)
        self.message = message
        self.line = line
        self.column = column


class DslSyntaxError(ParseError):
    pass


class UnknownIdentifier(ParseError):
    def __init__(self, name: str, line: int | None = None, column: int | None = None):
        super().__init__(f"unknown identifier '{name}'", line, column)
        self.name = name


class ArityError(ParseError):
    pass


class MissingTarget(ParseError):
    def __init__(self, name: str):
        super().__init__(f"missing equation for target '{name}'")
        self.name = name


class DuplicateTarget(ParseError):
    def __init__(self, name: str, line: int | None = None):
        super().__init__(f"duplicate equation for target '{name}'", line)
        self.name = name


# ---------------------------------------------------------------------------
# AST nodes

@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class Param:
    index: int


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Neg:
    child: "Expr"


@dataclass(frozen=True)
class Bin:
    op: str  # one of + - * /
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Pow:
    base: "Expr"
    exponent: int


@dataclass(frozen=True)
class Call:
    func: str
    arg: "Expr"


Expr = Union[Const, Param, Var, Neg, Bin, Pow, Call]

_RESERVED = {"dt"} | set(FUNCTIONS)


def _check_symbol_name(name: str) -> None:
    if not name or not _IDENT_RE.fullmatch(name):
        raise ValueError(f"invalid symbol name {name!r}")
    if name in _RESERVED or _PARAM_RE.match(name):
        raise ValueError(f"symbol name {name!r} is reserved")


@dataclass(frozen=True)
class SymbolScope:
    """Names a skeleton may reference: state names plus admitted variables."""

    states: tuple[str, ...]
    variables: tuple[str, ...] = ()
    functions: tuple[str, ...] = FUNCTIONS

    def __post_init__(self):
        names = list(self.states) + list(self.variables)
        for n in names:
            _check_symbol_name(n)
        if len(set(names)) != len(names):
            raise ValueError("scope names must be unique")

    def resolves(self, name: str) -> bool:
        return name in self.states or name in self.variables

    @property
    def symbols(self) -> tuple[str, ...]:
        return self.states + self.variables


@dataclass(frozen=True)
class Skeleton:
    """A parsed equation system: one expression per target, canonical slots."""

    kind: str  # "de" | "ae"
    target_names: tuple[str, ...]
    expressions: tuple[Expr, ...]
    n_params: int
    source: str = ""


# ---------------------------------------------------------------------------
# Tokenizer

@dataclass(frozen=True)
class _Token:
    kind: str  # NUM IDENT OP END
    text: str
    column: int


def _tokenize(line: str, lineno: int) -> list[_Token]:
    tokens: list[_Token] = []
    i, n = 0, len(line)
    while i < n:
        ch = line[i]
        if ch.isspace():
            i += 1
            continue
        m = _NUMBER_RE.match(line, i)
        if m and (ch.isdigit() or ch == "."):
            tokens.append(_Token("NUM", m.group(), i))
            i = m.end()
            continue
        m = _IDENT_RE.match(line, i)
        if m:
            tokens.append(_Token("IDENT", m.group(), i))
            i = m.end()
            continue
        if ch in "+-*/^()=,":
            tokens.append(_Token("OP", ch, i))
            i += 1
            continue
        raise DslSyntaxError(f"unexpected character {ch!r}", lineno, i)
    tokens.append(_Token("END", "", n))
    return tokens


# ---------------------------------------------------------------------------
# Parser (recursive descent, precedence layered per the grammar)

class _LineParser:
    def __init__(self, tokens: list[_Token], scope: SymbolScope, lineno: int):
        self.tokens = tokens
        self.scope = scope
        self.lineno = lineno
        self.pos = 0

    @property
    def cur(self) -> _Token:
        return self.tokens[self.pos]

    def advance(self) -> _Token:
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect_op(self, text: str) -> None:
        tok = self.cur
        if tok.kind != "OP" or tok.text != text:
            raise DslSyntaxError(
                f"expected {text!r}, found {tok.text or 'end of line'!r}",
                self.lineno, tok.column)
        self.advance()

    def parse_expr(self) -> Expr:
        node = self.parse_term()
        while self.cur.kind == "OP" and self.cur.text in "+-":
            op = self.advance().text
            node = Bin(op, node, self.parse_term())
        return node

    def parse_term(self) -> Expr:
        node = self.parse_unary()
        while self.cur.kind == "OP" and self.cur.text in "*/":
            op = self.advance().text
            node = Bin(op, node, self.parse_unary())
        return node

    def parse_unary(self) -> Expr:
        if self.cur.kind == "OP" and self.cur.text == "-":
            self.advance()
            return Neg(self.parse_unary())
        return self.parse_power()

    def parse_power(self) -> Expr:
        node = self.parse_atom()
        while self.cur.kind == "OP" and self.cur.text == "^":
            self.advance()
            node = Pow(node, self.parse_exponent())
        return node

    def parse_exponent(self) -> int:
        sign = 1
        parens = False
        if self.cur.kind == "OP" and self.cur.text == "(":
            parens = True
            self.advance()
        if self.cur.kind == "OP" and self.cur.text == "-":
            sign = -1
            self.advance()
        tok = self.cur
        if tok.kind != "NUM":
            raise DslSyntaxError(
                f"exponent must be an integer literal, found {tok.text or 'end of line'!r}",
                self.lineno, tok.column)
        value = float(tok.text)
        if value != int(value):
            raise DslSyntaxError(f"exponent must be an integer, found {tok.text!r}",
                                 self.lineno, tok.column)
        self.advance()
        if parens:
            self.expect_op(")")
        exponent = sign * int(value)
        if abs(exponent) > MAX_EXPONENT:
            raise DslSyntaxError(
                f"exponent {exponent} outside [-{MAX_EXPONENT}, {MAX_EXPONENT}]",
                self.lineno, tok.column)
        return exponent

    def parse_atom(self) -> Expr:
        tok = self.cur
        if tok.kind == "NUM":
            self.advance()
            value = float(tok.text)
            if not math.isfinite(value):
                raise DslSyntaxError(f"constant {tok.text!r} is not finite",
                                     self.lineno, tok.column)
            return Const(value)
        if tok.kind == "IDENT":
            self.advance()
            name = tok.text
            if self.cur.kind == "OP" and self.cur.text == "(":
                return self.parse_call(name, tok.column)
            m = _PARAM_RE.match(name)
            if m:
                return Param(int(m.group(1)))
            if not self.scope.resolves(name):
                raise UnknownIdentifier(name, self.lineno, tok.column)
            return Var(name)
        if tok.kind == "OP" and tok.text == "(":
            self.advance()
            node = self.parse_expr()
            self.expect_op(")")
            return node
        raise DslSyntaxError(f"unexpected token {tok.text or 'end of line'!r}",
                             self.lineno, tok.column)

    def parse_call(self, name: str, column: int) -> Expr:
        if name not in self.scope.functions:
            raise UnknownIdentifier(name, self.lineno, column)
        self.expect_op("(")
        if self.cur.kind == "OP" and self.cur.text == ")":
            raise ArityError(f"{name} expects exactly one argument, got none",
                             self.lineno, self.cur.column)
        arg = self.parse_expr()
        if self.cur.kind == "OP" and self.cur.text == ",":
            raise ArityError(f"{name} expects exactly one argument",
                             self.lineno, self.cur.column)
        self.expect_op(")")
        return Call(name, arg)


def _parse_line(line: str, lineno: int, scope: SymbolScope, kind: str) -> tuple[str, Expr]:
    tokens = _tokenize(line, lineno)
    parser = _LineParser(tokens, scope, lineno)
    tok = parser.cur
    if tok.kind != "IDENT":
        raise DslSyntaxError(f"line must start with a target, found {tok.text!r}",
                             lineno, tok.column)
    parser.advance()
    if kind == "de":
        if not (tok.text.startswith("d") and len(tok.text) > 1):
            raise DslSyntaxError(
                f"differential target must look like d<name>/dt, found {tok.text!r}",
                lineno, tok.column)
        target = tok.text[1:]
        parser.expect_op("/")
        dt = parser.cur
        if dt.kind != "IDENT" or dt.text != "dt":
            raise DslSyntaxError(f"expected 'dt' after '/', found {dt.text!r}",
                                 lineno, dt.column)
        parser.advance()
    else:
        target = tok.text
    parser.expect_op("=")
    expr = parser.parse_expr()
    end = parser.cur
    if end.kind != "END":
        raise DslSyntaxError(f"trailing input {end.text!r}", lineno, end.column)
    return target, expr


# ---------------------------------------------------------------------------
# Canonicalization and construction

def walk(expr: Expr) -> Iterator[Expr]:
    """Depth-first iterator over every node of an expression."""
    stack = [expr]
    while stack:
        node = stack.pop()
        yield node
        if isinstance(node, Neg):
            stack.append(node.child)
        elif isinstance(node, Bin):
            stack.append(node.right)
            stack.append(node.left)
        elif isinstance(node, Pow):
            stack.append(node.base)
        elif isinstance(node, Call):
            stack.append(node.arg)


def param_indices(exprs: Sequence[Expr]) -> list[int]:
    seen: set[int] = set()
    for expr in exprs:
        for node in walk(expr):
            if isinstance(node, Param):
                seen.add(node.index)
    return sorted(seen)


def variables_in(skeleton: Skeleton) -> set[str]:
    names: set[str] = set()
    for expr in skeleton.expressions:
        for node in walk(expr):
            if isinstance(node, Var):
                names.add(node.name)
    return names


def _rewrite(expr: Expr, param_map: Mapping[int, int]) -> Expr:
    if isinstance(expr, Const):
        return expr
    if isinstance(expr, Param):
        return Param(param_map[expr.index])
    if isinstance(expr, Var):
        return expr
    if isinstance(expr, Neg):
        child = _rewrite(expr.child, param_map)
        if isinstance(child, Const):  # fold so "-2" has one canonical tree
            return Const(-child.value)
        return Neg(child)
    if isinstance(expr, Bin):
        return Bin(expr.op, _rewrite(expr.left, param_map), _rewrite(expr.right, param_map))
    if isinstance(expr, Pow):
        return Pow(_rewrite(expr.base, param_map), expr.exponent)
    if isinstance(expr, Call):
        return Call(expr.func, _rewrite(expr.arg, param_map))
    raise TypeError(f"not an expression node: {expr!r}")


def _validate_expr(expr: Expr, scope: SymbolScope | None) -> None:
    for node in walk(expr):
        if isinstance(node, Const):
            if not math.isfinite(node.value):
                raise DslSyntaxError("constant is not finite")
        elif isinstance(node, Param):
            if node.index < 0:
                raise DslSyntaxError(f"negative parameter slot {node.index}")
        elif isinstance(node, Var):
            if scope is not None and not scope.resolves(node.name):
                raise UnknownIdentifier(node.name)
        elif isinstance(node, Pow):
            if abs(node.exponent) > MAX_EXPONENT:
                raise DslSyntaxError(f"exponent {node.exponent} outside allowed range")
        elif isinstance(node, Call):
            if node.func not in FUNCTIONS:
                raise UnknownIdentifier(node.func)


def make_skeleton(kind: str, target_names: Sequence[str], expressions: Sequence[Expr],
                  scope: SymbolScope | None = None, source: str = "") -> Skeleton:
    """Build a canonical skeleton from expression trees.

    Canonicalization re-indexes parameter slots into a contiguous 0..n_p-1
    range (ordered by original index) and folds negated constants, so that
    structurally equal systems serialize identically.
    """
    if kind not in ("de", "ae"):
        raise ValueError(f"kind must be 'de' or 'ae', got {kind!r}")
    if len(target_names) != len(expressions):
        raise ValueError("one expression per target required")
    for expr in expressions:
        _validate_expr(expr, scope)
    indices = param_indices(expressions)
    param_map = {old: new for new, old in enumerate(indices)}
    canon = tuple(_rewrite(e, param_map) for e in expressions)
    return Skeleton(kind=kind, target_names=tuple(target_names),
                    expressions=canon, n_params=len(indices), source=source)


def parse(text: str, scope: SymbolScope, target_names: Sequence[str],
          kind: str = "de") -> Skeleton:
    """Parse skeleton text; success is the accept side of the candidate gate.

    Every target must appear exactly once and every identifier must resolve
    against ``scope``; otherwise a ParseError subclass names the offender.
    """
    if kind not in ("de", "ae"):
        raise ValueError(f"kind must be 'de' or 'ae', got {kind!r}")
    wanted = list(target_names)
    parsed: dict[str, Expr] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        target, expr = _parse_line(line, lineno, scope, kind)
        if target not in wanted:
            raise UnknownIdentifier(target, lineno, 0)
        if target in parsed:
            raise DuplicateTarget(target, lineno)
        parsed[target] = expr
    for name in wanted:
        if name not in parsed:
            raise MissingTarget(name)
    exprs = [parsed[name] for name in wanted]
    return make_skeleton(kind, wanted, exprs, scope=None, source=text)


def compiles(text: str, scope: SymbolScope, target_names: Sequence[str],
             kind: str = "de") -> bool:
    """Boolean form of the accept/reject gate."""
    try:
        parse(text, scope, target_names, kind)
        return True
    except ParseError:
        return False


# ---------------------------------------------------------------------------
# Canonical serialization

_BIN_PREC = {"+": 10, "-": 10, "*": 20, "/": 20}
_NEG_PREC = 30
_POW_PREC = 40
_ATOM_PREC = 100


def _format_number(value: float) -> str:
    if value == int(value) and abs(value) < 1e16:
        return str(int(value))
    return repr(value)


def _fmt(expr: Expr) -> tuple[str, int]:
    if isinstance(expr, Const):
        text = _format_number(expr.value)
        return text, (_NEG_PREC if expr.value < 0 else _ATOM_PREC)
    if isinstance(expr, Param):
        return f"p{expr.index}", _ATOM_PREC
    if isinstance(expr, Var):
        return expr.name, _ATOM_PREC
    if isinstance(expr, Call):
        inner, _ = _fmt(expr.arg)
        return f"{expr.func}({inner})", _ATOM_PREC
    if isinstance(expr, Neg):
        child, prec = _fmt(expr.child)
        if prec < _NEG_PREC:
            child = f"({child})"
        return f"-{child}", _NEG_PREC
    if isinstance(expr, Pow):
        base, prec = _fmt(expr.base)
        if prec < _POW_PREC:
            base = f"({base})"
        return f"{base}^{expr.exponent}", _POW_PREC
    if isinstance(expr, Bin):
        prec = _BIN_PREC[expr.op]
        left, lp = _fmt(expr.left)
        right, rp = _fmt(expr.right)
        if lp < prec:
            left = f"({left})"
        if rp <= prec:  # right side re-parenthesized so parsing re-associates identically
            right = f"({right})"
        joint = f" {expr.op} " if expr.op in "+-" else expr.op
        return f"{left}{joint}{right}", prec
    raise TypeError(f"not an expression node: {expr!r}")


def serialize(skeleton: Skeleton) -> str:
    """Canonical text: fixed spacing, minimal parentheses, one line per target."""
    lines = []
    for name, expr in zip(skeleton.target_names, skeleton.expressions):
        lhs = f"d{name}/dt" if skeleton.kind == "de" else name
        lines.append(f"{lhs} = {_fmt(expr)[0]}")
    return "\n".join(lines)


def code_length(skeleton: Skeleton) -> int:
    """Character count of the canonical serialization."""
    return len(serialize(skeleton))
