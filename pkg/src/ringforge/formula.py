"""Template formula language: lexer, parser, canonical printer, reference
resolution, type inference, and the constant lint.

Grammar (normative, also documented in docs/formula-language.md):

    expr  := cmp
    cmp   := add ((= | <> | < | <= | > | >=) add)?
    add   := mul ((+ | -) mul)*
    mul   := unary ((* | /) unary)*
    unary := '-' unary | atom
    atom  := number | TRUE | FALSE | ref | call | builtin | '(' expr ')'
    ref   := '@' ident ('.' ident)* ('[' '-' int ']')?

Precedence: comparisons loosest, then + and -, then * and /, then unary
minus.  Period offsets are zero (implicit) or negative, so a formula can
read the current or earlier periods but never ahead: forward references in
time are unrepresentable rather than merely checked.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Iterator, Sequence, Union

from ringforge.diagnostics import Diagnostic


class Width(Enum):
    """How a row spans the period grid."""

    FULL = "full"
    SINGLE = "single"
    SPECIAL = "special"


class ValueType(Enum):
    NUMBER = "number"
    BOOLEAN = "boolean"


# --------------------------------------------------------------------------
# AST


@dataclass(frozen=True)
class NumberLit:
    text: str  # normalized nonnegative decimal text, e.g. "0", "1.5"

    @property
    def value(self) -> float:
        return float(self.text)


@dataclass(frozen=True)
class BoolLit:
    value: bool


@dataclass(frozen=True)
class RowRef:
    label: str  # dotted path
    offset: int = 0  # always <= 0

    def __post_init__(self) -> None:
        if self.offset > 0:
            raise ValueError("row reference offsets must be zero or negative")


@dataclass(frozen=True)
class ResolvedRef:
    """RowRef annotated with its target's flat index, width and value type."""

    label: str
    offset: int
    target: int
    width: Width
    value_type: ValueType


@dataclass(frozen=True)
class Neg:
    operand: "Expr"


@dataclass(frozen=True)
class BinOp:
    op: str  # + - * /
    lhs: "Expr"
    rhs: "Expr"


@dataclass(frozen=True)
class Compare:
    op: str  # = <> < <= > >=
    lhs: "Expr"
    rhs: "Expr"


@dataclass(frozen=True)
class Call:
    fn: str
    args: tuple["Expr", ...]


@dataclass(frozen=True)
class Builtin:
    name: str  # PERIOD | NPERIODS


Expr = Union[NumberLit, BoolLit, RowRef, ResolvedRef, Neg, BinOp, Compare, Call, Builtin]

# fn -> (min arity, max arity or None)
FUNCTIONS: dict[str, tuple[int, int | None]] = {
    "SUM": (1, None),
    "MIN": (1, None),
    "MAX": (1, None),
    "ABS": (1, 1),
    "ROUND": (2, 2),
    "IF": (3, 3),
    "AND": (1, None),
    "OR": (1, None),
    "NOT": (1, 1),
}

BUILTINS = ("PERIOD", "NPERIODS")


def normalize_number(text: str) -> str:
    """Strip redundant zeros so equal decimals print identically."""
    if "." in text:
        whole, frac = text.split(".", 1)
        frac = frac.rstrip("0")
    else:
        whole, frac = text, ""
    whole = whole.lstrip("0") or "0"
    return f"{whole}.{frac}" if frac else whole


# --------------------------------------------------------------------------
# Lexing and parsing


class FormulaError(ValueError):
    """Formula text that does not parse. Carries the byte offset of the
    failure and the set of token kinds that would have been accepted."""

    code = "E_PARSE"

    def __init__(self, message: str, offset: int, expected: tuple[str, ...] = ()):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset
        self.expected = expected


_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<number>[0-9]+(?:\.[0-9]+)?)
  | (?P<ident>[A-Za-z][A-Za-z0-9_]*)
  | (?P<cmp><=|>=|<>|=|<|>)
  | (?P<op>[+\-*/])
  | (?P<at>@)
  | (?P<dot>\.)
  | (?P<comma>,)
  | (?P<lparen>\()
  | (?P<rparen>\))
  | (?P<lbracket>\[)
  | (?P<rbracket>\])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class _Token:
    kind: str
    text: str
    pos: int


def _tokenize(text: str) -> list[_Token]:
    tokens: list[_Token] = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if not m:
            raise FormulaError(f"unexpected character {text[pos]!r}", pos)
        if m.lastgroup != "ws":
            tokens.append(_Token(m.lastgroup or "", m.group(), pos))
        pos = m.end()
    tokens.append(_Token("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self) -> _Token:
        return self.tokens[self.i]

    def take(self) -> _Token:
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, kind: str, what: str) -> _Token:
        tok = self.peek()
        if tok.kind != kind:
            raise FormulaError(f"expected {what}, found {tok.text or 'end of input'}", tok.pos, (kind,))
        return self.take()

    def parse(self) -> Expr:
        expr = self.cmp()
        tok = self.peek()
        if tok.kind != "end":
            raise FormulaError(f"unexpected {tok.text!r}", tok.pos, ("end",))
        return expr

    def cmp(self) -> Expr:
        lhs = self.add()
        if self.peek().kind == "cmp":
            op = self.take().text
            rhs = self.add()
            return Compare(op, lhs, rhs)
        return lhs

    def add(self) -> Expr:
        lhs = self.mul()
        while self.peek().kind == "op" and self.peek().text in "+-":
            op = self.take().text
            lhs = BinOp(op, lhs, self.mul())
        return lhs

    def mul(self) -> Expr:
        lhs = self.unary()
        while self.peek().kind == "op" and self.peek().text in "*/":
            op = self.take().text
            lhs = BinOp(op, lhs, self.unary())
        return lhs

    def unary(self) -> Expr:
        if self.peek().kind == "op" and self.peek().text == "-":
            self.take()
            return Neg(self.unary())
        return self.atom()

    def atom(self) -> Expr:
        tok = self.peek()
        if tok.kind == "number":
            self.take()
            return NumberLit(normalize_number(tok.text))
        if tok.kind == "at":
            return self.ref()
        if tok.kind == "lparen":
            self.take()
            inner = self.cmp()
            self.expect("rparen", "')'")
            return inner
        if tok.kind == "ident":
            self.take()
            upper = tok.text.upper()
            if self.peek().kind == "lparen":
                if upper not in FUNCTIONS:
                    raise FormulaError(f"unknown function {tok.text!r}", tok.pos, tuple(sorted(FUNCTIONS)))
                return self.call(upper)
            if upper == "TRUE":
                return BoolLit(True)
            if upper == "FALSE":
                return BoolLit(False)
            if upper in BUILTINS:
                return Builtin(upper)
            raise FormulaError(
                f"bare name {tok.text!r} (row references start with '@')",
                tok.pos,
                ("TRUE", "FALSE") + BUILTINS,
            )
        raise FormulaError(
            f"expected a value, found {tok.text or 'end of input'!r}",
            tok.pos,
            ("number", "ref", "call", "'('"),
        )

    def call(self, fn: str) -> Expr:
        self.expect("lparen", "'('")
        args = [self.cmp()]
        while self.peek().kind == "comma":
            self.take()
            args.append(self.cmp())
        self.expect("rparen", "')' or ','")
        return Call(fn, tuple(args))

    def ref(self) -> Expr:
        self.expect("at", "'@'")
        parts = [self.expect("ident", "row label").text]
        while self.peek().kind == "dot":
            self.take()
            parts.append(self.expect("ident", "row label").text)
        offset = 0
        if self.peek().kind == "lbracket":
            self.take()
            sign = self.peek()
            if not (sign.kind == "op" and sign.text == "-"):
                raise FormulaError("offsets must be negative: expected '-'", sign.pos, ("-",))
            self.take()
            num = self.expect("number", "integer offset")
            if "." in num.text:
                raise FormulaError("offsets must be integers", num.pos, ("integer",))
            self.expect("rbracket", "']'")
            offset = -int(num.text)
        return RowRef(".".join(parts), offset)


def parse(text: str) -> Expr:
    """Parse formula text to an AST. Raises FormulaError (code E_PARSE)."""
    return _Parser(text).parse()


# --------------------------------------------------------------------------
# Printing

LEVEL_CMP = 1
LEVEL_ADD = 2
LEVEL_MUL = 3
LEVEL_UNARY = 4
LEVEL_ATOM = 5

RefRenderer = Callable[[Union[RowRef, ResolvedRef]], tuple[str, int]]
BuiltinRenderer = Callable[[Builtin], tuple[str, int]]


def _canonical_ref(ref: RowRef | ResolvedRef) -> tuple[str, int]:
    text = f"@{ref.label}" if ref.offset == 0 else f"@{ref.label}[{ref.offset}]"
    return text, LEVEL_ATOM


def _canonical_builtin(b: Builtin) -> tuple[str, int]:
    return b.name, LEVEL_ATOM


def render(
    expr: Expr,
    ref_renderer: RefRenderer = _canonical_ref,
    builtin_renderer: BuiltinRenderer = _canonical_builtin,
    compact: bool = False,
) -> str:
    """Minimal-parenthesis rendering with pluggable leaf renderers.

    The canonical printer and the cell-formula emitter share this walk, so
    parenthesisation can never drift between source and generated text.
    Compact mode drops the spaces (cell-formula style).
    """
    text, _ = _render(expr, ref_renderer, builtin_renderer, compact)
    return text


def _render(expr: Expr, refr: RefRenderer, bltr: BuiltinRenderer, compact: bool) -> tuple[str, int]:
    if isinstance(expr, NumberLit):
        return expr.text, LEVEL_ATOM
    if isinstance(expr, BoolLit):
        return ("TRUE" if expr.value else "FALSE"), LEVEL_ATOM
    if isinstance(expr, (RowRef, ResolvedRef)):
        return refr(expr)
    if isinstance(expr, Builtin):
        return bltr(expr)
    if isinstance(expr, Neg):
        text, level = _render(expr.operand, refr, bltr, compact)
        if level < LEVEL_UNARY:
            text = f"({text})"
        return f"-{text}", LEVEL_UNARY
    if isinstance(expr, Call):
        sep = "," if compact else ", "
        args = sep.join(_render(a, refr, bltr, compact)[0] for a in expr.args)
        return f"{expr.fn}({args})", LEVEL_ATOM
    if isinstance(expr, (BinOp, Compare)):
        level = LEVEL_CMP if isinstance(expr, Compare) else (LEVEL_ADD if expr.op in "+-" else LEVEL_MUL)
        lhs, llevel = _render(expr.lhs, refr, bltr, compact)
        rhs, rlevel = _render(expr.rhs, refr, bltr, compact)
        # right operand of the same level keeps its parens (a - (b - c)), and
        # comparison is non-associative so nested comparisons keep both
        if llevel < level or (llevel == level == LEVEL_CMP):
            lhs = f"({lhs})"
        if rlevel <= level:
            rhs = f"({rhs})"
        joined = f"{lhs}{expr.op}{rhs}" if compact else f"{lhs} {expr.op} {rhs}"
        return joined, level
    raise TypeError(f"not a formula node: {expr!r}")


def print_canonical(expr: Expr) -> str:
    """Single-space, minimal-parenthesis text; parse(print_canonical(e)) == e."""
    return render(expr)


# --------------------------------------------------------------------------
# Resolution and typing


@dataclass(frozen=True)
class ScopeRow:
    """One visible row: its flat path, flat index, width and value type."""

    path: str
    index: int
    width: Width
    value_type: ValueType = ValueType.NUMBER


@dataclass(frozen=True)
class ResolvedExpr:
    root: Expr  # tree in which every RowRef became a ResolvedRef
    result_type: ValueType


def walk(expr: Expr) -> Iterator[Expr]:
    yield expr
    if isinstance(expr, Neg):
        yield from walk(expr.operand)
    elif isinstance(expr, (BinOp, Compare)):
        yield from walk(expr.lhs)
        yield from walk(expr.rhs)
    elif isinstance(expr, Call):
        for arg in expr.args:
            yield from walk(arg)


def resolve(
    expr: Expr,
    scope: Sequence[ScopeRow],
    position: int | None = None,
) -> tuple[Expr | None, list[Diagnostic]]:
    """Rewrite every RowRef into a ResolvedRef against `scope`.

    `position` is the flat index of the row being defined: same-period
    references must land strictly before it.  None means the expression sits
    after all rows (checks), so any same-period target is fine.  Negative
    offsets may reach any row, including later ones, because the prior
    period is fully computed before the current one starts.
    """
    by_path = {row.path: row for row in scope}
    diags: list[Diagnostic] = []

    def rewrite(node: Expr) -> Expr:
        if isinstance(node, RowRef):
            target = by_path.get(node.label)
            if target is None:
                diags.append(Diagnostic("E_UNRESOLVED_REF", path=node.label,
                                        message=f"unknown row @{node.label}"))
                return node
            if node.offset == 0 and position is not None and target.index >= position:
                diags.append(Diagnostic("E_FORWARD_ROW", path=node.label,
                                        message=f"@{node.label} is not defined above this row"))
                return node
            if node.offset != 0 and target.width is Width.SINGLE:
                diags.append(Diagnostic("E_OFFSET_ON_SINGLE", path=node.label,
                                        message=f"@{node.label}[{node.offset}] targets a single-column row"))
                return node
            return ResolvedRef(node.label, node.offset, target.index, target.width, target.value_type)
        if isinstance(node, Neg):
            return Neg(rewrite(node.operand))
        if isinstance(node, BinOp):
            return BinOp(node.op, rewrite(node.lhs), rewrite(node.rhs))
        if isinstance(node, Compare):
            return Compare(node.op, rewrite(node.lhs), rewrite(node.rhs))
        if isinstance(node, Call):
            return Call(node.fn, tuple(rewrite(a) for a in node.args))
        return node

    rewritten = rewrite(expr)
    if diags:
        return None, diags
    return rewritten, []


_ORDERED_CMP = ("<", "<=", ">", ">=")


def infer_type(expr: Expr) -> tuple[ValueType | None, list[Diagnostic]]:
    """Infer Number/Boolean for a resolved tree; collects E_TYPE_MISMATCH."""
    diags: list[Diagnostic] = []

    def mismatch(node: Expr, detail: str) -> None:
        diags.append(Diagnostic("E_TYPE_MISMATCH", path=print_canonical(node), message=detail))

    def infer(node: Expr) -> ValueType | None:
        if isinstance(node, NumberLit):
            return ValueType.NUMBER
        if isinstance(node, BoolLit):
            return ValueType.BOOLEAN
        if isinstance(node, ResolvedRef):
            return node.value_type
        if isinstance(node, RowRef):
            raise TypeError("infer_type requires a resolved expression")
        if isinstance(node, Builtin):
            return ValueType.NUMBER
        if isinstance(node, Neg):
            if infer(node.operand) is ValueType.BOOLEAN:
                mismatch(node, "unary minus needs a number")
            return ValueType.NUMBER
        if isinstance(node, BinOp):
            for side in (node.lhs, node.rhs):
                if infer(side) is ValueType.BOOLEAN:
                    mismatch(node, f"'{node.op}' needs numbers")
            return ValueType.NUMBER
        if isinstance(node, Compare):
            lt, rt = infer(node.lhs), infer(node.rhs)
            if node.op in _ORDERED_CMP and ValueType.BOOLEAN in (lt, rt):
                mismatch(node, f"'{node.op}' compares numbers only")
            elif lt is not None and rt is not None and lt is not rt:
                mismatch(node, "comparison operands must have one type")
            return ValueType.BOOLEAN
        if isinstance(node, Call):
            return infer_call(node)
        raise TypeError(f"not a formula node: {node!r}")

    def infer_call(node: Call) -> ValueType | None:
        lo, hi = FUNCTIONS[node.fn]
        if len(node.args) < lo or (hi is not None and len(node.args) > hi):
            mismatch(node, f"{node.fn} takes {lo}{'' if hi == lo else '+' if hi is None else f'..{hi}'} argument(s)")
            for arg in node.args:
                infer(arg)
            return ValueType.BOOLEAN if node.fn in ("AND", "OR", "NOT") else ValueType.NUMBER
        if node.fn == "IF":
            cond, then_t, else_t = infer(node.args[0]), infer(node.args[1]), infer(node.args[2])
            if cond is ValueType.NUMBER:
                mismatch(node, "IF condition must be boolean")
            if then_t is not None and else_t is not None and then_t is not else_t:
                mismatch(node, "IF branches must have one type")
            return then_t or else_t
        if node.fn in ("AND", "OR", "NOT"):
            for arg in node.args:
                if infer(arg) is ValueType.NUMBER:
                    mismatch(node, f"{node.fn} needs boolean arguments")
            return ValueType.BOOLEAN
        # SUM, MIN, MAX, ABS, ROUND
        for arg in node.args:
            if infer(arg) is ValueType.BOOLEAN:
                mismatch(node, f"{node.fn} needs numeric arguments")
        return ValueType.NUMBER

    result = infer(expr)
    if diags:
        return None, diags
    return result, []


def analyze(
    expr: Expr,
    scope: Sequence[ScopeRow],
    position: int | None = None,
) -> tuple[ResolvedExpr | None, list[Diagnostic]]:
    """resolve + infer_type in one step."""
    tree, diags = resolve(expr, scope, position)
    if tree is None:
        return None, diags
    vtype, type_diags = infer_type(tree)
    if vtype is None:
        return None, type_diags
    return ResolvedExpr(tree, vtype), []


def scan_constants(expr: Expr) -> list[str]:
    """Numeric literals other than 0 and 1, skipping ROUND digit arguments.

    The returned texts feed W_CONSTANT_IN_FORMULA warnings.
    """
    found: list[str] = []

    def scan(node: Expr) -> None:
        if isinstance(node, NumberLit):
            if node.text not in ("0", "1"):
                found.append(node.text)
        elif isinstance(node, Neg):
            scan(node.operand)
        elif isinstance(node, (BinOp, Compare)):
            scan(node.lhs)
            scan(node.rhs)
        elif isinstance(node, Call):
            args = node.args[:1] if node.fn == "ROUND" else node.args
            for arg in args:
                scan(arg)

    scan(expr)
    return found


def refs_in(expr: Expr) -> list[RowRef | ResolvedRef]:
    return [n for n in walk(expr) if isinstance(n, (RowRef, ResolvedRef))]
