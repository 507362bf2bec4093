"""Parser for the cell-formula subset the layout pass emits.

Handles A1 references (relative/absolute, optionally sheet-qualified),
ranges as function arguments, numbers, TRUE/FALSE, defined names, the four
arithmetic operators, the six comparisons, unary minus, and the function
set SUM MIN MAX ABS ROUND IF AND OR NOT INDEX COUNTA COLUMN.  Nothing
else ever appears in generated workbooks, and foreign workbooks are out of
scope.

Also provides the relative (R1C1) normalization used to demonstrate that a
full-width row carries one single formula across its period columns.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterator, Union

from ringforge import cellref

FUNCTIONS = {"SUM", "MIN", "MAX", "ABS", "ROUND", "IF", "AND", "OR", "NOT",
             "INDEX", "COUNTA", "COLUMN"}


class SheetFormulaError(ValueError):
    pass


@dataclass(frozen=True)
class CellRef:
    sheet: str | None
    row: int
    col: int
    abs_row: bool = False
    abs_col: bool = False


@dataclass(frozen=True)
class RangeRef:
    start: CellRef
    end: CellRef

    @property
    def sheet(self) -> str | None:
        return self.start.sheet

    def cells(self) -> Iterator[tuple[int, int]]:
        for row in range(min(self.start.row, self.end.row), max(self.start.row, self.end.row) + 1):
            for col in range(min(self.start.col, self.end.col), max(self.start.col, self.end.col) + 1):
                yield row, col


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Bool:
    value: bool


@dataclass(frozen=True)
class Name:
    name: str


@dataclass(frozen=True)
class Un:
    operand: "Node"


@dataclass(frozen=True)
class Bin:
    op: str
    lhs: "Node"
    rhs: "Node"


@dataclass(frozen=True)
class Fn:
    name: str
    args: tuple["Node", ...]


Node = Union[CellRef, RangeRef, Num, Bool, Name, Un, Bin, Fn]

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<number>[0-9]+(?:\.[0-9]+)?)
  | (?P<sheetq>'(?:[^']|'')+'!)
  | (?P<sheet>[A-Za-z_][A-Za-z0-9_]*!)
  | (?P<ref>\$?[A-Z]+\$?[0-9]+)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_.]*)
  | (?P<cmp><=|>=|<>|=|<|>)
  | (?P<op>[-+*/])
  | (?P<colon>:)
  | (?P<comma>,)
  | (?P<lparen>\()
  | (?P<rparen>\))
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class _Tok:
    kind: str
    text: str
    pos: int


def _tokens(text: str) -> list[_Tok]:
    out = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if not m:
            raise SheetFormulaError(f"bad character {text[pos]!r} in formula {text!r}")
        if m.lastgroup != "ws":
            out.append(_Tok(m.lastgroup or "", m.group(), pos))
        pos = m.end()
    out.append(_Tok("end", "", len(text)))
    return out


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.toks = _tokens(text)
        self.i = 0

    def peek(self) -> _Tok:
        return self.toks[self.i]

    def take(self) -> _Tok:
        tok = self.toks[self.i]
        self.i += 1
        return tok

    def parse(self) -> Node:
        node = self.cmp()
        if self.peek().kind != "end":
            raise SheetFormulaError(f"unexpected {self.peek().text!r} in {self.text!r}")
        return node

    def cmp(self) -> Node:
        lhs = self.add()
        if self.peek().kind == "cmp":
            op = self.take().text
            return Bin(op, lhs, self.add())
        return lhs

    def add(self) -> Node:
        lhs = self.mul()
        while self.peek().kind == "op" and self.peek().text in "+-":
            op = self.take().text
            lhs = Bin(op, lhs, self.mul())
        return lhs

    def mul(self) -> Node:
        lhs = self.unary()
        while self.peek().kind == "op" and self.peek().text in "*/":
            op = self.take().text
            lhs = Bin(op, lhs, self.unary())
        return lhs

    def unary(self) -> Node:
        if self.peek().kind == "op" and self.peek().text == "-":
            self.take()
            return Un(self.unary())
        return self.atom()

    def _cell(self, sheet: str | None, text: str) -> CellRef:
        row, col, abs_row, abs_col = cellref.parse_a1(text)
        return CellRef(sheet, row, col, abs_row, abs_col)

    def _maybe_range(self, first: CellRef) -> Node:
        if self.peek().kind != "colon":
            return first
        self.take()
        tok = self.take()
        if tok.kind != "ref":
            raise SheetFormulaError(f"range needs a second cell in {self.text!r}")
        return RangeRef(first, self._cell(first.sheet, tok.text))

    def atom(self) -> Node:
        tok = self.take()
        if tok.kind == "number":
            return Num(float(tok.text))
        if tok.kind in ("sheet", "sheetq"):
            name = tok.text[:-1]
            if tok.kind == "sheetq":
                name = name[1:-1].replace("''", "'")
            ref_tok = self.take()
            if ref_tok.kind != "ref":
                raise SheetFormulaError(f"sheet prefix without cell in {self.text!r}")
            return self._maybe_range(self._cell(name, ref_tok.text))
        if tok.kind == "ref":
            return self._maybe_range(self._cell(None, tok.text))
        if tok.kind == "lparen":
            inner = self.cmp()
            if self.take().kind != "rparen":
                raise SheetFormulaError(f"missing ')' in {self.text!r}")
            return inner
        if tok.kind == "ident":
            upper = tok.text.upper()
            if self.peek().kind == "lparen":
                if upper not in FUNCTIONS:
                    raise SheetFormulaError(f"unknown function {tok.text!r}")
                self.take()
                args: list[Node] = []
                if self.peek().kind != "rparen":
                    args.append(self.cmp())
                    while self.peek().kind == "comma":
                        self.take()
                        args.append(self.cmp())
                if self.take().kind != "rparen":
                    raise SheetFormulaError(f"missing ')' in {self.text!r}")
                return Fn(upper, tuple(args))
            if upper == "TRUE":
                return Bool(True)
            if upper == "FALSE":
                return Bool(False)
            return Name(tok.text)
        raise SheetFormulaError(f"unexpected {tok.text!r} in {self.text!r}")


def parse_formula(text: str) -> Node:
    return _Parser(text).parse()


def refs_in(node: Node) -> Iterator[Union[CellRef, RangeRef, Name]]:
    if isinstance(node, (CellRef, RangeRef, Name)):
        yield node
    elif isinstance(node, Un):
        yield from refs_in(node.operand)
    elif isinstance(node, Bin):
        yield from refs_in(node.lhs)
        yield from refs_in(node.rhs)
    elif isinstance(node, Fn):
        for arg in node.args:
            yield from refs_in(arg)


# --------------------------------------------------------------------------
# Relative normalization

_LEVELS = {"=": 1, "<>": 1, "<": 1, "<=": 1, ">": 1, ">=": 1,
           "+": 2, "-": 2, "*": 3, "/": 3}


def _rel_ref(ref: CellRef, base_row: int, base_col: int) -> str:
    sheet = f"{cellref.quote_sheet(ref.sheet)}!" if ref.sheet else ""
    row = f"R{ref.row}" if ref.abs_row else f"R[{ref.row - base_row}]"
    col = f"C{ref.col}" if ref.abs_col else f"C[{ref.col - base_col}]"
    return f"{sheet}{row}{col}"


def to_r1c1(text: str, base_row: int, base_col: int) -> str:
    """Rewrite every reference relative to (base_row, base_col); two cells
    carry one formula exactly when their normalizations are equal."""

    def walk(node: Node) -> tuple[str, int]:
        if isinstance(node, Num):
            return (f"{node.value:g}", 5)
        if isinstance(node, Bool):
            return ("TRUE" if node.value else "FALSE", 5)
        if isinstance(node, Name):
            return (node.name, 5)
        if isinstance(node, CellRef):
            return (_rel_ref(node, base_row, base_col), 5)
        if isinstance(node, RangeRef):
            return (f"{_rel_ref(node.start, base_row, base_col)}:"
                    f"{_rel_ref(node.end, base_row, base_col)}", 5)
        if isinstance(node, Un):
            text, level = walk(node.operand)
            return (f"-({text})" if level < 4 else f"-{text}", 4)
        if isinstance(node, Fn):
            return (f"{node.name}({','.join(walk(a)[0] for a in node.args)})", 5)
        assert isinstance(node, Bin)
        level = _LEVELS[node.op]
        lhs, ll = walk(node.lhs)
        rhs, rl = walk(node.rhs)
        if ll < level or (ll == level == 1):
            lhs = f"({lhs})"
        if rl <= level:
            rhs = f"({rhs})"
        return (f"{lhs}{node.op}{rhs}", level)

    return walk(parse_formula(text))[0]
