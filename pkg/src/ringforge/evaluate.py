"""Evaluates an assembled model directly, or its WorkbookIR cell by cell.

The two paths exist on purpose: the direct interpreter works straight off
the resolved row expressions and serves as the oracle; the IR interpreter
parses the emitted cell formulas, so a reference-translation bug in the
layout pass shows up as a disagreement between the two.

Semantics follow spreadsheet arithmetic: 64-bit binary floats, blank reads
as 0 (FALSE in boolean positions), division by zero yields an error value
that propagates through arithmetic and fails any comparison containing it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from heapq import heapify, heappop, heappush
from typing import Mapping, Union

from ringforge import cellref, sheetformula
from ringforge.assemble import AssembledModel, dependency_graph
from ringforge.elements import Structure
from ringforge.formula import (
    BinOp,
    BoolLit,
    Builtin,
    Call,
    Compare,
    Neg,
    NumberLit,
    ResolvedRef,
    ValueType,
    Width,
)
from ringforge.grid import (
    FIRST_PERIOD_COL,
    NAME_ACTIVE_SCENARIO,
    NAME_ALL_CHECKS,
    SINGLE_COL,
    FormulaCell,
    LitCell,
    WorkbookIR,
)


class EvalError:
    """A spreadsheet error value (the only one we produce is #DIV/0!)."""

    __slots__ = ("text",)

    def __init__(self, text: str = "#DIV/0!"):
        self.text = text

    def __repr__(self) -> str:
        return self.text

    def __eq__(self, other) -> bool:
        return isinstance(other, EvalError) and other.text == self.text

    def __hash__(self) -> int:
        return hash(self.text)


Value = Union[float, bool, str, None, EvalError]


class EvaluationError(Exception):
    def __init__(self, message: str, code: str):
        super().__init__(message)
        self.code = code


def _num(v: Value) -> float | EvalError:
    if isinstance(v, EvalError):
        return v
    if v is None:
        return 0.0
    if isinstance(v, bool):
        return 1.0 if v else 0.0
    if isinstance(v, float):
        return v
    return EvalError("#VALUE!")


def _boolish(v: Value) -> bool | EvalError:
    if isinstance(v, EvalError):
        return v
    if v is None:
        return False
    if isinstance(v, bool):
        return v
    if isinstance(v, float):
        return v != 0.0
    return EvalError("#VALUE!")


def _excel_round(x: float, digits: float) -> float:
    factor = 10.0 ** int(digits)
    scaled = abs(x) * factor
    return math.copysign(math.floor(scaled + 0.5) / factor, x)


def _compare(op: str, left: Value, right: Value) -> bool:
    """Comparisons are exact; an error value fails every comparison."""
    if isinstance(left, EvalError) or isinstance(right, EvalError):
        return False
    if isinstance(left, bool) or isinstance(right, bool):
        lv, rv = _boolish(left), _boolish(right)
    else:
        lv, rv = _num(left), _num(right)
    if op == "=":
        return lv == rv
    if op == "<>":
        return lv != rv
    lv, rv = _num(left), _num(right)
    return {"<": lv < rv, "<=": lv <= rv, ">": lv > rv, ">=": lv >= rv}[op]


def _arith(op: str, left: Value, right: Value) -> Value:
    ln, rn = _num(left), _num(right)
    if isinstance(ln, EvalError):
        return ln
    if isinstance(rn, EvalError):
        return rn
    if op == "+":
        return ln + rn
    if op == "-":
        return ln - rn
    if op == "*":
        return ln * rn
    if rn == 0.0:
        return EvalError()
    return ln / rn


def _call(fn: str, args: list[Value]) -> Value:
    for a in args:
        if isinstance(a, EvalError) and fn not in ("AND", "OR"):
            return a
    if fn == "IF":
        cond = _boolish(args[0])
        if isinstance(cond, EvalError):
            return cond
        return args[1] if cond else args[2]
    if fn in ("AND", "OR"):
        bools = []
        for a in args:
            b = _boolish(a)
            if isinstance(b, EvalError):
                return b
            bools.append(b)
        return all(bools) if fn == "AND" else any(bools)
    if fn == "NOT":
        b = _boolish(args[0])
        return b if isinstance(b, EvalError) else not b
    nums = [_num(a) for a in args]
    for v in nums:
        if isinstance(v, EvalError):
            return v
    if fn == "SUM":
        return float(sum(nums))
    if fn == "MIN":
        return float(min(nums))
    if fn == "MAX":
        return float(max(nums))
    if fn == "ABS":
        return abs(nums[0])
    if fn == "ROUND":
        return _excel_round(nums[0], nums[1])
    raise EvaluationError(f"unknown function {fn}", "E_EVAL_CYCLE")


# --------------------------------------------------------------------------
# Direct path


@dataclass(frozen=True)
class CheckResults:
    periods: Mapping[str, tuple[Value, ...]]
    aggregates: Mapping[str, Value]
    all_checks: bool


@dataclass(frozen=True)
class ModelValues:
    rows: Mapping[str, tuple[Value, ...]]  # single-column rows hold one value
    checks: CheckResults


def _scenario_series(value, n: int) -> list[Value]:
    if isinstance(value, tuple):
        return list(value) + [None] * (n - len(value))
    return [float(value)] * n


def evaluate_model(am: AssembledModel, scenario: str) -> ModelValues:
    """Single pass in dependency order, period by period."""
    chosen = next((s for s in am.scenarios if s.name == scenario), None)
    if chosen is None:
        raise EvaluationError(f"no scenario named {scenario!r}", "E_UNKNOWN_SCENARIO")
    order = dependency_graph(am).order
    rows = {r.path: r for r in am.rows if r.is_value_row()}
    n = am.gen_params.n_periods
    values: dict[str, list[Value]] = {}
    for path, row in rows.items():
        values[path] = [None] if row.width is Width.SINGLE else [None] * n

    def read(ref: ResolvedRef, period: int) -> Value:
        if ref.width is Width.SINGLE:
            return values[ref.label][0]
        target = period + ref.offset
        if target < 1:
            return False if ref.value_type is ValueType.BOOLEAN else 0.0
        return values[ref.label][target - 1]

    def ev(node, period: int) -> Value:
        if isinstance(node, NumberLit):
            return node.value
        if isinstance(node, BoolLit):
            return node.value
        if isinstance(node, ResolvedRef):
            v = read(node, period)
            if v is None:
                return False if node.value_type is ValueType.BOOLEAN else 0.0
            return v
        if isinstance(node, Builtin):
            return float(period) if node.name == "PERIOD" else float(n)
        if isinstance(node, Neg):
            v = _num(ev(node.operand, period))
            return v if isinstance(v, EvalError) else -v
        if isinstance(node, BinOp):
            return _arith(node.op, ev(node.lhs, period), ev(node.rhs, period))
        if isinstance(node, Compare):
            return _compare(node.op, ev(node.lhs, period), ev(node.rhs, period))
        if isinstance(node, Call):
            return _call(node.fn, [ev(a, period) for a in node.args])
        raise TypeError(f"unexpected node {node!r}")

    for period in range(1, n + 1):
        for path in order:
            row = rows[path]
            if row.width is Width.SINGLE:
                if period != 1:
                    continue
                if row.kind == "input":
                    values[path][0] = float(chosen.values[row.input_name])
                else:
                    values[path][0] = ev(row.resolved.root, 1)
                continue
            first, last = 1, n
            if row.width is Width.SPECIAL and row.special is not None:
                first, last = row.special
            if not (first <= period <= last):
                continue
            if row.kind == "input":
                series = _scenario_series(chosen.values[row.input_name], n)
                raw = series[period - 1]
                values[path][period - 1] = 0.0 if raw is None else raw
            else:
                values[path][period - 1] = ev(row.resolved.root, period)

    periods: dict[str, tuple[Value, ...]] = {}
    aggregates: dict[str, Value] = {}
    for check in am.checks:
        results = tuple(ev(check.resolved.root, p) for p in range(1, n + 1))
        periods[check.name] = results
        aggregates[check.name] = all(v is True for v in results)
    all_ok = all(v is True for v in aggregates.values())
    return ModelValues(
        rows={p: tuple(v) for p, v in values.items()},
        checks=CheckResults(periods, aggregates, all_ok),
    )


# --------------------------------------------------------------------------
# IR path


CellValues = Mapping[tuple[str, int, int], Value]


def set_active_scenario(ir: WorkbookIR, index: int) -> WorkbookIR:
    """Copy of the IR with the ActiveScenario literal replaced — the only
    cell that differs between two scenario evaluations."""
    sheet_name, row, col = ir.names[NAME_ACTIVE_SCENARIO]
    sheets = []
    for sheet in ir.sheets:
        if sheet.name != sheet_name:
            sheets.append(sheet)
            continue
        cells = dict(sheet.cells)
        cells[(row, col)] = LitCell(float(index))
        sheets.append(type(sheet)(sheet.name, cells, sheet.outlines))
    return WorkbookIR(tuple(sheets), ir.names, ir.scenario_names, ir.n_periods,
                      ir.row_cells, ir.check_rows)


def evaluate(ir: WorkbookIR, scenario: str) -> dict[tuple[str, int, int], Value]:
    """Every cell's value for one scenario, in dependency order."""
    if scenario not in ir.scenario_names:
        raise EvaluationError(f"no scenario named {scenario!r}", "E_UNKNOWN_SCENARIO")
    ir = set_active_scenario(ir, ir.scenario_names.index(scenario) + 1)
    return evaluate_cells(ir)


def evaluate_cells(ir: WorkbookIR) -> dict[tuple[str, int, int], Value]:
    cells: dict[tuple[str, int, int], LitCell | FormulaCell] = {}
    for sheet in ir.sheets:
        for (row, col), cell in sheet.cells.items():
            cells[(sheet.name, row, col)] = cell
    names = {name: loc for name, loc in ir.names.items()}

    parsed: dict[tuple[str, int, int], sheetformula.Node] = {}
    deps: dict[tuple[str, int, int], set[tuple[str, int, int]]] = {}
    for key, cell in cells.items():
        if not isinstance(cell, FormulaCell):
            continue
        node = sheetformula.parse_formula(cell.formula)
        parsed[key] = node
        wants: set[tuple[str, int, int]] = set()
        for ref in sheetformula.refs_in(node):
            if isinstance(ref, sheetformula.Name):
                if ref.name in names:
                    wants.add(names[ref.name])
                continue
            if isinstance(ref, sheetformula.CellRef):
                positions = [(ref.row, ref.col)]
                sheet_name = ref.sheet or key[0]
            else:
                positions = list(ref.cells())
                sheet_name = ref.sheet or key[0]
            for row, col in positions:
                target = (sheet_name, row, col)
                if target in cells:
                    wants.add(target)
        deps[key] = {w for w in wants if isinstance(cells[w], FormulaCell)}

    ordered_keys = sorted(parsed)
    key_index = {k: i for i, k in enumerate(ordered_keys)}
    dependents: dict[tuple[str, int, int], list] = {k: [] for k in parsed}
    degree = {k: 0 for k in parsed}
    for key, wants in deps.items():
        degree[key] = len(wants)
        for w in wants:
            dependents[w].append(key)

    heap = [key_index[k] for k, d in degree.items() if d == 0]
    heapify(heap)
    values: dict[tuple[str, int, int], Value] = {
        key: cell.value for key, cell in cells.items() if isinstance(cell, LitCell)
    }
    done = 0

    def cell_value(sheet: str, row: int, col: int) -> Value:
        return values.get((sheet, row, col))

    def ev(node, at: tuple[str, int, int]) -> Value:
        if isinstance(node, sheetformula.Num):
            return node.value
        if isinstance(node, sheetformula.Bool):
            return node.value
        if isinstance(node, sheetformula.Name):
            loc = names.get(node.name)
            if loc is None:
                return EvalError("#NAME?")
            return cell_value(*loc)
        if isinstance(node, sheetformula.CellRef):
            return cell_value(node.sheet or at[0], node.row, node.col)
        if isinstance(node, sheetformula.RangeRef):
            raise EvaluationError("range outside a function argument", "E_EVAL_CYCLE")
        if isinstance(node, sheetformula.Un):
            v = _num(ev(node.operand, at))
            return v if isinstance(v, EvalError) else -v
        if isinstance(node, sheetformula.Bin):
            if node.op in ("=", "<>", "<", "<=", ">", ">="):
                return _compare(node.op, ev(node.lhs, at), ev(node.rhs, at))
            return _arith(node.op, ev(node.lhs, at), ev(node.rhs, at))
        assert isinstance(node, sheetformula.Fn)
        return fn_value(node, at)

    def range_positions(ref: sheetformula.RangeRef, at):
        sheet_name = ref.sheet or at[0]
        return [(sheet_name, row, col) for row, col in ref.cells()]

    def fn_value(node: sheetformula.Fn, at) -> Value:
        fn = node.name
        if fn == "COLUMN":
            return float(at[2])
        if fn == "COUNTA":
            count = 0
            for arg in node.args:
                if isinstance(arg, sheetformula.RangeRef):
                    count += sum(1 for pos in range_positions(arg, at) if pos in cells)
                elif isinstance(arg, sheetformula.CellRef):
                    count += 1 if (arg.sheet or at[0], arg.row, arg.col) in cells else 0
                else:
                    count += 1
            return float(count)
        if fn == "INDEX":
            rng = node.args[0]
            if not isinstance(rng, sheetformula.RangeRef):
                return EvalError("#REF!")
            k = _num(ev(node.args[1], at))
            if isinstance(k, EvalError):
                return k
            positions = range_positions(rng, at)
            idx = int(k)
            if idx < 1 or idx > len(positions):
                return EvalError("#REF!")
            return values.get(positions[idx - 1])
        if fn in ("AND", "OR", "SUM", "MIN", "MAX"):
            flat: list[Value] = []
            for arg in node.args:
                if isinstance(arg, sheetformula.RangeRef):
                    flat.extend(values.get(pos) for pos in range_positions(arg, at) if pos in cells)
                else:
                    flat.append(ev(arg, at))
            if fn in ("AND", "OR"):
                return _call(fn, [v for v in flat if v is not None] or [True])
            return _call(fn, [v for v in flat if v is not None] or [0.0])
        return _call(fn, [ev(arg, at) for arg in node.args])

    while heap:
        key = ordered_keys[heappop(heap)]
        result = ev(parsed[key], key)
        values[key] = 0.0 if result is None else result
        done += 1
        for dependent in dependents[key]:
            degree[dependent] -= 1
            if degree[dependent] == 0:
                heappush(heap, key_index[dependent])
    if done != len(parsed):
        stuck = sorted(k for k, d in degree.items() if d > 0)
        raise EvaluationError(f"cell dependency cycle near {stuck[:4]}", "E_EVAL_CYCLE")
    return values


def run_checks(ir: WorkbookIR, values: CellValues) -> CheckResults:
    """Read the Checks sheet results out of a finished evaluation."""
    from ringforge.grid import SHEET_CHECKS

    periods: dict[str, tuple[Value, ...]] = {}
    aggregates: dict[str, Value] = {}
    for name, row in ir.check_rows.items():
        periods[name] = tuple(
            values.get((SHEET_CHECKS, row, FIRST_PERIOD_COL + i)) for i in range(ir.n_periods)
        )
        aggregates[name] = values.get((SHEET_CHECKS, row, SINGLE_COL))
    sheet, row, col = ir.names[NAME_ALL_CHECKS]
    return CheckResults(periods, aggregates, values.get((sheet, row, col)) is True)


def row_values_from_cells(ir: WorkbookIR, values: CellValues) -> dict[str, tuple[Value, ...]]:
    """Flat-row view of an IR evaluation, comparable with the direct path."""
    out: dict[str, tuple[Value, ...]] = {}
    for path, (sheet, row) in ir.row_cells.items():
        single = (sheet, row, SINGLE_COL) in ir.sheet(sheet).cells
        if single:
            out[path] = (values.get((sheet, row, SINGLE_COL)),)
        else:
            out[path] = tuple(
                values.get((sheet, row, FIRST_PERIOD_COL + i)) for i in range(ir.n_periods)
            )
    return out
