"""Sheet/grid intermediate representation and the layout pass.

Every emitter (XLSX, canonical grid, verify) works from the WorkbookIR
produced here, so the workbook's whole content is decided in one place.

Grid conventions for calculation-style sheets: column 1 holds labels,
column 2 is the single-column slot, columns 3..(2+N) are the period grid;
row 1 is the title, row 2 the period start dates, content starts at row 4,
and each component instance is preceded by a heading row and outlined
("grouped") at its embedding depth.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Union

from ringforge import __version__, cellref, formula
from ringforge.assemble import AssembledModel, FlatRow
from ringforge.elements import ReportHeading, ReportRow, Structure
from ringforge.formula import Builtin, ResolvedRef, ValueType, Width

LABEL_COL = 1
SINGLE_COL = 2
FIRST_PERIOD_COL = 3
TITLE_ROW = 1
DATE_ROW = 2
FIRST_CONTENT_ROW = 4

DATE_FORMAT = "yyyy-mm-dd"

SHEET_INPUTS = "Inputs"
SHEET_CHECKS = "Checks"
SHEET_META = "Meta"

NAME_ACTIVE_SCENARIO = "ActiveScenario"
NAME_ALL_CHECKS = "AllChecks"
NAME_CLEAN = "Clean"
NAME_MODEL_VERSION = "ModelVersion"
NAME_GENERATED_AT = "GeneratedAt"


@dataclass(frozen=True)
class LitCell:
    value: Union[float, bool, str]
    fmt: str | None = None


@dataclass(frozen=True)
class FormulaCell:
    formula: str  # A1 text without the leading '='
    fmt: str | None = None


Cell = Union[LitCell, FormulaCell]


@dataclass(frozen=True)
class SheetIR:
    name: str
    cells: Mapping[tuple[int, int], Cell]
    outlines: Mapping[int, int] = field(default_factory=dict)  # grid row -> level

    def used_range(self) -> tuple[int, int]:
        if not self.cells:
            return 1, 1
        return max(r for r, _ in self.cells), max(c for _, c in self.cells)


@dataclass(frozen=True)
class WorkbookIR:
    sheets: tuple[SheetIR, ...]
    names: Mapping[str, tuple[str, int, int]]  # defined name -> sheet, row, col
    scenario_names: tuple[str, ...]
    n_periods: int
    row_cells: Mapping[str, tuple[str, int]]  # flat row path -> sheet, grid row
    check_rows: Mapping[str, int]  # check name -> grid row on Checks

    def sheet(self, name: str) -> SheetIR:
        return next(s for s in self.sheets if s.name == name)

    def cell(self, sheet: str, row: int, col: int) -> Cell | None:
        return self.sheet(sheet).cells.get((row, col))

    def name_cell(self, name: str) -> Cell | None:
        sheet, row, col = self.names[name]
        return self.cell(sheet, row, col)


@dataclass(frozen=True)
class RowPlace:
    sheet: str
    row: int
    width: Width
    special: tuple[int, int] | None


@dataclass(frozen=True)
class LayoutContext:
    """Everything a single row needs to render its cell formulas."""

    sheet: str  # the sheet being written
    places: Mapping[int, RowPlace]  # flat row index -> grid placement
    input_rows: Mapping[str, int]  # data input name -> active row on Inputs
    n_periods: int


def period_col(period: int) -> int:
    return FIRST_PERIOD_COL + period - 1


def _ref_text(ctx: LayoutContext, col: int):
    """Reference renderer for one target column of the period grid."""

    def refr(ref) -> tuple[str, int]:
        assert isinstance(ref, ResolvedRef)
        place = ctx.places[ref.target]
        other = place.sheet if place.sheet != ctx.sheet else None
        if ref.width is Width.SINGLE:
            return cellref.sheet_a1(other, place.row, SINGLE_COL, abs_row=True, abs_col=True), formula.LEVEL_ATOM
        target_col = col + ref.offset
        if target_col < FIRST_PERIOD_COL:
            guard = "FALSE" if ref.value_type is ValueType.BOOLEAN else "0"
            return guard, formula.LEVEL_ATOM
        return cellref.sheet_a1(other, place.row, target_col), formula.LEVEL_ATOM

    return refr


def _builtin_text(ctx: LayoutContext):
    def bltr(b: Builtin) -> tuple[str, int]:
        if b.name == "PERIOD":
            return f"COLUMN()-{FIRST_PERIOD_COL - 1}", formula.LEVEL_ADD
        return str(ctx.n_periods), formula.LEVEL_ATOM

    return bltr


def cell_formula(expr, ctx: LayoutContext, col: int) -> str:
    return formula.render(expr, _ref_text(ctx, col), _builtin_text(ctx), compact=True)


def instantiate_row(row: FlatRow, grid_row: int, ctx: LayoutContext) -> dict[tuple[int, int], Cell]:
    """Cells for one flat row at its grid position.

    Full-width rows repeat one formula across every period column (identical
    under relative normalization); references that would step left of the
    first period column become 0/FALSE guards.  Single-column rows fill just
    the single slot; special rows fill their period sub-range and leave the
    rest truly empty.
    """
    cells: dict[tuple[int, int], Cell] = {}
    fmt = row.fmt

    def formula_at(col: int) -> FormulaCell:
        assert row.resolved is not None
        return FormulaCell(cell_formula(row.resolved.root, ctx, col), fmt)

    def landing_at(col: int, abs_ref: bool) -> FormulaCell:
        assert row.input_name is not None
        active = ctx.input_rows[row.input_name]
        return FormulaCell(cellref.sheet_a1(SHEET_INPUTS, active, col,
                                            abs_row=abs_ref, abs_col=abs_ref), fmt)

    if row.width is Width.SINGLE:
        if row.kind == "input":
            cells[(grid_row, SINGLE_COL)] = landing_at(SINGLE_COL, abs_ref=True)
        else:
            cells[(grid_row, SINGLE_COL)] = formula_at(SINGLE_COL)
        return cells

    first, last = 1, ctx.n_periods
    if row.width is Width.SPECIAL and row.special is not None:
        first, last = row.special
    for period in range(first, last + 1):
        col = period_col(period)
        if row.kind == "input":
            cells[(grid_row, col)] = landing_at(col, abs_ref=False)
        else:
            cells[(grid_row, col)] = formula_at(col)
    return cells


class _SheetBuilder:
    def __init__(self, name: str):
        self.name = name
        self.cells: dict[tuple[int, int], Cell] = {}
        self.outlines: dict[int, int] = {}

    def set(self, row: int, col: int, cell: Cell) -> None:
        if (row, col) in self.cells:
            raise ValueError(f"{self.name}!{cellref.a1(row, col)} written twice")
        self.cells[(row, col)] = cell

    def text(self, row: int, col: int, value: str) -> None:
        self.set(row, col, LitCell(value))

    def date_headers(self, dates) -> None:
        self.text(TITLE_ROW, LABEL_COL, self.name)
        for i, d in enumerate(dates):
            self.set(DATE_ROW, FIRST_PERIOD_COL + i, LitCell(float(cellref.serial_date(d)), DATE_FORMAT))

    def done(self) -> SheetIR:
        return SheetIR(self.name, dict(self.cells), dict(self.outlines))


def _scenario_cells(value, n: int) -> list[float | None]:
    """Series scenario value as one cell per period; scalars broadcast and
    short vectors leave trailing periods empty."""
    if isinstance(value, tuple):
        return list(value) + [None] * (n - len(value))
    return [float(value)] * n


def build_inputs_sheet(am: AssembledModel, dates) -> tuple[SheetIR, dict[str, int], dict]:
    """Scenario blocks plus the live 'active' row per data input.

    Returns the sheet, the active-row map used by landing formulas, and the
    defined names it contributes.
    """
    sheet = _SheetBuilder(SHEET_INPUTS)
    sheet.date_headers(dates)
    n = am.gen_params.n_periods
    active_cell_row = FIRST_CONTENT_ROW
    sheet.text(active_cell_row, LABEL_COL, "Active scenario")
    sheet.set(active_cell_row, SINGLE_COL, LitCell(1.0))
    names = {NAME_ACTIVE_SCENARIO: (SHEET_INPUTS, active_cell_row, SINGLE_COL)}

    input_rows: dict[str, int] = {}
    row = active_cell_row + 2
    for data_input in am.inputs:
        first_scenario_row = row
        for scenario in am.scenarios:
            sheet.text(row, LABEL_COL, f"{data_input.name} [{scenario.name}]")
            value = scenario.values[data_input.name]
            if data_input.structure is Structure.SCALAR:
                sheet.set(row, SINGLE_COL, LitCell(float(value)))
            else:
                for i, v in enumerate(_scenario_cells(value, n)):
                    if v is not None:
                        sheet.set(row, FIRST_PERIOD_COL + i, LitCell(v))
            row += 1
        last_scenario_row = row - 1
        sheet.text(row, LABEL_COL, data_input.name)
        cols = [SINGLE_COL] if data_input.structure is Structure.SCALAR else \
            [FIRST_PERIOD_COL + i for i in range(n)]
        for col in cols:
            span = f"{cellref.a1(first_scenario_row, col)}:{cellref.a1(last_scenario_row, col)}"
            sheet.set(row, col, FormulaCell(f"INDEX({span},{NAME_ACTIVE_SCENARIO})"))
        input_rows[data_input.name] = row
        row += 1
    return sheet.done(), input_rows, names


def _build_calc_sheets(am, dates, ctx_places, input_rows):
    sheets = []
    row_cells: dict[str, tuple[str, int]] = {}
    for sheet_name in am.calc_sheets:
        sheet = _SheetBuilder(sheet_name)
        sheet.date_headers(dates)
        ctx = LayoutContext(sheet_name, ctx_places, input_rows, am.gen_params.n_periods)
        for flat in am.rows:
            if flat.sheet != sheet_name:
                continue
            place = ctx_places.get(flat.index)
            if place is None:
                continue
            if flat.kind == "heading":
                sheet.text(place.row, LABEL_COL, flat.label)
                sheet.outlines[place.row] = flat.depth
            elif flat.kind == "blank":
                sheet.outlines[place.row] = flat.depth
            else:
                label = flat.path.split(".", 1)[1] if "." in flat.path else flat.path
                if flat.unit:
                    label = f"{label} ({flat.unit})"
                sheet.text(place.row, LABEL_COL, label)
                sheet.outlines[place.row] = flat.depth
                sheet.cells.update(instantiate_row(flat, place.row, ctx))
                row_cells[flat.path] = (sheet_name, place.row)
        # instance headings sit above their group at outline level 0
        heading_rows = _instance_heading_rows(am, ctx_places, sheet_name)
        for grid_row, instance in heading_rows:
            sheet.text(grid_row, LABEL_COL, instance)
        sheets.append(sheet.done())
    return sheets, row_cells


def _place_rows(am: AssembledModel) -> tuple[dict[int, RowPlace], list[tuple[str, int, str]]]:
    """Assign one grid row per flat row, instance blocks in order, each
    preceded by a heading row. Returns placements and heading positions."""
    places: dict[int, RowPlace] = {}
    headings: list[tuple[str, int, str]] = []  # sheet, grid row, instance
    next_row = {name: FIRST_CONTENT_ROW for name in am.calc_sheets}
    current_instance: tuple[str, str] | None = None
    for flat in am.rows:
        sheet = flat.sheet
        if (sheet, flat.instance) != current_instance:
            current_instance = (sheet, flat.instance)
            headings.append((sheet, next_row[sheet], flat.instance))
            next_row[sheet] += 1
        places[flat.index] = RowPlace(sheet, next_row[sheet], flat.width or Width.FULL, flat.special)
        next_row[sheet] += 1
    return places, headings


def _instance_heading_rows(am, places, sheet_name):
    # recomputed cheaply from placements: rows that precede each block
    seen: list[tuple[int, str]] = []
    current: tuple[str, str] | None = None
    for flat in am.rows:
        if flat.sheet != sheet_name:
            continue
        if (flat.sheet, flat.instance) != current:
            current = (flat.sheet, flat.instance)
            seen.append((places[flat.index].row - 1, flat.instance))
    return seen


def build_checks_sheet(am, dates, ctx_places, input_rows) -> tuple[SheetIR, dict[str, int], dict]:
    """One row per check with per-period booleans, an AND aggregate in the
    single-column slot, and the AllChecks master cell."""
    sheet = _SheetBuilder(SHEET_CHECKS)
    sheet.date_headers(dates)
    n = am.gen_params.n_periods
    ctx = LayoutContext(SHEET_CHECKS, ctx_places, input_rows, n)
    check_rows: dict[str, int] = {}
    row = FIRST_CONTENT_ROW
    for check in am.checks:
        sheet.text(row, LABEL_COL, check.name)
        for period in range(1, n + 1):
            col = period_col(period)
            sheet.set(row, col, FormulaCell(cell_formula(check.resolved.root, ctx, col)))
        span = f"{cellref.a1(row, FIRST_PERIOD_COL)}:{cellref.a1(row, period_col(n))}"
        sheet.set(row, SINGLE_COL, FormulaCell(f"AND({span})"))
        check_rows[check.name] = row
        row += 1
    sheet.text(DATE_ROW, LABEL_COL, "All checks")
    if check_rows:
        span = f"{cellref.a1(FIRST_CONTENT_ROW, SINGLE_COL)}:{cellref.a1(row - 1, SINGLE_COL)}"
        sheet.set(DATE_ROW, SINGLE_COL, FormulaCell(f"AND({span})"))
    else:
        sheet.set(DATE_ROW, SINGLE_COL, LitCell(True))
    names = {NAME_ALL_CHECKS: (SHEET_CHECKS, DATE_ROW, SINGLE_COL)}
    return sheet.done(), check_rows, names


def build_outputs(am, dates, ctx_places) -> list[SheetIR]:
    """Report sheets and chart-data sheets: labels plus cross-sheet
    references to the source cells, formats inherited from the source row."""
    by_path = {r.path: r for r in am.rows}
    sheets = []
    n = am.gen_params.n_periods

    def source_cells(sheet, grid_row, flat):
        place = ctx_places[flat.index]
        if flat.width is Width.SINGLE:
            sheet.set(grid_row, SINGLE_COL, FormulaCell(
                cellref.sheet_a1(place.sheet, place.row, SINGLE_COL, abs_row=True, abs_col=True),
                flat.fmt))
            return
        first, last = 1, n
        if flat.width is Width.SPECIAL and flat.special is not None:
            first, last = flat.special
        for period in range(first, last + 1):
            col = period_col(period)
            sheet.set(grid_row, col, FormulaCell(
                cellref.sheet_a1(place.sheet, place.row, col), flat.fmt))

    for report in am.reports:
        sheet = _SheetBuilder(report.name)
        sheet.date_headers(dates)
        row = FIRST_CONTENT_ROW
        for item in report.items:
            if isinstance(item, ReportHeading):
                sheet.text(row, LABEL_COL, item.text)
            else:
                flat = by_path[item.path]
                sheet.text(row, LABEL_COL, flat.path)
                source_cells(sheet, row, flat)
            row += 1
        sheets.append(sheet.done())
    for chart in am.charts:
        sheet = _SheetBuilder(chart.name)
        sheet.date_headers(dates)
        row = FIRST_CONTENT_ROW
        for path in chart.series:
            flat = by_path[path]
            sheet.text(row, LABEL_COL, path)
            source_cells(sheet, row, flat)
            row += 1
        sheets.append(sheet.done())
    return sheets


def build_meta_sheet(am, built: list[SheetIR], model_version: str, tool_version: str,
                     generated_at: str) -> tuple[SheetIR, dict]:
    """Version identities, generation stamp, per-sheet cell counts with live
    COUNTA mirrors, and the coarse in-workbook Clean indicator."""
    sheet = _SheetBuilder(SHEET_META)
    sheet.text(TITLE_ROW, LABEL_COL, SHEET_META)
    names: dict[str, tuple[str, int, int]] = {}
    row = 2
    sheet.text(row, LABEL_COL, "Model version")
    sheet.text(row, SINGLE_COL, model_version)
    names[NAME_MODEL_VERSION] = (SHEET_META, row, SINGLE_COL)
    row += 1
    sheet.text(row, LABEL_COL, "Skeleton version")
    sheet.text(row, SINGLE_COL, am.skeleton_version)
    row += 1
    for info in am.instances:
        sheet.text(row, LABEL_COL, f"Component {info.name}")
        sheet.text(row, SINGLE_COL, info.component)
        row += 1
    sheet.text(row, LABEL_COL, "Tool version")
    sheet.text(row, SINGLE_COL, tool_version)
    row += 1
    sheet.text(row, LABEL_COL, "Generated at")
    sheet.text(row, SINGLE_COL, generated_at)
    names[NAME_GENERATED_AT] = (SHEET_META, row, SINGLE_COL)
    row += 2

    first_count_row = row
    for other in built:
        max_row, max_col = other.used_range()
        span = cellref.sheet_a1(other.name, 1, 1) + f":{cellref.a1(max_row, max_col)}"
        sheet.text(row, 1, other.name)
        sheet.set(row, 2, LitCell(float(len(other.cells))))
        sheet.set(row, 3, FormulaCell(f"COUNTA({span})"))
        sheet.set(row, 4, FormulaCell(f"{cellref.a1(row, 2)}={cellref.a1(row, 3)}"))
        row += 1
    sheet.text(row, LABEL_COL, "Clean")
    if built:
        span = f"{cellref.a1(first_count_row, 4)}:{cellref.a1(row - 1, 4)}"
        sheet.set(row, SINGLE_COL, FormulaCell(f"AND({span})"))
    else:
        sheet.set(row, SINGLE_COL, LitCell(True))
    names[NAME_CLEAN] = (SHEET_META, row, SINGLE_COL)
    row += 1
    for chart in am.charts:
        sheet.text(row, 1, "Chart")
        sheet.text(row, 2, chart.name)
        sheet.text(row, 3, chart.kind.value)
        sheet.text(row, 4, ",".join(chart.series))
        row += 1
    return sheet.done(), names


def layout(am: AssembledModel, model_version: str, generated_at: str,
           tool_version: str = __version__) -> WorkbookIR:
    """Deterministic placement of the whole assembled model."""
    dates = cellref.period_dates(am.gen_params.start_date, am.gen_params.periodicity,
                                 am.gen_params.n_periods)
    places, _headings = _place_rows(am)
    inputs_sheet, input_rows, names = build_inputs_sheet(am, dates)
    calc_sheets, row_cells = _build_calc_sheets(am, dates, places, input_rows)
    checks_sheet, check_rows, check_names = build_checks_sheet(am, dates, places, input_rows)
    names.update(check_names)
    output_sheets = build_outputs(am, dates, places)
    built = [inputs_sheet, *calc_sheets, checks_sheet, *output_sheets]
    meta_sheet, meta_names = build_meta_sheet(am, built, model_version, tool_version, generated_at)
    names.update(meta_names)
    return WorkbookIR(
        sheets=tuple(built + [meta_sheet]),
        names=names,
        scenario_names=tuple(s.name for s in am.scenarios),
        n_periods=am.gen_params.n_periods,
        row_cells=row_cells,
        check_rows=check_rows,
    )
