import random
from dataclasses import replace
from datetime import date

import pytest

from ringforge import elements as el, evaluate as ev, formula as f
from ringforge.assemble import complete
from ringforge.evaluate import EvalError, EvaluationError, evaluate, evaluate_cells, evaluate_model
from ringforge.formula import ValueType, Width
from ringforge.grid import SINGLE_COL, FormulaCell, LitCell, layout

from conftest import DEMO_EPOCH
from randmodels import DictStore, random_model


# --------------------------------------------------------------------------
# demo oracle


def test_demo_base_values(demo_assembled):
    values = evaluate_model(demo_assembled, "Base")
    assert values.rows["sales.Revenue"] == (1000.0, 1100.0, 1210.0)
    assert values.rows["cash.Opening"] == (0.0, 1000.0, 2100.0)
    assert values.rows["cash.Closing"] == (1000.0, 2100.0, 3310.0)
    assert values.checks.all_checks is True


def test_demo_high_values(demo_assembled):
    values = evaluate_model(demo_assembled, "High")
    assert values.rows["sales.Revenue"] == (1200.0, 1320.0, 1452.0)
    assert values.checks.all_checks is True


def test_unknown_scenario(demo_assembled):
    with pytest.raises(EvaluationError) as err:
        evaluate_model(demo_assembled, "Nope")
    assert err.value.code == "E_UNKNOWN_SCENARIO"


def test_mutating_revenue_keeps_a_fully_wired_check_green(demo, demo_store):
    # with inflow wired to revenue everything moves together, so the tie holds
    store = DictStore()
    sales = demo["sales"]
    broken = replace(sales, rows=sales.rows[:2] +
                     (el.Row("Revenue", el.Formula(f.parse("@Price + @Volume"))),))
    ids = {"sales": store.put(broken), "cash": store.put(demo["cash"])}
    skeleton = replace(demo["skeleton"], instances=(
        el.Instance("sales", ids["sales"]), el.Instance("cash", ids["cash"])))
    model = replace(demo["model"], skeleton=store.put(skeleton))
    assembled, diags = complete(model, store)
    assert diags == []
    values = evaluate_model(assembled, "Base")
    assert values.rows["sales.Revenue"] == (110.0, 120.0, 131.0)
    assert values.checks.all_checks is True


def independent_inflow_model(demo, store, revenue_expr):
    """Variant where cash inflow is its own data input, so the check ties
    the cash movement to an independently computed revenue."""
    sales = demo["sales"]
    sales = replace(sales, rows=sales.rows[:2] +
                    (el.Row("Revenue", el.Formula(f.parse(revenue_expr))),))
    ids = {"sales": store.put(sales), "cash": store.put(demo["cash"])}
    skeleton = replace(
        demo["skeleton"],
        instances=(el.Instance("sales", ids["sales"]), el.Instance("cash", ids["cash"])),
        wiring={"sales.price": "price", "sales.volume": "volume", "cash.inflow": "inflow"},
        data_inputs=demo["skeleton"].data_inputs + (el.DataInput("inflow", el.Structure.SERIES),),
    )
    base = demo["model"].scenarios[0]
    model = replace(
        demo["model"], skeleton=store.put(skeleton),
        scenarios=(el.Scenario("Base", dict(base.values, inflow=(1000.0, 1100.0, 1210.0))),),
    )
    assembled, diags = complete(model, store)
    assert diags == [], diags
    return assembled


def test_mutated_revenue_fails_an_independent_check(demo):
    healthy = independent_inflow_model(demo, DictStore(), "@Price * @Volume")
    assert evaluate_model(healthy, "Base").checks.all_checks is True
    mutated = independent_inflow_model(demo, DictStore(), "@Price + @Volume")
    values = evaluate_model(mutated, "Base")
    # closing movement stays 1000 while revenue collapses to 110
    assert values.rows["sales.Revenue"][0] == 110.0
    assert values.checks.periods["closing_movement"] == (False, False, False)
    assert values.checks.all_checks is False


def test_failing_check_is_reported(demo, demo_store):
    store = DictStore()
    for e in demo.values():
        store.put(e)
    skeleton = replace(demo["skeleton"], checks=(
        el.Check("off_by_one", f.parse("@cash.Closing - @cash.Opening = @sales.Revenue + 1")),))
    model = replace(demo["model"], skeleton=store.put(skeleton))
    assembled, diags = complete(model, store)
    assert diags == []
    values = evaluate_model(assembled, "Base")
    assert values.checks.periods["off_by_one"] == (False, False, False)
    assert values.checks.all_checks is False


def test_division_by_zero_propagates_and_fails_checks(demo_store):
    store = DictStore()
    c = el.Component(
        "C", ports=(el.Port("x", el.Structure.SERIES),),
        rows=(
            el.Row("X", el.InputRow("x")),
            el.Row("Ratio", el.Formula(f.parse("@X / 0"))),
            el.Row("Scaled", el.Formula(f.parse("@Ratio * 2"))),
        ),
        outputs=(), doc=el.Documentation("", "d"),
    )
    cid = store.put(c)
    sk = el.Skeleton(
        "S", (el.Instance("c", cid),), {"c.x": "x"},
        (el.DataInput("x", el.Structure.SERIES),),
        {"c.X": Width.FULL, "c.Ratio": Width.FULL, "c.Scaled": Width.FULL},
        (el.Check("sane", f.parse("@c.Scaled = @c.Scaled")),),
        el.Documentation("", "d"),
    )
    m = el.Model("m", store.put(sk), scenarios=(el.Scenario("Base", {"x": 1.0}),),
                 gen_params=el.GenParams(date(2009, 1, 1), el.Periodicity.MONTHLY, 2),
                 doc=el.Documentation("", "d"))
    assembled, diags = complete(m, store)
    assert diags == []
    values = evaluate_model(assembled, "Base")
    assert isinstance(values.rows["c.Ratio"][0], EvalError)
    assert isinstance(values.rows["c.Scaled"][0], EvalError)  # propagation
    assert values.checks.all_checks is False  # error fails its containing check
    ir = layout(assembled, model_version="0" * 64, generated_at=DEMO_EPOCH)
    cells = evaluate(ir, "Base")
    results = ev.run_checks(ir, cells)
    assert results.all_checks is False


# --------------------------------------------------------------------------
# linearity sanity


def test_doubling_one_input_doubles_revenue_and_closing(demo, demo_store):
    store = DictStore()
    for e in demo.values():
        store.put(e)
    base = demo["model"].scenarios[0]
    doubled_price = el.Scenario("DoubledP", dict(base.values, price=20.0))
    doubled_volume = el.Scenario("DoubledV", dict(
        base.values, volume=tuple(2 * v for v in base.values["volume"])))
    model = replace(demo["model"], scenarios=(base, doubled_price, doubled_volume))
    assembled, _ = complete(model, store)
    ref = evaluate_model(assembled, "Base")
    for name in ("DoubledP", "DoubledV"):
        out = evaluate_model(assembled, name)
        for path in ("sales.Revenue", "cash.Closing"):
            assert all(b == 2 * a for a, b in zip(ref.rows[path], out.rows[path]))


# --------------------------------------------------------------------------
# IR path vs direct path


def test_ir_and_direct_paths_agree_on_demo(demo_assembled, demo_ir):
    for scenario in ("Base", "High"):
        direct = evaluate_model(demo_assembled, scenario)
        cells = evaluate(demo_ir, scenario)
        via_ir = ev.row_values_from_cells(demo_ir, cells)
        for path, expected in direct.rows.items():
            assert via_ir[path] == expected, (scenario, path)
        checks = ev.run_checks(demo_ir, cells)
        assert checks.all_checks == direct.checks.all_checks


def test_scenario_switch_changes_exactly_one_cell(demo_ir):
    a = ev.set_active_scenario(demo_ir, 1)
    b = ev.set_active_scenario(demo_ir, 2)
    differing = []
    for sheet_a, sheet_b in zip(a.sheets, b.sheets):
        for key in set(sheet_a.cells) | set(sheet_b.cells):
            if sheet_a.cells.get(key) != sheet_b.cells.get(key):
                differing.append((sheet_a.name, key))
    assert differing == [("Inputs", demo_ir.names["ActiveScenario"][1:])]


def test_ir_evaluation_detects_cycles(demo_ir):
    sheets = []
    for sheet in demo_ir.sheets:
        cells = dict(sheet.cells)
        if sheet.name == "Workings":
            cells[(7, 3)] = FormulaCell("C9")  # revenue now reads inflow which reads revenue
        sheets.append(replace(sheet, cells=cells))
    rigged = replace(demo_ir, sheets=tuple(sheets))
    with pytest.raises(EvaluationError) as err:
        evaluate(rigged, "Base")
    assert err.value.code == "E_EVAL_CYCLE"


def test_blank_reads_as_zero_via_short_series(demo, demo_store):
    store = DictStore()
    for e in demo.values():
        store.put(e)
    base = demo["model"].scenarios[0]
    model = replace(demo["model"], scenarios=(
        el.Scenario("Base", dict(base.values, volume=(100.0, 110.0))),))
    assembled, _ = complete(model, store)
    direct = evaluate_model(assembled, "Base")
    assert direct.rows["sales.Volume"][2] == 0.0
    assert direct.rows["sales.Revenue"][2] == 0.0
    ir = layout(assembled, model_version="0" * 64, generated_at=DEMO_EPOCH)
    cells = evaluate(ir, "Base")
    assert ev.row_values_from_cells(ir, cells)["sales.Revenue"][2] == 0.0


# --------------------------------------------------------------------------
# fixed-point oracle


def fixed_point_evaluate(assembled, scenario_name):
    """Order-agnostic reference: recompute every cell from the current grid
    until nothing changes."""
    scenario = next(s for s in assembled.scenarios if s.name == scenario_name)
    n = assembled.gen_params.n_periods
    rows = {r.path: r for r in assembled.rows if r.is_value_row()}
    values = {}
    for path, row in rows.items():
        if row.kind == "input":
            raw = scenario.values[row.input_name]
            if row.width is Width.SINGLE:
                values[path] = [float(raw)]
            else:
                series = list(raw) + [0.0] * (n - len(raw)) if isinstance(raw, tuple) \
                    else [float(raw)] * n
                values[path] = series
        else:
            values[path] = [0.0] * (1 if row.width is Width.SINGLE else n)

    def read(ref, period):
        if ref.width is Width.SINGLE:
            return values[ref.label][0]
        target = period + ref.offset
        if target < 1:
            return False if ref.value_type is ValueType.BOOLEAN else 0.0
        return values[ref.label][target - 1]

    def compute(node, period):
        if isinstance(node, f.NumberLit):
            return node.value
        if isinstance(node, f.BoolLit):
            return node.value
        if isinstance(node, f.ResolvedRef):
            return read(node, period)
        if isinstance(node, f.Builtin):
            return float(period) if node.name == "PERIOD" else float(n)
        if isinstance(node, f.Neg):
            return -compute(node.operand, period)
        if isinstance(node, f.BinOp):
            a, b = compute(node.lhs, period), compute(node.rhs, period)
            return {"+": a + b, "-": a - b, "*": a * b}[node.op] if node.op != "/" else a / b
        if isinstance(node, f.Compare):
            a, b = compute(node.lhs, period), compute(node.rhs, period)
            return {"=": a == b, "<>": a != b, "<": a < b,
                    "<=": a <= b, ">": a > b, ">=": a >= b}[node.op]
        if isinstance(node, f.Call):
            args = [compute(x, period) for x in node.args]
            if node.fn == "IF":
                return args[1] if args[0] else args[2]
            if node.fn == "AND":
                return all(args)
            if node.fn == "OR":
                return any(args)
            if node.fn == "NOT":
                return not args[0]
            if node.fn == "SUM":
                return float(sum(args))
            if node.fn == "MIN":
                return float(min(args))
            if node.fn == "MAX":
                return float(max(args))
            if node.fn == "ABS":
                return abs(args[0])
        raise TypeError(node)

    for _ in range(len(rows) * n + 2):
        changed = False
        for path, row in rows.items():
            if row.kind != "formula":
                continue
            span = [1] if row.width is Width.SINGLE else range(1, n + 1)
            for period in span:
                if row.width is Width.SPECIAL and row.special is not None:
                    lo, hi = row.special
                    if not (lo <= period <= hi):
                        continue
                new = compute(row.resolved.root, period)
                slot = 0 if row.width is Width.SINGLE else period - 1
                if values[path][slot] != new:
                    values[path][slot] = new
                    changed = True
        if not changed:
            break
    return {path: tuple(vals) for path, vals in values.items()}


def test_oracle_equivalence_on_random_models():
    rng = random.Random(777)
    for _ in range(120):
        _, _, assembled = random_model(rng)
        scenario = assembled.scenarios[0].name
        direct = evaluate_model(assembled, scenario)
        brute = fixed_point_evaluate(assembled, scenario)
        for path, series in brute.items():
            got = direct.rows[path]
            # blanks from short series read as zero in the direct path
            normalized = tuple(0.0 if v is None else v for v in got)
            assert normalized == series, path


def test_ir_equals_direct_on_random_models():
    rng = random.Random(31337)
    for _ in range(40):
        _, _, assembled = random_model(rng)
        ir = layout(assembled, model_version="0" * 64, generated_at=DEMO_EPOCH)
        scenario = assembled.scenarios[0].name
        direct = evaluate_model(assembled, scenario)
        via_ir = ev.row_values_from_cells(ir, evaluate(ir, scenario))
        for path, expected in direct.rows.items():
            normalized = tuple(0.0 if v is None else v for v in expected)
            got = tuple(0.0 if v is None else v for v in via_ir[path])
            assert got == normalized, path
