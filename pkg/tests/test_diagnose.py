import itertools
import json
from dataclasses import replace
from datetime import date

import pytest

from ringforge import elements as el, formula as f
from ringforge.diagnose import diagnose
from ringforge.diagnostics import Diagnostic, Severity, gate_generation, sort_diagnostics
from ringforge.elements import validate_element
from ringforge.formula import Width
from ringforge.store import VersionStore

AT = "2009-01-01T00:00:00+00:00"

_counter = itertools.count()


def doc(entry="documented"):
    return el.Documentation("", entry)


def fresh_diagnosis(tmp_path, *elements_, target: int = -1):
    """Store and check off a fixture chain, then diagnose the target."""
    store = VersionStore.create(tmp_path / f"s{next(_counter)}")
    vids = []
    for e in elements_:
        vid = store.put_new(e, "author", AT)
        store.check_off(vid, "checker", AT)
        vids.append(vid)
    return [d.code for d in diagnose(vids[target], store)], store, vids


# --------------------------------------------------------------------------
# shared fixture pieces


def simple_component(rows=None, **overrides):
    base = dict(
        name="Block",
        ports=(el.Port("x", el.Structure.SERIES),),
        rows=rows or (
            el.Row("X", el.InputRow("x")),
            el.Row("Y", el.Formula(f.parse("@X + @X"))),
        ),
        outputs=("Y",),
        doc=doc(),
    )
    base.update(overrides)
    return el.Component(**base)


def simple_skeleton(component_id, **overrides):
    base = dict(
        name="Frame",
        instances=(el.Instance("b", component_id),),
        wiring={"b.x": "x"},
        data_inputs=(el.DataInput("x", el.Structure.SERIES),),
        widths={"b.X": Width.FULL, "b.Y": Width.FULL},
        checks=(el.Check("tie", f.parse("@b.Y = @b.X + @b.X")),),
        doc=doc(),
    )
    base.update(overrides)
    return el.Skeleton(**base)


def simple_model(skeleton_id, **overrides):
    base = dict(
        name="Mini",
        skeleton=skeleton_id,
        scenarios=(el.Scenario("Base", {"x": 1.0}),),
        gen_params=el.GenParams(date(2009, 1, 1), el.Periodicity.MONTHLY, 3),
        doc=doc(),
    )
    base.update(overrides)
    return el.Model(**base)


def margin_child():
    return el.Component(
        "Margin",
        ports=(el.Port("base", el.Structure.SERIES),),
        rows=(el.Row("Base", el.InputRow("base")),
              el.Row("Out", el.Formula(f.parse("@Base + @Base")))),
        outputs=("Out",),
        doc=doc(),
    )


# --------------------------------------------------------------------------
# local mutation lane: validate_element triggers exactly one code


def broken_and_fixed_local():
    comp = simple_component()

    def rows(*items):
        return tuple(items)

    cases = {
        "E_BAD_LABEL": (
            simple_component(name="9block"),
            comp,
        ),
        "E_DUPLICATE_LABEL": (
            simple_component(rows=rows(el.Row("X", el.InputRow("x")),
                                       el.Row("X", el.Formula(f.parse("1")))),
                             outputs=()),
            simple_component(outputs=()),
        ),
        "E_DUPLICATE_PORT": (
            simple_component(ports=(el.Port("x", el.Structure.SERIES),
                                    el.Port("x", el.Structure.SERIES))),
            comp,
        ),
        "E_UNKNOWN_PORT": (
            simple_component(rows=rows(el.Row("X", el.InputRow("x")),
                                       el.Row("Z", el.InputRow("z")),
                                       el.Row("Y", el.Formula(f.parse("@X + @X"))))),
            comp,
        ),
        "E_PORT_NOT_LANDED": (
            simple_component(rows=rows(el.Row("Y", el.Formula(f.parse("1")))), outputs=("Y",)),
            comp,
        ),
        "E_DUPLICATE_LANDING": (
            simple_component(rows=rows(el.Row("X", el.InputRow("x")),
                                       el.Row("X2", el.InputRow("x")),
                                       el.Row("Y", el.Formula(f.parse("@X + @X"))))),
            comp,
        ),
        "E_DANGLING_OUTPUT": (
            simple_component(outputs=("Z",)),
            comp,
        ),
        "E_UNRESOLVED_REF": (
            simple_component(rows=rows(el.Row("X", el.InputRow("x")),
                                       el.Row("Y", el.Formula(f.parse("@Z + @X"))))),
            comp,
        ),
        "E_FORWARD_ROW": (
            simple_component(rows=rows(el.Row("X", el.InputRow("x")),
                                       el.Row("Y", el.Formula(f.parse("@W"))),
                                       el.Row("W", el.Formula(f.parse("@X"))))),
            simple_component(rows=rows(el.Row("X", el.InputRow("x")),
                                       el.Row("W", el.Formula(f.parse("@X"))),
                                       el.Row("Y", el.Formula(f.parse("@W"))))),
        ),
        "E_DUPLICATE_INSTANCE": (
            simple_skeleton("0" * 64, instances=(el.Instance("b", "0" * 64),
                                                 el.Instance("b", "0" * 64))),
            simple_skeleton("0" * 64),
        ),
        "E_DUPLICATE_INPUT": (
            simple_skeleton("0" * 64, data_inputs=(el.DataInput("x", el.Structure.SERIES),
                                                   el.DataInput("x", el.Structure.SERIES))),
            simple_skeleton("0" * 64),
        ),
        "E_DUPLICATE_CHECK": (
            simple_skeleton("0" * 64, checks=(el.Check("t", f.parse("@b.Y = @b.Y")),
                                              el.Check("t", f.parse("@b.X = @b.X")))),
            simple_skeleton("0" * 64),
        ),
        "E_WIRE_FORWARD": (
            simple_skeleton("0" * 64, wiring={"b.x": "b.Y"}),
            simple_skeleton("0" * 64),
        ),
        "E_INPUT_MULTIPLY_WIRED": (
            simple_skeleton(
                "0" * 64,
                instances=(el.Instance("b", "0" * 64), el.Instance("c", "0" * 64)),
                wiring={"b.x": "x", "c.x": "x"},
                widths={"b.X": Width.FULL, "b.Y": Width.FULL,
                        "c.X": Width.FULL, "c.Y": Width.FULL},
            ),
            simple_skeleton("0" * 64),
        ),
        "E_DANGLING_PATH": (
            simple_skeleton("0" * 64, wiring={"b.x": "x", "ghost.p": "x"}),
            simple_skeleton("0" * 64),
        ),
        "E_DUPLICATE_SCENARIO": (
            simple_model("0" * 64, scenarios=(el.Scenario("Base", {"x": 1.0}),
                                              el.Scenario("Base", {"x": 2.0}))),
            simple_model("0" * 64),
        ),
        "E_SPECIAL_RANGE": (
            simple_model("0" * 64, special_widths={"b.Y": (2, 9)}),
            simple_model("0" * 64, special_widths={"b.Y": (2, 3)}),
        ),
        "E_SCENARIO_LENGTH": (
            simple_model("0" * 64, scenarios=(el.Scenario("Base", {"x": (1.0,) * 9}),)),
            simple_model("0" * 64),
        ),
        "E_BAD_SHEET_NAME": (
            simple_model("0" * 64, sheet_assignment={"b": "bad[name]"}),
            simple_model("0" * 64, sheet_assignment={"b": "GoodName"}),
        ),
        "E_SHEET_RESERVED": (
            simple_model("0" * 64, sheet_assignment={"b": "Meta"}),
            simple_model("0" * 64),
        ),
        "E_SHEET_COLLISION": (
            simple_model("0" * 64,
                         reports=(el.ReportDef("Place", ()), el.ReportDef("Place", ()))),
            simple_model("0" * 64, reports=(el.ReportDef("Place", ()),)),
        ),
    }
    return cases


@pytest.mark.parametrize("code", sorted(broken_and_fixed_local()))
def test_local_mutation_triggers_exactly_one_code(code):
    broken, fixed = broken_and_fixed_local()[code]
    broken_codes = [d.code for d in validate_element(broken)]
    assert broken_codes == [code]
    # special case: E_SPECIAL_RANGE fixture's fix still needs a special row,
    # which is a store-level concern; locally the fixed element is clean
    assert validate_element(fixed) == [] or code == "E_SPECIAL_RANGE"


# --------------------------------------------------------------------------
# store mutation lane: diagnose triggers exactly one code, fix yields []


def test_unbound_port(tmp_path):
    child = margin_child()
    from ringforge.store import version_id
    parent = simple_component(
        rows=(el.Row("X", el.InputRow("x")), el.Row("Y", el.Formula(f.parse("@X + @X")))),
        embeds=(el.Embed("m", version_id(child), {}),),
    )
    codes, _, _ = fresh_diagnosis(tmp_path, child, parent)
    assert codes == ["E_UNBOUND_PORT"]
    fixed = replace(parent, embeds=(el.Embed("m", version_id(child), {"base": "Y"}),))
    codes, _, _ = fresh_diagnosis(tmp_path, child, fixed)
    assert codes == []


def test_bad_binding(tmp_path):
    child = margin_child()
    from ringforge.store import version_id
    parent = simple_component(embeds=(el.Embed("m", version_id(child), {"base": "Ghost"}),))
    codes, _, _ = fresh_diagnosis(tmp_path, child, parent)
    assert codes == ["E_BAD_BINDING"]
    fixed = replace(parent, embeds=(el.Embed("m", version_id(child), {"base": "Y"}),))
    codes, _, _ = fresh_diagnosis(tmp_path, child, fixed)
    assert codes == []


def test_component_cycle_via_tampered_store(tmp_path):
    store = VersionStore.create(tmp_path / "s")
    comp = simple_component()
    vid = store.put_new(comp, "author", AT)
    store.check_off(vid, "checker", AT)
    # hand-edit the stored object so the component embeds itself
    path = store.root / "objects" / f"{vid}.json"
    data = json.loads(path.read_text())
    data["embeds"] = [{"instance": "again", "child": vid, "bindings": {"x": "X"}}]
    path.write_text(json.dumps(data))
    codes = [d.code for d in diagnose(vid, store)]
    assert codes == ["E_COMPONENT_CYCLE"]
    del data["embeds"]
    path.write_text(json.dumps(data))
    assert [d.code for d in diagnose(vid, store)] == []


def test_unwired_port(tmp_path):
    comp = simple_component()
    from ringforge.store import version_id
    skel = simple_skeleton(version_id(comp), wiring={})
    codes, _, _ = fresh_diagnosis(tmp_path, comp, skel)
    assert codes == ["E_INPUT_UNUSED", "E_UNWIRED_PORT"]
    skel2 = simple_skeleton(version_id(comp))
    codes, _, _ = fresh_diagnosis(tmp_path, comp, skel2)
    assert codes == []


def test_width_missing(tmp_path):
    comp = simple_component()
    from ringforge.store import version_id
    skel = simple_skeleton(version_id(comp), widths={"b.X": Width.FULL})
    codes, _, _ = fresh_diagnosis(tmp_path, comp, skel)
    assert codes == ["E_WIDTH_MISSING"]
    codes, _, _ = fresh_diagnosis(tmp_path, comp, simple_skeleton(version_id(comp)))
    assert codes == []


def test_width_on_unknown_row(tmp_path):
    comp = simple_component()
    from ringforge.store import version_id
    skel = simple_skeleton(version_id(comp),
                           widths={"b.X": Width.FULL, "b.Y": Width.FULL, "b.Ghost": Width.FULL})
    codes, _, _ = fresh_diagnosis(tmp_path, comp, skel)
    assert codes == ["E_DANGLING_PATH"]


def test_structure_mismatch(tmp_path):
    comp = el.Component(
        "Block", ports=(el.Port("x", el.Structure.SCALAR),),
        rows=(el.Row("X", el.InputRow("x")),), outputs=("X",), doc=doc(),
    )
    from ringforge.store import version_id
    skel = simple_skeleton(
        version_id(comp),
        wiring={"b.x": "x"},
        data_inputs=(el.DataInput("x", el.Structure.SCALAR),),
        widths={"b.X": Width.FULL},  # scalar must land in the single column
        checks=(el.Check("tie", f.parse("@b.X = @b.X")),),
    )
    codes, _, _ = fresh_diagnosis(tmp_path, comp, skel)
    assert codes == ["E_STRUCTURE_MISMATCH"]
    fixed = replace(skel, widths={"b.X": Width.SINGLE})
    codes, _, _ = fresh_diagnosis(tmp_path, comp, fixed)
    assert codes == []


def test_input_unused(tmp_path):
    comp = simple_component()
    from ringforge.store import version_id
    skel = simple_skeleton(
        version_id(comp),
        data_inputs=(el.DataInput("x", el.Structure.SERIES),
                     el.DataInput("spare", el.Structure.SERIES)),
    )
    codes, _, _ = fresh_diagnosis(tmp_path, comp, skel)
    assert codes == ["E_INPUT_UNUSED"]


def test_offset_on_single(tmp_path):
    comp = el.Component(
        "Block",
        ports=(el.Port("rate", el.Structure.SCALAR), el.Port("x", el.Structure.SERIES)),
        rows=(el.Row("Rate", el.InputRow("rate")),
              el.Row("X", el.InputRow("x")),
              el.Row("Y", el.Formula(f.parse("@X + @Rate[-1]")))),
        outputs=("Y",), doc=doc(),
    )
    from ringforge.store import version_id
    skel = simple_skeleton(
        version_id(comp),
        wiring={"b.rate": "r", "b.x": "x"},
        data_inputs=(el.DataInput("r", el.Structure.SCALAR),
                     el.DataInput("x", el.Structure.SERIES)),
        widths={"b.Rate": Width.SINGLE, "b.X": Width.FULL, "b.Y": Width.FULL},
        checks=(el.Check("tie", f.parse("@b.Y = @b.Y")),),
    )
    codes, _, _ = fresh_diagnosis(tmp_path, comp, skel)
    assert codes == ["E_OFFSET_ON_SINGLE"]


def test_check_type_mismatch(tmp_path):
    comp = simple_component()
    from ringforge.store import version_id
    skel = simple_skeleton(version_id(comp),
                           checks=(el.Check("notbool", f.parse("@b.Y + @b.X")),))
    codes, _, _ = fresh_diagnosis(tmp_path, comp, skel)
    assert codes == ["E_TYPE_MISMATCH"]


def test_kind_mismatch_in_instances(tmp_path):
    comp = simple_component()
    from ringforge.store import version_id
    good_skel = simple_skeleton(version_id(comp))
    bad_skel = simple_skeleton(version_id(good_skel), name="Wrapper",
                               checks=(el.Check("t", f.parse("@b.Y = @b.Y")),))
    codes, _, _ = fresh_diagnosis(tmp_path, comp, good_skel, bad_skel)
    assert "E_KIND_MISMATCH" in codes


def test_dangling_child(tmp_path):
    comp = simple_component()
    from ringforge.store import version_id
    skel = simple_skeleton(version_id(comp))
    store = VersionStore.create(tmp_path / "s")
    cid = store.put_new(comp, "author", AT)
    store.check_off(cid, "checker", AT)
    sid = store.put_new(skel, "author", AT)
    store.check_off(sid, "checker", AT)
    (store.root / "objects" / f"{cid}.json").unlink()
    codes = [d.code for d in diagnose(sid, store)]
    assert codes == ["E_DANGLING_CHILD"]


def test_no_scenario(tmp_path):
    comp = simple_component()
    from ringforge.store import version_id
    skel = simple_skeleton(version_id(comp))
    model = simple_model(version_id(skel), scenarios=())
    codes, _, _ = fresh_diagnosis(tmp_path, comp, skel, model)
    assert codes == ["E_NO_SCENARIO"]
    fixed = simple_model(version_id(skel))
    codes, _, _ = fresh_diagnosis(tmp_path, comp, skel, fixed)
    assert codes == []


def test_scenario_incomplete_and_unknown(tmp_path):
    comp = simple_component()
    from ringforge.store import version_id
    skel = simple_skeleton(version_id(comp))
    model = simple_model(version_id(skel), scenarios=(el.Scenario("Base", {"y": 1.0}),))
    codes, _, _ = fresh_diagnosis(tmp_path, comp, skel, model)
    assert codes == ["E_SCENARIO_INCOMPLETE", "E_SCENARIO_UNKNOWN_INPUT"]


def test_special_missing(tmp_path):
    comp = simple_component()
    from ringforge.store import version_id
    skel = simple_skeleton(version_id(comp),
                           widths={"b.X": Width.FULL, "b.Y": Width.SPECIAL})
    model = simple_model(version_id(skel))
    codes, _, _ = fresh_diagnosis(tmp_path, comp, skel, model)
    assert codes == ["E_SPECIAL_MISSING"]
    fixed = simple_model(version_id(skel), special_widths={"b.Y": (1, 2)})
    codes, _, _ = fresh_diagnosis(tmp_path, comp, skel, fixed)
    assert codes == []


# --------------------------------------------------------------------------
# warnings


def test_constant_warning(tmp_path):
    comp = simple_component(rows=(el.Row("X", el.InputRow("x")),
                                  el.Row("Y", el.Formula(f.parse("@X * 1.07")))))
    codes, _, _ = fresh_diagnosis(tmp_path, comp)
    assert codes == ["W_CONSTANT_IN_FORMULA"]


def test_databook_warning(tmp_path):
    comp = simple_component(doc=el.Documentation("", ""))
    codes, _, _ = fresh_diagnosis(tmp_path, comp)
    assert codes == ["W_NO_DATABOOK_ENTRY"]


def test_no_checks_warning(tmp_path):
    comp = simple_component()
    from ringforge.store import version_id
    skel = simple_skeleton(version_id(comp), checks=())
    codes, _, _ = fresh_diagnosis(tmp_path, comp, skel)
    assert codes == ["W_NO_CHECKS"]


def test_unchecked_warning(tmp_path):
    store = VersionStore.create(tmp_path / "s")
    vid = store.put_new(simple_component(), "author", AT)
    codes = [d.code for d in diagnose(vid, store)]
    assert codes == ["W_UNCHECKED"]


def test_demo_model_diagnoses_clean(demo_store):
    store, ids = demo_store
    assert diagnose(ids["model"], store) == []
    assert diagnose(ids["skeleton"], store) == []
    assert diagnose(ids["sales"], store) == []


# --------------------------------------------------------------------------
# gate and ordering


def test_gate_allows_warnings_by_default():
    w = Diagnostic("W_CONSTANT_IN_FORMULA", element="m")
    e = Diagnostic("E_SCENARIO_INCOMPLETE", element="m")
    assert gate_generation([]).ok
    assert gate_generation([w]).ok
    assert not gate_generation([e]).ok
    assert not gate_generation([w], strict=True).ok
    assert gate_generation([w], strict=True).blocking == (w,)


def test_diagnostics_sorted_stably():
    diags = [
        Diagnostic("W_NO_CHECKS", element="b"),
        Diagnostic("E_UNWIRED_PORT", element="a", path="wiring.b.x"),
        Diagnostic("E_INPUT_UNUSED", element="a", path="data_inputs.x"),
    ]
    ordered = sort_diagnostics(diags)
    assert [(d.element, d.path, d.code) for d in ordered] == sorted(
        (d.element, d.path, d.code) for d in diags)


def test_diagnose_is_deterministic(demo_store, demo):
    store, ids = demo_store
    broken = replace(demo["skeleton"], checks=(), doc=el.Documentation("", ""))
    vid = store.put_new(broken, "author", AT)
    first = diagnose(vid, store)
    second = diagnose(vid, store)
    assert first == second
    assert [d.code for d in first] == ["W_NO_CHECKS", "W_NO_DATABOOK_ENTRY", "W_UNCHECKED"]
