"""Template elements: components, skeletons and models, with their
documentation, local validation, canonical serialization and field diffing.

Elements are authored as UTF-8 JSON, one element per file, with a top-level
`kind` of "component", "skeleton" or "model" and `format_version: 1`.
Formulas appear as text in the files and as ASTs in memory.  The canonical
byte form excludes the check state (status, check record): checking an
element off must not change its identity.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, replace
from datetime import date
from enum import Enum
from typing import Any, Mapping, Union

from ringforge import formula
from ringforge.diagnostics import Diagnostic, sort_diagnostics
from ringforge.formula import Expr, Width

IDENT_RE = re.compile(r"[A-Za-z][A-Za-z0-9_]*\Z")

FORMAT_VERSION = 1

# Excel's own limits; report and chart names become sheet names too.
_SHEET_BAD_CHARS = set('[]:*?/\\')
RESERVED_SHEETS = ("Inputs", "Checks", "Meta")


class Status(Enum):
    OK = "OK"
    WARNING = "Warning"
    FAILURE = "Failure"

    @property
    def rank(self) -> int:
        return ("OK", "Warning", "Failure").index(self.value)


def worst_status(statuses) -> Status:
    return max(statuses, key=lambda s: s.rank, default=Status.OK)


class Structure(Enum):
    SCALAR = "scalar"
    SERIES = "series"


class Periodicity(Enum):
    MONTHLY = "monthly"
    QUARTERLY = "quarterly"
    ANNUAL = "annual"


class ChartKind(Enum):
    LINE = "line"
    BAR = "bar"


class ElementError(ValueError):
    """Structural problem raised while building or parsing an element."""

    def __init__(self, message: str, code: str = "E_INVALID_ELEMENT"):
        super().__init__(message)
        self.code = code


class KindMismatchError(ElementError):
    def __init__(self, message: str):
        super().__init__(message, code="E_KIND_MISMATCH")


# --------------------------------------------------------------------------
# Types


@dataclass(frozen=True)
class CheckRecord:
    checked_by: str
    checked_at: str  # ISO 8601 text, caller-supplied


@dataclass(frozen=True)
class Documentation:
    notes: str = ""
    databook_entry: str = ""
    status: Status = Status.WARNING
    check_record: CheckRecord | None = None

    def __post_init__(self) -> None:
        if self.status is Status.OK and self.check_record is None:
            raise ElementError("status OK requires a check record")


@dataclass(frozen=True)
class Heading:
    pass


@dataclass(frozen=True)
class Blank:
    pass


@dataclass(frozen=True)
class InputRow:
    port: str


@dataclass(frozen=True)
class Formula:
    expr: Expr


RowKind = Union[Heading, Blank, InputRow, Formula]


@dataclass(frozen=True)
class Row:
    label: str
    kind: RowKind
    unit: str | None = None

    def is_value_row(self) -> bool:
        return isinstance(self.kind, (InputRow, Formula))


@dataclass(frozen=True)
class Port:
    name: str
    structure: Structure


@dataclass(frozen=True)
class Embed:
    instance: str
    child: str  # version id of the embedded component
    bindings: Mapping[str, str]  # child port -> parent row label or parent port


@dataclass(frozen=True)
class Component:
    name: str
    ports: tuple[Port, ...] = ()
    rows: tuple[Row, ...] = ()
    embeds: tuple[Embed, ...] = ()
    outputs: tuple[str, ...] = ()
    doc: Documentation = Documentation()


@dataclass(frozen=True)
class Instance:
    name: str
    component: str  # version id


@dataclass(frozen=True)
class DataInput:
    name: str
    structure: Structure


@dataclass(frozen=True)
class Check:
    name: str
    expr: Expr


@dataclass(frozen=True)
class Skeleton:
    name: str
    instances: tuple[Instance, ...] = ()
    wiring: Mapping[str, str] = field(default_factory=dict)
    data_inputs: tuple[DataInput, ...] = ()
    widths: Mapping[str, Width] = field(default_factory=dict)
    checks: tuple[Check, ...] = ()
    doc: Documentation = Documentation()


ScenarioValue = Union[float, tuple[float, ...]]


@dataclass(frozen=True)
class Scenario:
    name: str
    values: Mapping[str, ScenarioValue]


@dataclass(frozen=True)
class GenParams:
    start_date: date
    periodicity: Periodicity
    n_periods: int

    def __post_init__(self) -> None:
        if self.n_periods < 1:
            raise ElementError("n_periods must be positive")


@dataclass(frozen=True)
class ReportHeading:
    text: str


@dataclass(frozen=True)
class ReportRow:
    path: str


ReportItem = Union[ReportHeading, ReportRow]


@dataclass(frozen=True)
class ReportDef:
    name: str
    items: tuple[ReportItem, ...]


@dataclass(frozen=True)
class ChartDef:
    name: str
    kind: ChartKind
    series: tuple[str, ...]


@dataclass(frozen=True)
class Model:
    name: str
    skeleton: str  # version id
    special_widths: Mapping[str, tuple[int, int]] = field(default_factory=dict)
    formats: Mapping[str, str] = field(default_factory=dict)
    scenarios: tuple[Scenario, ...] = ()
    sheet_assignment: Mapping[str, str] = field(default_factory=dict)
    reports: tuple[ReportDef, ...] = ()
    charts: tuple[ChartDef, ...] = ()
    gen_params: GenParams = GenParams(date(2000, 1, 1), Periodicity.MONTHLY, 1)
    doc: Documentation = Documentation()


Element = Union[Component, Skeleton, Model]

KIND_NAMES: dict[type, str] = {Component: "component", Skeleton: "skeleton", Model: "model"}


def kind_name(e: Element) -> str:
    return KIND_NAMES[type(e)]


@dataclass(frozen=True)
class ChangeEntry:
    path: str
    old: str | None  # canonical JSON text; None when the field was absent
    new: str | None
    material: bool


ChangeList = tuple[ChangeEntry, ...]


# --------------------------------------------------------------------------
# Serialization

_WIDTH_TEXT = {Width.FULL: "full", Width.SINGLE: "single", Width.SPECIAL: "special"}
_WIDTH_FROM = {v: k for k, v in _WIDTH_TEXT.items()}


def _doc_to_dict(doc: Documentation, with_state: bool) -> dict:
    out: dict[str, Any] = {"notes": doc.notes, "databook_entry": doc.databook_entry}
    if with_state:
        out["status"] = doc.status.value
        out["check_record"] = (
            None
            if doc.check_record is None
            else {"checked_by": doc.check_record.checked_by, "checked_at": doc.check_record.checked_at}
        )
    return out


def _row_to_dict(row: Row) -> dict:
    out: dict[str, Any] = {"label": row.label}
    if isinstance(row.kind, Heading):
        out["kind"] = "heading"
    elif isinstance(row.kind, Blank):
        out["kind"] = "blank"
    elif isinstance(row.kind, InputRow):
        out["kind"] = "input"
        out["port"] = row.kind.port
    else:
        out["kind"] = "formula"
        out["expr"] = formula.print_canonical(row.kind.expr)
    if row.unit is not None:
        out["unit"] = row.unit
    return out


def to_dict(e: Element, with_state: bool = True) -> dict:
    """Plain-JSON form. with_state=False drops status/check_record (the
    canonical, identity-relevant form)."""
    base = {"format_version": FORMAT_VERSION, "kind": kind_name(e), "name": e.name}
    if isinstance(e, Component):
        base.update(
            ports=[{"name": p.name, "structure": p.structure.value} for p in e.ports],
            rows=[_row_to_dict(r) for r in e.rows],
            embeds=[
                {"instance": m.instance, "child": m.child, "bindings": dict(sorted(m.bindings.items()))}
                for m in e.embeds
            ],
            outputs=list(e.outputs),
            doc=_doc_to_dict(e.doc, with_state),
        )
    elif isinstance(e, Skeleton):
        base.update(
            instances=[{"name": i.name, "component": i.component} for i in e.instances],
            wiring=dict(sorted(e.wiring.items())),
            data_inputs=[{"name": d.name, "structure": d.structure.value} for d in e.data_inputs],
            widths={k: _WIDTH_TEXT[w] for k, w in sorted(e.widths.items())},
            checks=[{"name": c.name, "expr": formula.print_canonical(c.expr)} for c in e.checks],
            doc=_doc_to_dict(e.doc, with_state),
        )
    else:
        base.update(
            skeleton=e.skeleton,
            special_widths={k: {"start": s, "end": t} for k, (s, t) in sorted(e.special_widths.items())},
            formats=dict(sorted(e.formats.items())),
            scenarios=[
                {
                    "name": s.name,
                    "values": {
                        k: (list(v) if isinstance(v, tuple) else v) for k, v in sorted(s.values.items())
                    },
                }
                for s in e.scenarios
            ],
            sheet_assignment=dict(sorted(e.sheet_assignment.items())),
            reports=[
                {
                    "name": r.name,
                    "items": [
                        {"heading": it.text} if isinstance(it, ReportHeading) else {"row": it.path}
                        for it in r.items
                    ],
                }
                for r in e.reports
            ],
            charts=[{"name": c.name, "kind": c.kind.value, "series": list(c.series)} for c in e.charts],
            gen_params={
                "start_date": e.gen_params.start_date.isoformat(),
                "periodicity": e.gen_params.periodicity.value,
                "n_periods": e.gen_params.n_periods,
            },
            doc=_doc_to_dict(e.doc, with_state),
        )
    return base


def canonicalize(e: Element) -> bytes:
    """Deterministic identity bytes: sorted keys, canonical formula text,
    check state excluded."""
    return json.dumps(to_dict(e, with_state=False), sort_keys=True, separators=(",", ":"),
                      ensure_ascii=False).encode("utf-8")


def dumps(e: Element) -> str:
    """Human-editable file form (indented, sorted keys, state included)."""
    return json.dumps(to_dict(e), sort_keys=True, indent=2, ensure_ascii=False) + "\n"


class _Reader:
    """Strict dict reader: unknown or missing fields are format errors."""

    def __init__(self, data: Mapping, where: str):
        if not isinstance(data, Mapping):
            raise ElementError(f"{where}: expected an object")
        self.data = dict(data)
        self.where = where
        self.seen: set[str] = set()

    def get(self, key: str, expected: type | tuple, default=..., optional: bool = False):
        self.seen.add(key)
        if key not in self.data:
            if default is not ...:
                return default
            raise ElementError(f"{self.where}: missing field {key!r}")
        value = self.data[key]
        if optional and value is None:
            return None
        if expected is float and isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
        if not isinstance(value, expected) or isinstance(value, bool) and expected is not bool:
            raise ElementError(f"{self.where}: field {key!r} has the wrong type")
        return value

    def finish(self) -> None:
        unknown = sorted(set(self.data) - self.seen)
        if unknown:
            raise ElementError(f"{self.where}: unknown fields {unknown}")


def _parse_expr(text: Any, where: str) -> Expr:
    if not isinstance(text, str):
        raise ElementError(f"{where}: formula must be text")
    try:
        return formula.parse(text)
    except formula.FormulaError as exc:
        raise ElementError(f"{where}: {exc}", code="E_PARSE") from exc


def _doc_from_dict(data: Any, where: str) -> Documentation:
    if data is None:
        return Documentation()
    r = _Reader(data, where)
    notes = r.get("notes", str, default="")
    entry = r.get("databook_entry", str, default="")
    status_text = r.get("status", str, default=Status.WARNING.value)
    try:
        status = Status(status_text)
    except ValueError:
        raise ElementError(f"{where}: unknown status {status_text!r}") from None
    record_data = r.get("check_record", Mapping, default=None, optional=True)
    record = None
    if record_data is not None:
        rr = _Reader(record_data, f"{where}.check_record")
        record = CheckRecord(rr.get("checked_by", str), rr.get("checked_at", str))
        rr.finish()
    r.finish()
    return Documentation(notes, entry, status, record)


def _structure_from(text: Any, where: str) -> Structure:
    try:
        return Structure(text)
    except ValueError:
        raise ElementError(f"{where}: unknown structure {text!r}") from None


def _scenario_value(raw: Any, where: str) -> ScenarioValue:
    if isinstance(raw, (int, float)) and not isinstance(raw, bool):
        return float(raw)
    if isinstance(raw, list):
        if not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in raw):
            raise ElementError(f"{where}: series values must be numbers")
        return tuple(float(v) for v in raw)
    raise ElementError(f"{where}: scenario value must be a number or a list of numbers")


def from_dict(data: Mapping) -> Element:
    r = _Reader(data, "element")
    version = r.get("format_version", int)
    if version != FORMAT_VERSION:
        raise ElementError(f"unsupported format_version {version}")
    kind = r.get("kind", str)
    name = r.get("name", str)
    if kind == "component":
        ports = []
        for i, raw in enumerate(r.get("ports", list, default=[])):
            pr = _Reader(raw, f"ports[{i}]")
            ports.append(Port(pr.get("name", str), _structure_from(pr.get("structure", str), f"ports[{i}]")))
            pr.finish()
        rows = []
        for i, raw in enumerate(r.get("rows", list, default=[])):
            rr = _Reader(raw, f"rows[{i}]")
            label = rr.get("label", str)
            row_kind_text = rr.get("kind", str)
            unit = rr.get("unit", str, default=None, optional=True)
            if row_kind_text == "heading":
                kind_obj: RowKind = Heading()
            elif row_kind_text == "blank":
                kind_obj = Blank()
            elif row_kind_text == "input":
                kind_obj = InputRow(rr.get("port", str))
            elif row_kind_text == "formula":
                kind_obj = Formula(_parse_expr(rr.get("expr", str), f"rows[{i}].expr"))
            else:
                raise ElementError(f"rows[{i}]: unknown row kind {row_kind_text!r}")
            rr.finish()
            rows.append(Row(label, kind_obj, unit))
        embeds = []
        for i, raw in enumerate(r.get("embeds", list, default=[])):
            er = _Reader(raw, f"embeds[{i}]")
            bindings = er.get("bindings", Mapping, default={})
            if not all(isinstance(k, str) and isinstance(v, str) for k, v in bindings.items()):
                raise ElementError(f"embeds[{i}]: bindings must map port names to labels")
            embeds.append(Embed(er.get("instance", str), er.get("child", str), dict(bindings)))
            er.finish()
        outputs = r.get("outputs", list, default=[])
        if not all(isinstance(o, str) for o in outputs):
            raise ElementError("outputs must be row labels")
        doc = _doc_from_dict(r.get("doc", Mapping, default=None, optional=True), "doc")
        r.finish()
        return Component(name, tuple(ports), tuple(rows), tuple(embeds), tuple(outputs), doc)
    if kind == "skeleton":
        instances = []
        for i, raw in enumerate(r.get("instances", list, default=[])):
            ir = _Reader(raw, f"instances[{i}]")
            instances.append(Instance(ir.get("name", str), ir.get("component", str)))
            ir.finish()
        wiring = r.get("wiring", Mapping, default={})
        if not all(isinstance(k, str) and isinstance(v, str) for k, v in wiring.items()):
            raise ElementError("wiring must map port paths to sources")
        data_inputs = []
        for i, raw in enumerate(r.get("data_inputs", list, default=[])):
            dr = _Reader(raw, f"data_inputs[{i}]")
            data_inputs.append(
                DataInput(dr.get("name", str), _structure_from(dr.get("structure", str), f"data_inputs[{i}]"))
            )
            dr.finish()
        widths = {}
        for path, text in r.get("widths", Mapping, default={}).items():
            if text not in _WIDTH_FROM:
                raise ElementError(f"widths.{path}: unknown width {text!r}")
            widths[path] = _WIDTH_FROM[text]
        checks = []
        for i, raw in enumerate(r.get("checks", list, default=[])):
            cr = _Reader(raw, f"checks[{i}]")
            checks.append(Check(cr.get("name", str), _parse_expr(cr.get("expr", str), f"checks[{i}].expr")))
            cr.finish()
        doc = _doc_from_dict(r.get("doc", Mapping, default=None, optional=True), "doc")
        r.finish()
        return Skeleton(name, tuple(instances), dict(wiring), tuple(data_inputs), widths, tuple(checks), doc)
    if kind == "model":
        skeleton = r.get("skeleton", str)
        special = {}
        for path, raw in r.get("special_widths", Mapping, default={}).items():
            sr = _Reader(raw, f"special_widths.{path}")
            special[path] = (sr.get("start", int), sr.get("end", int))
            sr.finish()
        formats = r.get("formats", Mapping, default={})
        if not all(isinstance(k, str) and isinstance(v, str) for k, v in formats.items()):
            raise ElementError("formats must map row paths to format codes")
        scenarios = []
        for i, raw in enumerate(r.get("scenarios", list, default=[])):
            sr = _Reader(raw, f"scenarios[{i}]")
            sname = sr.get("name", str)
            values = {
                k: _scenario_value(v, f"scenarios[{i}].values.{k}")
                for k, v in sr.get("values", Mapping, default={}).items()
            }
            sr.finish()
            scenarios.append(Scenario(sname, values))
        assignment = r.get("sheet_assignment", Mapping, default={})
        if not all(isinstance(k, str) and isinstance(v, str) for k, v in assignment.items()):
            raise ElementError("sheet_assignment must map instances to sheet names")
        reports = []
        for i, raw in enumerate(r.get("reports", list, default=[])):
            rr = _Reader(raw, f"reports[{i}]")
            items: list[ReportItem] = []
            for j, item in enumerate(rr.get("items", list, default=[])):
                ir = _Reader(item, f"reports[{i}].items[{j}]")
                if "heading" in item:
                    items.append(ReportHeading(ir.get("heading", str)))
                elif "row" in item:
                    items.append(ReportRow(ir.get("row", str)))
                else:
                    raise ElementError(f"reports[{i}].items[{j}]: need 'heading' or 'row'")
                ir.finish()
            reports.append(ReportDef(rr.get("name", str), tuple(items)))
            rr.finish()
        charts = []
        for i, raw in enumerate(r.get("charts", list, default=[])):
            cr = _Reader(raw, f"charts[{i}]")
            try:
                chart_kind = ChartKind(cr.get("kind", str))
            except ValueError:
                raise ElementError(f"charts[{i}]: unknown chart kind") from None
            series = cr.get("series", list, default=[])
            if not all(isinstance(s, str) for s in series):
                raise ElementError(f"charts[{i}]: series must be row paths")
            charts.append(ChartDef(cr.get("name", str), chart_kind, tuple(series)))
            cr.finish()
        gp = _Reader(r.get("gen_params", Mapping), "gen_params")
        try:
            start = date.fromisoformat(gp.get("start_date", str))
        except ValueError:
            raise ElementError("gen_params.start_date must be an ISO date") from None
        try:
            periodicity = Periodicity(gp.get("periodicity", str))
        except ValueError:
            raise ElementError("gen_params.periodicity must be monthly, quarterly or annual") from None
        n_periods = gp.get("n_periods", int)
        gp.finish()
        doc = _doc_from_dict(r.get("doc", Mapping, default=None, optional=True), "doc")
        r.finish()
        return Model(
            name, skeleton, special, dict(formats), tuple(scenarios), dict(assignment),
            tuple(reports), tuple(charts), GenParams(start, periodicity, n_periods), doc,
        )
    raise ElementError(f"unknown element kind {kind!r}")


def loads(text: str) -> Element:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ElementError(f"not valid JSON: {exc}") from exc
    return from_dict(data)


def load_file(path) -> Element:
    with open(path, encoding="utf-8") as fh:
        return loads(fh.read())


# --------------------------------------------------------------------------
# Diff and materiality

_MATERIAL_HEADS = frozenset(
    {"rows", "ports", "embeds", "outputs", "instances", "wiring", "data_inputs",
     "widths", "checks", "special_widths", "scenarios", "gen_params", "skeleton"}
)
_NONMATERIAL_HEADS = frozenset(
    {"name", "doc", "formats", "sheet_assignment", "reports", "charts", "kind", "format_version"}
)


def classify_materiality(path: str) -> bool:
    """True when a change at `path` can alter a generated formula, a computed
    value or a check; prose and presentation are non-material."""
    head = path.split(".", 1)[0].split("[", 1)[0]
    if head in _MATERIAL_HEADS:
        return True
    if head in _NONMATERIAL_HEADS:
        return False
    raise ValueError(f"field path outside the element grammar: {path!r}")


_MISSING = object()


def _canonical_text(value: Any) -> str:
    return json.dumps(value, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def diff(a: Element, b: Element) -> ChangeList:
    """Field-level changes from a to b, each flagged material or not.

    diff(a, b) is empty exactly when canonicalize(a) == canonicalize(b).
    """
    if type(a) is not type(b):
        raise KindMismatchError(f"cannot diff {kind_name(a)} against {kind_name(b)}")
    entries: list[ChangeEntry] = []

    def emit(path: str, old: Any, new: Any) -> None:
        entries.append(
            ChangeEntry(
                path,
                None if old is _MISSING else _canonical_text(old),
                None if new is _MISSING else _canonical_text(new),
                classify_materiality(path),
            )
        )

    def walk(path: str, old: Any, new: Any) -> None:
        if old is not _MISSING and new is not _MISSING and type(old) is type(new):
            if old == new:
                return
            if isinstance(old, dict):
                for key in sorted(set(old) | set(new)):
                    sub = f"{path}.{key}" if path else key
                    walk(sub, old.get(key, _MISSING), new.get(key, _MISSING))
                return
            if isinstance(old, list):
                for i in range(max(len(old), len(new))):
                    walk(
                        f"{path}[{i}]",
                        old[i] if i < len(old) else _MISSING,
                        new[i] if i < len(new) else _MISSING,
                    )
                return
        if old is _MISSING and new is _MISSING:
            return
        emit(path, old, new)

    walk("", to_dict(a, with_state=False), to_dict(b, with_state=False))
    return tuple(entries)


# --------------------------------------------------------------------------
# Local validation


def _check_ident(text: str, path: str, diags: list[Diagnostic]) -> None:
    if not IDENT_RE.match(text or ""):
        diags.append(Diagnostic("E_BAD_LABEL", path=path, message=f"bad identifier {text!r}"))


def _check_sheet_name(name: str, path: str, diags: list[Diagnostic]) -> None:
    if not name or len(name) > 31 or any(c in _SHEET_BAD_CHARS for c in name):
        diags.append(Diagnostic("E_BAD_SHEET_NAME", path=path, message=f"bad sheet name {name!r}"))
    elif name in RESERVED_SHEETS:
        diags.append(Diagnostic("E_SHEET_RESERVED", path=path, message=f"{name!r} is reserved"))


def _validate_component(c: Component) -> list[Diagnostic]:
    diags: list[Diagnostic] = []
    _check_ident(c.name, "name", diags)
    seen_ports: set[str] = set()
    for i, port in enumerate(c.ports):
        _check_ident(port.name, f"ports[{i}]", diags)
        if port.name in seen_ports:
            diags.append(Diagnostic("E_DUPLICATE_PORT", path=f"ports[{i}]", message=port.name))
        seen_ports.add(port.name)

    labels: dict[str, int] = {}
    landings: dict[str, list[int]] = {}
    for i, row in enumerate(c.rows):
        _check_ident(row.label, f"rows[{i}]", diags)
        if row.label in labels:
            diags.append(Diagnostic("E_DUPLICATE_LABEL", path=f"rows[{i}]", message=row.label))
        else:
            labels[row.label] = i
        if isinstance(row.kind, InputRow):
            if row.kind.port not in seen_ports:
                diags.append(Diagnostic("E_UNKNOWN_PORT", path=f"rows[{i}]", message=row.kind.port))
            else:
                landings.setdefault(row.kind.port, []).append(i)
    for port in c.ports:
        rows = landings.get(port.name, [])
        if not rows:
            diags.append(Diagnostic("E_PORT_NOT_LANDED", path=f"ports.{port.name}", message=port.name))
        for extra in rows[1:]:
            diags.append(Diagnostic("E_DUPLICATE_LANDING", path=f"rows[{extra}]", message=port.name))

    value_labels = {r.label for r in c.rows if r.is_value_row()}
    embed_names: set[str] = set()
    for i, embed in enumerate(c.embeds):
        _check_ident(embed.instance, f"embeds[{i}]", diags)
        if embed.instance in embed_names:
            diags.append(Diagnostic("E_DUPLICATE_INSTANCE", path=f"embeds[{i}]", message=embed.instance))
        embed_names.add(embed.instance)
        if embed.instance in labels:
            diags.append(Diagnostic("E_DUPLICATE_LABEL", path=f"embeds[{i}]",
                                    message=f"{embed.instance} is also a row label"))
    for i, out in enumerate(c.outputs):
        head = out.split(".", 1)[0]
        if "." in out:
            if head not in embed_names:
                diags.append(Diagnostic("E_DANGLING_OUTPUT", path=f"outputs[{i}]", message=out))
        elif out not in value_labels:
            diags.append(Diagnostic("E_DANGLING_OUTPUT", path=f"outputs[{i}]", message=out))

    # local reference sanity: single-segment refs must hit an earlier value
    # row of this component; dotted refs are resolved at assembly time.
    for i, row in enumerate(c.rows):
        if not isinstance(row.kind, Formula):
            continue
        for ref in formula.refs_in(row.kind.expr):
            if "." in ref.label:
                if ref.label.split(".", 1)[0] not in embed_names:
                    diags.append(Diagnostic("E_UNRESOLVED_REF", path=f"rows[{i}]", message=f"@{ref.label}"))
                continue
            if ref.label not in value_labels:
                diags.append(Diagnostic("E_UNRESOLVED_REF", path=f"rows[{i}]", message=f"@{ref.label}"))
            elif ref.offset == 0 and labels[ref.label] >= i:
                diags.append(Diagnostic("E_FORWARD_ROW", path=f"rows[{i}]", message=f"@{ref.label}"))
    return diags


def _wire_is_forward(value: str, instance_order: dict[str, int], at: int) -> bool:
    head = value.split(".", 1)[0]
    return head in instance_order and instance_order[head] >= at


def _validate_skeleton(s: Skeleton) -> list[Diagnostic]:
    diags: list[Diagnostic] = []
    _check_ident(s.name, "name", diags)
    order: dict[str, int] = {}
    for i, inst in enumerate(s.instances):
        _check_ident(inst.name, f"instances[{i}]", diags)
        if inst.name in order:
            diags.append(Diagnostic("E_DUPLICATE_INSTANCE", path=f"instances[{i}]", message=inst.name))
        else:
            order[inst.name] = i
    input_names: set[str] = set()
    for i, di in enumerate(s.data_inputs):
        _check_ident(di.name, f"data_inputs[{i}]", diags)
        if di.name in input_names:
            diags.append(Diagnostic("E_DUPLICATE_INPUT", path=f"data_inputs[{i}]", message=di.name))
        input_names.add(di.name)
    check_names: set[str] = set()
    for i, check in enumerate(s.checks):
        _check_ident(check.name, f"checks[{i}]", diags)
        if check.name in check_names:
            diags.append(Diagnostic("E_DUPLICATE_CHECK", path=f"checks[{i}]", message=check.name))
        check_names.add(check.name)

    wired_inputs: dict[str, list[str]] = {}
    for key, value in sorted(s.wiring.items()):
        head, _, port = key.partition(".")
        if head not in order or not port:
            diags.append(Diagnostic("E_DANGLING_PATH", path=f"wiring.{key}",
                                    message="key must be instance.port"))
            continue
        if "." in value:
            if value.split(".", 1)[0] not in order:
                diags.append(Diagnostic("E_DANGLING_PATH", path=f"wiring.{key}", message=value))
            elif _wire_is_forward(value, order, order[head]):
                diags.append(Diagnostic("E_WIRE_FORWARD", path=f"wiring.{key}", message=value))
        else:
            if value not in input_names:
                diags.append(Diagnostic("E_DANGLING_PATH", path=f"wiring.{key}",
                                        message=f"{value!r} is not a data input"))
            else:
                wired_inputs.setdefault(value, []).append(key)
    for name, keys in sorted(wired_inputs.items()):
        if len(keys) > 1:
            diags.append(Diagnostic("E_INPUT_MULTIPLY_WIRED", path=f"data_inputs.{name}",
                                    message=", ".join(keys)))
    return diags


def _validate_model(m: Model) -> list[Diagnostic]:
    diags: list[Diagnostic] = []
    _check_ident(m.name, "name", diags)
    n = m.gen_params.n_periods
    for path, (start, end) in sorted(m.special_widths.items()):
        if not (1 <= start <= end <= n):
            diags.append(Diagnostic("E_SPECIAL_RANGE", path=f"special_widths.{path}",
                                    message=f"{start}..{end} outside 1..{n}"))
    seen: set[str] = set()
    for i, scenario in enumerate(m.scenarios):
        if scenario.name in seen:
            diags.append(Diagnostic("E_DUPLICATE_SCENARIO", path=f"scenarios[{i}]", message=scenario.name))
        seen.add(scenario.name)
        for key, value in sorted(scenario.values.items()):
            if isinstance(value, tuple) and len(value) > n:
                diags.append(Diagnostic("E_SCENARIO_LENGTH", path=f"scenarios[{i}].values.{key}",
                                        message=f"{len(value)} values for {n} periods"))
    used_sheets: set[str] = set()
    for inst, sheet in sorted(m.sheet_assignment.items()):
        _check_sheet_name(sheet, f"sheet_assignment.{inst}", diags)
        used_sheets.add(sheet)
    for i, report in enumerate(m.reports):
        _check_sheet_name(report.name, f"reports[{i}]", diags)
        if report.name in used_sheets:
            diags.append(Diagnostic("E_SHEET_COLLISION", path=f"reports[{i}]", message=report.name))
        used_sheets.add(report.name)
    for i, chart in enumerate(m.charts):
        _check_sheet_name(chart.name, f"charts[{i}]", diags)
        if chart.name in used_sheets:
            diags.append(Diagnostic("E_SHEET_COLLISION", path=f"charts[{i}]", message=chart.name))
        used_sheets.add(chart.name)
    return diags


def validate_element(e: Element) -> list[Diagnostic]:
    """All local-invariant violations, deterministically ordered.

    Local means checkable from the element alone; cross-element rules
    (wiring completeness, widths against expanded rows, scenario coverage)
    need the store and are reported by diagnose/assembly.
    """
    if isinstance(e, Component):
        diags = _validate_component(e)
    elif isinstance(e, Skeleton):
        diags = _validate_skeleton(e)
    elif isinstance(e, Model):
        diags = _validate_model(e)
    else:
        raise TypeError(f"not an element: {e!r}")
    named = [replace(d, element=e.name) if not d.element else d for d in diags]
    return sort_diagnostics(named)


def with_doc_state(e: Element, status: Status, check_record: CheckRecord | None) -> Element:
    return replace(e, doc=replace(e.doc, status=status, check_record=check_record))
