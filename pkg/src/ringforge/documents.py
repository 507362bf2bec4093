"""Document emitters and workbook verification.

write_canonical_grid is the golden-file backbone: a byte-stable JSON form
of the WorkbookIR (generation timestamp excluded).  The databook and the
specification are Markdown: diffable, reviewable, convertible.  verify
regenerates the IR from the stored model version and compares the file
cell by cell, which is the exact complement of the coarse in-workbook
Clean indicator.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

from ringforge import cellref, elements, formula, xlsx
from ringforge.assemble import AssembledModel, complete
from ringforge.elements import Component, Model, ReportHeading, Skeleton
from ringforge.grid import NAME_GENERATED_AT, NAME_MODEL_VERSION, FormulaCell, LitCell, WorkbookIR, layout
from ringforge.store import VersionStore

GRID_FORMAT_VERSION = 1


class DocumentError(Exception):
    def __init__(self, message: str, code: str):
        super().__init__(message)
        self.code = code


# --------------------------------------------------------------------------
# Canonical grid


def write_canonical_grid(ir: WorkbookIR) -> bytes:
    """Deterministic JSON of the whole IR, timestamp cell excluded."""
    skip = {ir.names[NAME_GENERATED_AT]} if NAME_GENERATED_AT in ir.names else set()
    cells: dict[str, dict] = {}
    formats: dict[str, str] = {}
    outlines: dict[str, int] = {}
    for sheet in ir.sheets:
        for (row, col), cell in sorted(sheet.cells.items()):
            if (sheet.name, row, col) in skip:
                continue
            key = f"{sheet.name}!{cellref.a1(row, col)}"
            if isinstance(cell, FormulaCell):
                cells[key] = {"f": cell.formula}
            else:
                cells[key] = {"v": cell.value}
            if cell.fmt is not None:
                formats[key] = cell.fmt
        for row, level in sorted(sheet.outlines.items()):
            outlines[f"{sheet.name}!{row}"] = level
    payload = {
        "format_version": GRID_FORMAT_VERSION,
        "sheets": [s.name for s in ir.sheets],
        "cells": cells,
        "formats": formats,
        "outlines": outlines,
        "names": {
            name: f"{cellref.quote_sheet(sheet)}!{cellref.a1(row, col, abs_row=True, abs_col=True)}"
            for name, (sheet, row, col) in sorted(ir.names.items())
        },
        "scenarios": list(ir.scenario_names),
        "n_periods": ir.n_periods,
    }
    return (json.dumps(payload, sort_keys=True, indent=1, ensure_ascii=False) + "\n").encode("utf-8")


# --------------------------------------------------------------------------
# Databook and specification


def _owners(am: AssembledModel) -> list[tuple[str, str]]:
    """(owner path, component version) in assembly order; an owner is a
    skeleton instance or an embedded instance path inside one."""
    seen: list[tuple[str, str]] = []
    seen_paths: set[str] = set()
    for row in am.rows:
        owner = row.path.rsplit(".", 1)[0] if "." in row.path else row.instance
        if owner not in seen_paths:
            seen_paths.add(owner)
            seen.append((owner, row.source))
    return seen


def _entry_text(doc: elements.Documentation) -> str:
    return doc.databook_entry.strip() or "(undocumented)"


def write_databook(model: Model, store: VersionStore, model_version: str | None = None) -> str:
    """Data book entries concatenated in assembly order: model, skeleton,
    then one section per component instance."""
    assembled, diags = complete(model, store)
    if assembled is None:
        raise DocumentError("model does not assemble: " + "; ".join(d.render() for d in diags),
                            "E_INVALID_ELEMENT")
    skeleton = store.get(model.skeleton)
    lines = [f"# Data book — {model.name}", ""]
    lines += [f"## Model {model.name}", "", _entry_text(model.doc), ""]
    lines += [f"## Skeleton {skeleton.name}", "", _entry_text(skeleton.doc), ""]
    for owner, source in _owners(assembled):
        component = store.get(source)
        lines += [f"## Instance {owner} — {component.name}", "", _entry_text(component.doc), ""]
    return "\n".join(lines)


def _status_line(store: VersionStore, vid: str) -> str:
    record = store.get_record(vid)
    line = f"status: {record.status.value}"
    if record.check_record:
        line += f" (checked by {record.check_record.checked_by} at {record.check_record.checked_at})"
    return line


def _audit_section(store: VersionStore, label: str, vid: str) -> list[str]:
    lines = [f"### Audit trail — {label}", ""]
    for entry in store.audit_log(vid):
        origin = entry.from_version or "(created)"
        material = sum(1 for c in entry.changes if c.material)
        if entry.is_check_off:
            what = f"checked off by {entry.author}"
        else:
            what = f"{len(entry.changes)} change(s), {material} material"
        lines.append(
            f"- {origin} -> {entry.to_version} at {entry.timestamp} by {entry.author}: "
            f"{what}; status {entry.resulting_status.value}"
        )
        for change in entry.changes:
            flag = "material" if change.material else "non-material"
            lines.append(f"    - [{flag}] {change.path}: {change.old} -> {change.new}")
    lines.append("")
    return lines


def write_spec(model: Model, store: VersionStore, model_version: str | None = None) -> str:
    """Full specification: generation parameters, inputs and scenarios,
    every instance's rows with canonical formulas, widths and formats,
    checks, outputs, and each element's status and audit trail."""
    assembled, diags = complete(model, store)
    if assembled is None:
        raise DocumentError("model does not assemble: " + "; ".join(d.render() for d in diags),
                            "E_INVALID_ELEMENT")
    skeleton: Skeleton = store.get(model.skeleton)
    gp = model.gen_params
    lines = [f"# Specification — {model.name}", ""]
    if model_version:
        lines += [f"Model version: `{model_version}`", ""]
    lines += [
        "## Generation parameters",
        "",
        f"- start date: {gp.start_date.isoformat()}",
        f"- periodicity: {gp.periodicity.value}",
        f"- periods: {gp.n_periods}",
        "",
        "## Data inputs",
        "",
    ]
    for data_input in assembled.inputs:
        landing = data_input.landing_path or "(not landed)"
        lines.append(f"- {data_input.name} ({data_input.structure.value}), landing row {landing}")
    lines.append("")
    if assembled.scenarios:
        names = [s.name for s in assembled.scenarios]
        lines += ["## Scenarios", "", "| input | " + " | ".join(names) + " |",
                  "|---" * (len(names) + 1) + "|"]
        for data_input in assembled.inputs:
            row = [data_input.name]
            for scenario in assembled.scenarios:
                value = scenario.values.get(data_input.name)
                row.append(", ".join(f"{v:g}" for v in value) if isinstance(value, tuple)
                           else f"{value:g}")
            lines.append("| " + " | ".join(row) + " |")
        lines.append("")

    lines += ["## Instances", ""]
    by_path = {r.path: r for r in assembled.rows}
    for owner, source in _owners(assembled):
        component: Component = store.get(source)
        lines += [
            f"### Instance {owner} — {component.name}",
            "",
            f"- component version: `{source}`",
            f"- {_status_line(store, source)}",
            "",
        ]
        for row in component.rows:
            path = f"{owner}.{row.label}"
            flat = by_path.get(path)
            width = flat.width.value if flat is not None and flat.width else "-"
            fmt = f", format {flat.fmt}" if flat is not None and flat.fmt else ""
            if isinstance(row.kind, elements.Formula):
                desc = f"{row.label} = {formula.print_canonical(row.kind.expr)}"
            elif isinstance(row.kind, elements.InputRow):
                desc = f"{row.label}: input landing port {row.kind.port}"
            elif isinstance(row.kind, elements.Heading):
                desc = f"{row.label} (heading)"
            else:
                desc = f"{row.label} (blank)"
            lines.append(f"- {desc} [width {width}{fmt}]")
        if component.embeds:
            for embed in component.embeds:
                lines.append(f"- embeds {embed.instance} -> `{embed.child}`")
        lines.append("")

    lines += ["## Checks", ""]
    if assembled.checks:
        for check in assembled.checks:
            lines.append(f"- {check.name}: {formula.print_canonical(check.expr)}")
    else:
        lines.append("- (none)")
    lines.append("")
    if assembled.reports:
        lines += ["## Reports", ""]
        for report in assembled.reports:
            items = ", ".join(
                f"\"{it.text}\"" if isinstance(it, ReportHeading) else it.path for it in report.items
            )
            lines.append(f"- {report.name}: {items}")
        lines.append("")
    if assembled.charts:
        lines += ["## Charts", ""]
        for chart in assembled.charts:
            lines.append(f"- {chart.name} ({chart.kind.value}): {', '.join(chart.series)}")
        lines.append("")

    lines += ["## Status and audit", ""]
    if model_version:
        lines += [f"- model: {_status_line(store, model_version)}"]
    lines += [f"- skeleton: {_status_line(store, model.skeleton)}"]
    for info in assembled.instances:
        lines.append(f"- {info.name}: {_status_line(store, info.component)}")
    lines.append("")
    if model_version:
        lines += _audit_section(store, f"model {model.name}", model_version)
    lines += _audit_section(store, f"skeleton {skeleton.name}", model.skeleton)
    seen_components: set[str] = set()
    for info in assembled.instances:
        if info.component not in seen_components:
            seen_components.add(info.component)
            lines += _audit_section(store, f"component {info.component_name}", info.component)
    return "\n".join(lines)


# --------------------------------------------------------------------------
# Verification


@dataclass(frozen=True)
class CellMismatch:
    cell: str  # Sheet!A1
    expected: str
    found: str


@dataclass(frozen=True)
class VerifyReport:
    clean: bool
    mismatches: tuple[CellMismatch, ...]
    version_note: str | None  # set when the file's Meta names another version


def _display(cell) -> str:
    if cell is None:
        return "(empty)"
    if isinstance(cell, FormulaCell):
        return "=" + cell.formula
    value = cell.value if isinstance(cell, LitCell) else cell
    if isinstance(value, bool):
        return "TRUE" if value else "FALSE"
    if isinstance(value, float):
        return f"{value:g}"
    return str(value)


def _read_display(read: xlsx.ReadCell | None) -> str:
    if read is None:
        return "(empty)"
    if read.formula is not None:
        return "=" + read.formula
    return _display(read.value)


def _cells_match(expected, read: xlsx.ReadCell | None) -> bool:
    if read is None:
        return False
    if isinstance(expected, FormulaCell):
        return read.formula == expected.formula
    if read.formula is not None:
        return False
    value = expected.value
    if isinstance(value, bool) or isinstance(read.value, bool):
        return type(read.value) is type(value) and read.value == value
    if isinstance(value, float):
        return isinstance(read.value, float) and read.value == value
    return read.value == value


def regenerate_ir(store: VersionStore, model_version: str) -> WorkbookIR:
    model = store.get(model_version)
    if not isinstance(model, Model):
        raise DocumentError(f"{model_version} is not a model", "E_KIND_MISMATCH")
    assembled, diags = complete(model, store)
    if assembled is None:
        raise DocumentError("model does not assemble: " + "; ".join(d.render() for d in diags),
                            "E_INVALID_ELEMENT")
    return layout(assembled, model_version=model_version, generated_at="(regenerated)")


def verify(path, model_version: str, store: VersionStore) -> VerifyReport:
    """Compare a workbook file against its model, cell by cell.

    The generation timestamp is the one cell allowed to differ.  When the
    file's Meta sheet names a different model version that is reported and
    the comparison still runs against the requested version.
    """
    ir = regenerate_ir(store, model_version)
    book = xlsx.read_xlsx(path)
    skip = {ir.names[NAME_GENERATED_AT]} if NAME_GENERATED_AT in ir.names else set()

    mismatches: list[CellMismatch] = []
    for sheet in ir.sheets:
        read_cells = book.sheets.get(sheet.name, {})
        for (row, col), cell in sorted(sheet.cells.items()):
            if (sheet.name, row, col) in skip:
                continue
            read = read_cells.get((row, col))
            if not _cells_match(cell, read):
                mismatches.append(CellMismatch(f"{sheet.name}!{cellref.a1(row, col)}",
                                               _display(cell), _read_display(read)))
        expected_keys = {(r, c) for (r, c) in sheet.cells}
        for (row, col) in sorted(set(read_cells) - expected_keys):
            mismatches.append(CellMismatch(f"{sheet.name}!{cellref.a1(row, col)}",
                                           "(empty)", _read_display(read_cells[(row, col)])))
    expected_sheets = {s.name for s in ir.sheets}
    for name in book.sheets:
        if name not in expected_sheets:
            for (row, col), read in sorted(book.sheets[name].items()):
                mismatches.append(CellMismatch(f"{name}!{cellref.a1(row, col)}",
                                               "(no such sheet)", _read_display(read)))

    version_note = None
    meta_sheet, meta_row, meta_col = ir.names[NAME_MODEL_VERSION]
    recorded = book.sheets.get(meta_sheet, {}).get((meta_row, meta_col))
    if recorded is None or recorded.value != model_version:
        found = recorded.value if recorded is not None else "(missing)"
        version_note = (f"E_VERSION_MISMATCH: workbook records model version {found}, "
                        f"verified against {model_version}")
    return VerifyReport(clean=not mismatches, mismatches=tuple(mismatches),
                        version_note=version_note)
