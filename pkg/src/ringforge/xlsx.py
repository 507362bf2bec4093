"""Minimal, deterministic XLSX container writer and the matching reader.

Writes only the parts the workbooks need: content types, workbook with
defined names, worksheets with row outline levels, a sorted shared-strings
table and a stylesheet carrying number formats.  Entries are stored
uncompressed with caller-fixed timestamps, so one IR and one epoch always
produce byte-identical files.  The reader understands exactly this subset;
foreign workbooks are out of scope.
"""
from __future__ import annotations

import zipfile
from dataclasses import dataclass
from datetime import datetime
from typing import Mapping
from xml.etree import ElementTree
from xml.sax.saxutils import escape, quoteattr

from ringforge import cellref
from ringforge.grid import FormulaCell, LitCell, SheetIR, WorkbookIR

_XML_DECL = '<?xml version="1.0" encoding="UTF-8" standalone="yes"?>\n'
_NS_MAIN = "http://schemas.openxmlformats.org/spreadsheetml/2006/main"
_NS_REL = "http://schemas.openxmlformats.org/officeDocument/2006/relationships"
_NS_PKG_REL = "http://schemas.openxmlformats.org/package/2006/relationships"
_NS_CT = "http://schemas.openxmlformats.org/package/2006/content-types"

_FIRST_CUSTOM_FMT = 164


class XlsxError(Exception):
    code = "E_IO"


def _collect_strings(ir: WorkbookIR) -> list[str]:
    seen = {cell.value
            for sheet in ir.sheets
            for cell in sheet.cells.values()
            if isinstance(cell, LitCell) and isinstance(cell.value, str)}
    return sorted(seen)


def _collect_formats(ir: WorkbookIR) -> list[str]:
    seen = {cell.fmt
            for sheet in ir.sheets
            for cell in sheet.cells.values()
            if cell.fmt is not None}
    return sorted(seen)


def _number_text(value: float) -> str:
    if value == int(value) and abs(value) < 1e15:
        return str(int(value))
    return repr(value)


def _content_types(n_sheets: int) -> str:
    parts = [
        _XML_DECL,
        f'<Types xmlns="{_NS_CT}">',
        '<Default Extension="rels" ContentType="application/vnd.openxmlformats-package.relationships+xml"/>',
        '<Default Extension="xml" ContentType="application/xml"/>',
        '<Override PartName="/xl/workbook.xml" ContentType="application/vnd.openxmlformats-officedocument.spreadsheetml.sheet.main+xml"/>',
    ]
    for i in range(1, n_sheets + 1):
        parts.append(
            f'<Override PartName="/xl/worksheets/sheet{i}.xml" '
            'ContentType="application/vnd.openxmlformats-officedocument.spreadsheetml.worksheet+xml"/>'
        )
    parts.append('<Override PartName="/xl/sharedStrings.xml" ContentType="application/vnd.openxmlformats-officedocument.spreadsheetml.sharedStrings+xml"/>')
    parts.append('<Override PartName="/xl/styles.xml" ContentType="application/vnd.openxmlformats-officedocument.spreadsheetml.styles+xml"/>')
    parts.append("</Types>")
    return "".join(parts)


def _root_rels() -> str:
    return (
        _XML_DECL
        + f'<Relationships xmlns="{_NS_PKG_REL}">'
        + f'<Relationship Id="rId1" Type="{_NS_REL}/officeDocument" Target="xl/workbook.xml"/>'
        + "</Relationships>"
    )


def _workbook_rels(n_sheets: int) -> str:
    parts = [_XML_DECL, f'<Relationships xmlns="{_NS_PKG_REL}">']
    for i in range(1, n_sheets + 1):
        parts.append(
            f'<Relationship Id="rId{i}" Type="{_NS_REL}/worksheet" Target="worksheets/sheet{i}.xml"/>'
        )
    parts.append(f'<Relationship Id="rId{n_sheets + 1}" Type="{_NS_REL}/sharedStrings" Target="sharedStrings.xml"/>')
    parts.append(f'<Relationship Id="rId{n_sheets + 2}" Type="{_NS_REL}/styles" Target="styles.xml"/>')
    parts.append("</Relationships>")
    return "".join(parts)


def _defined_name_ref(ir: WorkbookIR, name: str) -> str:
    sheet, row, col = ir.names[name]
    return f"{cellref.quote_sheet(sheet)}!{cellref.a1(row, col, abs_row=True, abs_col=True)}"


def _workbook_xml(ir: WorkbookIR) -> str:
    parts = [
        _XML_DECL,
        f'<workbook xmlns="{_NS_MAIN}" xmlns:r="{_NS_REL}">',
        "<sheets>",
    ]
    for i, sheet in enumerate(ir.sheets, 1):
        parts.append(f'<sheet name={quoteattr(sheet.name)} sheetId="{i}" r:id="rId{i}"/>')
    parts.append("</sheets>")
    if ir.names:
        parts.append("<definedNames>")
        for name in sorted(ir.names):
            parts.append(f"<definedName name={quoteattr(name)}>{escape(_defined_name_ref(ir, name))}</definedName>")
        parts.append("</definedNames>")
    parts.append('<calcPr fullCalcOnLoad="1"/>')
    parts.append("</workbook>")
    return "".join(parts)


def _styles_xml(formats: list[str]) -> str:
    parts = [_XML_DECL, f'<styleSheet xmlns="{_NS_MAIN}">']
    if formats:
        parts.append(f'<numFmts count="{len(formats)}">')
        for i, code in enumerate(formats):
            parts.append(f'<numFmt numFmtId="{_FIRST_CUSTOM_FMT + i}" formatCode={quoteattr(code)}/>')
        parts.append("</numFmts>")
    parts.append('<fonts count="1"><font><sz val="11"/><name val="Calibri"/></font></fonts>')
    parts.append('<fills count="2"><fill><patternFill patternType="none"/></fill>'
                 '<fill><patternFill patternType="gray125"/></fill></fills>')
    parts.append('<borders count="1"><border/></borders>')
    parts.append('<cellStyleXfs count="1"><xf numFmtId="0" fontId="0" fillId="0" borderId="0"/></cellStyleXfs>')
    parts.append(f'<cellXfs count="{len(formats) + 1}">')
    parts.append('<xf numFmtId="0" fontId="0" fillId="0" borderId="0" xfId="0"/>')
    for i in range(len(formats)):
        parts.append(f'<xf numFmtId="{_FIRST_CUSTOM_FMT + i}" fontId="0" fillId="0" borderId="0" '
                     'xfId="0" applyNumberFormat="1"/>')
    parts.append("</cellXfs></styleSheet>")
    return "".join(parts)


def _shared_strings_xml(strings: list[str], total_refs: int) -> str:
    parts = [
        _XML_DECL,
        f'<sst xmlns="{_NS_MAIN}" count="{total_refs}" uniqueCount="{len(strings)}">',
    ]
    for s in strings:
        parts.append(f'<si><t xml:space="preserve">{escape(s)}</t></si>')
    parts.append("</sst>")
    return "".join(parts)


def _sheet_xml(sheet: SheetIR, string_index: Mapping[str, int], fmt_index: Mapping[str, int]) -> str:
    max_row, max_col = sheet.used_range()
    parts = [
        _XML_DECL,
        f'<worksheet xmlns="{_NS_MAIN}" xmlns:r="{_NS_REL}">',
        '<sheetPr><outlinePr summaryBelow="0" summaryRight="0"/></sheetPr>',
        f'<dimension ref="A1:{cellref.a1(max_row, max_col)}"/>',
        "<sheetData>",
    ]
    rows: dict[int, dict[int, object]] = {}
    for (row, col), cell in sheet.cells.items():
        rows.setdefault(row, {})[col] = cell
    all_rows = sorted(set(rows) | set(sheet.outlines))
    for row in all_rows:
        outline = sheet.outlines.get(row, 0)
        attrs = f' outlineLevel="{outline}"' if outline else ""
        parts.append(f'<row r="{row}"{attrs}>')
        for col in sorted(rows.get(row, {})):
            cell = rows[row][col]
            ref = cellref.a1(row, col)
            style = f' s="{fmt_index[cell.fmt]}"' if cell.fmt is not None else ""
            if isinstance(cell, FormulaCell):
                parts.append(f'<c r="{ref}"{style}><f>{escape(cell.formula)}</f></c>')
            elif isinstance(cell.value, str):
                parts.append(f'<c r="{ref}"{style} t="s"><v>{string_index[cell.value]}</v></c>')
            elif isinstance(cell.value, bool):
                parts.append(f'<c r="{ref}"{style} t="b"><v>{1 if cell.value else 0}</v></c>')
            else:
                parts.append(f'<c r="{ref}"{style}><v>{escape(_number_text(cell.value))}</v></c>')
        parts.append("</row>")
    parts.append("</sheetData></worksheet>")
    return "".join(parts)


def write_xlsx(ir: WorkbookIR, path, epoch: str) -> None:
    """Serialize the IR; `epoch` (ISO 8601) stamps every zip entry so equal
    inputs give equal bytes."""
    try:
        stamp = datetime.fromisoformat(epoch.replace("Z", "+00:00"))
    except ValueError as exc:
        raise XlsxError(f"bad epoch {epoch!r}: {exc}") from exc
    if stamp.year < 1980:
        raise XlsxError("zip timestamps start at 1980")
    date_time = (stamp.year, stamp.month, stamp.day, stamp.hour, stamp.minute, stamp.second)

    strings = _collect_strings(ir)
    string_index = {s: i for i, s in enumerate(strings)}
    total_refs = sum(
        1
        for sheet in ir.sheets
        for cell in sheet.cells.values()
        if isinstance(cell, LitCell) and isinstance(cell.value, str)
    )
    formats = _collect_formats(ir)
    fmt_index = {code: i + 1 for i, code in enumerate(formats)}  # style 0 = default

    entries: list[tuple[str, str]] = [
        ("[Content_Types].xml", _content_types(len(ir.sheets))),
        ("_rels/.rels", _root_rels()),
        ("xl/workbook.xml", _workbook_xml(ir)),
        ("xl/_rels/workbook.xml.rels", _workbook_rels(len(ir.sheets))),
    ]
    for i, sheet in enumerate(ir.sheets, 1):
        entries.append((f"xl/worksheets/sheet{i}.xml", _sheet_xml(sheet, string_index, fmt_index)))
    entries.append(("xl/sharedStrings.xml", _shared_strings_xml(strings, total_refs)))
    entries.append(("xl/styles.xml", _styles_xml(formats)))

    try:
        with zipfile.ZipFile(path, "w") as zf:
            for name, content in entries:
                info = zipfile.ZipInfo(name, date_time)
                info.compress_type = zipfile.ZIP_STORED
                info.external_attr = 0o600 << 16
                zf.writestr(info, content.encode("utf-8"))
    except OSError as exc:
        raise XlsxError(f"cannot write {path}: {exc}") from exc


# --------------------------------------------------------------------------
# Reading back (the verify path)


@dataclass(frozen=True)
class ReadCell:
    formula: str | None
    value: float | bool | str | None


@dataclass(frozen=True)
class ReadWorkbook:
    sheets: dict[str, dict[tuple[int, int], ReadCell]]
    names: dict[str, str]  # defined name -> refers-to text


def _local(tag: str) -> str:
    return tag.rsplit("}", 1)[-1]


def read_xlsx(path) -> ReadWorkbook:
    """Read back the subset write_xlsx produces."""
    try:
        zf = zipfile.ZipFile(path)
    except (OSError, zipfile.BadZipFile) as exc:
        raise XlsxError(f"cannot read {path}: {exc}") from exc
    with zf:
        def load(name: str):
            with zf.open(name) as fh:
                return ElementTree.parse(fh).getroot()

        rels = {
            el.get("Id"): "xl/" + el.get("Target", "").removeprefix("/xl/").lstrip("/")
            for el in load("xl/_rels/workbook.xml.rels")
            if _local(el.tag) == "Relationship" and "worksheet" in el.get("Type", "")
        }
        workbook = load("xl/workbook.xml")
        sheet_files: list[tuple[str, str]] = []
        names: dict[str, str] = {}
        for el in workbook.iter():
            if _local(el.tag) == "sheet":
                rid = el.get(f"{{{_NS_REL}}}id") or el.get("id", "")
                sheet_files.append((el.get("name", ""), rels.get(rid, "")))
            elif _local(el.tag) == "definedName":
                names[el.get("name", "")] = el.text or ""

        shared: list[str] = []
        if "xl/sharedStrings.xml" in zf.namelist():
            for si in load("xl/sharedStrings.xml"):
                shared.append("".join(t.text or "" for t in si.iter() if _local(t.tag) == "t"))

        sheets: dict[str, dict[tuple[int, int], ReadCell]] = {}
        for sheet_name, file_name in sheet_files:
            cells: dict[tuple[int, int], ReadCell] = {}
            for c in load(file_name).iter():
                if _local(c.tag) != "c":
                    continue
                ref = c.get("r", "")
                row, col, _, _ = cellref.parse_a1(ref)
                ctype = c.get("t", "n")
                f_el = next((ch for ch in c if _local(ch.tag) == "f"), None)
                v_el = next((ch for ch in c if _local(ch.tag) == "v"), None)
                if f_el is not None:
                    cells[(row, col)] = ReadCell(f_el.text or "", None)
                    continue
                raw = v_el.text if v_el is not None else None
                value: float | bool | str | None
                if raw is None:
                    value = None
                elif ctype == "s":
                    value = shared[int(raw)]
                elif ctype == "b":
                    value = raw.strip() in ("1", "true", "TRUE")
                elif ctype == "str":
                    value = raw
                else:
                    value = float(raw)
                cells[(row, col)] = ReadCell(None, value)
            sheets[sheet_name] = cells
    return ReadWorkbook(sheets, names)
