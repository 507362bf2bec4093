"""Command-line front end: author -> save -> diagnose -> check off ->
generate -> run -> verify, all against one project store.

Store directory resolution: --store flag, then the RINGFORGE_STORE
environment variable, then the `store` entry of ./project.json, then
./.ringstore.  Exit codes: 0 success/clean, 1 warnings under --strict,
2 errors or blocked generation, 3 failing checks, 4 tampered workbook.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from datetime import date, datetime, timezone
from pathlib import Path

from ringforge import __version__, cellref, documents, elements, evaluate, grid, xlsx
from ringforge.assemble import AssemblyError, complete, upgrade_child
from ringforge.diagnose import diagnose
from ringforge.diagnostics import Severity, gate_generation
from ringforge.elements import ElementError, Model
from ringforge.evaluate import EvalError, EvaluationError
from ringforge.store import StoreError, VersionStore

EXIT_OK = 0
EXIT_WARNINGS = 1
EXIT_ERROR = 2
EXIT_CHECKS_FAILED = 3
EXIT_TAMPERED = 4

PROJECT_FILE = "project.json"
DEFAULT_STORE = ".ringstore"
DEFAULT_OUT = "out"


class CliError(Exception):
    def __init__(self, message: str, code: str = "E_IO", exit_code: int = EXIT_ERROR):
        super().__init__(message)
        self.code = code
        self.exit_code = exit_code


def _project_config() -> dict:
    path = Path(PROJECT_FILE)
    if not path.is_file():
        return {}
    try:
        return json.loads(path.read_text("utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError(f"cannot read {PROJECT_FILE}: {exc}")


def _store_path(args) -> Path:
    if args.store:
        return Path(args.store)
    env = os.environ.get("RINGFORGE_STORE")
    if env:
        return Path(env)
    config = _project_config()
    return Path(config.get("store", DEFAULT_STORE))


def _open_store(args) -> VersionStore:
    path = _store_path(args)
    if not (path / "objects").is_dir():
        raise CliError(f"no store at {path} (run `ringforge init` first)")
    return VersionStore(path)


def _author(args) -> str:
    if getattr(args, "author", None):
        return args.author
    author = _project_config().get("author")
    if not author:
        raise CliError("no author: pass --author or set it in project.json")
    return author


def _now(args) -> str:
    if getattr(args, "at", None):
        return args.at
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _emit(args, record: dict, human: str) -> None:
    if args.format == "json":
        print(json.dumps(record, sort_keys=True))
    else:
        print(human)


def _emit_error(args, exc) -> None:
    code = getattr(exc, "code", "E_IO")
    if args.format == "json":
        print(json.dumps({"error": code, "message": str(exc)}, sort_keys=True))
    else:
        print(f"error {code}: {exc}", file=sys.stderr)


def _print_diags(args, diags) -> None:
    for d in diags:
        if args.format == "json":
            print(json.dumps({"code": d.code, "severity": d.severity.value, "element": d.element,
                              "path": d.path, "period": d.period,
                              "message": d.message or ""}, sort_keys=True))
        else:
            print(d.render())


# --------------------------------------------------------------------------
# Commands


def cmd_init(args) -> int:
    path = _store_path(args)
    VersionStore.create(path)
    project = Path(PROJECT_FILE)
    if not project.is_file():
        project.write_text(json.dumps(
            {"store": str(path), "out_dir": DEFAULT_OUT, "author": None}, indent=2) + "\n", "utf-8")
    _emit(args, {"store": str(path)}, f"initialized store at {path}")
    return EXIT_OK


def cmd_save(args) -> int:
    store = _open_store(args)
    element = elements.load_file(args.file)
    author = _author(args)
    at = _now(args)
    if args.parent:
        parent = store.resolve(args.parent)
        vid = store.save_derived(parent, element, author, at)
    else:
        vid = store.put_new(element, author, at)
    store.set_ref(element.name, vid)
    _emit(args, {"version": vid, "ref": element.name}, vid)
    return EXIT_OK


def cmd_checkoff(args) -> int:
    store = _open_store(args)
    vid = store.resolve(args.ref)
    store.check_off(vid, args.by, _now(args))
    _emit(args, {"version": vid, "status": "OK"}, f"{vid} checked off: OK")
    return EXIT_OK


def cmd_status(args) -> int:
    store = _open_store(args)
    vid = store.resolve(args.ref)
    record = store.get_record(vid)
    effective = store.effective_status(vid)
    _emit(args, {"version": vid, "own": record.status.value, "effective": effective.value},
          f"own: {record.status.value}\neffective: {effective.value}")
    return EXIT_OK


def cmd_log(args) -> int:
    store = _open_store(args)
    vid = store.resolve(args.ref)
    for entry in store.audit_log(vid):
        material = sum(1 for c in entry.changes if c.material)
        record = {
            "from": entry.from_version, "to": entry.to_version, "at": entry.timestamp,
            "author": entry.author, "changes": len(entry.changes), "material": material,
            "status": entry.resulting_status.value,
            "check_off": entry.is_check_off,
        }
        what = "check-off" if entry.is_check_off else f"{len(entry.changes)} change(s), {material} material"
        _emit(args, record,
              f"{entry.from_version or '(created)'} -> {entry.to_version} "
              f"{entry.timestamp} {entry.author}: {what} [{entry.resulting_status.value}]")
    return EXIT_OK


def cmd_diff(args) -> int:
    store = _open_store(args)
    a = store.get(store.resolve(args.ref1))
    b = store.get(store.resolve(args.ref2))
    for change in elements.diff(a, b):
        record = {"path": change.path, "old": change.old, "new": change.new,
                  "material": change.material}
        flag = "material" if change.material else "        "
        _emit(args, record, f"[{flag}] {change.path}: {change.old} -> {change.new}")
    return EXIT_OK


def cmd_diagnose(args) -> int:
    store = _open_store(args)
    vid = store.resolve(args.ref)
    diags = diagnose(vid, store)
    _print_diags(args, diags)
    if any(d.severity is Severity.ERROR for d in diags):
        return EXIT_ERROR
    if diags and args.strict:
        return EXIT_WARNINGS
    return EXIT_OK


def _load_model(store: VersionStore, ref: str) -> tuple[str, Model]:
    vid = store.resolve(ref)
    element = store.get(vid)
    if not isinstance(element, Model):
        raise CliError(f"{ref} is a {elements.kind_name(element)}, expected a model",
                       code="E_KIND_MISMATCH")
    return vid, element


def cmd_generate(args) -> int:
    store = _open_store(args)
    vid, model = _load_model(store, args.model_ref)
    diags = diagnose(vid, store)
    gate = gate_generation(diags, strict=args.strict)
    if not gate.ok:
        _print_diags(args, list(gate.blocking))
        _emit_error(args, CliError("generation blocked", code="E_INVALID_ELEMENT"))
        return EXIT_ERROR
    effective = store.effective_status(vid)
    if effective is not elements.Status.OK:
        print(f"warning: effective status is {effective.value}", file=sys.stderr)
    assembled, _ = complete(model, store)
    assert assembled is not None  # gate passed
    epoch = args.epoch or _now(args)
    ir = grid.layout(assembled, model_version=vid, generated_at=epoch)
    out_dir = Path(args.out or _project_config().get("out_dir", DEFAULT_OUT))
    out_dir.mkdir(parents=True, exist_ok=True)
    xlsx.write_xlsx(ir, out_dir / "model.xlsx", epoch)
    (out_dir / "model.grid.json").write_bytes(documents.write_canonical_grid(ir))
    (out_dir / "databook.md").write_text(documents.write_databook(model, store), "utf-8")
    (out_dir / "spec.md").write_text(documents.write_spec(model, store, vid), "utf-8")
    _emit(args, {"version": vid, "effective_status": effective.value, "out": str(out_dir)},
          f"generated {out_dir}/model.xlsx (effective status {effective.value})")
    return EXIT_OK


def _tsv_value(value) -> str:
    if isinstance(value, EvalError):
        return value.text
    if isinstance(value, bool):
        return "TRUE" if value else "FALSE"
    if value is None:
        return ""
    if isinstance(value, float):
        return str(int(value)) if value == int(value) and abs(value) < 1e15 else repr(value)
    return str(value)


def cmd_run(args) -> int:
    store = _open_store(args)
    vid, model = _load_model(store, args.model_ref)
    assembled, diags = complete(model, store)
    if assembled is None:
        _print_diags(args, diags)
        return EXIT_ERROR
    ir = grid.layout(assembled, model_version=vid, generated_at="(run)")
    values = evaluate.evaluate(ir, args.scenario)
    rows = evaluate.row_values_from_cells(ir, values)
    dates = cellref.period_dates(assembled.gen_params.start_date,
                                 assembled.gen_params.periodicity,
                                 assembled.gen_params.n_periods)
    labels = [d.isoformat() for d in dates]
    for flat in assembled.rows:
        if not flat.is_value_row():
            continue
        series = rows[flat.path]
        if len(series) == 1 and flat.width is not None and flat.width.value == "single":
            print(f"{flat.path}\t\t{_tsv_value(series[0])}")
        else:
            for label, value in zip(labels, series):
                print(f"{flat.path}\t{label}\t{_tsv_value(value)}")
    results = evaluate.run_checks(ir, values)
    for name, series in results.periods.items():
        for label, value in zip(labels, series):
            print(f"checks.{name}\t{label}\t{_tsv_value(value)}")
        print(f"checks.{name}\taggregate\t{_tsv_value(results.aggregates[name])}")
    print(f"checks.all_checks\t\t{_tsv_value(results.all_checks)}")
    return EXIT_OK if results.all_checks else EXIT_CHECKS_FAILED


def cmd_verify(args) -> int:
    store = _open_store(args)
    vid = store.resolve(args.against)
    report = documents.verify(args.file, vid, store)
    if report.version_note:
        print(report.version_note, file=sys.stderr)
    for mismatch in report.mismatches:
        record = {"cell": mismatch.cell, "expected": mismatch.expected, "found": mismatch.found}
        _emit(args, record, f"{mismatch.cell}: expected {mismatch.expected}, found {mismatch.found}")
    if report.clean:
        _emit(args, {"clean": True}, "clean")
        return EXIT_OK
    return EXIT_TAMPERED


def cmd_upgrade(args) -> int:
    store = _open_store(args)
    parent_vid = store.resolve(args.parent_ref)
    parent = store.get(parent_vid)
    child_old = store.resolve(args.child_old)
    child_new = store.resolve(args.child_new)
    upgraded, discarded = upgrade_child(parent, child_old, child_new, store)
    new_vid = store.save_derived(parent_vid, upgraded, _author(args), _now(args))
    store.set_ref(upgraded.name, new_vid)
    for path in discarded:
        _emit(args, {"discarded": path}, f"discarded {path}")
    _emit(args, {"version": new_vid}, new_vid)
    return EXIT_OK


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ringforge",
                                     description="Template-driven spreadsheet compiler")
    parser.add_argument("--store", help="store directory (default: RINGFORGE_STORE or ./.ringstore)")
    parser.add_argument("--format", choices=["text", "json"], default="text")
    parser.add_argument("--version", action="version", version=f"ringforge {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("init", help="create the project store")
    p.set_defaults(fn=cmd_init)

    p = sub.add_parser("save", help="store an element file, update its ref")
    p.add_argument("file")
    p.add_argument("--parent", help="derive from this ref or version id")
    p.add_argument("--author")
    p.add_argument("--at", help="ISO timestamp (defaults to now)")
    p.set_defaults(fn=cmd_save)

    p = sub.add_parser("checkoff", help="mark a version independently checked")
    p.add_argument("ref")
    p.add_argument("--by", required=True)
    p.add_argument("--at")
    p.set_defaults(fn=cmd_checkoff)

    p = sub.add_parser("status", help="own and effective status")
    p.add_argument("ref")
    p.set_defaults(fn=cmd_status)

    p = sub.add_parser("log", help="audit trail, oldest first")
    p.add_argument("ref")
    p.set_defaults(fn=cmd_log)

    p = sub.add_parser("diff", help="field-level changes between two versions")
    p.add_argument("ref1")
    p.add_argument("ref2")
    p.set_defaults(fn=cmd_diff)

    p = sub.add_parser("diagnose", help="completeness and quality report")
    p.add_argument("ref")
    p.add_argument("--strict", action="store_true", help="warnings fail too")
    p.set_defaults(fn=cmd_diagnose)

    p = sub.add_parser("generate", help="write workbook, grid, databook and spec")
    p.add_argument("model_ref")
    p.add_argument("--out", help="output directory")
    p.add_argument("--epoch", help="ISO timestamp stamped into the workbook")
    p.add_argument("--at")
    p.add_argument("--strict", action="store_true")
    p.set_defaults(fn=cmd_generate)

    p = sub.add_parser("run", help="evaluate a scenario, print TSV values")
    p.add_argument("model_ref")
    p.add_argument("--scenario", required=True)
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("verify", help="compare a workbook file against its model")
    p.add_argument("file")
    p.add_argument("--against", required=True, metavar="MODEL_REF")
    p.set_defaults(fn=cmd_verify)

    p = sub.add_parser("upgrade", help="swap a child version inside a parent")
    p.add_argument("parent_ref")
    p.add_argument("--child-old", required=True)
    p.add_argument("--child-new", required=True)
    p.add_argument("--author")
    p.add_argument("--at")
    p.set_defaults(fn=cmd_upgrade)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (CliError, StoreError, ElementError, AssemblyError, EvaluationError,
            documents.DocumentError, xlsx.XlsxError) as exc:
        _emit_error(args, exc)
        return getattr(exc, "exit_code", EXIT_ERROR)
    except OSError as exc:
        _emit_error(args, CliError(str(exc)))
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
