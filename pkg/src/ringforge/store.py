"""Content-addressed store of element versions with audit trails and the
OK/Warning/Failure status machine.

Layout on disk:

    <root>/objects/<id>.json   canonical element content
    <root>/meta/<id>.json      status, check record, audit entries
    <root>/refs/<name>         text file holding a version id
    <root>/lock                advisory lock serializing writers

A version id is the SHA-256 of the element's canonical bytes, so identical
logic always shares one id.  Check state lives in meta, never in content:
checking an element off does not change its identity.  Timestamps are
caller-supplied ISO 8601 text so every operation is deterministic under
test.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, replace
from hashlib import sha256
from pathlib import Path

from filelock import FileLock

from ringforge import elements
from ringforge.diagnostics import Diagnostic, has_errors
from ringforge.elements import (
    ChangeEntry,
    ChangeList,
    CheckRecord,
    Element,
    KindMismatchError,
    Status,
    canonicalize,
    classify_materiality,
    diff,
    kind_name,
    validate_element,
)

REF_RE = re.compile(r"[A-Za-z0-9_\-/]+\Z")
_HEX_RE = re.compile(r"[0-9a-f]{64}\Z")


class StoreError(Exception):
    def __init__(self, message: str, code: str):
        super().__init__(message)
        self.code = code


class UnknownVersionError(StoreError):
    def __init__(self, what: str):
        super().__init__(f"unknown version or ref: {what}", "E_UNKNOWN_VERSION")


class InvalidElementError(StoreError):
    def __init__(self, diags: list[Diagnostic]):
        lines = "; ".join(d.render() for d in diags)
        super().__init__(f"element fails validation: {lines}", "E_INVALID_ELEMENT")
        self.diagnostics = diags


@dataclass(frozen=True)
class AuditEntry:
    from_version: str | None
    to_version: str
    timestamp: str
    author: str
    changes: ChangeList
    resulting_status: Status

    @property
    def is_check_off(self) -> bool:
        return not self.changes and self.from_version == self.to_version


@dataclass(frozen=True)
class StoreRecord:
    version: str
    kind: str
    element: Element
    status: Status
    check_record: CheckRecord | None
    entries: tuple[AuditEntry, ...]


def version_id(e: Element) -> str:
    return sha256(canonicalize(e)).hexdigest()


def _material_transition(status: Status) -> Status:
    # one unchecked material change -> Warning; a second -> Failure.
    return Status.WARNING if status is Status.OK else Status.FAILURE


def transition(status: Status, material: bool) -> Status:
    return _material_transition(status) if material else status


def _entry_to_dict(entry: AuditEntry) -> dict:
    return {
        "from_version": entry.from_version,
        "to_version": entry.to_version,
        "timestamp": entry.timestamp,
        "author": entry.author,
        "changes": [
            {"path": c.path, "old": c.old, "new": c.new, "material": c.material}
            for c in entry.changes
        ],
        "resulting_status": entry.resulting_status.value,
    }


def _entry_from_dict(data: dict) -> AuditEntry:
    return AuditEntry(
        data["from_version"],
        data["to_version"],
        data["timestamp"],
        data["author"],
        tuple(ChangeEntry(c["path"], c["old"], c["new"], c["material"]) for c in data["changes"]),
        Status(data["resulting_status"]),
    )


class VersionStore:
    """File-backed store. Reads are lock-free; writers hold one lock."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self._lock = FileLock(str(self.root / "lock"))

    @classmethod
    def create(cls, root: str | Path) -> "VersionStore":
        root = Path(root)
        for sub in ("objects", "meta", "refs"):
            (root / sub).mkdir(parents=True, exist_ok=True)
        return cls(root)

    def _object_path(self, vid: str) -> Path:
        return self.root / "objects" / f"{vid}.json"

    def _meta_path(self, vid: str) -> Path:
        return self.root / "meta" / f"{vid}.json"

    def exists(self, vid: str) -> bool:
        return self._object_path(vid).is_file()

    # -- reading ------------------------------------------------------------

    def get_record(self, vid: str) -> StoreRecord:
        path = self._object_path(vid)
        if not path.is_file():
            raise UnknownVersionError(vid)
        element = elements.loads(path.read_text("utf-8"))
        meta = json.loads(self._meta_path(vid).read_text("utf-8"))
        status = Status(meta["status"])
        record = meta.get("check_record")
        check = CheckRecord(record["checked_by"], record["checked_at"]) if record else None
        entries = tuple(_entry_from_dict(e) for e in meta["entries"])
        element = elements.with_doc_state(element, status, check)
        return StoreRecord(vid, kind_name(element), element, status, check, entries)

    def get(self, vid: str) -> Element:
        return self.get_record(vid).element

    def kind_of(self, vid: str) -> str:
        return self.get_record(vid).kind

    # -- writing ------------------------------------------------------------

    def _write(self, vid: str, e: Element, status: Status, check: CheckRecord | None,
               entries: list[AuditEntry]) -> None:
        self._object_path(vid).write_text(elements.dumps(e), "utf-8")
        meta = {
            "kind": kind_name(e),
            "status": status.value,
            "check_record": None if check is None else
                {"checked_by": check.checked_by, "checked_at": check.checked_at},
            "entries": [_entry_to_dict(en) for en in entries],
        }
        self._meta_path(vid).write_text(
            json.dumps(meta, sort_keys=True, indent=2, ensure_ascii=False) + "\n", "utf-8")

    def _require_valid(self, e: Element) -> None:
        diags = validate_element(e)
        if has_errors(diags):
            raise InvalidElementError(diags)

    def put_new(self, e: Element, author: str, at: str) -> str:
        """Store a fresh element. Its status starts at Warning: creation is
        one unchecked material change. Identical content is not duplicated."""
        self._require_valid(e)
        vid = version_id(e)
        with self._lock:
            if self.exists(vid):
                return vid
            changes = tuple(
                ChangeEntry(path, None, elements._canonical_text(value), classify_materiality(path))
                for path, value in sorted(elements.to_dict(e, with_state=False).items())
            )
            entry = AuditEntry(None, vid, at, author, changes, Status.WARNING)
            self._write(vid, elements.with_doc_state(e, Status.WARNING, None),
                        Status.WARNING, None, [entry])
        return vid

    def save_derived(self, parent: str, e: Element, author: str, at: str) -> str:
        """Store a version derived from `parent`, recording the field diff.

        A material change degrades the status (OK -> Warning -> Failure); a
        non-material change inherits it. An empty diff stores nothing and
        returns the parent id.
        """
        parent_record = self.get_record(parent)
        if kind_name(e) != parent_record.kind:
            raise KindMismatchError(
                f"parent is a {parent_record.kind}, new element is a {kind_name(e)}")
        self._require_valid(e)
        changes = diff(parent_record.element, e)
        if not changes:
            return parent
        material = any(c.material for c in changes)
        status = transition(parent_record.status, material)
        check = parent_record.check_record
        vid = version_id(e)
        entry = AuditEntry(parent, vid, at, author, changes, status)
        with self._lock:
            if self.exists(vid):
                # re-derivation of existing content: record it, refresh state
                existing = self.get_record(vid)
                self._write(vid, elements.with_doc_state(e, status, check), status, check,
                            list(existing.entries) + [entry])
            else:
                self._write(vid, elements.with_doc_state(e, status, check), status, check, [entry])
        return vid

    def check_off(self, vid: str, by: str, at: str) -> str:
        """Mark a version independently checked: status OK, record by/when.
        Content identity is untouched, so the id comes back unchanged."""
        record = self.get_record(vid)
        check = CheckRecord(by, at)
        entry = AuditEntry(vid, vid, at, by, (), Status.OK)
        with self._lock:
            self._write(vid, elements.with_doc_state(record.element, Status.OK, check),
                        Status.OK, check, list(record.entries) + [entry])
        return vid

    # -- status and audit -----------------------------------------------------

    def children_of(self, e: Element) -> tuple[str, ...]:
        if isinstance(e, elements.Component):
            return tuple(m.child for m in e.embeds)
        if isinstance(e, elements.Skeleton):
            return tuple(i.component for i in e.instances)
        return (e.skeleton,)

    def effective_status(self, vid: str) -> Status:
        """Worst of this version's own status and every contained version's."""
        seen: set[str] = set()

        def visit(v: str) -> Status:
            if v in seen:
                return Status.OK
            seen.add(v)
            try:
                record = self.get_record(v)
            except UnknownVersionError:
                raise StoreError(f"dangling child version {v}", "E_DANGLING_CHILD") from None
            return worst(record.status, *(visit(child) for child in self.children_of(record.element)))

        def worst(*statuses: Status) -> Status:
            return elements.worst_status(statuses)

        return visit(vid)

    def audit_log(self, vid: str) -> list[AuditEntry]:
        """Full chain from creation to `vid`, oldest first."""
        chain: list[AuditEntry] = []
        seen: set[str] = set()
        current: str | None = vid
        while current is not None and current not in seen:
            seen.add(current)
            record = self.get_record(current)
            chain = list(record.entries) + chain
            first = record.entries[0]
            current = first.from_version if first.from_version != current else None
        return chain

    # -- refs ---------------------------------------------------------------

    def set_ref(self, name: str, vid: str) -> None:
        if not REF_RE.match(name):
            raise StoreError(f"bad ref name {name!r}", "E_IO")
        if not self.exists(vid):
            raise UnknownVersionError(vid)
        path = self.root / "refs" / name
        with self._lock:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(vid + "\n", "utf-8")

    def get_ref(self, name: str) -> str:
        path = self.root / "refs" / name
        if not path.is_file():
            raise UnknownVersionError(name)
        return path.read_text("utf-8").strip()

    def resolve(self, ref_or_id: str) -> str:
        """Accept a version id wherever a ref name is accepted."""
        if _HEX_RE.match(ref_or_id) and self.exists(ref_or_id):
            return ref_or_id
        if REF_RE.match(ref_or_id):
            path = self.root / "refs" / ref_or_id
            if path.is_file():
                return path.read_text("utf-8").strip()
        raise UnknownVersionError(ref_or_id)
