"""Whole-element diagnosis: one ordered report covering completeness and
quality for a stored version.

The registry of quality checkers is data-driven so new checks stay
additive: each entry pairs a diagnostic code with a checker that yields
findings for one element kind.
"""
from __future__ import annotations

from dataclasses import replace

from ringforge import formula
from ringforge.assemble import AssembledModel, AssemblyError, complete, dependency_graph, expand, link
from ringforge.diagnostics import Diagnostic, sort_diagnostics
from ringforge.elements import Component, Element, Model, Skeleton, Status, validate_element
from ringforge.store import VersionStore


def _constant_warnings(rows, element_name: str) -> list[Diagnostic]:
    out = []
    for row in rows:
        if row.kind == "formula" and row.expr is not None:
            for text in formula.scan_constants(row.expr):
                out.append(Diagnostic("W_CONSTANT_IN_FORMULA", element=element_name, path=row.path,
                                      message=f"constant {text}"))
    return out


def _check_constant_warnings(checks, element_name: str) -> list[Diagnostic]:
    out = []
    for check in checks:
        for text in formula.scan_constants(check.expr):
            out.append(Diagnostic("W_CONSTANT_IN_FORMULA", element=element_name,
                                  path=f"checks.{check.name}", message=f"constant {text}"))
    return out


def _databook_warning(element: Element) -> list[Diagnostic]:
    if element.doc.databook_entry.strip():
        return []
    return [Diagnostic("W_NO_DATABOOK_ENTRY", element=element.name)]


def _unused_inputs(skeleton: Skeleton) -> list[Diagnostic]:
    wired = {source for source in skeleton.wiring.values() if "." not in source}
    out = []
    for data_input in skeleton.data_inputs:
        if data_input.name not in wired:
            out.append(Diagnostic("E_INPUT_UNUSED", element=skeleton.name,
                                  path=f"data_inputs.{data_input.name}"))
    return out


def _diagnose_component(component: Component, store) -> list[Diagnostic]:
    diags = list(validate_element(component))
    rows, expand_diags = expand(component, store)
    diags += [replace(d, element=d.element or component.name) for d in expand_diags]
    diags += _constant_warnings(rows, component.name)
    diags += _databook_warning(component)
    return diags


def _diagnose_skeleton(skeleton: Skeleton, store) -> list[Diagnostic]:
    diags = list(validate_element(skeleton))
    linked, link_diags = link(skeleton, store)
    diags += [replace(d, element=d.element or skeleton.name) for d in link_diags]
    diags += _unused_inputs(skeleton)
    if not skeleton.checks:
        diags.append(Diagnostic("W_NO_CHECKS", element=skeleton.name))
    if linked is not None:
        diags += _constant_warnings(linked.rows, skeleton.name)
        diags += _check_constant_warnings(linked.checks, skeleton.name)
    diags += _databook_warning(skeleton)
    return diags


def _diagnose_model(model: Model, store) -> list[Diagnostic]:
    diags = list(validate_element(model))
    assembled, complete_diags = complete(model, store)
    diags += [replace(d, element=d.element or model.name) for d in complete_diags]
    if not model.scenarios:
        diags.append(Diagnostic("E_NO_SCENARIO", element=model.name))
    diags += _databook_warning(model)
    try:
        skeleton = store.get(model.skeleton)
    except Exception:
        skeleton = None
    if isinstance(skeleton, Skeleton):
        diags += _unused_inputs(skeleton)
        if not skeleton.checks:
            diags.append(Diagnostic("W_NO_CHECKS", element=skeleton.name))
        diags += _databook_warning(skeleton)
    if assembled is not None:
        diags += _constant_warnings(assembled.rows, model.name)
        diags += _check_constant_warnings(assembled.checks, model.name)
        try:
            dependency_graph(assembled)
        except AssemblyError as exc:
            diags.append(Diagnostic("E_CYCLE", element=model.name,
                                    message=str(exc)))
        seen: set[str] = set()
        for info in assembled.instances:
            if info.component in seen:
                continue
            seen.add(info.component)
            diags += _databook_warning(store.get(info.component))
    return diags


def diagnose(version: str, store: VersionStore) -> list[Diagnostic]:
    """Run every applicable check for the element kind; deterministic order.

    Raises store errors for unknown versions; everything else comes back as
    diagnostics, never exceptions.
    """
    record = store.get_record(version)
    element = record.element
    if isinstance(element, Component):
        diags = _diagnose_component(element, store)
    elif isinstance(element, Skeleton):
        diags = _diagnose_skeleton(element, store)
    else:
        diags = _diagnose_model(element, store)
    try:
        if store.effective_status(version) is not Status.OK:
            diags.append(Diagnostic("W_UNCHECKED", element=element.name))
    except Exception:
        pass  # dangling children already reported by assembly
    unique = sorted(set(diags), key=lambda d: (d.element, d.path, d.code, d.period or 0))
    return unique
