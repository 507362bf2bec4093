"""Expansion, linking and completion: from stored templates to one flat,
fully resolved model ready for layout.

Embedded components are inlined with `instance.` path prefixes.  An embed
block is placed directly after the last parent row its bindings reference
(embeds with no row bindings come first), so bound inputs always sit above
the rows they feed and the block's outputs are usable by everything below.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from heapq import heapify, heappop, heappush

from ringforge import elements, formula
from ringforge.diagnostics import Diagnostic, has_errors, sort_diagnostics
from ringforge.elements import (
    ChartDef,
    Component,
    DataInput,
    Element,
    GenParams,
    Model,
    ReportDef,
    ReportRow,
    Scenario,
    Skeleton,
    Structure,
    kind_name,
)
from ringforge.formula import Expr, ResolvedExpr, ScopeRow, ValueType, Width

MAX_GROUP_DEPTH = 7  # spreadsheet outline levels stop at 7
DEFAULT_SHEET = "Workings"


class AssemblyError(Exception):
    def __init__(self, message: str, code: str, **extra):
        super().__init__(message)
        self.code = code
        for key, value in extra.items():
            setattr(self, key, value)


@dataclass(frozen=True)
class FlatRow:
    """One row of the flattened model.

    `kind` is heading/blank/input/formula. Input rows land a data input
    (`input_name` once wired); landing rows wired to an earlier instance's
    output have already been rewritten into formula rows.
    """

    path: str
    kind: str
    depth: int
    source: str  # version id of the defining component
    instance: str  # top-level instance the row belongs to
    unit: str | None = None
    port: str | None = None
    input_name: str | None = None
    expr: Expr | None = None
    resolved: ResolvedExpr | None = None
    width: Width | None = None
    special: tuple[int, int] | None = None
    fmt: str | None = None
    sheet: str = DEFAULT_SHEET
    value_type: ValueType | None = None
    index: int = -1

    @property
    def label(self) -> str:
        return self.path.rsplit(".", 1)[-1]

    def is_value_row(self) -> bool:
        return self.kind in ("input", "formula")


@dataclass(frozen=True)
class AssembledInput:
    name: str
    structure: Structure
    landing_path: str | None


@dataclass(frozen=True)
class AssembledCheck:
    name: str
    expr: Expr
    resolved: ResolvedExpr


@dataclass(frozen=True)
class InstanceInfo:
    name: str
    component: str  # version id
    component_name: str


@dataclass(frozen=True)
class LinkedSkeleton:
    name: str
    rows: tuple[FlatRow, ...]
    inputs: tuple[AssembledInput, ...]
    checks: tuple[AssembledCheck, ...]
    instances: tuple[InstanceInfo, ...]


@dataclass(frozen=True)
class AssembledModel:
    name: str
    rows: tuple[FlatRow, ...]
    inputs: tuple[AssembledInput, ...]
    checks: tuple[AssembledCheck, ...]
    scenarios: tuple[Scenario, ...]
    gen_params: GenParams
    reports: tuple[ReportDef, ...]
    charts: tuple[ChartDef, ...]
    calc_sheets: tuple[str, ...]
    instances: tuple[InstanceInfo, ...]
    skeleton_version: str

    def row(self, path: str) -> FlatRow:
        return next(r for r in self.rows if r.path == path)


# --------------------------------------------------------------------------
# Expansion


def _prefix_expr(expr: Expr, prefix: str) -> Expr:
    """Requalify every reference of a component-scope formula."""
    if not prefix:
        return expr

    def rewrite(node: Expr) -> Expr:
        if isinstance(node, formula.RowRef):
            return formula.RowRef(prefix + node.label, node.offset)
        if isinstance(node, formula.Neg):
            return formula.Neg(rewrite(node.operand))
        if isinstance(node, formula.BinOp):
            return formula.BinOp(node.op, rewrite(node.lhs), rewrite(node.rhs))
        if isinstance(node, formula.Compare):
            return formula.Compare(node.op, rewrite(node.lhs), rewrite(node.rhs))
        if isinstance(node, formula.Call):
            return formula.Call(node.fn, tuple(rewrite(a) for a in node.args))
        return node

    return rewrite(expr)


def _get_component(store, vid: str, at: str, diags: list[Diagnostic]) -> Component | None:
    try:
        child = store.get(vid)
    except Exception:
        diags.append(Diagnostic("E_DANGLING_CHILD", path=at, message=f"version {vid} not in store"))
        return None
    if not isinstance(child, Component):
        diags.append(Diagnostic("E_KIND_MISMATCH", path=at,
                                message=f"{vid} is a {kind_name(child)}, not a component"))
        return None
    return child


def expand(
    component: Component,
    store,
    prefix: str = "",
    depth: int = 1,
    _bound: dict[str, str] | None = None,
    _stack: tuple[str, ...] = (),
    _vid: str = "",
) -> tuple[list[FlatRow], list[Diagnostic]]:
    """Inline every embedded component, one flat row list out.

    `_bound` maps this component's ports to already-emitted parent row
    paths; with no bindings (the top level) ports stay as input rows.
    """
    diags: list[Diagnostic] = []
    rows: list[FlatRow] = []
    vid = _vid or "unsaved"

    own_index = {row.label: i for i, row in enumerate(component.rows)}
    landing_of_port = {
        row.kind.port: row.label for row in component.rows if isinstance(row.kind, elements.InputRow)
    }

    # anchor each embed after the last parent row its bindings reference
    emitted_paths: set[str] = set()
    anchors: dict[str, int] = {}
    embeds_at: dict[int, list[elements.Embed]] = {}
    for embed in component.embeds:
        anchor = -1
        for target in embed.bindings.values():
            head = target.split(".", 1)[0]
            if target in own_index:
                anchor = max(anchor, own_index[target])
            elif target in landing_of_port:
                anchor = max(anchor, own_index[landing_of_port[target]])
            elif head in anchors:
                anchor = max(anchor, anchors[head])
        anchors[embed.instance] = anchor
        embeds_at.setdefault(anchor, []).append(embed)

    def expand_embed(embed: elements.Embed) -> None:
        at = f"{prefix}{embed.instance}"
        if embed.child in _stack or embed.child == _vid:
            diags.append(Diagnostic("E_COMPONENT_CYCLE", path=at,
                                    message=" -> ".join(_stack + (embed.child,))))
            return
        child = _get_component(store, embed.child, at, diags)
        if child is None:
            return
        child_ports = {p.name for p in child.ports}
        bound: dict[str, str] = {}
        ok = True
        for port, target in sorted(embed.bindings.items()):
            if port not in child_ports:
                diags.append(Diagnostic("E_BAD_BINDING", path=f"{at}.{port}",
                                        message=f"{child.name} has no port {port!r}"))
                ok = False
                continue
            if target in own_index:
                row = component.rows[own_index[target]]
                if not row.is_value_row():
                    diags.append(Diagnostic("E_BAD_BINDING", path=f"{at}.{port}",
                                            message=f"{target!r} is not a value row"))
                    ok = False
                    continue
                resolved_target = prefix + target
            elif target in landing_of_port:
                resolved_target = prefix + landing_of_port[target]
            else:
                resolved_target = prefix + target
            if resolved_target not in emitted_paths:
                diags.append(Diagnostic("E_BAD_BINDING", path=f"{at}.{port}",
                                        message=f"binding target {target!r} not found above the embed"))
                ok = False
                continue
            bound[port] = resolved_target
        for port in sorted(child_ports - set(embed.bindings)):
            diags.append(Diagnostic("E_UNBOUND_PORT", path=f"{at}.{port}", message=port))
            ok = False
        if not ok:
            return
        child_depth = depth + 1
        if child_depth > MAX_GROUP_DEPTH:
            child_depth = MAX_GROUP_DEPTH
            diags.append(Diagnostic("W_GROUP_DEPTH_CLAMPED", path=at))
        child_rows, child_diags = expand(
            child, store, prefix=f"{at}.", depth=child_depth,
            _bound=bound, _stack=_stack + (embed.child,), _vid=embed.child,
        )
        diags.extend(child_diags)
        rows.extend(child_rows)
        emitted_paths.update(r.path for r in child_rows if r.is_value_row())

    def emit_own(row: elements.Row) -> None:
        path = prefix + row.label
        if isinstance(row.kind, elements.Heading):
            rows.append(FlatRow(path, "heading", depth, vid, ""))
        elif isinstance(row.kind, elements.Blank):
            rows.append(FlatRow(path, "blank", depth, vid, ""))
        elif isinstance(row.kind, elements.InputRow):
            port = row.kind.port
            if _bound is not None and port in _bound:
                expr = formula.RowRef(_bound[port], 0)
                rows.append(FlatRow(path, "formula", depth, vid, "", unit=row.unit,
                                    port=port, expr=expr))
            else:
                rows.append(FlatRow(path, "input", depth, vid, "", unit=row.unit, port=port))
            emitted_paths.add(path)
        else:
            expr = _prefix_expr(row.kind.expr, prefix)
            rows.append(FlatRow(path, "formula", depth, vid, "", unit=row.unit, expr=expr))
            emitted_paths.add(path)

    for embed in embeds_at.get(-1, []):
        expand_embed(embed)
    for i, row in enumerate(component.rows):
        emit_own(row)
        for embed in embeds_at.get(i, []):
            expand_embed(embed)

    # dotted outputs re-export embedded rows; they must exist after expansion
    for i, out in enumerate(component.outputs):
        if "." in out and prefix + out not in emitted_paths:
            diags.append(Diagnostic("E_DANGLING_OUTPUT", path=f"outputs[{i}]", message=out))

    return rows, diags


# --------------------------------------------------------------------------
# Linking


def _structure_of_width(width: Width) -> Structure:
    return Structure.SCALAR if width is Width.SINGLE else Structure.SERIES


def _infer_row_types(rows: list[FlatRow]) -> dict[str, ValueType]:
    """Fixpoint typing: prior-period references may point downward, so a
    single in-order pass cannot settle every row. Unknowns default Number."""
    types: dict[str, ValueType] = {}
    value_rows = [r for r in rows if r.is_value_row()]
    for r in value_rows:
        types[r.path] = ValueType.NUMBER

    def provisional(expr: Expr) -> ValueType:
        if isinstance(expr, formula.BoolLit):
            return ValueType.BOOLEAN
        if isinstance(expr, (formula.NumberLit, formula.Builtin, formula.Neg, formula.BinOp)):
            return ValueType.NUMBER
        if isinstance(expr, (formula.RowRef, formula.ResolvedRef)):
            return types.get(expr.label, ValueType.NUMBER)
        if isinstance(expr, formula.Compare):
            return ValueType.BOOLEAN
        if isinstance(expr, formula.Call):
            if expr.fn in ("AND", "OR", "NOT"):
                return ValueType.BOOLEAN
            if expr.fn == "IF" and len(expr.args) == 3:
                return provisional(expr.args[1])
            return ValueType.NUMBER
        return ValueType.NUMBER

    for _ in range(len(value_rows) + 1):
        changed = False
        for r in value_rows:
            if r.kind == "formula" and r.expr is not None:
                new = provisional(r.expr)
                if types[r.path] is not new:
                    types[r.path] = new
                    changed = True
        if not changed:
            break
    return types


def link(skeleton: Skeleton, store) -> tuple[LinkedSkeleton | None, list[Diagnostic]]:
    """Concatenate expanded instances, wire ports, attach widths, resolve
    and type every formula and check."""
    diags: list[Diagnostic] = []
    rows: list[FlatRow] = []
    components: dict[str, Component] = {}
    infos: list[InstanceInfo] = []
    failed_instances: set[str] = set()

    for inst in skeleton.instances:
        comp = _get_component(store, inst.component, f"instances.{inst.name}", diags)
        if comp is None:
            failed_instances.add(inst.name)
            continue
        components[inst.name] = comp
        infos.append(InstanceInfo(inst.name, inst.component, comp.name))
        inst_rows, inst_diags = expand(comp, store, prefix=f"{inst.name}.", _vid=inst.component)
        diags.extend(inst_diags)
        rows.extend(replace(r, instance=inst.name) for r in inst_rows)

    by_path = {r.path: i for i, r in enumerate(rows)}

    # widths: every value row carries one; width keys must name value rows.
    # Keys under an instance that failed to resolve are not re-reported.
    width_seen: set[str] = set()
    for path, width in sorted(skeleton.widths.items()):
        i = by_path.get(path)
        if i is None or not rows[i].is_value_row():
            if path.split(".", 1)[0] not in failed_instances:
                diags.append(Diagnostic("E_DANGLING_PATH", path=f"widths.{path}",
                                        message="no such value row"))
            continue
        rows[i] = replace(rows[i], width=width)
        width_seen.add(path)
    for r in rows:
        if r.is_value_row() and r.path not in width_seen:
            diags.append(Diagnostic("E_WIDTH_MISSING", path=r.path))

    # wiring
    inputs_by_name = {d.name: d for d in skeleton.data_inputs}
    instance_order = {info.name: i for i, info in enumerate(infos)}
    landing_of: dict[str, str] = {}
    for info in infos:
        comp = components[info.name]
        landings = {
            r.port: r.path
            for r in rows
            if r.instance == info.name and r.kind in ("input", "formula")
            and r.port is not None and "." not in r.path[len(info.name) + 1:]
        }
        for port in comp.ports:
            key = f"{info.name}.{port.name}"
            source = skeleton.wiring.get(key)
            landing_path = landings.get(port.name)
            if source is None:
                diags.append(Diagnostic("E_UNWIRED_PORT", path=f"wiring.{key}", message=key))
                continue
            if landing_path is None or landing_path not in by_path:
                continue  # expansion already failed loudly
            li = by_path[landing_path]
            landing_width = rows[li].width
            if landing_width is not None:
                wanted = Structure.SCALAR if port.structure is Structure.SCALAR else Structure.SERIES
                if _structure_of_width(landing_width) is not wanted:
                    diags.append(Diagnostic("E_STRUCTURE_MISMATCH", path=landing_path,
                                            message=f"{port.structure.value} port lands on a "
                                                    f"{landing_width.value}-width row"))
            if "." in source:
                src_head, src_rest = source.split(".", 1)
                src_comp = components.get(src_head)
                if src_head not in instance_order or src_comp is None:
                    diags.append(Diagnostic("E_DANGLING_PATH", path=f"wiring.{key}", message=source))
                    continue
                if instance_order[src_head] >= instance_order[info.name]:
                    diags.append(Diagnostic("E_WIRE_FORWARD", path=f"wiring.{key}", message=source))
                    continue
                if src_rest not in src_comp.outputs:
                    diags.append(Diagnostic("E_DANGLING_PATH", path=f"wiring.{key}",
                                            message=f"{src_rest!r} is not an output of {src_head}"))
                    continue
                target = rows[by_path[source]]
                if target.width is not None and port.structure is not _structure_of_width(target.width):
                    diags.append(Diagnostic("E_STRUCTURE_MISMATCH", path=f"wiring.{key}",
                                            message=f"{port.structure.value} port wired to a "
                                                    f"{target.width.value}-width row"))
                    continue
                rows[li] = replace(rows[li], kind="formula", input_name=None,
                                   expr=formula.RowRef(source, 0))
            else:
                data_input = inputs_by_name.get(source)
                if data_input is None:
                    diags.append(Diagnostic("E_DANGLING_PATH", path=f"wiring.{key}",
                                            message=f"{source!r} is not a data input"))
                    continue
                if data_input.structure is not port.structure:
                    diags.append(Diagnostic("E_STRUCTURE_MISMATCH", path=f"wiring.{key}",
                                            message=f"{port.structure.value} port wired to "
                                                    f"{data_input.structure.value} input {source!r}"))
                    continue
                rows[li] = replace(rows[li], input_name=source)
                landing_of[source] = landing_path
        for key in sorted(skeleton.wiring):
            head, _, port_name = key.partition(".")
            if head == info.name and port_name not in {p.name for p in comp.ports}:
                diags.append(Diagnostic("E_UNKNOWN_PORT", path=f"wiring.{key}", message=port_name))

    if has_errors(diags):
        return None, sort_diagnostics(diags)

    # resolve and type everything against the full flat scope
    types = _infer_row_types(rows)
    scope = [
        ScopeRow(r.path, i, r.width or Width.FULL, types.get(r.path, ValueType.NUMBER))
        for i, r in enumerate(rows)
        if r.is_value_row()
    ]
    for i, r in enumerate(rows):
        r = replace(r, index=i)
        if r.kind == "input":
            r = replace(r, value_type=ValueType.NUMBER)
        elif r.kind == "formula" and r.expr is not None:
            analyzed, expr_diags = formula.analyze(r.expr, scope, position=i)
            if r.width is Width.SINGLE and analyzed is not None:
                for node in formula.walk(analyzed.root):
                    if isinstance(node, formula.ResolvedRef) and node.width is not Width.SINGLE:
                        expr_diags.append(Diagnostic("E_STRUCTURE_MISMATCH", path=r.path,
                                                     message=f"single-column row reads the "
                                                             f"period grid via @{node.label}"))
                    if isinstance(node, formula.Builtin) and node.name == "PERIOD":
                        expr_diags.append(Diagnostic("E_STRUCTURE_MISMATCH", path=r.path,
                                                     message="PERIOD has no meaning in a "
                                                             "single-column row"))
            if expr_diags:
                diags.extend(replace(d, path=f"{r.path}: {d.path}" if d.path else r.path)
                             for d in expr_diags)
            elif analyzed is not None:
                r = replace(r, resolved=analyzed, value_type=analyzed.result_type)
        rows[i] = r

    checks: list[AssembledCheck] = []
    for check in skeleton.checks:
        analyzed, expr_diags = formula.analyze(check.expr, scope, position=None)
        if expr_diags:
            diags.extend(replace(d, path=f"checks.{check.name}: {d.path}" if d.path else
                                 f"checks.{check.name}") for d in expr_diags)
            continue
        assert analyzed is not None
        if analyzed.result_type is not ValueType.BOOLEAN:
            diags.append(Diagnostic("E_TYPE_MISMATCH", path=f"checks.{check.name}",
                                    message="checks must be boolean"))
            continue
        checks.append(AssembledCheck(check.name, check.expr, analyzed))

    if has_errors(diags):
        return None, sort_diagnostics(diags)

    inputs = tuple(
        AssembledInput(d.name, d.structure, landing_of.get(d.name)) for d in skeleton.data_inputs
    )
    linked = LinkedSkeleton(skeleton.name, tuple(rows), inputs, tuple(checks), tuple(infos))
    return linked, sort_diagnostics(diags)


# --------------------------------------------------------------------------
# Completion


def complete(model: Model, store) -> tuple[AssembledModel | None, list[Diagnostic]]:
    """Merge the model's completion data onto its linked skeleton."""
    diags: list[Diagnostic] = []
    try:
        skeleton = store.get(model.skeleton)
    except Exception:
        diags.append(Diagnostic("E_DANGLING_CHILD", path="skeleton", message=model.skeleton))
        return None, diags
    if not isinstance(skeleton, Skeleton):
        diags.append(Diagnostic("E_KIND_MISMATCH", path="skeleton",
                                message=f"model must reference a skeleton"))
        return None, diags
    linked, link_diags = link(skeleton, store)
    diags.extend(link_diags)
    if linked is None:
        return None, sort_diagnostics(diags)

    rows = list(linked.rows)
    by_path = {r.path: i for i, r in enumerate(rows)}

    for path, (start, end) in sorted(model.special_widths.items()):
        i = by_path.get(path)
        if i is None or not rows[i].is_value_row():
            diags.append(Diagnostic("E_DANGLING_PATH", path=f"special_widths.{path}"))
            continue
        if rows[i].width is not Width.SPECIAL:
            diags.append(Diagnostic("E_DANGLING_PATH", path=f"special_widths.{path}",
                                    message="row is not special-width"))
            continue
        n = model.gen_params.n_periods
        if not (1 <= start <= end <= n):
            diags.append(Diagnostic("E_SPECIAL_RANGE", path=f"special_widths.{path}",
                                    message=f"{start}..{end} outside 1..{n}"))
            continue
        rows[i] = replace(rows[i], special=(start, end))
    for i, r in enumerate(rows):
        if r.width is Width.SPECIAL and r.special is None:
            diags.append(Diagnostic("E_SPECIAL_MISSING", path=r.path))

    for path, fmt in sorted(model.formats.items()):
        i = by_path.get(path)
        if i is None or not rows[i].is_value_row():
            diags.append(Diagnostic("E_DANGLING_PATH", path=f"formats.{path}"))
            continue
        rows[i] = replace(rows[i], fmt=fmt)

    instance_names = {info.name for info in linked.instances}
    sheet_of: dict[str, str] = {}
    for inst, sheet in sorted(model.sheet_assignment.items()):
        if inst not in instance_names:
            diags.append(Diagnostic("E_DANGLING_PATH", path=f"sheet_assignment.{inst}"))
            continue
        sheet_of[inst] = sheet
    calc_sheets: list[str] = []
    for info in linked.instances:
        sheet = sheet_of.get(info.name, DEFAULT_SHEET)
        if sheet not in calc_sheets:
            calc_sheets.append(sheet)
    for i, r in enumerate(rows):
        rows[i] = replace(r, sheet=sheet_of.get(r.instance, DEFAULT_SHEET))

    input_names = {d.name for d in linked.inputs}
    n = model.gen_params.n_periods
    for si, scenario in enumerate(model.scenarios):
        for name in sorted(input_names - set(scenario.values)):
            diags.append(Diagnostic("E_SCENARIO_INCOMPLETE", path=f"scenarios[{si}].values.{name}",
                                    message=f"scenario {scenario.name!r} has no value for {name!r}"))
        for name in sorted(set(scenario.values) - input_names):
            diags.append(Diagnostic("E_SCENARIO_UNKNOWN_INPUT", path=f"scenarios[{si}].values.{name}"))
        for name, value in sorted(scenario.values.items()):
            if name not in input_names:
                continue
            structure = next(d.structure for d in linked.inputs if d.name == name)
            if structure is Structure.SCALAR and isinstance(value, tuple):
                diags.append(Diagnostic("E_STRUCTURE_MISMATCH",
                                        path=f"scenarios[{si}].values.{name}",
                                        message="scalar input takes a single number"))
            elif isinstance(value, tuple) and len(value) > n:
                diags.append(Diagnostic("E_SCENARIO_LENGTH", path=f"scenarios[{si}].values.{name}",
                                        message=f"{len(value)} values for {n} periods"))

    value_paths = {r.path for r in rows if r.is_value_row()}
    for ri, report in enumerate(model.reports):
        for ii, item in enumerate(report.items):
            if isinstance(item, ReportRow) and item.path not in value_paths:
                diags.append(Diagnostic("E_DANGLING_PATH", path=f"reports[{ri}].items[{ii}]",
                                        message=item.path))
    for ci, chart in enumerate(model.charts):
        for si_, path in enumerate(chart.series):
            if path not in value_paths:
                diags.append(Diagnostic("E_DANGLING_PATH", path=f"charts[{ci}].series[{si_}]",
                                        message=path))
    reserved = set(elements.RESERVED_SHEETS) | {r.name for r in model.reports} | \
        {c.name for c in model.charts}
    for sheet in calc_sheets:
        if sheet != DEFAULT_SHEET and sheet in reserved:
            diags.append(Diagnostic("E_SHEET_RESERVED", path=f"sheet_assignment",
                                    message=sheet))

    if has_errors(diags):
        return None, sort_diagnostics(diags)

    assembled = AssembledModel(
        name=model.name,
        rows=tuple(rows),
        inputs=linked.inputs,
        checks=linked.checks,
        scenarios=model.scenarios,
        gen_params=model.gen_params,
        reports=model.reports,
        charts=model.charts,
        calc_sheets=tuple(calc_sheets),
        instances=linked.instances,
        skeleton_version=model.skeleton,
    )
    return assembled, sort_diagnostics(diags)


# --------------------------------------------------------------------------
# Dependency graph


@dataclass(frozen=True)
class DependencyGraph:
    order: tuple[str, ...]
    same_period: tuple[tuple[str, str], ...]  # (dependency, dependent)
    prior_period: tuple[tuple[str, str], ...]


def dependency_graph(assembled: AssembledModel) -> DependencyGraph:
    """Evaluation order for the flat rows.

    Same-period edges must form a DAG; prior-period edges never constrain
    the order because the previous period is complete before the current
    one starts.  Raises AssemblyError(E_CYCLE) listing the cycle — defense
    in depth, unreachable when resolution's forward-row rule held.
    """
    value_rows = [r for r in assembled.rows if r.is_value_row()]
    order_index = {r.path: i for i, r in enumerate(value_rows)}
    same: list[tuple[str, str]] = []
    prior: list[tuple[str, str]] = []
    succ: dict[str, list[str]] = {r.path: [] for r in value_rows}
    degree: dict[str, int] = {r.path: 0 for r in value_rows}
    for r in value_rows:
        if r.resolved is None:
            continue
        for node in formula.walk(r.resolved.root):
            if isinstance(node, formula.ResolvedRef):
                edge = (node.label, r.path)
                if node.offset == 0:
                    same.append(edge)
                    succ[node.label].append(r.path)
                    degree[r.path] += 1
                else:
                    prior.append(edge)

    heap = [order_index[p] for p, d in degree.items() if d == 0]
    heapify(heap)
    out: list[str] = []
    while heap:
        path = value_rows[heappop(heap)].path
        out.append(path)
        for nxt in succ[path]:
            degree[nxt] -= 1
            if degree[nxt] == 0:
                heappush(heap, order_index[nxt])
    if len(out) != len(value_rows):
        stuck = sorted((p for p, d in degree.items() if d > 0), key=order_index.get)
        raise AssemblyError(f"same-period dependency cycle through {', '.join(stuck)}",
                            "E_CYCLE", cycle=tuple(stuck))
    return DependencyGraph(tuple(out), tuple(same), tuple(prior))


# --------------------------------------------------------------------------
# Child upgrade


def _expansion_paths(component: Component, store, instance: str) -> set[str]:
    rows, _ = expand(component, store, prefix=f"{instance}.")
    return {r.path for r in rows if r.is_value_row()}


def upgrade_child(parent: Element, old: str, new: str, store) -> tuple[Element, list[str]]:
    """Swap a child version reference and drop the parent's keyed overrides
    that no longer resolve; everything still relevant is retained.

    Returns the rewritten parent (unsaved) plus the discarded paths.
    """
    try:
        old_element = store.get(old)
        new_element = store.get(new)
    except Exception:
        raise AssemblyError(f"old or new child version not in store", "E_UNKNOWN_VERSION") from None
    if type(old_element) is not type(new_element):
        raise AssemblyError(f"{new} is a {kind_name(new_element)}, expected {kind_name(old_element)}",
                            "E_KIND_MISMATCH")
    discarded: list[str] = []

    if isinstance(parent, Component):
        if not any(e.child == old for e in parent.embeds):
            raise AssemblyError(f"no embed references {old}", "E_NOT_REFERENCED")
        new_child: Component = new_element
        new_ports = {p.name for p in new_child.ports}
        embeds = []
        swapped_names = set()
        for i, embed in enumerate(parent.embeds):
            if embed.child != old:
                embeds.append(embed)
                continue
            swapped_names.add(embed.instance)
            bindings = {}
            for port, target in sorted(embed.bindings.items()):
                if port in new_ports:
                    bindings[port] = target
                else:
                    discarded.append(f"embeds[{i}].bindings.{port}")
            embeds.append(replace(embed, child=new, bindings=bindings))
        outputs = []
        new_outputs = set(new_child.outputs)
        for i, out in enumerate(parent.outputs):
            head, _, rest = out.partition(".")
            if head in swapped_names and rest and rest not in new_outputs:
                discarded.append(f"outputs[{i}]")
            else:
                outputs.append(out)
        return replace(parent, embeds=tuple(embeds), outputs=tuple(outputs)), discarded

    if isinstance(parent, Skeleton):
        if not any(i.component == old for i in parent.instances):
            raise AssemblyError(f"no instance references {old}", "E_NOT_REFERENCED")
        new_comp: Component = new_element
        new_ports = {p.name for p in new_comp.ports}
        new_outputs = set(new_comp.outputs)
        affected = {i.name for i in parent.instances if i.component == old}
        valid_paths: set[str] = set()
        for inst in parent.instances:
            comp = new_comp if inst.component == old else store.get(inst.component)
            valid_paths |= _expansion_paths(comp, store, inst.name)
        instances = tuple(
            replace(i, component=new) if i.component == old else i for i in parent.instances
        )
        wiring = {}
        for key, source in sorted(parent.wiring.items()):
            head, _, port = key.partition(".")
            if head in affected and port not in new_ports:
                discarded.append(f"wiring.{key}")
                continue
            src_head, _, src_rest = source.partition(".")
            if src_rest and src_head in affected and src_rest not in new_outputs:
                discarded.append(f"wiring.{key}")
                continue
            wiring[key] = source
        widths = {}
        for path, width in sorted(parent.widths.items()):
            if path.split(".", 1)[0] in affected and path not in valid_paths:
                discarded.append(f"widths.{path}")
            else:
                widths[path] = width
        return replace(parent, instances=instances, wiring=wiring, widths=widths), discarded

    if isinstance(parent, Model):
        if parent.skeleton != old:
            raise AssemblyError(f"model does not reference skeleton {old}", "E_NOT_REFERENCED")
        new_skeleton: Skeleton = new_element
        valid_paths = set()
        instance_names = {i.name for i in new_skeleton.instances}
        for inst in new_skeleton.instances:
            try:
                comp = store.get(inst.component)
            except Exception:
                continue
            if isinstance(comp, Component):
                valid_paths |= _expansion_paths(comp, store, inst.name)
        special = {}
        for path, rng in sorted(parent.special_widths.items()):
            if path in valid_paths:
                special[path] = rng
            else:
                discarded.append(f"special_widths.{path}")
        formats = {}
        for path, fmt in sorted(parent.formats.items()):
            if path in valid_paths:
                formats[path] = fmt
            else:
                discarded.append(f"formats.{path}")
        assignment = {}
        for inst, sheet in sorted(parent.sheet_assignment.items()):
            if inst in instance_names:
                assignment[inst] = sheet
            else:
                discarded.append(f"sheet_assignment.{inst}")
        reports = []
        for i, report in enumerate(parent.reports):
            items = []
            for j, item in enumerate(report.items):
                if isinstance(item, ReportRow) and item.path not in valid_paths:
                    discarded.append(f"reports[{i}].items[{j}]")
                else:
                    items.append(item)
            reports.append(replace(report, items=tuple(items)))
        charts = []
        for i, chart in enumerate(parent.charts):
            series = []
            for j, path in enumerate(chart.series):
                if path in valid_paths:
                    series.append(path)
                else:
                    discarded.append(f"charts[{i}].series[{j}]")
            charts.append(replace(chart, series=tuple(series)))
        return (
            replace(parent, skeleton=new, special_widths=special, formats=formats,
                    sheet_assignment=assignment, reports=tuple(reports), charts=tuple(charts)),
            discarded,
        )

    raise TypeError(f"not an element: {parent!r}")
