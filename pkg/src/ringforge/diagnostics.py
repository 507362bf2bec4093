"""Diagnostic records, the code registry, and the generation gate.

Every validity or quality finding produced anywhere in the pipeline is a
Diagnostic carrying a code from the registry below.  E_* codes are errors
(the content cannot be compiled), W_* codes are warnings (legal but
discouraged).  Warnings never block generation unless strict mode is on.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum


class Severity(Enum):
    WARNING = "warning"
    ERROR = "error"


# code -> short description. The registry is the single source of truth for
# which codes exist; diagnostics with unregistered codes are rejected.
REGISTRY: dict[str, str] = {
    # element-local structure
    "E_BAD_LABEL": "identifier does not match [A-Za-z][A-Za-z0-9_]*",
    "E_DUPLICATE_LABEL": "row label used more than once in a component",
    "E_DUPLICATE_PORT": "port name declared more than once",
    "E_UNKNOWN_PORT": "input row names a port the component does not declare",
    "E_PORT_NOT_LANDED": "port has no input row landing it",
    "E_DUPLICATE_LANDING": "port is landed by more than one input row",
    "E_DANGLING_OUTPUT": "output does not name an existing value row",
    "E_DUPLICATE_INSTANCE": "instance name used more than once",
    "E_DUPLICATE_INPUT": "data input name declared more than once",
    "E_DUPLICATE_CHECK": "check name declared more than once",
    "E_DUPLICATE_SCENARIO": "scenario name declared more than once",
    "E_BAD_SHEET_NAME": "sheet name is empty, too long or contains forbidden characters",
    "E_SHEET_RESERVED": "sheet name collides with a reserved sheet",
    "E_SHEET_COLLISION": "two output sheets share one name",
    # formula language
    "E_PARSE": "formula text does not parse",
    "E_UNRESOLVED_REF": "reference does not name a visible value row",
    "E_FORWARD_ROW": "same-period reference to a row defined later",
    "E_OFFSET_ON_SINGLE": "period offset into a single-column row",
    "E_TYPE_MISMATCH": "operand or argument types do not fit the operator",
    # assembly
    "E_COMPONENT_CYCLE": "component embeds itself, directly or indirectly",
    "E_UNBOUND_PORT": "embedded component port has no binding",
    "E_BAD_BINDING": "binding names a port or target that does not exist",
    "E_UNWIRED_PORT": "instance port is not wired",
    "E_WIRE_FORWARD": "port wired to an instance that is not strictly earlier",
    "E_WIDTH_MISSING": "value row has no width entry",
    "E_STRUCTURE_MISMATCH": "scalar/series structure does not fit the target",
    "E_INPUT_MULTIPLY_WIRED": "data input wired to more than one port",
    "E_INPUT_UNUSED": "data input wired to no port",
    "E_DANGLING_PATH": "path does not resolve in the assembled skeleton",
    "E_SPECIAL_MISSING": "special-width row has no period range",
    "E_SPECIAL_RANGE": "special range falls outside 1..n_periods",
    "E_SCENARIO_INCOMPLETE": "scenario supplies no value for a data input",
    "E_SCENARIO_UNKNOWN_INPUT": "scenario values name an undeclared data input",
    "E_SCENARIO_LENGTH": "series value is longer than the period grid",
    "E_NO_SCENARIO": "model defines no scenario",
    "E_CYCLE": "same-period dependency cycle",
    # store and evaluation
    "E_INVALID_ELEMENT": "element fails local validation",
    "E_UNKNOWN_VERSION": "version id or ref is not in the store",
    "E_KIND_MISMATCH": "element kinds differ",
    "E_DANGLING_CHILD": "referenced child version is not in the store",
    "E_NOT_REFERENCED": "parent does not reference the given child version",
    "E_UNKNOWN_SCENARIO": "scenario name not defined by the model",
    "E_EVAL_CYCLE": "cell dependency cycle during evaluation",
    "E_VERSION_MISMATCH": "workbook records a different model version",
    "E_IO": "file could not be read or written",
    # warnings
    "W_CONSTANT_IN_FORMULA": "numeric constant other than 0/1 in a formula",
    "W_NO_DATABOOK_ENTRY": "element has an empty databook entry",
    "W_UNCHECKED": "element or a constituent has not been checked off",
    "W_NO_CHECKS": "skeleton defines no checks",
    "W_GROUP_DEPTH_CLAMPED": "embedding deeper than 7 outline levels",
}


@dataclass(frozen=True)
class Diagnostic:
    """One finding, locatable by (element, path, period)."""

    code: str
    element: str = ""
    path: str = ""
    period: int | None = None
    message: str = ""

    def __post_init__(self) -> None:
        if self.code not in REGISTRY:
            raise ValueError(f"unregistered diagnostic code: {self.code}")

    @property
    def severity(self) -> Severity:
        return Severity.ERROR if self.code.startswith("E_") else Severity.WARNING

    def render(self) -> str:
        loc = self.element
        if self.path:
            loc = f"{loc}:{self.path}" if loc else self.path
        if self.period is not None:
            loc = f"{loc}@p{self.period}"
        text = self.message or REGISTRY[self.code]
        return f"{self.code} {loc}: {text}" if loc else f"{self.code}: {text}"


def sort_diagnostics(diags: list[Diagnostic]) -> list[Diagnostic]:
    """Stable public ordering: by element, then path, then code."""
    return sorted(diags, key=lambda d: (d.element, d.path, d.code, d.period or 0))


def has_errors(diags: list[Diagnostic]) -> bool:
    return any(d.severity is Severity.ERROR for d in diags)


@dataclass(frozen=True)
class GateResult:
    ok: bool
    blocking: tuple[Diagnostic, ...]


def gate_generation(diags: list[Diagnostic], strict: bool = False) -> GateResult:
    """Decide whether generation may proceed.

    Errors always block; warnings block only under strict mode.
    """
    if strict:
        blocking = tuple(sort_diagnostics(list(diags)))
    else:
        blocking = tuple(d for d in sort_diagnostics(list(diags)) if d.severity is Severity.ERROR)
    return GateResult(ok=not blocking, blocking=blocking)
