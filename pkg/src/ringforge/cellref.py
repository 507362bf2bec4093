"""A1 cell addressing, sheet-name quoting, serial dates and period stepping."""
from __future__ import annotations

import calendar
import re
from datetime import date

from ringforge.elements import Periodicity

_A1_RE = re.compile(r"(\$?)([A-Z]+)(\$?)([1-9][0-9]*)\Z")
_PLAIN_SHEET_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")

# day-zero of the 1900 serial date system as spreadsheets store it
_SERIAL_EPOCH = date(1899, 12, 30)


def col_letter(col: int) -> str:
    if col < 1:
        raise ValueError(f"column numbers start at 1, got {col}")
    out = ""
    while col:
        col, rem = divmod(col - 1, 26)
        out = chr(ord("A") + rem) + out
    return out


def col_number(letters: str) -> int:
    n = 0
    for c in letters:
        n = n * 26 + (ord(c) - ord("A") + 1)
    return n


def a1(row: int, col: int, abs_row: bool = False, abs_col: bool = False) -> str:
    return f"{'$' if abs_col else ''}{col_letter(col)}{'$' if abs_row else ''}{row}"


def parse_a1(text: str) -> tuple[int, int, bool, bool]:
    """-> (row, col, abs_row, abs_col)"""
    m = _A1_RE.match(text)
    if not m:
        raise ValueError(f"not an A1 reference: {text!r}")
    return int(m.group(4)), col_number(m.group(2)), bool(m.group(3)), bool(m.group(1))


def quote_sheet(name: str) -> str:
    if _PLAIN_SHEET_RE.match(name):
        return name
    return "'" + name.replace("'", "''") + "'"


def sheet_a1(sheet: str | None, row: int, col: int, abs_row: bool = False,
             abs_col: bool = False) -> str:
    ref = a1(row, col, abs_row, abs_col)
    return f"{quote_sheet(sheet)}!{ref}" if sheet else ref


def serial_date(d: date) -> int:
    return (d - _SERIAL_EPOCH).days


_MONTH_STEP = {Periodicity.MONTHLY: 1, Periodicity.QUARTERLY: 3, Periodicity.ANNUAL: 12}


def add_periods(start: date, periodicity: Periodicity, k: int) -> date:
    """Step k periods from start; day-of-month clamps to the month end."""
    months = start.year * 12 + (start.month - 1) + _MONTH_STEP[periodicity] * k
    year, month = divmod(months, 12)
    month += 1
    day = min(start.day, calendar.monthrange(year, month)[1])
    return date(year, month, day)


def period_dates(start: date, periodicity: Periodicity, n: int) -> list[date]:
    return [add_periods(start, periodicity, k) for k in range(n)]
