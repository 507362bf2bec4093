"""ringforge: declarative templates compiled into safe spreadsheet workbooks.

Templates come in three kinds (components, skeletons, models), live in a
content-addressed version store with audit trails and check-off status, and
compile deterministically into an XLSX workbook, a canonical grid file, a
databook and a specification document.
"""

__version__ = "0.1.0"
