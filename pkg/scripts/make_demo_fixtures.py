"""Rebuild the checked-in demo fixture files and the golden grid.

The element files embed content-hash version references, so any change to
canonical serialization must be followed by a rerun of this script:

    python3 scripts/make_demo_fixtures.py
"""
from __future__ import annotations

import sys
import tempfile
from datetime import date
from pathlib import Path

from ringforge import documents, elements as el, formula as f, grid
from ringforge.assemble import complete
from ringforge.store import VersionStore, version_id

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures" / "demo"


def demo_elements():
    sales = el.Component(
        "Sales",
        ports=(el.Port("price", el.Structure.SERIES), el.Port("volume", el.Structure.SERIES)),
        rows=(
            el.Row("Price", el.InputRow("price")),
            el.Row("Volume", el.InputRow("volume")),
            el.Row("Revenue", el.Formula(f.parse("@Price * @Volume"))),
        ),
        outputs=("Revenue",),
        doc=el.Documentation(
            notes="Unit price times unit volume.",
            databook_entry="Sales: revenue derived from price and volume series.",
        ),
    )
    cash = el.Component(
        "Cash",
        ports=(el.Port("inflow", el.Structure.SERIES),),
        rows=(
            el.Row("Inflow", el.InputRow("inflow")),
            el.Row("Opening", el.Formula(f.parse("@Closing[-1]"))),
            el.Row("Closing", el.Formula(f.parse("@Opening + @Inflow"))),
        ),
        outputs=("Closing",),
        doc=el.Documentation(
            notes="Simple cumulative cash balance.",
            databook_entry="Cash: opening balance rolls forward from the prior closing.",
        ),
    )
    sales_id, cash_id = version_id(sales), version_id(cash)
    widths = {
        path: f.Width.FULL
        for path in ("sales.Price", "sales.Volume", "sales.Revenue",
                     "cash.Inflow", "cash.Opening", "cash.Closing")
    }
    skeleton = el.Skeleton(
        "SalesCash",
        instances=(el.Instance("sales", sales_id), el.Instance("cash", cash_id)),
        wiring={"sales.price": "price", "sales.volume": "volume", "cash.inflow": "sales.Revenue"},
        data_inputs=(el.DataInput("price", el.Structure.SERIES),
                     el.DataInput("volume", el.Structure.SERIES)),
        widths=widths,
        checks=(el.Check("closing_movement",
                         f.parse("@cash.Closing - @cash.Opening = @sales.Revenue")),),
        doc=el.Documentation(
            notes="Sales feeding a cash balance.",
            databook_entry="Skeleton: sales revenue is the only cash inflow.",
        ),
    )
    model = el.Model(
        "demo",
        skeleton=version_id(skeleton),
        formats={"sales.Revenue": "#,##0"},
        scenarios=(
            el.Scenario("Base", {"price": 10.0, "volume": (100.0, 110.0, 121.0)}),
            el.Scenario("High", {"price": 12.0, "volume": (100.0, 110.0, 121.0)}),
        ),
        gen_params=el.GenParams(date(2009, 1, 1), el.Periodicity.MONTHLY, 3),
        doc=el.Documentation(
            notes="Desk-scale end-to-end model.",
            databook_entry="Demo model: three monthly periods from 2009-01-01.",
        ),
    )
    return sales, cash, skeleton, model


def main() -> int:
    FIXTURES.mkdir(parents=True, exist_ok=True)
    sales, cash, skeleton, model = demo_elements()
    for name, element in [("sales", sales), ("cash", cash),
                          ("skeleton", skeleton), ("model", model)]:
        path = FIXTURES / f"{name}.json"
        path.write_text(el.dumps(element), "utf-8")
        print(f"{path}  {version_id(element)}")

    with tempfile.TemporaryDirectory() as tmp:
        store = VersionStore.create(tmp)
        at = "2009-01-01T00:00:00+00:00"
        for element in (sales, cash, skeleton, model):
            store.put_new(element, "demo", at)
        assembled, diags = complete(model, store)
        if assembled is None:
            for d in diags:
                print(d.render(), file=sys.stderr)
            return 1
        ir = grid.layout(assembled, model_version=version_id(model),
                         generated_at="2009-01-01T00:00:00+00:00")
        golden = FIXTURES / "model.grid.json"
        golden.write_bytes(documents.write_canonical_grid(ir))
        print(f"{golden}  (golden grid)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
