from __future__ import annotations

from pathlib import Path

import pytest

from ringforge import elements
from ringforge.assemble import complete
from ringforge.grid import layout
from ringforge.store import VersionStore

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures" / "demo"

DEMO_AT = "2009-01-01T00:00:00+00:00"
DEMO_CHECK_AT = "2009-01-02T00:00:00+00:00"
DEMO_EPOCH = "2009-06-01T12:00:00+00:00"


def load_demo_elements() -> dict[str, elements.Element]:
    return {
        name: elements.load_file(FIXTURES / f"{name}.json")
        for name in ("sales", "cash", "skeleton", "model")
    }


@pytest.fixture()
def demo():
    return load_demo_elements()


@pytest.fixture()
def demo_store(tmp_path, demo):
    """Store holding the demo, everything checked off, refs set."""
    store = VersionStore.create(tmp_path / "store")
    ids = {}
    for name in ("sales", "cash", "skeleton", "model"):
        element = demo[name]
        vid = store.put_new(element, "author", DEMO_AT)
        store.check_off(vid, "checker", DEMO_CHECK_AT)
        store.set_ref(element.name, vid)
        ids[name] = vid
    return store, ids


@pytest.fixture()
def demo_assembled(demo_store, demo):
    store, ids = demo_store
    assembled, diags = complete(demo["model"], store)
    assert assembled is not None, diags
    return assembled


@pytest.fixture()
def demo_ir(demo_assembled, demo_store):
    _, ids = demo_store
    return layout(demo_assembled, model_version=ids["model"], generated_at=DEMO_EPOCH)
