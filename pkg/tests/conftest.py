import json
from pathlib import Path

import pytest

DATA = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def vendor_tables():
    return json.loads((DATA / "vendor_tables.json").read_text())
