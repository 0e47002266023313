from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from bauplan import LocalObjectStore, init_catalog  # noqa: E402


@pytest.fixture
def store(tmp_path):
    return LocalObjectStore(tmp_path / "warehouse")


@pytest.fixture
def catalog_store(tmp_path):
    """Store with an initialized catalog; main points at the root commit."""
    s = LocalObjectStore(tmp_path / "warehouse")
    init_catalog(s, author="tester")
    return s


def assert_rs_equal(actual, expected):
    """Value- and type-level ResultSet equality (1 != 1.0 here)."""
    assert actual.schema == expected.schema, (
        f"schemas differ:\n  {actual.schema}\n  {expected.schema}")
    assert len(actual.rows) == len(expected.rows), (
        f"row counts differ: {len(actual.rows)} vs {len(expected.rows)}")
    for i, (a_row, e_row) in enumerate(zip(actual.rows, expected.rows)):
        assert len(a_row) == len(e_row), f"row {i} arity differs"
        for j, (a, e) in enumerate(zip(a_row, e_row)):
            assert type(a) is type(e), (
                f"row {i} col {j}: type {type(a).__name__} vs "
                f"{type(e).__name__} ({a!r} vs {e!r})")
            assert a == e, f"row {i} col {j}: {a!r} != {e!r}"
