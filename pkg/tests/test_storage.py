"""Tests for output files."""

from __future__ import annotations

import json
import math

import numpy as np
import pytest

from ecoplan.const import PhaseLabel
from ecoplan.errors import ScenarioError
from ecoplan.storage import (
    HISTOGRAM_COLUMNS,
    HISTOGRAM_FILE,
    SPEED_FILE,
    OutputStore,
    format_value,
    load_json,
    read_csv,
    render_csv,
    render_json,
)


@pytest.mark.parametrize(
    ("value", "expected"),
    [
        (None, ""),
        (True, "true"),
        (False, "false"),
        (3, "3"),
        (0.1, "0.1"),
        (1.0 / 3.0, "0.3333333333"),
        (np.float64(2.5), "2.5"),
        (PhaseLabel.CRUISE, "cruise"),
        ("0.0-0.5", "0.0-0.5"),
    ],
)
def test_format_value(value, expected):
    assert format_value(value) == expected


def test_render_csv_uses_header_order_and_lf():
    text = render_csv(("a", "b"), [{"b": 2, "a": 1}, {"a": None}])
    assert text == "a,b\n1,2\n,\n"


def test_render_json_is_canonical():
    text = render_json({"b": math.nan, "a": (1, np.int64(2))})
    assert text.endswith("\n")
    assert json.loads(text) == {"a": [1, 2], "b": None}
    assert text.index('"a"') < text.index('"b"')


def test_store_records_manifest(tmp_path):
    store = OutputStore(tmp_path / "run")
    store.write_csv(HISTOGRAM_FILE, [{"bin": "0.0-0.5", "decel_fraction": 0.5, "accel_fraction": 0.0}])
    assert list(store.manifest) == [HISTOGRAM_FILE]
    assert store.manifest[HISTOGRAM_FILE]["columns"] == list(HISTOGRAM_COLUMNS)
    header, rows = read_csv(tmp_path / "run" / HISTOGRAM_FILE)
    assert header == list(HISTOGRAM_COLUMNS)
    assert rows == [{"bin": "0.0-0.5", "decel_fraction": "0.5", "accel_fraction": "0"}]


def test_store_rejects_unknown_csv(tmp_path):
    store = OutputStore(tmp_path)
    with pytest.raises(KeyError):
        store.write_csv("extra.csv", [])
    assert SPEED_FILE not in store.manifest


def test_load_json_errors(tmp_path):
    missing = tmp_path / "missing.json"
    with pytest.raises(ScenarioError) as info:
        load_json(missing)
    assert info.value.field == "missing.json"
    listing = tmp_path / "list.json"
    listing.write_text("[1, 2]", encoding="utf-8")
    with pytest.raises(ScenarioError):
        load_json(listing)
