"""CSV and JSON writers and loaders for run outputs."""

from __future__ import annotations

from collections.abc import Iterable, Mapping, Sequence
import csv
import io
import json
import logging
import math
from pathlib import Path
from typing import Any

import voluptuous as vol

from .const import (
    CSV_FLOAT_FORMAT,
    SCHEMA_VERSION_PROFILES,
    SCHEMA_VERSION_SWEEP,
    SCHEMA_VERSION_TRACE,
)
from .errors import ScenarioError
from .schemas import COMPARISON_SCHEMA, REPORT_SCHEMA, validate_document

_LOGGER = logging.getLogger(__name__)

# Output file names
TRACE_FILE = "trace.csv"
REPORT_FILE = "report.json"
REFLINE_FILE = "refline.csv"
PATH_FILE = "path.csv"
SPEED_FILE = "speed.csv"
HISTOGRAM_FILE = "histogram.csv"
POWER_FILE = "power.csv"
CYCLES_FILE = "cycles.csv"
COMPARISON_FILE = "comparison.json"
SWEEP_FILE = "sweep.csv"

TRACE_COLUMNS = (
    "t", "x", "y", "s", "l", "v", "a", "phase",
    "traction_w", "regen_w", "brake_w", "resistive_w",
)  # fmt: skip
REFLINE_COLUMNS = ("cycle", "s", "x", "y", "heading", "curvature")
PATH_COLUMNS = ("cycle", "s", "l", "dl", "ddl")
SPEED_COLUMNS = ("cycle", "t", "s", "v", "a", "jerk", "phase")
HISTOGRAM_COLUMNS = ("bin", "decel_fraction", "accel_fraction")
POWER_COLUMNS = ("s", "traction_w", "regen_w", "proxy")
CYCLES_COLUMNS = (
    "t",
    "s_origin",
    "phase",
    "path_dp_cost",
    "path_qp_status",
    "path_fallback",
    "path_primal_residual",
    "path_dual_residual",
    "path_objective",
    "path_dp_objective",
    "corridor_l_lo_max",
    "corridor_l_hi_min",
    "speed_dp_cost",
    "speed_qp_status",
    "speed_fallback",
    "speed_primal_residual",
    "speed_dual_residual",
    "speed_objective",
    "speed_coarse_objective",
    "st_s_hi_min",
    "smoothing_fallback",
    "error_code",
)
SWEEP_COLUMNS = (
    "param",
    "value",
    "scenario_hash",
    "ehmpp_regen_energy_j",
    "baseline_regen_energy_j",
    "regen_ratio",
    "headline_delta_points",
    "ehmpp_mean_cruise_power_dev_w",
    "baseline_mean_cruise_power_dev_w",
    "ehmpp_min_clearance_m",
    "baseline_min_clearance_m",
    "flags",
)

CSV_SCHEMAS: dict[str, tuple[tuple[str, ...], int]] = {
    TRACE_FILE: (TRACE_COLUMNS, SCHEMA_VERSION_TRACE),
    REFLINE_FILE: (REFLINE_COLUMNS, SCHEMA_VERSION_PROFILES),
    PATH_FILE: (PATH_COLUMNS, SCHEMA_VERSION_PROFILES),
    SPEED_FILE: (SPEED_COLUMNS, SCHEMA_VERSION_PROFILES),
    HISTOGRAM_FILE: (HISTOGRAM_COLUMNS, SCHEMA_VERSION_PROFILES),
    POWER_FILE: (POWER_COLUMNS, SCHEMA_VERSION_PROFILES),
    CYCLES_FILE: (CYCLES_COLUMNS, SCHEMA_VERSION_TRACE),
    SWEEP_FILE: (SWEEP_COLUMNS, SCHEMA_VERSION_SWEEP),
}


def format_value(value: Any) -> str:
    """Render one CSV cell."""
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float | int):
        return format(float(value), CSV_FLOAT_FORMAT)
    if hasattr(value, "value"):
        return str(value.value)
    return str(value)


def render_csv(columns: Sequence[str], rows: Iterable[Mapping[str, Any]]) -> str:
    """CSV text with a header row and LF line endings."""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([format_value(row.get(column)) for column in columns])
    return buffer.getvalue()


def _jsonable(value: Any) -> Any:
    """Replace non-finite floats with None and tuples with lists."""
    if isinstance(value, Mapping):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, list | tuple):
        return [_jsonable(v) for v in value]
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if hasattr(value, "item") and callable(value.item):
        return _jsonable(value.item())
    return value


def render_json(data: Mapping[str, Any]) -> str:
    """Canonical JSON text: sorted keys, two-space indent, trailing newline."""
    return json.dumps(_jsonable(data), indent=2, sort_keys=True, allow_nan=False) + "\n"


def read_csv(path: Path) -> tuple[list[str], list[dict[str, str]]]:
    """Header and rows of a CSV file."""
    with path.open(encoding="utf-8", newline="") as handle:
        reader = csv.DictReader(handle)
        rows = list(reader)
        return list(reader.fieldnames or []), rows


def load_json(path: Path) -> dict[str, Any]:
    """Parse a JSON output file."""
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as err:
        raise ScenarioError(f"cannot read {path}: {err}", field=path.name) from err
    if not isinstance(data, dict):
        raise ScenarioError(f"{path} must hold a JSON object", field=path.name)
    return data


def load_report(path: Path) -> dict[str, Any]:
    """Load report.json and check it and every CSV it lists."""
    report = validate_document(REPORT_SCHEMA, load_json(path), REPORT_FILE)
    for name, entry in report["outputs"].items():
        columns, _rows = read_csv(path.parent / name)
        if columns != list(entry["columns"]):
            raise ScenarioError(f"{name} header does not match the manifest", field=name)
    return report


def load_comparison(path: Path) -> dict[str, Any]:
    """Load comparison.json and check its schema."""
    return validate_document(COMPARISON_SCHEMA, load_json(path), COMPARISON_FILE)


class OutputStore:
    """Write the files of one output directory and keep their manifest."""

    def __init__(self, directory: Path) -> None:
        """Initialize the store, creating the directory."""
        self.directory = directory
        try:
            directory.mkdir(parents=True, exist_ok=True)
        except OSError as err:
            raise ScenarioError(f"cannot create output directory {directory}: {err}", field="out") from err
        self._manifest: dict[str, dict[str, Any]] = {}

    @property
    def manifest(self) -> dict[str, dict[str, Any]]:
        """Columns and schema version of every CSV written so far."""
        return {name: dict(entry) for name, entry in sorted(self._manifest.items())}

    def _write(self, name: str, text: str) -> Path:
        path = self.directory / name
        try:
            path.write_text(text, encoding="utf-8", newline="")
        except OSError as err:
            raise ScenarioError(f"cannot write {path}: {err}", field="out") from err
        _LOGGER.debug("Wrote %s", path)
        return path

    def write_csv(self, name: str, rows: Iterable[Mapping[str, Any]]) -> Path:
        """Write a known CSV output and record it in the manifest."""
        columns, version = CSV_SCHEMAS[name]
        self._manifest[name] = {"columns": list(columns), "schema_version": version}
        return self._write(name, render_csv(columns, rows))

    def write_json(self, name: str, data: Mapping[str, Any], schema: vol.Schema | None = None) -> Path:
        """Write a JSON document, validating it first when a schema is given."""
        if schema is not None:
            validate_document(schema, _jsonable(data), name)
        return self._write(name, render_json(data))
