"""Voluptuous schemas for scenario files and emitted JSON documents."""

from __future__ import annotations

from collections.abc import Mapping
from dataclasses import MISSING, fields
import logging
from typing import Any

import voluptuous as vol

from .const import (
    DEFAULT_AIR_DENSITY,
    DEFAULT_END_MARGIN,
    DEFAULT_GRAVITY,
    DEFAULT_PLANT_DT,
    DEFAULT_REPLAN_DT,
    SCHEMA_VERSION_COMPARISON,
    SCHEMA_VERSION_REPORT,
    SCHEMA_VERSION_SCENARIO,
    PlannerKind,
)
from .errors import ScenarioError
from .models import PathCostWeights, PlannerConfig, SpeedCostWeights, VehicleParams
from .validation import (
    EVENT_SPEED_LIMIT,
    EVENT_STOP_WALL,
    VALID_EVENT_TYPES,
    has_distinct_waypoints,
    is_finite_number,
    is_strictly_increasing,
)

_LOGGER = logging.getLogger(__name__)


def _validate_finite(value: Any) -> float:
    """Coerce to a finite float."""
    number = vol.Coerce(float)(value)
    if not is_finite_number(number):
        raise vol.Invalid("Value must be a finite number")
    return number


NON_NEGATIVE = vol.All(_validate_finite, vol.Range(min=0))
POSITIVE = vol.All(_validate_finite, vol.Range(min=0, min_included=False))
FINITE = vol.All(_validate_finite)


def _validate_waypoints(value: Any) -> list[list[float]]:
    """Validate a route polyline of [x, y] pairs."""
    if not isinstance(value, list):
        raise vol.Invalid("Waypoints must be a list of [x, y] pairs")
    points: list[list[float]] = []
    for item in value:
        if not isinstance(item, list | tuple) or len(item) != 2:
            raise vol.Invalid("Each waypoint must be an [x, y] pair")
        points.append([_validate_finite(item[0]), _validate_finite(item[1])])
    if not has_distinct_waypoints(points):
        raise vol.Invalid("Route needs two or more distinct waypoints")
    return points


def _validate_slope_profile(value: Any) -> dict[str, list[float]]:
    """Validate matching station and grade lists."""
    if not isinstance(value, Mapping):
        raise vol.Invalid("Slope profile must be a mapping")
    stations = [_validate_finite(v) for v in value.get("stations_m", [])]
    grades = [_validate_finite(v) for v in value.get("grades_rad", [])]
    if len(stations) < 2 or len(stations) != len(grades):
        raise vol.Invalid("Slope profile needs two or more matching stations and grades")
    if not is_strictly_increasing(stations):
        raise vol.Invalid("Slope stations must be strictly increasing")
    if any(abs(g) >= 1.5707963267948966 for g in grades):
        raise vol.Invalid("Grades must stay within (-pi/2, pi/2)")
    return {"stations_m": stations, "grades_rad": grades}


def _field_validator(default: Any) -> Any:
    if isinstance(default, bool):
        return vol.Boolean()
    if isinstance(default, int):
        return vol.All(vol.Coerce(int), vol.Range(min=1))
    return FINITE


def _dataclass_schema(cls: type, *, skip: tuple[str, ...] = ()) -> dict[Any, Any]:
    """Optional keys with the dataclass defaults; the dataclass checks ranges."""
    schema: dict[Any, Any] = {}
    for item in fields(cls):
        if item.name in skip or item.default is MISSING:
            continue
        schema[vol.Optional(item.name, default=item.default)] = _field_validator(item.default)
    return schema


VEHICLE_SCHEMA = vol.Schema(_dataclass_schema(VehicleParams))
PATH_WEIGHTS_SCHEMA = vol.Schema(_dataclass_schema(PathCostWeights))
SPEED_WEIGHTS_SCHEMA = vol.Schema(_dataclass_schema(SpeedCostWeights))
PLANNER_SCHEMA = vol.Schema(
    {
        **_dataclass_schema(PlannerConfig, skip=("path_weights", "speed_weights")),
        vol.Optional("path_weights", default={}): PATH_WEIGHTS_SCHEMA,
        vol.Optional("speed_weights", default={}): SPEED_WEIGHTS_SCHEMA,
    }
)

ENVIRONMENT_SCHEMA = vol.Schema(
    {
        vol.Optional("air_density_kgm3", default=DEFAULT_AIR_DENSITY): NON_NEGATIVE,
        vol.Optional("gravity_ms2", default=DEFAULT_GRAVITY): POSITIVE,
        vol.Optional("slope_profile", default=None): vol.Any(None, _validate_slope_profile),
    }
)

ROAD_SCHEMA = vol.Schema(
    {
        vol.Optional("l_min_m", default=-1.75): FINITE,
        vol.Optional("l_max_m", default=1.75): FINITE,
    }
)

INITIAL_SCHEMA = vol.Schema(
    {
        vol.Optional("s_m", default=0.0): NON_NEGATIVE,
        vol.Optional("l_m", default=0.0): FINITE,
        vol.Optional("v_ms", default=0.0): NON_NEGATIVE,
        vol.Optional("a_ms2", default=0.0): FINITE,
    }
)

OBSTACLE_SCHEMA = vol.Schema(
    {
        vol.Required("id"): vol.All(str, vol.Length(min=1)),
        vol.Required("s_m"): FINITE,
        vol.Optional("l_m", default=0.0): FINITE,
        vol.Optional("length_m", default=4.6): NON_NEGATIVE,
        vol.Optional("width_m", default=1.8): NON_NEGATIVE,
        vol.Optional("speed_ms", default=0.0): NON_NEGATIVE,
    }
)


def _validate_event(value: Any) -> dict[str, Any]:
    """Validate a timed directive by its type."""
    if not isinstance(value, Mapping):
        raise vol.Invalid("Event must be a mapping")
    kind = value.get("type")
    if kind not in VALID_EVENT_TYPES:
        raise vol.Invalid(f"Event type must be one of {sorted(VALID_EVENT_TYPES)}")
    base = {vol.Required("type"): kind, vol.Optional("t_s", default=0.0): NON_NEGATIVE}
    if kind == EVENT_SPEED_LIMIT:
        base[vol.Required("v_limit_ms")] = POSITIVE
    elif kind == EVENT_STOP_WALL:
        base[vol.Required("s_m")] = NON_NEGATIVE
    return vol.Schema(base)(dict(value))


def _validate_timing(value: dict[str, Any]) -> dict[str, Any]:
    """Cross-field timing and road checks."""
    if value["plant_dt_s"] > value["replan_dt_s"]:
        raise vol.Invalid("plant_dt_s must not exceed replan_dt_s", path=["plant_dt_s"])
    road = value["road"]
    if road["l_min_m"] >= road["l_max_m"]:
        raise vol.Invalid("l_min_m must be below l_max_m", path=["road", "l_min_m"])
    ids = [obstacle["id"] for obstacle in value["obstacles"]]
    if len(ids) != len(set(ids)):
        raise vol.Invalid("Obstacle ids must be unique", path=["obstacles"])
    return value


SCENARIO_SCHEMA = vol.All(
    vol.Schema(
        {
            vol.Optional("schema_version", default=SCHEMA_VERSION_SCENARIO): vol.All(
                vol.Coerce(int), vol.In([SCHEMA_VERSION_SCENARIO])
            ),
            vol.Required("name"): vol.All(str, vol.Length(min=1)),
            vol.Optional("description", default=""): str,
            vol.Required("route"): vol.Schema({vol.Required("waypoints"): _validate_waypoints}),
            vol.Optional("road", default={}): ROAD_SCHEMA,
            vol.Optional("vehicle", default={}): VEHICLE_SCHEMA,
            vol.Optional("environment", default={}): ENVIRONMENT_SCHEMA,
            vol.Optional("planner", default={}): PLANNER_SCHEMA,
            vol.Optional("initial", default={}): INITIAL_SCHEMA,
            vol.Optional("speed_limit_ms", default=27.0): POSITIVE,
            vol.Optional("obstacles", default=[]): [OBSTACLE_SCHEMA],
            vol.Optional("events", default=[]): [_validate_event],
            vol.Required("duration_s"): POSITIVE,
            vol.Optional("plant_dt_s", default=DEFAULT_PLANT_DT): POSITIVE,
            vol.Optional("replan_dt_s", default=DEFAULT_REPLAN_DT): POSITIVE,
            vol.Optional("end_margin_m", default=DEFAULT_END_MARGIN): NON_NEGATIVE,
            vol.Optional("rng_seed", default=0): vol.All(vol.Coerce(int), vol.Range(min=0)),
        }
    ),
    _validate_timing,
)


def _output_manifest(value: Any) -> dict[str, Any]:
    """Validate the outputs manifest of a report."""
    return vol.Schema(
        {
            str: vol.Schema(
                {
                    vol.Required("columns"): [str],
                    vol.Required("schema_version"): vol.Coerce(int),
                }
            )
        }
    )(value)


REPORT_SCHEMA = vol.Schema(
    {
        vol.Required("schema_version"): vol.In([SCHEMA_VERSION_REPORT]),
        vol.Required("scenario"): str,
        vol.Required("scenario_hash"): vol.All(str, vol.Length(min=64, max=64)),
        vol.Required("planner"): vol.In([kind.value for kind in PlannerKind]),
        vol.Required("energy"): dict,
        vol.Required("health"): dict,
        vol.Required("min_clearance_m"): vol.Any(None, FINITE),
        vol.Required("flags"): [str],
        vol.Required("outputs"): _output_manifest,
    },
    extra=vol.ALLOW_EXTRA,
)

COMPARISON_SCHEMA = vol.Schema(
    {
        vol.Required("schema_version"): vol.In([SCHEMA_VERSION_COMPARISON]),
        vol.Required("scenario_hash"): vol.All(str, vol.Length(min=64, max=64)),
        vol.Required("channels"): dict,
        vol.Required("decel_bins"): dict,
        vol.Required("accel_bins"): dict,
        vol.Required("headline"): dict,
        vol.Required("headline_bin"): str,
        vol.Required("flags"): [str],
        vol.Required("runs"): dict,
    },
    extra=vol.ALLOW_EXTRA,
)


def _field_path(err: vol.Invalid) -> str:
    return ".".join(str(part) for part in err.path)


_SECTIONS = ("road", "vehicle", "environment", "planner", "initial")


def _with_sections(raw: Mapping[str, Any]) -> dict[str, Any]:
    """Insert empty sections so nested defaults get filled in."""
    data = dict(raw)
    for section in _SECTIONS:
        if data.get(section) is None:
            data[section] = {}
    if isinstance(data["planner"], Mapping):
        planner = dict(data["planner"])
        for nested in ("path_weights", "speed_weights"):
            if planner.get(nested) is None:
                planner[nested] = {}
        data["planner"] = planner
    return data


def validate_scenario(raw: Mapping[str, Any]) -> dict[str, Any]:
    """Normalize a raw scenario mapping or raise ScenarioError naming the field."""
    try:
        return SCENARIO_SCHEMA(_with_sections(raw))
    except vol.MultipleInvalid as err:
        first = err.errors[0]
        raise ScenarioError(f"invalid scenario: {first.msg}", field=_field_path(first)) from err
    except vol.Invalid as err:
        raise ScenarioError(f"invalid scenario: {err.msg}", field=_field_path(err)) from err


def validate_document(schema: vol.Schema, data: Mapping[str, Any], name: str) -> dict[str, Any]:
    """Validate an emitted JSON document."""
    try:
        return schema(dict(data))
    except vol.Invalid as err:
        raise ScenarioError(f"{name} does not match its schema: {err}", field=_field_path(err)) from err
