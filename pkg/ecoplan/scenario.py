"""Scenario model, fixture loading, identity hash and overrides."""

from __future__ import annotations

from collections.abc import Iterator, Mapping, Sequence
import copy
from dataclasses import dataclass
import hashlib
from importlib import resources
import json
import logging
from pathlib import Path
from typing import Any

import yaml

from .errors import ScenarioError
from .frenet_frame import GlobalPath
from .models import Environment, LongitudinalState, PlannerConfig, SlopeProfile, VehicleParams
from .schemas import validate_scenario
from .validation import EVENT_SPEED_LIMIT, EVENT_STOP_WALL, parse_assignment, strip_unit_suffix

_LOGGER = logging.getLogger(__name__)

FIXTURE_PACKAGE = "ecoplan.scenarios"
_YAML_SUFFIXES = (".yaml", ".yml")
# Slope profiles default to flat beyond the route end by this much
_SLOPE_TAIL_M = 500.0


@dataclass(frozen=True)
class ObstacleSpec:
    """Obstacle on the route, moving along s at constant speed and offset."""

    id: str
    s_m: float
    l_m: float = 0.0
    length_m: float = 4.6
    width_m: float = 1.8
    speed_ms: float = 0.0

    def s_at(self, t: float) -> float:
        """Route station of the obstacle centre at time t."""
        return self.s_m + self.speed_ms * t


@dataclass(frozen=True)
class SpeedLimitEvent:
    """Speed limit that applies from t_s on."""

    t_s: float
    v_limit_ms: float


@dataclass(frozen=True)
class StopWallEvent:
    """Stop line at route station s_m, active from t_s on."""

    t_s: float
    s_m: float


@dataclass(frozen=True, eq=False)
class Scenario:
    """Validated closed-loop scenario."""

    name: str
    description: str
    waypoints: tuple[tuple[float, float], ...]
    road_bounds: tuple[float, float]
    vehicle: VehicleParams
    environment: Environment
    planner: PlannerConfig
    initial_state: LongitudinalState
    initial_l_m: float
    speed_limit_ms: float
    obstacles: tuple[ObstacleSpec, ...]
    speed_events: tuple[SpeedLimitEvent, ...]
    stop_walls: tuple[StopWallEvent, ...]
    duration_s: float
    plant_dt_s: float
    replan_dt_s: float
    end_margin_m: float
    rng_seed: int
    document: Mapping[str, Any]

    @classmethod
    def from_mapping(cls, raw: Mapping[str, Any]) -> Scenario:
        """Validate a raw mapping and build the scenario."""
        data = validate_scenario(raw)
        section = "route"
        try:
            route = GlobalPath.from_points(data["route"]["waypoints"])
            env_data = data["environment"]
            slope = (
                SlopeProfile.from_dict(env_data["slope_profile"])
                if env_data["slope_profile"] is not None
                else SlopeProfile.flat(route.length_m + _SLOPE_TAIL_M)
            )
            section = "environment"
            environment = Environment(
                slope_profile=slope,
                air_density_kgm3=env_data["air_density_kgm3"],
                gravity_ms2=env_data["gravity_ms2"],
            )
            section = "vehicle"
            vehicle = VehicleParams.from_dict(data["vehicle"])
            section = "planner"
            planner = PlannerConfig.from_dict(data["planner"])
            section = "initial"
            initial = data["initial"]
            state = LongitudinalState(s_m=initial["s_m"], v_ms=initial["v_ms"], a_ms2=initial["a_ms2"])
        except ValueError as err:
            raise ScenarioError(f"invalid scenario: {err}", field=section) from err

        if state.s_m >= route.length_m:
            raise ScenarioError("initial station lies beyond the route", field="initial.s_m")
        events = data["events"]
        return cls(
            name=data["name"],
            description=data["description"],
            waypoints=tuple((float(x), float(y)) for x, y in data["route"]["waypoints"]),
            road_bounds=(data["road"]["l_min_m"], data["road"]["l_max_m"]),
            vehicle=vehicle,
            environment=environment,
            planner=planner,
            initial_state=state,
            initial_l_m=initial["l_m"],
            speed_limit_ms=data["speed_limit_ms"],
            obstacles=tuple(ObstacleSpec(**item) for item in data["obstacles"]),
            speed_events=tuple(
                sorted(
                    (
                        SpeedLimitEvent(t_s=e["t_s"], v_limit_ms=e["v_limit_ms"])
                        for e in events
                        if e["type"] == EVENT_SPEED_LIMIT
                    ),
                    key=lambda e: e.t_s,
                )
            ),
            stop_walls=tuple(
                StopWallEvent(t_s=e["t_s"], s_m=e["s_m"]) for e in events if e["type"] == EVENT_STOP_WALL
            ),
            duration_s=data["duration_s"],
            plant_dt_s=data["plant_dt_s"],
            replan_dt_s=data["replan_dt_s"],
            end_margin_m=data["end_margin_m"],
            rng_seed=data["rng_seed"],
            document=data,
        )

    @property
    def identity_hash(self) -> str:
        """SHA-256 of the canonical normalized document."""
        canonical = json.dumps(self.document, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    @property
    def route(self) -> GlobalPath:
        """Global path of the route."""
        return GlobalPath.from_points(self.waypoints)

    @property
    def route_length_m(self) -> float:
        """Route chord length."""
        return self.route.length_m

    def speed_limit_at(self, t: float) -> float:
        """Speed limit in force at time t."""
        limit = self.speed_limit_ms
        for event in self.speed_events:
            if event.t_s <= t:
                limit = event.v_limit_ms
        return limit

    def active_walls(self, t: float) -> list[float]:
        """Route stations of the stop walls active at time t."""
        return sorted(wall.s_m for wall in self.stop_walls if wall.t_s <= t)

    def to_dict(self) -> dict[str, Any]:
        """Normalized document."""
        return copy.deepcopy(dict(self.document))


def _leaf_paths(data: Mapping[str, Any], prefix: tuple[str, ...] = ()) -> Iterator[tuple[str, ...]]:
    for key, value in data.items():
        path = (*prefix, str(key))
        if isinstance(value, Mapping):
            yield from _leaf_paths(value, path)
        else:
            yield path


def _resolve_key(document: Mapping[str, Any], key: str) -> list[str | int]:
    """Dotted path, or the unique leaf named key (unit suffix optional)."""
    if "." in key:
        path: list[str | int] = []
        node: Any = document
        for part in key.split("."):
            if isinstance(node, list) and part.isdigit() and int(part) < len(node):
                path.append(int(part))
                node = node[int(part)]
            elif isinstance(node, Mapping) and part in node:
                path.append(part)
                node = node[part]
            else:
                raise ScenarioError(f"unknown override key {key!r}", field=key)
        return path
    matches = [
        p for p in _leaf_paths(document) if p[-1] == key or strip_unit_suffix(p[-1]) == key
    ]
    if len(matches) != 1:
        detail = "unknown" if not matches else "ambiguous"
        raise ScenarioError(f"{detail} override key {key!r}", field=key)
    return list(matches[0])


def apply_overrides(document: Mapping[str, Any], overrides: Sequence[str]) -> dict[str, Any]:
    """Apply ``key=value`` overrides; values are parsed as YAML scalars."""
    result = copy.deepcopy(dict(document))
    for text in overrides:
        try:
            key, value_text = parse_assignment(text)
        except ValueError as err:
            raise ScenarioError(str(err), field=text) from err
        try:
            value = yaml.safe_load(value_text)
        except yaml.YAMLError as err:
            raise ScenarioError(f"cannot parse override value {value_text!r}", field=key) from err
        path = _resolve_key(result, key)
        node: Any = result
        for part in path[:-1]:
            node = node[part]
        node[path[-1]] = value
        _LOGGER.debug("Override %s = %r", ".".join(str(p) for p in path), value)
    return result


def _read_document(path: Path) -> dict[str, Any]:
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as err:
        raise ScenarioError(f"cannot read scenario file {path}: {err}", field=None) from err
    try:
        data = yaml.safe_load(text) if path.suffix in _YAML_SUFFIXES else json.loads(text)
    except (yaml.YAMLError, json.JSONDecodeError) as err:
        raise ScenarioError(f"cannot parse scenario file {path}: {err}", field=None) from err
    if not isinstance(data, dict):
        raise ScenarioError(f"scenario file {path} must hold a mapping", field=None)
    return data


def list_fixtures() -> list[str]:
    """Names of the shipped fixture scenarios."""
    return sorted(
        Path(entry.name).stem
        for entry in resources.files(FIXTURE_PACKAGE).iterdir()
        if entry.name.endswith(".json")
    )


def load_document(source: str | Path) -> dict[str, Any]:
    """Raw document from a file path or a shipped fixture name."""
    path = Path(source)
    if path.exists():
        return _read_document(path)
    name = path.stem if path.suffix else str(source)
    fixture = resources.files(FIXTURE_PACKAGE) / f"{name}.json"
    if not fixture.is_file():
        raise ScenarioError(
            f"no scenario file or fixture named {str(source)!r} (fixtures: {', '.join(list_fixtures())})",
            field="scenario",
        )
    return json.loads(fixture.read_text(encoding="utf-8"))


def load_scenario(source: str | Path, overrides: Sequence[str] = ()) -> Scenario:
    """Load, override and validate a scenario."""
    raw = load_document(source)
    if overrides:
        raw = apply_overrides(validate_scenario(raw), overrides)
    scenario = Scenario.from_mapping(raw)
    _LOGGER.debug("Loaded scenario %s (%s)", scenario.name, scenario.identity_hash[:12])
    return scenario
