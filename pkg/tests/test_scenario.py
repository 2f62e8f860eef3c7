"""Tests for scenario validation, loading and overrides."""

from __future__ import annotations

import json

import pytest
import yaml

from ecoplan.errors import ScenarioError
from ecoplan.scenario import Scenario, apply_overrides, list_fixtures, load_document, load_scenario
from ecoplan.schemas import validate_scenario
from ecoplan.validation import (
    has_distinct_waypoints,
    is_finite_number,
    is_strictly_increasing,
    parse_assignment,
    strip_unit_suffix,
)

MINIMAL = {
    "name": "minimal",
    "route": {"waypoints": [[0.0, 0.0], [300.0, 0.0]]},
    "duration_s": 10.0,
}


def test_validation_helpers():
    assert is_finite_number(1.5)
    assert not is_finite_number(float("nan"))
    assert not is_finite_number(True)
    assert is_strictly_increasing([0.0, 1.0, 2.0])
    assert not is_strictly_increasing([0.0, 0.0])
    assert has_distinct_waypoints([[0, 0], [1, 0]])
    assert not has_distinct_waypoints([[0, 0]])
    assert strip_unit_suffix("p_opt_w") == "p_opt"
    assert strip_unit_suffix("regen_decel_max_ms2") == "regen_decel_max"
    assert strip_unit_suffix("w1") == "w1"
    assert parse_assignment(" rng_seed = 3 ") == ("rng_seed", "3")
    with pytest.raises(ValueError):
        parse_assignment("=3")


def test_defaults_are_filled_in():
    data = validate_scenario(MINIMAL)
    assert data["road"] == {"l_min_m": -1.75, "l_max_m": 1.75}
    assert data["speed_limit_ms"] == 27.0
    assert data["rng_seed"] == 0
    assert data["vehicle"]["mass_kg"] == 1500.0
    assert data["planner"]["speed_weights"]["w_acc"] == 25.0


@pytest.mark.parametrize(
    ("patch", "field"),
    [
        ({"duration_s": -1.0}, "duration_s"),
        ({"route": {"waypoints": [[0.0, 0.0]]}}, "route.waypoints"),
        ({"road": {"l_min_m": 2.0, "l_max_m": 1.0}}, "road.l_min_m"),
        ({"plant_dt_s": 1.0, "replan_dt_s": 0.5}, "plant_dt_s"),
        ({"obstacles": [{"id": "a", "s_m": 10.0}, {"id": "a", "s_m": 20.0}]}, "obstacles"),
        ({"events": [{"type": "teleport", "t_s": 1.0}]}, "events.0"),
    ],
)
def test_invalid_fields_are_named(patch, field):
    with pytest.raises(ScenarioError) as info:
        validate_scenario({**MINIMAL, **patch})
    assert info.value.field == field
    assert info.value.as_dict()["error_code"] == "invalid_scenario"


def test_out_of_range_vehicle_parameter_is_a_scenario_error():
    with pytest.raises(ScenarioError) as info:
        Scenario.from_mapping({**MINIMAL, "vehicle": {"mass_kg": -5.0}})
    assert info.value.field == "vehicle"


def test_initial_station_beyond_route():
    with pytest.raises(ScenarioError) as info:
        Scenario.from_mapping({**MINIMAL, "initial": {"s_m": 500.0}})
    assert info.value.field == "initial.s_m"


def test_every_fixture_loads():
    names = list_fixtures()
    assert {"deceleration_rich", "cruise", "stop_wall", "avoidance", "empty_road"} <= set(names)
    for name in names:
        scenario = load_scenario(name)
        assert scenario.name == name
        assert len(scenario.identity_hash) == 64


def test_scenario_events():
    scenario = load_scenario("deceleration_rich")
    assert scenario.speed_limit_at(0.0) == 20.0
    assert scenario.speed_limit_at(6.0) == 12.0
    assert scenario.speed_limit_at(13.9) == 12.0
    assert scenario.speed_limit_at(59.0) == 20.0
    walls = load_scenario("stop_wall")
    assert walls.active_walls(0.0) == [200.0]


def test_identity_hash_tracks_content():
    a = Scenario.from_mapping(MINIMAL)
    b = Scenario.from_mapping(json.loads(json.dumps(MINIMAL)))
    c = Scenario.from_mapping({**MINIMAL, "rng_seed": 1})
    assert a.identity_hash == b.identity_hash
    assert a.identity_hash != c.identity_hash


def test_overrides_by_leaf_name_and_dotted_path():
    data = validate_scenario(MINIMAL)
    result = apply_overrides(data, ["p_opt=12000", "planner.speed_weights.w1=2", "rng_seed=9"])
    assert result["vehicle"]["p_opt_w"] == 12000
    assert result["planner"]["speed_weights"]["w1"] == 2
    assert result["rng_seed"] == 9
    assert data["rng_seed"] == 0


@pytest.mark.parametrize("override", ["w1=2", "no_such_key=1", "vehicle.wings=2", "novalue"])
def test_bad_overrides(override):
    with pytest.raises(ScenarioError):
        apply_overrides(validate_scenario(MINIMAL), [override])


def test_load_scenario_applies_overrides():
    scenario = load_scenario("cruise", ["speed_limit_ms=25", "rng_seed=4"])
    assert scenario.speed_limit_ms == 25.0
    assert scenario.rng_seed == 4


def test_yaml_and_json_files(tmp_path):
    yaml_file = tmp_path / "road.yaml"
    yaml_file.write_text(yaml.safe_dump(MINIMAL), encoding="utf-8")
    json_file = tmp_path / "road.json"
    json_file.write_text(json.dumps(MINIMAL), encoding="utf-8")
    assert load_scenario(yaml_file).identity_hash == load_scenario(json_file).identity_hash


def test_unreadable_sources(tmp_path):
    with pytest.raises(ScenarioError) as info:
        load_document("no_such_fixture")
    assert info.value.field == "scenario"
    broken = tmp_path / "broken.json"
    broken.write_text("{not json", encoding="utf-8")
    with pytest.raises(ScenarioError):
        load_document(broken)
    listing = tmp_path / "list.yaml"
    listing.write_text("- 1\n- 2\n", encoding="utf-8")
    with pytest.raises(ScenarioError):
        load_document(listing)
