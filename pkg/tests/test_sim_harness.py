"""Tests for the closed-loop simulator and the A/B comparison."""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np
import pytest

from ecoplan.const import PlannerKind
from ecoplan.errors import DomainError
from ecoplan.frenet_frame import GlobalPath, ParticleFootprint, PolygonFootprint
from ecoplan.models import LongitudinalState
from ecoplan.scenario import ObstacleSpec, list_fixtures, load_scenario
from ecoplan.sim_harness import (
    ComparisonResult,
    RunResult,
    FLAG_EMERGENCY_STOP,
    FLAG_PLANNER_FAILURE,
    async_run_comparison,
    obstacle_footprint,
    route_pose,
    run_closed_loop,
    run_comparison,
    step_plant,
)
from ecoplan.vehicle_dynamics import max_stopping_decel

BLOCKING_WALL = "obstacles=[{id: block, s_m: 40.0, l_m: 0.0, length_m: 4.0, width_m: 10.0}]"


@lru_cache(maxsize=None)
def _comparison(name: str) -> ComparisonResult:
    return run_comparison(load_scenario(name))


def _assert_certified(run: RunResult) -> None:
    for cycle in run.trace.cycles:
        assert not cycle.failed, cycle.t
        assert cycle.path_qp_status == "optimal", cycle.t
        assert cycle.speed_qp_status == "optimal", cycle.t
        assert not cycle.path_fallback and not cycle.speed_fallback, cycle.t
        for residual in (
            cycle.path_primal_residual,
            cycle.path_dual_residual,
            cycle.speed_primal_residual,
            cycle.speed_dual_residual,
        ):
            assert residual is not None and residual <= 1e-6, cycle.t
        assert cycle.path_objective <= cycle.path_dp_objective + 1e-8 * max(
            1.0, abs(cycle.path_dp_objective)
        ), cycle.t
        assert cycle.speed_objective <= cycle.speed_coarse_objective + 1e-8 * max(
            1.0, abs(cycle.speed_coarse_objective)
        ), cycle.t


def test_step_plant_is_semi_implicit():
    state = step_plant(LongitudinalState(s_m=0.0, v_ms=10.0), -2.0, 0.1)
    assert state.v_ms == pytest.approx(9.8)
    assert state.s_m == pytest.approx(0.98)
    assert state.a_ms2 == pytest.approx(-2.0)


def test_step_plant_does_not_reverse():
    state = step_plant(LongitudinalState(s_m=5.0, v_ms=0.1), -5.0, 0.1)
    assert state.v_ms == 0.0
    assert state.s_m == 5.0
    assert state.a_ms2 == pytest.approx(-1.0)
    with pytest.raises(DomainError):
        step_plant(state, 0.0, 0.0)


def test_step_plant_clips_to_the_vehicle_envelope(flat_env, params):
    start = LongitudinalState(s_m=10.0, v_ms=20.0)
    state = step_plant(start, -100.0, 0.01, flat_env, params)
    assert state.a_ms2 == pytest.approx(-max_stopping_decel(start, flat_env, params))


def test_route_pose_and_footprints():
    route = GlobalPath.from_points([(0, 0), (100, 0), (100, 100)])
    point = route_pose(route, 150.0, 2.0)
    assert (point.x, point.y) == pytest.approx((98.0, 50.0))
    parked = ObstacleSpec(id="parked", s_m=50.0, l_m=0.0)
    assert isinstance(obstacle_footprint(route, parked, 3.0), PolygonFootprint)
    moving = ObstacleSpec(id="lead", s_m=50.0, l_m=0.0, speed_ms=10.0)
    footprint = obstacle_footprint(route, moving, 3.0)
    assert isinstance(footprint, ParticleFootprint)
    assert footprint.centre.x == pytest.approx(80.0)


def test_empty_road_run_is_healthy_and_balanced():
    result = run_closed_loop(load_scenario("empty_road", ["duration_s=4"]), PlannerKind.EHMPP)
    trace = result.trace
    assert result.flags == []
    assert result.health["healthy"]
    assert trace.samples[0].t == 0.0
    assert trace.final.t == pytest.approx(4.0)
    assert trace.min_clearance_m is None
    assert np.all(np.abs(trace.column("l")) < 0.05)
    assert abs(result.audit.relative_imbalance) <= 0.02
    assert len(trace.plans) == len(trace.cycles)


def test_run_is_deterministic():
    scenario = load_scenario("avoidance", ["duration_s=3"])
    first = run_closed_loop(scenario, PlannerKind.EHMPP)
    second = run_closed_loop(scenario, PlannerKind.EHMPP)
    assert first.trace.trace_rows() == second.trace.trace_rows()
    assert first.report == second.report


def test_blocked_road_ends_in_an_emergency_stop():
    scenario = load_scenario("empty_road", [BLOCKING_WALL])
    result = run_closed_loop(scenario, PlannerKind.EHMPP)
    assert FLAG_PLANNER_FAILURE in result.flags
    assert FLAG_EMERGENCY_STOP in result.flags
    assert result.trace.final.v == 0.0
    assert not result.health["healthy"]
    assert all(cycle.failed for cycle in result.trace.cycles)


def test_vehicle_stops_before_the_wall():
    scenario = load_scenario("stop_wall")
    result = run_closed_loop(scenario, PlannerKind.EHMPP)
    front = result.trace.column("s") + 0.5 * scenario.vehicle.length_m
    assert np.all(front <= 200.0 + 1e-6)
    assert result.trace.final.v < 0.5


def test_avoidance_keeps_clear_of_the_parked_car():
    scenario = load_scenario("avoidance")
    result = run_closed_loop(scenario, PlannerKind.EHMPP)
    assert FLAG_PLANNER_FAILURE not in result.flags
    assert result.trace.min_clearance_m is None or result.trace.min_clearance_m > 0.0
    trace = result.trace
    beside = np.abs(trace.column("s") - 120.0) < 0.5 * (4.6 + scenario.vehicle.length_m)
    assert beside.any()
    assert np.all(trace.column("l")[beside] > 1.0)


def test_comparison_on_the_deceleration_rich_road():
    result = _comparison("deceleration_rich")
    assert result.complete
    _assert_certified(result.ehmpp)
    _assert_certified(result.baseline)
    comparison = result.comparison
    assert comparison.headline.delta_points <= -5.0
    regen = comparison.channels["regen_energy_j"]
    assert regen.ratio is not None and regen.ratio > 1.0


def test_ehmpp_holds_the_optimal_power_in_cruise():
    result = _comparison("cruise")
    _assert_certified(result.ehmpp)
    _assert_certified(result.baseline)
    ehmpp = result.ehmpp.report.mean_cruise_power_dev_w
    baseline = result.baseline.report.mean_cruise_power_dev_w
    assert ehmpp is not None and baseline is not None
    assert ehmpp <= 0.5 * baseline


async def test_async_comparison_matches_the_sequential_one():
    scenario = load_scenario("empty_road", ["duration_s=3"])
    concurrent = await async_run_comparison(scenario)
    sequential = run_comparison(scenario)
    assert concurrent.complete
    assert concurrent.to_dict() == sequential.to_dict()
    assert set(concurrent.runs()) == {"ehmpp", "baseline"}
    assert math.isfinite(concurrent.comparison.channels["traction_energy_j"].ehmpp)


@pytest.mark.parametrize("name", list_fixtures())
def test_both_planners_keep_the_safety_gap(name):
    result = _comparison(name)
    assert result.complete
    d2 = result.scenario.planner.speed_weights.d2_m
    for run in (result.ehmpp, result.baseline):
        clearance = run.trace.min_clearance_m
        assert clearance is None or clearance > d2, (run.trace.planner, clearance)


def test_ehmpp_recovers_only_inside_the_regen_band():
    result = _comparison("deceleration_rich")
    params = result.scenario.vehicle
    samples = [sample for sample in result.ehmpp.trace.samples if sample.v > 0]
    decel = np.array([sample.regen_w / (sample.v * params.mass_kg) for sample in samples])
    recovering = decel[decel > 0]
    assert recovering.size > 0
    assert np.all(recovering >= params.regen_decel_min_ms2 - 1e-9)
    assert np.all(recovering <= params.regen_decel_max_ms2 + 1e-9)
