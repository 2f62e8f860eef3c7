"""Tests for SL path planning."""

from __future__ import annotations

import itertools

import numpy as np
import pytest

from ecoplan.const import QPStatus
from ecoplan.errors import BlockedPathError, CorridorCollapseError, DegenerateSegmentError, DomainError
from ecoplan.frenet_frame import SLBox
from ecoplan.models import PathCostWeights, PlannerConfig
from ecoplan.path_planner import (
    PathDPResult,
    PathNode,
    PathProfile,
    SLGrid,
    build_corridor,
    build_sl_grid,
    discretized_dp_reference,
    discretized_path_objective,
    dp_search,
    lattice_offsets,
    obstacle_cost,
    path_clearance,
    plan_path,
    qp_refine,
    quintic_connect,
    reference_cost,
    smoothness_cost,
    stage_transition_costs,
)

HALF_WIDTH = 0.9
WIDE_ROAD = (-1.75, 5.25)


def test_quintic_matches_boundary_conditions():
    a = PathNode(0.0, 0.0, 0.1, 0.0)
    b = PathNode(10.0, 2.0, 0.0, 0.01)
    seg = quintic_connect(a, b)
    assert seg.h == 10.0
    assert seg.evaluate(0.0) == pytest.approx(0.0)
    assert seg.evaluate(0.0, 1) == pytest.approx(0.1)
    assert seg.evaluate(0.0, 2) == pytest.approx(0.0)
    assert seg.evaluate(10.0) == pytest.approx(2.0)
    assert seg.evaluate(10.0, 1) == pytest.approx(0.0, abs=1e-12)
    assert seg.evaluate(10.0, 2) == pytest.approx(0.01)


def test_quintic_reproduces_a_line():
    seg = quintic_connect(PathNode(0.0, 0.0, 1.0), PathNode(10.0, 10.0, 1.0))
    np.testing.assert_allclose(seg.coeffs, [0.0, 1.0, 0.0, 0.0, 0.0, 0.0], atol=1e-12)
    assert seg.squared_integral(0) == pytest.approx(1000.0 / 3.0)
    assert seg.squared_integral(1) == pytest.approx(10.0)
    assert seg.squared_integral(2) == pytest.approx(0.0, abs=1e-12)


def test_quintic_needs_positive_length():
    with pytest.raises(DegenerateSegmentError):
        quintic_connect(PathNode(5.0, 0.0), PathNode(5.0, 1.0))


def test_profile_evaluation_is_clamped():
    profile = PathProfile(knots=(PathNode(0.0, 0.0), PathNode(10.0, 1.0), PathNode(20.0, 0.0)))
    assert profile.evaluate(10.0) == pytest.approx(1.0)
    assert profile.evaluate(-5.0) == pytest.approx(0.0)
    assert profile.evaluate(25.0) == pytest.approx(0.0)
    assert profile.max_abs(0) == pytest.approx(1.0)
    rows = profile.to_rows(s_offset_m=100.0)
    assert [row["s"] for row in rows] == [100.0, 110.0, 120.0]


def test_flat_profile_costs_nothing():
    weights = PathCostWeights()
    profile = PathProfile(knots=(PathNode(0.0, 0.0), PathNode(10.0, 0.0)))
    assert smoothness_cost(profile, weights) == 0.0
    assert reference_cost(profile) == 0.0


def test_reference_cost_against_a_shifted_reference():
    profile = PathProfile(knots=(PathNode(0.0, 1.0), PathNode(10.0, 1.0)))
    reference = PathProfile(knots=(PathNode(0.0, 0.0), PathNode(10.0, 0.0)))
    assert reference_cost(profile, reference) == pytest.approx(10.0)


@pytest.mark.parametrize(
    ("distance", "expected"),
    [(50.0, 0.0), (40.0, 0.0), (35.0, 50.0), (30.0, 100.0), (29.9, np.inf)],
)
def test_obstacle_cost_breakpoints(distance, expected):
    assert obstacle_cost(distance, PathCostWeights()) == pytest.approx(expected)


def test_obstacle_cost_decreases_with_distance():
    costs = obstacle_cost(np.linspace(30.0, 45.0, 31), PathCostWeights())
    assert np.all(np.diff(costs) <= 0)


def test_path_clearance_ignores_lateral_miss():
    box = SLBox(20.0, 25.0, -1.0, 1.0)
    clearance = path_clearance([10.0, 10.0], [0.0, 3.0], [box], HALF_WIDTH)
    assert clearance[0] == pytest.approx(10.0)
    assert np.isinf(clearance[1])


def test_lattice_offsets():
    np.testing.assert_allclose(lattice_offsets(-1.75, 1.75, HALF_WIDTH, 0.5), [-0.5, 0.0, 0.5])
    with pytest.raises(DomainError):
        lattice_offsets(-0.5, 0.5, HALF_WIDTH, 0.5)


def test_grid_rejects_uneven_stations():
    with pytest.raises(ValueError, match="uniformly"):
        SLGrid(stations=np.array([0.0, 10.0, 25.0]), offsets=(np.zeros(1),) * 3)


def test_jittered_grid_is_reproducible():
    config = PlannerConfig(lattice_jitter=True)
    start = PathNode(0.0, 0.0)
    a = build_sl_grid(start, 50.0, WIDE_ROAD, HALF_WIDTH, config, rng=np.random.default_rng(4))
    b = build_sl_grid(start, 50.0, WIDE_ROAD, HALF_WIDTH, config, rng=np.random.default_rng(4))
    for left, right in zip(a.offsets, b.offsets, strict=True):
        np.testing.assert_array_equal(left, right)
    assert not np.array_equal(a.offsets[1], lattice_offsets(*WIDE_ROAD, HALF_WIDTH, 0.5))


def test_dp_matches_brute_force():
    weights = PathCostWeights(d1_m=8.0, d2_m=2.0)
    start = PathNode(0.0, 0.0, 0.1, 0.0)
    obstacle = SLBox(22.0, 24.0, -2.0, -1.2)
    grid = build_sl_grid(start, 30.0, (-1.75, 1.75), HALF_WIDTH, PlannerConfig(), [obstacle])
    transitions = [stage_transition_costs(grid, k, weights, start) for k in range(3)]

    best = np.inf
    for i1, i2, i3 in itertools.product(*(range(len(grid.offsets[k])) for k in (1, 2, 3))):
        total = transitions[0][0, i1] + transitions[1][i1, i2] + transitions[2][i2, i3]
        best = min(best, total)

    result = dp_search(grid, start, weights)
    assert np.isfinite(best)
    assert result.cost == pytest.approx(best)
    chosen = [
        int(np.flatnonzero(grid.offsets[k] == node.l)[0]) for k, node in enumerate(result.nodes)
    ]
    replay = sum(transitions[k][chosen[k], chosen[k + 1]] for k in range(3))
    assert replay == pytest.approx(best)


def _random_grid(rng):
    n_stations = int(rng.integers(2, 5))
    start = PathNode(0.0, float(rng.uniform(-0.5, 0.5)), float(rng.uniform(-0.05, 0.05)), 0.0)
    offsets = [np.array([start.l])]
    offsets += [
        np.sort(rng.uniform(-1.5, 1.5, int(rng.integers(1, 5)))) for _ in range(n_stations - 1)
    ]
    obstacles = []
    if rng.random() < 0.5:
        s_lo, l_lo = rng.uniform(5.0, 25.0), rng.uniform(-1.5, 1.0)
        obstacles.append(SLBox(s_lo, s_lo + 2.0, l_lo, l_lo + 0.5))
    grid = SLGrid(
        stations=np.arange(n_stations) * 10.0,
        offsets=tuple(offsets),
        obstacles=tuple(obstacles),
        node_cost=tuple(rng.uniform(0.0, 5.0, o.size) for o in offsets),
    )
    return grid, start


@pytest.mark.parametrize("seed", range(50))
def test_dp_matches_enumeration_on_random_grids(seed):
    rng = np.random.default_rng(1000 + seed)
    grid, start = _random_grid(rng)
    weights = PathCostWeights(d1_m=6.0, d2_m=1.0)
    stages = grid.stations.size - 1
    transitions = [stage_transition_costs(grid, k, weights, start) for k in range(stages)]

    best = np.inf
    for tail in itertools.product(*(range(grid.offsets[k].size) for k in range(1, stages + 1))):
        chosen = (0, *tail)
        total = grid.node_cost[0][0] + sum(
            transitions[k][chosen[k], chosen[k + 1]] for k in range(stages)
        )
        best = min(best, total)

    if not np.isfinite(best):
        with pytest.raises(BlockedPathError):
            dp_search(grid, start, weights)
        return
    result = dp_search(grid, start, weights)
    assert result.cost == pytest.approx(best, rel=1e-12, abs=1e-12)


def test_dp_steers_around_a_static_obstacle():
    weights = PathCostWeights()
    start = PathNode(0.0, 0.0)
    obstacle = SLBox(60.0, 65.0, -1.0, 1.0)
    grid = build_sl_grid(start, 100.0, WIDE_ROAD, HALF_WIDTH, PlannerConfig(), [obstacle])
    result = dp_search(grid, start, weights)
    assert np.isfinite(result.cost)
    for node in result.nodes:
        if 30.0 < node.s < 95.0:
            assert node.l >= 2.5


def test_dp_reports_a_blocked_road():
    start = PathNode(0.0, 0.0)
    wall = SLBox(40.0, 45.0, -3.0, 7.0)
    grid = build_sl_grid(start, 100.0, WIDE_ROAD, HALF_WIDTH, PlannerConfig(), [wall])
    with pytest.raises(BlockedPathError):
        dp_search(grid, start, PathCostWeights())


def test_dp_start_must_sit_on_first_station():
    grid = build_sl_grid(PathNode(0.0, 0.0), 30.0, WIDE_ROAD, HALF_WIDTH, PlannerConfig())
    with pytest.raises(DomainError):
        dp_search(grid, PathNode(5.0, 0.0), PathCostWeights())


@pytest.mark.parametrize("offset", [-2.0, 5.5])
def test_dp_start_must_lie_within_the_road(offset):
    grid = build_sl_grid(PathNode(0.0, 0.0), 30.0, WIDE_ROAD, HALF_WIDTH, PlannerConfig())
    assert grid.road_bounds_m == WIDE_ROAD
    with pytest.raises(DomainError, match="road bounds"):
        dp_search(grid, PathNode(0.0, offset), PathCostWeights())


def test_corridor_excludes_obstacle_and_contains_dp_path():
    weights = PathCostWeights()
    start = PathNode(0.0, 0.0)
    obstacle = SLBox(60.0, 65.0, -1.0, 1.0)
    grid = build_sl_grid(start, 100.0, WIDE_ROAD, HALF_WIDTH, PlannerConfig(), [obstacle])
    dp = dp_search(grid, start, weights)
    corridor = build_corridor(dp, grid, [obstacle], WIDE_ROAD, ds_m=2.0, ego_length_m=4.6)
    assert corridor.contains(dp.profile.evaluate(corridor.stations))
    beside = (corridor.stations >= 60.0 - 2.3) & (corridor.stations <= 65.0 + 2.3)
    assert np.all(corridor.l_lo[beside] >= 1.0 + HALF_WIDTH - 1e-9)
    assert np.all(corridor.l_hi <= WIDE_ROAD[1] - HALF_WIDTH + 1e-9)


def test_corridor_collapses_when_dp_path_hits_an_obstacle():
    start = PathNode(0.0, 0.0)
    grid = build_sl_grid(start, 20.0, WIDE_ROAD, HALF_WIDTH, PlannerConfig())
    profile = PathProfile(knots=(start, PathNode(10.0, 0.0), PathNode(20.0, 0.0)))
    dp = PathDPResult(nodes=profile.knots, profile=profile, cost=0.0)
    with pytest.raises(CorridorCollapseError):
        build_corridor(dp, grid, [SLBox(8.0, 12.0, -1.0, 1.0)], WIDE_ROAD)


def test_refinement_stays_in_corridor_and_improves_on_dp():
    weights = PathCostWeights()
    start = PathNode(0.0, 0.0)
    obstacle = SLBox(60.0, 65.0, -1.0, 1.0)
    grid = build_sl_grid(start, 100.0, WIDE_ROAD, HALF_WIDTH, PlannerConfig(), [obstacle])
    dp = dp_search(grid, start, weights)
    corridor = build_corridor(dp, grid, [obstacle], WIDE_ROAD, ds_m=2.0, ego_length_m=4.6)
    refined = qp_refine(corridor, dp.profile, weights, start=start)
    assert refined.status is QPStatus.OPTIMAL
    assert not refined.fallback
    assert refined.objective <= refined.dp_objective + 1e-6
    assert max(refined.primal_residual, refined.dual_residual) <= 1e-6
    knots = refined.profile.knots
    assert knots[0].l == pytest.approx(0.0, abs=1e-6)
    ls = np.array([k.l for k in knots])
    assert np.all(ls >= corridor.l_lo - 1e-6)
    assert np.all(ls <= corridor.l_hi + 1e-6)


def _avoidance_corridor():
    weights = PathCostWeights()
    start = PathNode(0.0, 0.0)
    obstacle = SLBox(60.0, 65.0, -1.0, 1.0)
    grid = build_sl_grid(start, 100.0, WIDE_ROAD, HALF_WIDTH, PlannerConfig(), [obstacle])
    dp = dp_search(grid, start, weights)
    corridor = build_corridor(dp, grid, [obstacle], WIDE_ROAD, ds_m=2.0, ego_length_m=4.6)
    return weights, start, dp, corridor


def test_dp_reference_satisfies_the_refinement_linkage():
    _, start, dp, corridor = _avoidance_corridor()
    stations = corridor.stations
    h = float(stations[1] - stations[0])
    reference = discretized_dp_reference(stations, dp.profile, start, corridor.l_lo, corridor.l_hi)
    lat, dl, ddl = reference[0::3], reference[1::3], reference[2::3]
    np.testing.assert_allclose([lat[0], dl[0], ddl[0]], [start.l, start.dl, start.ddl], atol=1e-6)
    velocity_rows = dl[1:] - dl[:-1] - h / 2 * (ddl[:-1] + ddl[1:])
    offset_rows = lat[1:] - lat[:-1] - h * dl[:-1] - h**2 / 3 * ddl[:-1] - h**2 / 6 * ddl[1:]
    assert np.max(np.abs(velocity_rows)) <= 1e-6
    assert np.max(np.abs(offset_rows)) <= 1e-6
    assert np.all(lat >= corridor.l_lo - 1e-6)
    assert np.all(lat <= corridor.l_hi + 1e-6)
    # Offsets stay close to the sampled DP profile
    assert np.max(np.abs(lat - dp.profile.evaluate(stations))) < 0.5


def test_refinement_falls_back_only_without_a_certificate():
    weights, start, dp, corridor = _avoidance_corridor()
    refined = qp_refine(corridor, dp.profile, weights, start=start, tol=1e-300, max_iter=5)
    assert refined.status is not QPStatus.OPTIMAL
    assert refined.fallback
    assert refined.profile is dp.profile
    assert refined.objective == refined.dp_objective


def test_objective_of_a_flat_path_is_zero():
    zeros = np.zeros(5)
    assert discretized_path_objective(zeros, zeros, zeros, zeros, 2.0, PathCostWeights()) == 0.0


def test_plan_path_on_an_empty_road_stays_centred():
    plan = plan_path(
        PathNode(0.0, 0.0),
        80.0,
        (-1.75, 1.75),
        [],
        PathCostWeights(),
        PlannerConfig(),
        half_width_m=HALF_WIDTH,
    )
    assert not plan.refined.fallback
    assert plan.profile.max_abs(0) <= 1e-6
    assert plan.profile.s_end == pytest.approx(80.0)


def test_plan_path_returns_towards_the_reference():
    plan = plan_path(
        PathNode(0.0, 1.0),
        100.0,
        WIDE_ROAD,
        [],
        PathCostWeights(),
        PlannerConfig(),
        half_width_m=HALF_WIDTH,
    )
    assert plan.profile.knots[0].l == pytest.approx(1.0, abs=1e-6)
    assert abs(plan.profile.evaluate(100.0)) < 0.5
