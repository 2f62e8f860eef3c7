"""Tests for the longitudinal force and power model."""

from __future__ import annotations

from dataclasses import replace
import math

import numpy as np
import pytest

from ecoplan.errors import ConstraintError, DomainError
from ecoplan.models import LongitudinalState, VehicleParams
from ecoplan.vehicle_dynamics import (
    accel_dynamics,
    air_drag,
    decel_dynamics,
    force_breakdown,
    max_stopping_decel,
    max_traction_accel,
    min_brake_distance,
    optimal_accel,
    optimal_cruise_speed,
    optimal_decel,
    road_load,
    rolling_friction,
    slope_force,
)


def test_air_drag_at_ten_ms(flat_env, params):
    assert air_drag(10.0, flat_env, params) == pytest.approx(40.425)


def test_air_drag_scales_with_speed_square(flat_env, params):
    drag = air_drag(np.array([5.0, 10.0, 20.0]), flat_env, params)
    assert drag[1] / drag[0] == pytest.approx(4.0)
    assert drag[2] / drag[1] == pytest.approx(4.0)


def test_air_drag_rejects_negative_speed(flat_env, params):
    with pytest.raises(DomainError):
        air_drag(-1.0, flat_env, params)


def test_rolling_friction_on_flat_road(flat_env, params):
    assert rolling_friction(100.0, flat_env, params) == pytest.approx(220.725)


def test_slope_terms_uphill(uphill_env, params):
    assert slope_force(10.0, uphill_env, params) == pytest.approx(1500 * 9.81 * math.sin(0.05))
    assert rolling_friction(10.0, uphill_env, params) == pytest.approx(
        220.725 * math.cos(0.05)
    )


def test_slope_outside_profile_is_domain_error(flat_env, params):
    with pytest.raises(DomainError):
        slope_force(5000.0, flat_env, params)


def test_road_load_sums_terms(flat_env, params):
    assert road_load(0.0, 10.0, flat_env, params) == pytest.approx(261.15)
    assert road_load(0.0, 20.0, flat_env, params) == pytest.approx(382.425)


def test_force_breakdown_rejects_traction_with_regen(flat_env, params, cruising):
    with pytest.raises(ConstraintError):
        force_breakdown(cruising, flat_env, params, traction_n=100.0, regen_n=100.0)


def test_accel_dynamics(flat_env, params):
    state = LongitudinalState(v_ms=10.0)
    assert accel_dynamics(state, 2000.0, flat_env, params) == pytest.approx(
        (2000 - 261.15) / 1500
    )


def test_decel_dynamics(flat_env, params):
    state = LongitudinalState(v_ms=10.0)
    assert decel_dynamics(state, 1500.0, 0.0, flat_env, params) == pytest.approx(
        -(261.15 + 1500) / 1500
    )


def test_decel_dynamics_holds_at_rest(flat_env, params):
    state = LongitudinalState(v_ms=0.0)
    assert decel_dynamics(state, 0.0, 0.0, flat_env, params) == 0.0


@pytest.mark.parametrize(
    ("regen_n", "brake_n"),
    [(-1.0, 0.0), (0.0, -1.0), (0.0, 6001.0), (3001.0, 0.0)],
)
def test_decel_dynamics_bounds(flat_env, params, cruising, regen_n, brake_n):
    with pytest.raises(ConstraintError):
        decel_dynamics(cruising, regen_n, brake_n, flat_env, params)


def test_optimal_cruise_speed_balances_power(flat_env, params):
    target = optimal_cruise_speed(0.0, flat_env, params)
    speed = target.speed_ms
    assert speed == pytest.approx(20.49, abs=0.01)
    assert not target.capped
    power = speed * road_load(0.0, speed, flat_env, params)
    assert abs(power - params.p_opt_w) <= 1e-6 * params.p_opt_w


def test_optimal_cruise_speed_high_power(flat_env):
    p = VehicleParams(p_opt_w=30000.0, v_max_ms=40.0)
    target = optimal_cruise_speed(0.0, flat_env, p)
    assert target.speed_ms == pytest.approx(37.72, abs=0.01)
    assert not target.capped


def test_optimal_cruise_speed_is_capped(flat_env, params):
    p = replace(params, p_opt_w=30000.0)
    target = optimal_cruise_speed(0.0, flat_env, p)
    assert target.speed_ms == p.v_max_ms
    assert target.capped
    assert not target.unbounded


def test_optimal_cruise_speed_falls_uphill(flat_env, uphill_env, params):
    flat = optimal_cruise_speed(0.0, flat_env, params).speed_ms
    climb = optimal_cruise_speed(0.0, uphill_env, params).speed_ms
    assert climb < flat


def test_optimal_cruise_speed_vectorized(flat_env, params):
    target = optimal_cruise_speed(np.array([0.0, 500.0]), flat_env, params)
    assert target.speed_ms.shape == (2,)
    assert target.speed_ms[0] == pytest.approx(target.speed_ms[1])


def test_optimal_cruise_speed_needs_positive_power(flat_env, params):
    with pytest.raises(DomainError):
        optimal_cruise_speed(0.0, flat_env, replace(params, p_opt_w=0.0))


def test_optimal_accel(flat_env, params):
    p = replace(params, p2_w=60000.0)
    state = LongitudinalState(v_ms=10.0)
    assert optimal_accel(state, flat_env, p) == pytest.approx((6000 - 261.15) / 1500)


def test_optimal_accel_at_rest_uses_speed_floor(flat_env, params):
    state = LongitudinalState(v_ms=0.0)
    value = optimal_accel(state, flat_env, params)
    assert math.isfinite(value)
    assert value > 0


def test_optimal_decel_unclamped(flat_env, params, cruising):
    target = optimal_decel(cruising, flat_env, params)
    assert target.raw_ms2 == pytest.approx(-(1000 + 382.425) / 1500)
    assert target.accel_ms2 == pytest.approx(target.raw_ms2)
    assert target.brake_free


def test_optimal_decel_is_clamped_into_envelope(flat_env, params):
    slow = optimal_decel(LongitudinalState(v_ms=2.0), flat_env, params)
    assert slow.accel_ms2 == pytest.approx(-params.regen_decel_max_ms2)
    weak = optimal_decel(
        LongitudinalState(v_ms=30.0), flat_env, replace(params, pm_w=0.0, drag_coeff=0.0)
    )
    assert weak.accel_ms2 == pytest.approx(-params.regen_decel_min_ms2)


def test_max_stopping_decel(flat_env, params, cruising):
    assert max_stopping_decel(cruising, flat_env, params) == pytest.approx(
        (3000 + 6000 + 382.425) / 1500
    )
    stronger = replace(params, p_regen_max_w=90000.0)
    assert max_stopping_decel(cruising, flat_env, stronger) == pytest.approx(
        (4500 + 6000 + 382.425) / 1500
    )


def test_stopping_decel_counts_the_friction_brake_force(flat_env, params, cruising):
    base = max_stopping_decel(cruising, flat_env, params)
    harder = replace(params, f_brake_max_n=params.f_brake_max_n + 1500.0)
    assert max_stopping_decel(cruising, flat_env, harder) == pytest.approx(base + 1.0)


def test_max_stopping_decel_without_actuators(flat_env, params):
    bare = replace(params, p_regen_max_w=0.0, f_brake_max_n=0.0)
    state = LongitudinalState(v_ms=0.0)
    assert max_stopping_decel(state, flat_env, bare) == pytest.approx(0.015 * 9.81)


def test_max_traction_accel_is_force_then_power_limited(flat_env, params):
    slow = LongitudinalState(v_ms=10.0)
    assert max_traction_accel(slow, flat_env, params) == pytest.approx((4500 - 261.15) / 1500)
    fast = LongitudinalState(v_ms=30.0)
    resistance = road_load(0.0, 30.0, flat_env, params)
    assert max_traction_accel(fast, flat_env, params) == pytest.approx(
        (100000 / 30 - resistance) / 1500
    )


def test_min_brake_distance():
    assert min_brake_distance(20.0, 0.0, 5.0) == pytest.approx(40.0)
    assert min_brake_distance(10.0, 10.0, 2.0) == 0.0


@pytest.mark.parametrize(
    ("v_cur", "v_f", "a_dec"),
    [(20.0, 0.0, 0.0), (20.0, 25.0, 3.0), (-1.0, 0.0, 3.0)],
)
def test_min_brake_distance_domain(v_cur, v_f, a_dec):
    with pytest.raises(DomainError):
        min_brake_distance(v_cur, v_f, a_dec)
