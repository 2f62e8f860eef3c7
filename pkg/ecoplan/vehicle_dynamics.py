"""Longitudinal force and power model of the vehicle.

Sign convention: grade angle theta > 0 is uphill, and ``slope_force`` is then
positive and opposes forward motion. Functions taking a speed or an arc
position accept numpy arrays and broadcast; scalar inputs return floats.
"""

from __future__ import annotations

from dataclasses import dataclass
import logging
from typing import Any

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .const import CRUISE_BRACKET_FACTOR, CRUISE_ROOT_TOL, V_FLOOR
from .errors import ConstraintError, DomainError
from .models import Environment, ForceBreakdown, LongitudinalState, VehicleParams

_LOGGER = logging.getLogger(__name__)

# Relative slack on actuator bound checks
_BOUND_RTOL = 1e-9
_MAX_BISECTION_STEPS = 200


def _out(value: NDArray[np.float64]) -> Any:
    """Return a float for 0-d results and the array otherwise."""
    if np.ndim(value) == 0:
        return float(value)
    return value


def _check_speed(v: ArrayLike) -> NDArray[np.float64]:
    v_arr = np.asarray(v, dtype=float)
    if np.any(v_arr < 0):
        raise DomainError("speed must be nonnegative")
    return v_arr


def _drag_factor(env: Environment, p: VehicleParams) -> float:
    """Coefficient k of the drag law F = k v^2."""
    return 0.5 * env.air_density_kgm3 * p.drag_coeff * p.frontal_area_m2


@dataclass(frozen=True)
class CruiseTarget:
    """Optimal cruise speed with capping advisories."""

    speed_ms: Any
    capped: Any
    unbounded: Any


@dataclass(frozen=True)
class DecelTarget:
    """Recovery-optimal deceleration, clamped into the recovery envelope."""

    accel_ms2: Any
    raw_ms2: Any
    brake_free: Any


def air_drag(v: ArrayLike, env: Environment, p: VehicleParams) -> Any:
    """Aerodynamic drag 0.5 rho v^2 Cd A in N."""
    v_arr = _check_speed(v)
    return _out(_drag_factor(env, p) * v_arr**2)


def rolling_friction(s: ArrayLike, env: Environment, p: VehicleParams) -> Any:
    """Rolling friction mu m g cos(theta(s)) in N."""
    theta = np.asarray(env.slope_profile.grade_at(s), dtype=float)
    return _out(p.rolling_mu * p.mass_kg * env.gravity_ms2 * np.cos(theta))


def slope_force(s: ArrayLike, env: Environment, p: VehicleParams) -> Any:
    """Grade force m g sin(theta(s)) in N, positive uphill."""
    theta = np.asarray(env.slope_profile.grade_at(s), dtype=float)
    return _out(p.mass_kg * env.gravity_ms2 * np.sin(theta))


def road_load(s: ArrayLike, v: ArrayLike, env: Environment, p: VehicleParams) -> Any:
    """Sum of drag, rolling friction and grade force in N."""
    return _out(
        np.asarray(air_drag(v, env, p))
        + np.asarray(rolling_friction(s, env, p))
        + np.asarray(slope_force(s, env, p))
    )


def force_breakdown(
    state: LongitudinalState,
    env: Environment,
    p: VehicleParams,
    *,
    traction_n: float = 0.0,
    regen_n: float = 0.0,
    brake_n: float = 0.0,
) -> ForceBreakdown:
    """Evaluate every longitudinal force at a state."""
    if traction_n > 0 and regen_n > 0:
        raise ConstraintError("traction and regeneration are mutually exclusive")
    return ForceBreakdown(
        air_n=air_drag(state.v_ms, env, p),
        friction_n=rolling_friction(state.s_m, env, p),
        slope_n=slope_force(state.s_m, env, p),
        traction_n=traction_n,
        regen_n=regen_n,
        brake_n=brake_n,
    )


def accel_dynamics(
    state: LongitudinalState, traction_n: float, env: Environment, p: VehicleParams
) -> float:
    """Acceleration under traction with recovery inactive."""
    forces = force_breakdown(state, env, p, traction_n=traction_n)
    return forces.net_accel(p.mass_kg)


def decel_dynamics(
    state: LongitudinalState,
    regen_n: float,
    brake_n: float,
    env: Environment,
    p: VehicleParams,
) -> float:
    """Acceleration under recovery drag and friction braking.

    A vehicle at rest is held by static friction, so the result is never
    negative at zero speed.
    """
    if regen_n < 0:
        raise ConstraintError(f"regen force must be nonnegative, got {regen_n}")
    if brake_n < 0:
        raise ConstraintError(f"brake force must be nonnegative, got {brake_n}")
    if brake_n > p.f_brake_max_n * (1 + _BOUND_RTOL):
        raise ConstraintError(
            f"brake force {brake_n} N exceeds f_brake_max_n {p.f_brake_max_n} N"
        )
    if regen_n * state.v_ms > p.p_regen_max_w * (1 + _BOUND_RTOL):
        raise ConstraintError(
            f"regen power {regen_n * state.v_ms} W exceeds p_regen_max_w {p.p_regen_max_w} W"
        )
    forces = force_breakdown(state, env, p, regen_n=regen_n, brake_n=brake_n)
    accel = forces.net_accel(p.mass_kg)
    if state.v_ms == 0:
        return max(accel, 0.0)
    return accel


def optimal_cruise_speed(s: ArrayLike, env: Environment, p: VehicleParams) -> CruiseTarget:
    """Speed V at which V * F_total(V) equals the optimal cruise power.

    Solved by bisection on [0, 3 v_max]. Roots above v_max are capped; when
    no root exists in the bracket the result is v_max with ``unbounded`` set.
    """
    if p.p_opt_w <= 0:
        raise DomainError("p_opt_w must be positive to define a cruise speed")
    static = np.asarray(rolling_friction(s, env, p)) + np.asarray(slope_force(s, env, p))
    k = _drag_factor(env, p)

    def excess(speed: NDArray[np.float64]) -> NDArray[np.float64]:
        return speed * (k * speed**2 + static) - p.p_opt_w

    hi_edge = CRUISE_BRACKET_FACTOR * p.v_max_ms
    lo = np.zeros_like(static)
    hi = np.full_like(static, hi_edge)
    bracketed = excess(hi) > 0
    for _ in range(_MAX_BISECTION_STEPS):
        if float(np.max(hi - lo)) <= CRUISE_ROOT_TOL:
            break
        mid = 0.5 * (lo + hi)
        below = excess(mid) < 0
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    root = 0.5 * (lo + hi)

    unbounded = ~bracketed & (k * hi_edge**2 + static <= 0)
    capped = ~bracketed | (root > p.v_max_ms)
    speed = np.where(capped, p.v_max_ms, root)
    if np.any(unbounded):
        _LOGGER.debug("No finite cruise speed at some stations; using v_max %s", p.v_max_ms)
    return CruiseTarget(
        speed_ms=_out(speed),
        capped=bool(capped) if np.ndim(capped) == 0 else capped,
        unbounded=bool(unbounded) if np.ndim(unbounded) == 0 else unbounded,
    )


def optimal_accel_profile(
    s: ArrayLike, v: ArrayLike, env: Environment, p: VehicleParams
) -> Any:
    """Acceleration at which the motor delivers p2_w, evaluated elementwise."""
    v_arr = _check_speed(v)
    resistance = np.asarray(road_load(s, v_arr, env, p))
    return _out((p.p2_w / np.maximum(v_arr, V_FLOOR) - resistance) / p.mass_kg)


def optimal_accel(state: LongitudinalState, env: Environment, p: VehicleParams) -> float:
    """Acceleration target of the optimal-power acceleration phase."""
    return float(optimal_accel_profile(state.s_m, state.v_ms, env, p))


def optimal_decel_profile(
    s: ArrayLike, v: ArrayLike, env: Environment, p: VehicleParams
) -> DecelTarget:
    """Recovery-optimal deceleration at pm_w, evaluated elementwise."""
    v_arr = _check_speed(v)
    v_eff = np.maximum(v_arr, V_FLOOR)
    resistance = np.asarray(road_load(s, v_arr, env, p))
    raw = -(p.pm_w / v_eff + resistance) / p.mass_kg
    magnitude = np.clip(-raw, p.regen_decel_min_ms2, p.regen_decel_max_ms2)
    regen_needed = np.maximum(p.mass_kg * magnitude - resistance, 0.0)
    brake_free = regen_needed * v_arr <= p.p_regen_max_w * (1 + _BOUND_RTOL)
    return DecelTarget(
        accel_ms2=_out(-magnitude),
        raw_ms2=_out(raw),
        brake_free=bool(brake_free) if np.ndim(brake_free) == 0 else brake_free,
    )


def optimal_decel(state: LongitudinalState, env: Environment, p: VehicleParams) -> DecelTarget:
    """Deceleration target of the recovery-optimal deceleration phase."""
    return optimal_decel_profile(state.s_m, state.v_ms, env, p)


def max_stopping_decel_profile(
    s: ArrayLike, v: ArrayLike, env: Environment, p: VehicleParams
) -> Any:
    """Largest deceleration magnitude from full recovery plus full braking."""
    v_arr = _check_speed(v)
    regen_max = np.minimum(
        p.p_regen_max_w / np.maximum(v_arr, V_FLOOR), p.mass_kg * p.regen_decel_max_ms2
    )
    resistance = np.asarray(road_load(s, v_arr, env, p))
    return _out((regen_max + p.f_brake_max_n + resistance) / p.mass_kg)


def max_stopping_decel(state: LongitudinalState, env: Environment, p: VehicleParams) -> float:
    """Largest deceleration magnitude at a state, in m/s^2."""
    return float(max_stopping_decel_profile(state.s_m, state.v_ms, env, p))


def max_traction_accel_profile(
    s: ArrayLike, v: ArrayLike, env: Environment, p: VehicleParams
) -> Any:
    """Power- and force-limited acceleration ceiling, evaluated elementwise."""
    v_arr = _check_speed(v)
    traction = np.minimum(p.f_traction_max_n, p.p_max_w / np.maximum(v_arr, V_FLOOR))
    resistance = np.asarray(road_load(s, v_arr, env, p))
    return _out((traction - resistance) / p.mass_kg)


def max_traction_accel(state: LongitudinalState, env: Environment, p: VehicleParams) -> float:
    """Acceleration ceiling at a state, in m/s^2."""
    return float(max_traction_accel_profile(state.s_m, state.v_ms, env, p))


def min_brake_distance(v_cur: float, v_f: float, a_dec_max: float) -> float:
    """Distance to slow from v_cur to v_f at constant deceleration a_dec_max."""
    if a_dec_max <= 0:
        raise DomainError("a_dec_max must be positive")
    if v_f < 0 or v_cur < 0:
        raise DomainError("speeds must be nonnegative")
    if v_f > v_cur:
        raise DomainError(f"final speed {v_f} exceeds current speed {v_cur}")
    return (v_cur**2 - v_f**2) / (2.0 * a_dec_max)
