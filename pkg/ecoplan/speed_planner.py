"""ST-graph speed planning along a fixed path.

Stations are relative to the ego position at planning time (``s = 0`` is the
ego). Per-sample derivatives of a lattice profile use backward differences:
``v_k = (s_k - s_{k-1}) / dt``, ``a_k = (v_k - v_{k-1}) / dt`` and
``jerk_k = (a_k - a_{k-1}) / dt``, seeded by the start state at k = 0.
"""

from __future__ import annotations

from collections.abc import Callable, Sequence
from dataclasses import dataclass
import logging
import math
from typing import Any

import numpy as np
from numpy.typing import ArrayLike, NDArray
import scipy.sparse as sp

from .const import (
    DEFAULT_EPS_V,
    DEFAULT_QP_MAX_ITER,
    DEFAULT_QP_TOL,
    DEFAULT_SAFETY_BUFFER,
    DEFAULT_STOP_DECEL,
    INFINITE_COST,
    PhaseLabel,
    PlannerKind,
    QPStatus,
)
from .errors import DomainError, InfeasibleHorizonError
from .frenet_frame import STParticle
from .models import Environment, LongitudinalState, PlannerConfig, SpeedCostWeights, VehicleParams
from .qp_core import QuadraticProgram, closest_feasible_point, solve
from .vehicle_dynamics import (
    max_traction_accel_profile,
    optimal_accel_profile,
    optimal_cruise_speed,
    optimal_decel_profile,
)

_LOGGER = logging.getLogger(__name__)

# Stations dominate the coarse reference projection
_REFERENCE_STATION_WEIGHT = 100.0


def classify_phase(
    current_v: float, v_target: float, stop_required: bool, eps_v: float = DEFAULT_EPS_V
) -> PhaseLabel:
    """Phase of the coming cycle from the speed gap, with eps_v hysteresis."""
    if current_v < 0:
        raise DomainError("current speed must be nonnegative")
    if stop_required or v_target < current_v - eps_v:
        return PhaseLabel.DECELERATION
    if v_target > current_v + eps_v:
        return PhaseLabel.ACCELERATION
    return PhaseLabel.CRUISE


def st_obstacle_cost(d_min: ArrayLike, weights: SpeedCostWeights) -> Any:
    """k_obs / (d - d2) between d2 and d1, zero beyond d1, infinite within d2."""
    d = np.abs(np.asarray(d_min, dtype=float))
    with np.errstate(divide="ignore"):
        middle = weights.k_obs / np.where(d > weights.d2_m, d - weights.d2_m, 1.0)
    cost = np.where(d > weights.d1_m, 0.0, np.where(d <= weights.d2_m, INFINITE_COST, middle))
    return float(cost) if cost.ndim == 0 else cost


def ref_speed_cost(v: ArrayLike, v_opt: ArrayLike, weights: SpeedCostWeights) -> Any:
    """W_ref (v - v_opt)^2."""
    cost = weights.w_ref_speed * (np.asarray(v, dtype=float) - np.asarray(v_opt, dtype=float)) ** 2
    return float(cost) if np.ndim(cost) == 0 else cost


def _phase_accel_cost(accel: Any, jerk: Any, target: Any, weights: SpeedCostWeights) -> Any:
    cost = weights.w_acc * (np.asarray(accel) - np.asarray(target)) ** 2 + weights.w_je * np.asarray(jerk) ** 2
    return float(cost) if np.ndim(cost) == 0 else cost


def accel_phase_cost(
    accel: ArrayLike, jerk: ArrayLike, a_acc_opt: ArrayLike, weights: SpeedCostWeights
) -> Any:
    """W_acc (a - a_acc_opt)^2 + W_je jerk^2."""
    return _phase_accel_cost(accel, jerk, a_acc_opt, weights)


def decel_phase_cost(
    accel: ArrayLike, jerk: ArrayLike, a_dec_opt: ArrayLike, weights: SpeedCostWeights
) -> Any:
    """W_acc (a - a_dec_opt)^2 + W_je jerk^2, with a_dec_opt negative."""
    return _phase_accel_cost(accel, jerk, a_dec_opt, weights)


@dataclass(frozen=True, eq=False)
class STGraph:
    """Uniform (t, s) lattice with particle obstacles."""

    t_samples: NDArray[np.float64]
    s_max_m: float
    ds_m: float
    obstacles: tuple[STParticle, ...] = ()
    ego_length_m: float = 0.0
    node_cost: NDArray[np.float64] | None = None

    def __post_init__(self) -> None:
        """Validate the lattice after initialization."""
        t = np.asarray(self.t_samples, dtype=float)
        if t.size < 2 or np.any(np.diff(t) <= 0):
            raise ValueError("t_samples must be strictly increasing with two or more samples")
        if not np.allclose(np.diff(t), t[1] - t[0], rtol=1e-9, atol=1e-12):
            raise ValueError("t_samples must be uniform")
        if self.ds_m <= 0 or self.s_max_m < 0:
            raise ValueError("ds_m must be positive and s_max_m nonnegative")
        object.__setattr__(self, "t_samples", t)
        if self.node_cost is not None:
            cost = np.asarray(self.node_cost, dtype=float)
            if cost.shape != (t.size, self.s_samples.size):
                raise ValueError("node_cost must have shape (times, stations)")
            object.__setattr__(self, "node_cost", cost)

    @property
    def dt_s(self) -> float:
        """Time step."""
        return float(self.t_samples[1] - self.t_samples[0])

    @property
    def horizon_s(self) -> float:
        """Last sample time."""
        return float(self.t_samples[-1])

    @property
    def s_samples(self) -> NDArray[np.float64]:
        """Station samples from 0 to the cap."""
        return np.arange(int(math.floor(self.s_max_m / self.ds_m + 1e-9)) + 1) * self.ds_m

    def gap(self, t: ArrayLike, s: ArrayLike) -> Any:
        """Smallest distance from ego stations to every obstacle at times t."""
        t_arr, s_arr = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(s, dtype=float))
        gap = np.full(t_arr.shape, np.inf)
        for obstacle in self.obstacles:
            gap = np.minimum(gap, obstacle.gap(t_arr, s_arr, self.ego_length_m))
        return gap


def build_st_graph(
    config: PlannerConfig,
    v_max_ms: float,
    obstacles: Sequence[STParticle] = (),
    ego_length_m: float = 0.0,
) -> STGraph:
    """Lattice over the configured horizon with station cap v_max * T."""
    steps = int(round(config.st_horizon_s / config.st_dt_s))
    t = np.arange(steps + 1) * config.st_dt_s
    return STGraph(
        t_samples=t,
        s_max_m=v_max_ms * config.st_horizon_s,
        ds_m=config.st_ds_m,
        obstacles=tuple(obstacles),
        ego_length_m=ego_length_m,
    )


@dataclass(frozen=True, eq=False)
class SpeedTargets:
    """Per-station reference speed and optional acceleration targets.

    ``accel`` has shape (stations, speed steps): the target at station j when
    arriving with incoming step d. ``None`` means no acceleration term.
    """

    v_ref: NDArray[np.float64]
    accel: NDArray[np.float64] | None = None
    stop_station_m: float | None = None


def stop_required(
    v_ms: float, wall_gap_m: float | None, config: PlannerConfig, d2_m: float
) -> bool:
    """Whether a stop wall lies within the comfortable stopping envelope."""
    if wall_gap_m is None:
        return False
    reach = v_ms**2 / (2 * config.stop_decel_ms2) + d2_m + config.stop_lookahead_m
    return wall_gap_m <= reach


def braking_curve(s: ArrayLike, s_stop_m: float, decel_ms2: float) -> Any:
    """Largest speed at s that still stops at s_stop with the given decel."""
    remaining = np.maximum(s_stop_m - np.asarray(s, dtype=float), 0.0)
    return np.sqrt(2 * decel_ms2 * remaining)


def reference_speeds(
    kind: PlannerKind,
    s: ArrayLike,
    s_origin_m: float,
    v_limit_ms: ArrayLike,
    env: Environment,
    params: VehicleParams,
    *,
    freeze_v_opt: bool = False,
    stop_station_m: float | None = None,
    stop_decel_ms2: float = DEFAULT_STOP_DECEL,
) -> NDArray[np.float64]:
    """Reference speed at relative stations s.

    The eco planner tracks min(v_opt, v_limit); the baseline tracks the limit.
    A pending stop caps both with the braking curve.
    """
    s_arr = np.asarray(s, dtype=float)
    v_ref = np.broadcast_to(np.asarray(v_limit_ms, dtype=float), s_arr.shape).astype(float)
    if kind is PlannerKind.EHMPP:
        s_query = np.full_like(s_arr, s_origin_m) if freeze_v_opt else s_origin_m + s_arr
        v_opt = np.asarray(optimal_cruise_speed(env.slope_profile.clamp(s_query), env, params).speed_ms)
        v_ref = np.minimum(v_ref, v_opt)
    if stop_station_m is not None:
        v_ref = np.minimum(v_ref, braking_curve(s_arr, stop_station_m, stop_decel_ms2))
    return v_ref


def _target_accel(
    kind: PlannerKind,
    phase: PhaseLabel,
    s_abs: ArrayLike,
    v: ArrayLike,
    env: Environment,
    params: VehicleParams,
) -> NDArray[np.float64] | None:
    if phase is PhaseLabel.CRUISE:
        return None
    s_arr, v_arr = np.broadcast_arrays(np.asarray(s_abs, dtype=float), np.asarray(v, dtype=float))
    if kind is PlannerKind.BASELINE:
        return np.zeros(s_arr.shape)
    s_arr = env.slope_profile.clamp(s_arr)
    if phase is PhaseLabel.ACCELERATION:
        return np.asarray(optimal_accel_profile(s_arr, v_arr, env, params), dtype=float)
    return np.asarray(optimal_decel_profile(s_arr, v_arr, env, params).accel_ms2, dtype=float)


def build_speed_targets(
    kind: PlannerKind,
    phase: PhaseLabel,
    graph: STGraph,
    s_origin_m: float,
    v_limit_ms: ArrayLike,
    env: Environment,
    params: VehicleParams,
    config: PlannerConfig,
    *,
    stop_station_m: float | None = None,
) -> SpeedTargets:
    """Reference and acceleration-target tables over the lattice."""
    stations = graph.s_samples
    v_ref = reference_speeds(
        kind,
        stations,
        s_origin_m,
        v_limit_ms,
        env,
        params,
        freeze_v_opt=config.freeze_v_opt,
        stop_station_m=stop_station_m,
        stop_decel_ms2=config.stop_decel_ms2,
    )
    speeds = np.arange(_max_step(graph, params.v_max_ms) + 1) * graph.ds_m / graph.dt_s
    accel = _target_accel(
        kind, phase, s_origin_m + stations[:, None], speeds[None, :], env, params
    )
    return SpeedTargets(v_ref=v_ref, accel=accel, stop_station_m=stop_station_m)


def _max_step(graph: STGraph, v_max_ms: float) -> int:
    return max(1, int(math.floor(v_max_ms * graph.dt_s / graph.ds_m + 1e-9)))


@dataclass(frozen=True, eq=False)
class SpeedProfile:
    """Time-sampled longitudinal profile with a single phase label."""

    t: NDArray[np.float64]
    s: NDArray[np.float64]
    v: NDArray[np.float64]
    a: NDArray[np.float64]
    jerk: NDArray[np.float64]
    phase: PhaseLabel
    s_origin_m: float = 0.0

    def __post_init__(self) -> None:
        """Validate sample arrays after initialization."""
        arrays = [np.asarray(x, dtype=float) for x in (self.t, self.s, self.v, self.a, self.jerk)]
        if len({arr.size for arr in arrays}) != 1 or arrays[0].size < 2:
            raise ValueError("speed profile arrays must share a length of two or more")
        for name, arr in zip(("t", "s", "v", "a", "jerk"), arrays, strict=True):
            object.__setattr__(self, name, arr)

    @property
    def dt_s(self) -> float:
        """Sample spacing."""
        return float(self.t[1] - self.t[0])

    @property
    def phases(self) -> tuple[PhaseLabel, ...]:
        """Phase label of every sample."""
        return (self.phase,) * self.t.size

    def state_at(self, t: float) -> LongitudinalState:
        """Interpolated (s, v, a) with constant jerk between samples.

        Past the last sample the final speed is held.
        """
        if t >= self.t[-1]:
            dt = t - float(self.t[-1])
            return LongitudinalState(
                s_m=float(self.s[-1] + self.v[-1] * dt), v_ms=float(self.v[-1]), a_ms2=0.0
            )
        i = int(np.clip(np.searchsorted(self.t, t, side="right") - 1, 0, self.t.size - 2))
        tau = max(t - float(self.t[i]), 0.0)
        j = (self.a[i + 1] - self.a[i]) / self.dt_s
        s = self.s[i] + self.v[i] * tau + 0.5 * self.a[i] * tau**2 + j * tau**3 / 6
        v = self.v[i] + self.a[i] * tau + 0.5 * j * tau**2
        return LongitudinalState(
            s_m=float(s), v_ms=float(max(v, 0.0)), a_ms2=float(self.a[i] + j * tau)
        )

    def kinematic_residuals(self) -> NDArray[np.float64]:
        """Per-step |s_{i+1} - s_i - v dt - a dt^2/2 - (a_{i+1} - a_i) dt^2/6|."""
        dt = self.dt_s
        predicted = self.s[:-1] + self.v[:-1] * dt + 0.5 * self.a[:-1] * dt**2
        predicted += (self.a[1:] - self.a[:-1]) * dt**2 / 6
        return np.abs(self.s[1:] - predicted)

    def to_rows(self, t_offset_s: float = 0.0) -> list[dict[str, Any]]:
        """Rows (t, s, v, a, jerk, phase) with absolute stations."""
        return [
            {
                "t": float(t) + t_offset_s,
                "s": float(s) + self.s_origin_m,
                "v": float(v),
                "a": float(a),
                "jerk": float(j),
                "phase": self.phase.value,
            }
            for t, s, v, a, j in zip(self.t, self.s, self.v, self.a, self.jerk, strict=True)
        ]


def profile_from_stations(
    t: ArrayLike,
    s: ArrayLike,
    start: LongitudinalState,
    phase: PhaseLabel,
    s_origin_m: float = 0.0,
) -> SpeedProfile:
    """Lattice profile with backward-difference derivatives."""
    t_arr = np.asarray(t, dtype=float)
    s_arr = np.asarray(s, dtype=float)
    dt = float(t_arr[1] - t_arr[0])
    v = np.r_[start.v_ms, np.diff(s_arr) / dt]
    a = np.r_[start.a_ms2, np.diff(v) / dt]
    jerk = np.r_[0.0, np.diff(a) / dt]
    return SpeedProfile(t=t_arr, s=s_arr, v=v, a=a, jerk=jerk, phase=phase, s_origin_m=s_origin_m)


def _node_cost(
    graph: STGraph,
    k: int,
    j: Any,
    d: Any,
    v: Any,
    a: Any,
    jerk: Any,
    phase: PhaseLabel,
    targets: SpeedTargets,
    weights: SpeedCostWeights,
) -> Any:
    """Phase-assembled cost of arriving at (t_k, s_j) with step d."""
    c_obs = np.asarray(
        st_obstacle_cost(graph.gap(graph.t_samples[k], np.asarray(j) * graph.ds_m), weights)
    )
    finite_obs = np.where(np.isinf(c_obs), 0.0, c_obs)
    cost = weights.w1 * np.asarray(ref_speed_cost(v, targets.v_ref[j], weights))
    cost = cost + np.where(np.isinf(c_obs), INFINITE_COST, weights.w3 * finite_obs)
    if phase is not PhaseLabel.CRUISE and targets.accel is not None:
        cost = cost + weights.w2 * np.asarray(
            _phase_accel_cost(a, jerk, targets.accel[j, d], weights)
        )
    if graph.node_cost is not None:
        cost = cost + graph.node_cost[k, j]
    return cost


def sequence_cost(
    graph: STGraph,
    station_index: Sequence[int],
    phase: PhaseLabel,
    start: LongitudinalState,
    targets: SpeedTargets,
    weights: SpeedCostWeights,
    *,
    a_dec_max_ms2: float,
    v_max_ms: float,
) -> float:
    """Total lattice cost of a station-index sequence beginning at k = 0.

    Acceleration: W1 C_ref + W2 C_acc + W3 C_obs. Deceleration uses C_dec in
    place of C_acc. Cruise: W1 C_ref + W3 C_obs.
    """
    idx = np.asarray(station_index, dtype=int)
    steps = np.diff(idx)
    if (
        idx[0] != 0
        or idx.size > graph.t_samples.size
        or np.any(steps < 0)
        or np.any(steps > _max_step(graph, v_max_ms))
        or idx[-1] >= graph.s_samples.size
    ):
        return INFINITE_COST
    profile = profile_from_stations(graph.t_samples[: idx.size], idx * graph.ds_m, start, phase)
    if np.any(np.abs(profile.a[1:]) > a_dec_max_ms2 * (1 + 1e-12)):
        return INFINITE_COST
    total = 0.0
    for k in range(1, idx.size):
        total += float(
            _node_cost(
                graph, k, idx[k], steps[k - 1], profile.v[k], profile.a[k], profile.jerk[k],
                phase, targets, weights,
            )
        )
    return total


@dataclass(frozen=True)
class _Layers:
    cost: list[NDArray[np.float64]]
    parent: list[NDArray[np.intp]]
    max_change: int


def _dp_layers(
    graph: STGraph,
    phase: PhaseLabel,
    start: LongitudinalState,
    targets: SpeedTargets,
    weights: SpeedCostWeights,
    a_dec_max_ms2: float,
    max_step: int,
) -> _Layers:
    """Cost-to-arrive tables, one per time layer.

    A state is (station, incoming step, step change into it). The change is
    stored offset by ``max_change`` and bounded by the acceleration limit, so
    the acceleration of every state and the jerk of every transition are
    exact. Layer 1 keeps its states in the zero-change slot with the
    acceleration from the start speed.
    """
    dt, ds = graph.dt_s, graph.ds_m
    n_s = graph.s_samples.size
    n_d = max_step + 1
    steps = np.arange(n_d)
    speeds = steps * ds / dt
    limit = a_dec_max_ms2 * (1 + 1e-12)
    max_change = min(max_step, int(math.floor(limit * dt**2 / ds)))
    n_q = 2 * max_change + 1

    cost = np.full((n_s, n_d, n_q), INFINITE_COST)
    accel = np.zeros((n_s, n_d, n_q))
    reach = steps[steps < n_s]
    a1 = (speeds[reach] - start.v_ms) / dt
    first = np.asarray(
        _node_cost(
            graph, 1, reach, reach, speeds[reach], a1, (a1 - start.a_ms2) / dt,
            phase, targets, weights,
        )
    )
    cost[reach, reach, max_change] = np.where(np.abs(a1) > limit, INFINITE_COST, first)
    accel[reach, reach, max_change] = a1
    layers = _Layers(
        cost=[np.full((n_s, n_d, n_q), INFINITE_COST), cost],
        parent=[np.zeros((n_s, n_d, n_q), dtype=np.intp)] * 2,
        max_change=max_change,
    )

    # Axes: new station, new step, new change, predecessor change
    j = np.arange(n_s)[:, None, None, None]
    d = steps[None, :, None, None]
    change = np.arange(n_q)[None, None, :, None] - max_change
    q_prev = np.arange(n_q)[None, None, None, :]
    d_prev = d - change
    valid = (j - d >= 0) & (d_prev >= 0) & (d_prev < n_d)
    j_prev = np.where(valid, j - d, 0)
    d_prev = np.where(valid, d_prev, 0)
    shape = (n_s, n_d, n_q, n_q)
    a_new = np.broadcast_to(change * ds / dt**2, shape)
    j_b, d_b = np.broadcast_to(j, shape), np.broadcast_to(d, shape)
    v_b = np.broadcast_to(speeds[d], shape)
    a_state = np.broadcast_to(change[..., 0] * ds / dt**2, (n_s, n_d, n_q)).copy()
    for k in range(2, graph.t_samples.size):
        prev_cost = np.where(valid, cost[j_prev, d_prev, q_prev], INFINITE_COST)
        jerk = (a_new - accel[j_prev, d_prev, q_prev]) / dt
        node = np.asarray(_node_cost(graph, k, j_b, d_b, v_b, a_new, jerk, phase, targets, weights))
        total = prev_cost + np.where(np.abs(a_new) > limit, INFINITE_COST, node)
        best = np.argmin(total, axis=3)
        cost = np.take_along_axis(total, best[..., None], axis=3)[..., 0]
        accel = a_state
        layers.cost.append(cost)
        layers.parent.append(best)
    return layers


def dp_speed_search(
    graph: STGraph,
    phase: PhaseLabel,
    start: LongitudinalState,
    targets: SpeedTargets,
    weights: SpeedCostWeights,
    *,
    a_dec_max_ms2: float,
    v_max_ms: float,
) -> tuple[SpeedProfile, float]:
    """Minimum-cost monotone lattice profile and its cost.

    Speed, acceleration and jerk are exact on the lattice, so the cost equals
    ``sequence_cost`` of the returned stations. The endpoint is the cheapest
    node on the top boundary (s = s_max at any time) or the right boundary
    (t = T).
    """
    if start.v_ms < 0:
        raise DomainError("start speed must be nonnegative")
    max_step = _max_step(graph, v_max_ms)
    if targets.accel is not None and targets.accel.shape[1] < max_step + 1:
        raise ValueError("acceleration targets do not cover every speed step")
    layers = _dp_layers(graph, phase, start, targets, weights, a_dec_max_ms2, max_step)
    n_s = graph.s_samples.size
    last = len(layers.cost) - 1

    best: tuple[float, int, int, int, int] | None = None
    for k in range(1, last + 1):
        top = layers.cost[k][n_s - 1]
        d, q = np.unravel_index(np.argmin(top), top.shape)
        if np.isfinite(top[d, q]) and (best is None or top[d, q] < best[0]):
            best = (float(top[d, q]), k, n_s - 1, int(d), int(q))
    j_r, d_r, q_r = np.unravel_index(np.argmin(layers.cost[last]), layers.cost[last].shape)
    right = float(layers.cost[last][j_r, d_r, q_r])
    if np.isfinite(right) and (best is None or right < best[0]):
        best = (right, last, int(j_r), int(d_r), int(q_r))
    if best is None:
        raise InfeasibleHorizonError(
            f"no finite speed profile over {graph.horizon_s:.1f} s "
            f"({len(graph.obstacles)} obstacles, phase {phase})"
        )

    total, k_end, j_cur, d_cur, q_cur = best
    stations = [j_cur]
    for k in range(k_end, 1, -1):
        q_prev = int(layers.parent[k][j_cur, d_cur, q_cur])
        j_cur -= d_cur
        d_cur -= q_cur - layers.max_change
        q_cur = q_prev
        stations.append(j_cur)
    stations.append(0)
    stations.reverse()
    profile = profile_from_stations(
        graph.t_samples[: k_end + 1], np.asarray(stations) * graph.ds_m, start, phase
    )
    _LOGGER.debug(
        "Speed DP %s cost %.4f ending at t=%.1f s", phase, total, graph.t_samples[k_end]
    )
    return profile, total


@dataclass(frozen=True, eq=False)
class STCorridor:
    """Per-sample station bounds for the speed QP."""

    t: NDArray[np.float64]
    s_lo: NDArray[np.float64]
    s_hi: NDArray[np.float64]

    def __post_init__(self) -> None:
        """Validate bounds after initialization."""
        if np.any(np.asarray(self.s_lo) > np.asarray(self.s_hi)):
            raise ValueError("corridor bounds must satisfy s_lo <= s_hi")

    def to_rows(self, s_offset_m: float = 0.0) -> list[dict[str, float]]:
        """Rows (t, s_lo, s_hi)."""
        return [
            {"t": float(t), "s_lo": float(lo) + s_offset_m, "s_hi": float(hi) + s_offset_m}
            for t, lo, hi in zip(self.t, self.s_lo, self.s_hi, strict=True)
        ]


def build_st_corridor(
    coarse: SpeedProfile,
    graph: STGraph,
    weights: SpeedCostWeights,
    *,
    safety_buffer_m: float = DEFAULT_SAFETY_BUFFER,
) -> STCorridor:
    """Station bounds that keep the side of each obstacle the coarse profile chose.

    Passing behind caps s at the obstacle rear minus d2 and the buffer, using
    the earlier of the two adjacent samples; passing ahead floors s at the
    front plus d2 and the buffer. A bound never cuts off the coarse sample.
    """
    s = coarse.s
    lo = np.zeros(s.size)
    hi = np.full(s.size, max(graph.s_max_m, float(s.max())))
    for obstacle in graph.obstacles:
        half = 0.5 * (obstacle.length_m + graph.ego_length_m)
        centre = np.asarray(obstacle.s_at(coarse.t))
        rear = centre - half
        rear_adjacent = np.minimum(rear, np.r_[rear[0], rear[:-1]])
        behind = s < centre
        upper = np.maximum(rear_adjacent - weights.d2_m - safety_buffer_m, s)
        lower = np.minimum(centre + half + weights.d2_m + safety_buffer_m, s)
        hi = np.where(behind, np.minimum(hi, upper), hi)
        lo = np.where(behind, lo, np.maximum(lo, lower))
    lo[0] = min(lo[0], s[0])
    hi[0] = max(hi[0], s[0])
    return STCorridor(t=coarse.t.copy(), s_lo=lo, s_hi=np.maximum(hi, lo))


def discretized_speed_objective(
    v: ArrayLike,
    a: ArrayLike,
    v_ref: ArrayLike,
    a_target: ArrayLike | None,
    dt: float,
    weights: SpeedCostWeights,
) -> float:
    """Sampled refinement objective; a_target None selects the cruise form."""
    v_arr, a_arr, ref = (np.asarray(x, dtype=float) for x in (v, a, v_ref))
    jerk = np.diff(a_arr) / dt
    total = weights.w1 * weights.w_ref_speed * np.sum((v_arr - ref) ** 2)
    if a_target is None:
        total += weights.w_je * np.sum(jerk**2)
    else:
        total += weights.w2 * (
            weights.w_acc * np.sum((a_arr - np.asarray(a_target, dtype=float)) ** 2)
            + weights.w_je * np.sum(jerk**2)
        )
    return float(dt * total)


@dataclass(frozen=True)
class SpeedRefineResult:
    """Refined speed profile with its QP diagnostics."""

    profile: SpeedProfile
    status: QPStatus
    objective: float
    coarse_objective: float
    fallback: bool
    primal_residual: float = 0.0
    dual_residual: float = 0.0


def qp_speed_refine(
    coarse: SpeedProfile,
    phase: PhaseLabel,
    weights: SpeedCostWeights,
    corridor: STCorridor,
    *,
    v_ref: ArrayLike,
    a_target: ArrayLike | None,
    v_max_ms: float,
    a_dec_max_ms2: float,
    a_traction_max_ms2: ArrayLike = math.inf,
    tol: float = DEFAULT_QP_TOL,
    max_iter: int = DEFAULT_QP_MAX_ITER,
) -> SpeedRefineResult:
    """Constant-jerk QP over per-sample (s, v, a) with the start pinned.

    The coarse objective is scored on the coarse profile carried onto the same
    constraints, so a certified optimum never scores worse. Falls back to the
    coarse profile, with a warning, only when the QP does not certify.
    """
    n = coarse.t.size
    dt = coarse.dt_s
    ref = np.broadcast_to(np.asarray(v_ref, dtype=float), (n,))
    target = (
        None
        if phase is PhaseLabel.CRUISE or a_target is None
        else np.broadcast_to(np.asarray(a_target, dtype=float), (n,))
    )
    a_lo = np.full(n, -a_dec_max_ms2)
    a_hi = np.maximum(np.broadcast_to(np.asarray(a_traction_max_ms2, dtype=float), (n,)), a_lo)
    if target is not None:
        target = np.clip(target, a_lo, a_hi)
    idx_s = np.arange(n) * 3
    idx_v = idx_s + 1
    idx_a = idx_s + 2
    size = 3 * n
    diag = np.zeros(size)
    linear = np.zeros(size)
    diag[idx_v] = 2 * dt * weights.w1 * weights.w_ref_speed
    linear[idx_v] = -2 * dt * weights.w1 * weights.w_ref_speed * ref
    jerk_w = 2 * weights.w_je / dt
    if target is not None:
        diag[idx_a] = 2 * dt * weights.w2 * weights.w_acc
        linear[idx_a] = -2 * dt * weights.w2 * weights.w_acc * target
        jerk_w *= weights.w2
    hessian = sp.lil_matrix((size, size))
    hessian.setdiag(diag)
    for i in range(n - 1):
        a, b = idx_a[i], idx_a[i + 1]
        hessian[a, a] += jerk_w
        hessian[b, b] += jerk_w
        hessian[a, b] -= jerk_w
        hessian[b, a] -= jerk_w

    a_eq = sp.lil_matrix((2 * (n - 1) + 3, size))
    a_in = sp.lil_matrix((n - 1, size))
    for i in range(n - 1):
        a_eq[2 * i, idx_v[i + 1]] = 1.0
        a_eq[2 * i, idx_v[i]] = -1.0
        a_eq[2 * i, idx_a[i]] = -dt / 2
        a_eq[2 * i, idx_a[i + 1]] = -dt / 2
        a_eq[2 * i + 1, idx_s[i + 1]] = 1.0
        a_eq[2 * i + 1, idx_s[i]] = -1.0
        a_eq[2 * i + 1, idx_v[i]] = -dt
        a_eq[2 * i + 1, idx_a[i]] = -(dt**2) / 3
        a_eq[2 * i + 1, idx_a[i + 1]] = -(dt**2) / 6
        a_in[i, idx_s[i]] = 1.0
        a_in[i, idx_s[i + 1]] = -1.0
    start_a = float(np.clip(coarse.a[0], a_lo[0], a_hi[0]))
    for r, (col, value) in enumerate(
        ((idx_s[0], coarse.s[0]), (idx_v[0], coarse.v[0]), (idx_a[0], start_a))
    ):
        a_eq[2 * (n - 1) + r, col] = 1.0
    b_eq = np.zeros(2 * (n - 1) + 3)
    b_eq[-3:] = (coarse.s[0], coarse.v[0], start_a)

    lower = np.empty(size)
    upper = np.empty(size)
    lower[idx_s], upper[idx_s] = corridor.s_lo, corridor.s_hi
    lower[idx_v], upper[idx_v] = 0.0, max(v_max_ms, float(coarse.v[0]))
    lower[idx_a], upper[idx_a] = a_lo, a_hi

    qp = QuadraticProgram(
        hessian=hessian.tocsc(),
        linear_term=linear,
        lower=lower,
        upper=upper,
        a_eq=a_eq.tocsc(),
        b_eq=b_eq,
        a_in=a_in.tocsc(),
        b_in=np.zeros(n - 1),
    )
    samples = np.empty(size)
    samples[idx_s], samples[idx_v], samples[idx_a] = coarse.s, coarse.v, coarse.a
    projected = closest_feasible_point(
        qp, samples, np.tile([_REFERENCE_STATION_WEIGHT, 1.0, 1.0], n), tol=tol, max_iter=max_iter
    )
    reference = projected.x if projected.is_optimal else samples
    coarse_objective = discretized_speed_objective(
        reference[idx_v], reference[idx_a], ref, target, dt, weights
    )

    solution = solve(qp, tol=tol, max_iter=max_iter)
    s_opt = np.maximum.accumulate(np.clip(solution.x[idx_s], lower[idx_s], upper[idx_s]))
    v_opt = np.clip(solution.x[idx_v], lower[idx_v], upper[idx_v])
    a_opt = solution.x[idx_a]
    objective = discretized_speed_objective(v_opt, a_opt, ref, target, dt, weights)

    if not solution.is_optimal:
        _LOGGER.warning(
            "Speed QP fell back to the coarse profile (status %s, objective %.6g vs coarse %.6g)",
            solution.status,
            objective,
            coarse_objective,
        )
        return SpeedRefineResult(
            profile=coarse,
            status=solution.status,
            objective=coarse_objective,
            coarse_objective=coarse_objective,
            fallback=True,
            primal_residual=solution.primal_residual,
            dual_residual=solution.dual_residual,
        )
    refined = SpeedProfile(
        t=coarse.t.copy(),
        s=s_opt,
        v=v_opt,
        a=a_opt,
        jerk=np.r_[0.0, np.diff(a_opt) / dt],
        phase=phase,
        s_origin_m=coarse.s_origin_m,
    )
    return SpeedRefineResult(
        profile=refined,
        status=solution.status,
        objective=objective,
        coarse_objective=coarse_objective,
        fallback=False,
        primal_residual=solution.primal_residual,
        dual_residual=solution.dual_residual,
    )


@dataclass(frozen=True)
class SpeedPlan:
    """Output of one speed-planning cycle."""

    phase: PhaseLabel
    graph: STGraph
    targets: SpeedTargets
    coarse: SpeedProfile
    dp_cost: float
    corridor: STCorridor
    refined: SpeedRefineResult

    @property
    def profile(self) -> SpeedProfile:
        """Final speed profile."""
        return self.refined.profile


def plan_speed(
    kind: PlannerKind,
    start: LongitudinalState,
    s_origin_m: float,
    v_limit: Callable[[NDArray[np.float64]], NDArray[np.float64]],
    env: Environment,
    params: VehicleParams,
    config: PlannerConfig,
    *,
    obstacles: Sequence[STParticle] = (),
    wall_station_m: float | None = None,
    a_dec_max_ms2: float,
) -> SpeedPlan:
    """Phase classification, lattice search and QP refinement for one cycle.

    ``start.s_m`` must be 0; stations, obstacles and the wall are relative to
    the ego at ``s_origin_m``. A wall is added to the graph as a static
    particle of zero length.
    """
    if start.s_m != 0:
        raise DomainError("speed planning starts at the relative station 0")
    weights = config.speed_weights
    particles = list(obstacles)
    stop_station = None
    needs_stop = stop_required(start.v_ms, wall_station_m, config, weights.d2_m)
    if wall_station_m is not None:
        particles.append(STParticle(s0_m=wall_station_m, speed_ms=0.0))
        if needs_stop:
            stop_station = (
                wall_station_m - weights.d2_m - config.stop_buffer_m - 0.5 * params.length_m
            )
    graph = build_st_graph(config, params.v_max_ms, particles, params.length_m)

    v_target = float(
        reference_speeds(
            kind, np.zeros(1), s_origin_m, v_limit(np.zeros(1)), env, params,
            freeze_v_opt=config.freeze_v_opt,
        )[0]
    )
    phase = classify_phase(start.v_ms, v_target, needs_stop, config.eps_v_ms)
    targets = build_speed_targets(
        kind, phase, graph, s_origin_m, v_limit(graph.s_samples), env, params, config,
        stop_station_m=stop_station,
    )
    coarse, dp_cost = dp_speed_search(
        graph, phase, start, targets, weights, a_dec_max_ms2=a_dec_max_ms2, v_max_ms=params.v_max_ms
    )
    coarse = SpeedProfile(
        t=coarse.t, s=coarse.s, v=coarse.v, a=coarse.a, jerk=coarse.jerk,
        phase=phase, s_origin_m=s_origin_m,
    )
    corridor = build_st_corridor(coarse, graph, weights, safety_buffer_m=config.safety_buffer_m)

    v_ref = reference_speeds(
        kind, coarse.s, s_origin_m, v_limit(coarse.s), env, params,
        freeze_v_opt=config.freeze_v_opt, stop_station_m=stop_station,
        stop_decel_ms2=config.stop_decel_ms2,
    )
    a_target = _target_accel(kind, phase, s_origin_m + coarse.s, coarse.v, env, params)
    s_abs = env.slope_profile.clamp(s_origin_m + coarse.s)
    a_traction = np.asarray(max_traction_accel_profile(s_abs, coarse.v, env, params))
    refined = qp_speed_refine(
        coarse, phase, weights, corridor,
        v_ref=v_ref, a_target=a_target, v_max_ms=params.v_max_ms,
        a_dec_max_ms2=a_dec_max_ms2, a_traction_max_ms2=a_traction,
        tol=config.qp_tol, max_iter=config.qp_max_iter,
    )
    return SpeedPlan(
        phase=phase, graph=graph, targets=targets, coarse=coarse, dp_cost=dp_cost,
        corridor=corridor, refined=refined,
    )
