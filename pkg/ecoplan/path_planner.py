"""SL path planning: quintic lattice DP, convex corridor and QP refinement."""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass, field
import logging
import math
from typing import Any, NamedTuple

import numpy as np
from numpy.typing import ArrayLike, NDArray
import scipy.sparse as sp

from .const import (
    DEFAULT_LATERAL_BUFFER,
    DEFAULT_PATH_QP_DS,
    DEFAULT_QP_MAX_ITER,
    DEFAULT_QP_TOL,
    INFINITE_COST,
    SEGMENT_SAMPLES,
    QPStatus,
)
from .errors import BlockedPathError, CorridorCollapseError, DegenerateSegmentError, DomainError
from .frenet_frame import SLBox
from .models import PathCostWeights, PlannerConfig
from .qp_core import QuadraticProgram, closest_feasible_point, solve

_LOGGER = logging.getLogger(__name__)

_QUINTIC_ORDER = 6
_GAUSS_NODES, _GAUSS_WEIGHTS = np.polynomial.legendre.leggauss(6)
# Slack on corridor containment of the DP path
_CONTAIN_TOL = 1e-9
# Offsets dominate the DP reference projection
_REFERENCE_OFFSET_WEIGHT = 100.0


class PathNode(NamedTuple):
    """Lattice node (s, l, l', l'')."""

    s: float
    l: float  # noqa: E741
    dl: float = 0.0
    ddl: float = 0.0


def _quintic_coefficients(
    l0: Any, dl0: Any, ddl0: Any, l1: Any, dl1: Any, ddl1: Any, h: float
) -> NDArray[np.float64]:
    """Coefficients a0..a5 in local u = s - s0, broadcast over the inputs."""
    delta = np.asarray(l1, dtype=float) - np.asarray(l0, dtype=float)
    l0, dl0, ddl0, dl1, ddl1, delta = np.broadcast_arrays(
        np.asarray(l0, dtype=float), dl0, ddl0, dl1, ddl1, delta
    )
    a3 = (20 * delta - (8 * dl1 + 12 * dl0) * h - (3 * ddl0 - ddl1) * h**2) / (2 * h**3)
    a4 = (-30 * delta + (14 * dl1 + 16 * dl0) * h + (3 * ddl0 - 2 * ddl1) * h**2) / (2 * h**4)
    a5 = (12 * delta - 6 * (dl1 + dl0) * h + (ddl1 - ddl0) * h**2) / (2 * h**5)
    return np.stack([l0, dl0, 0.5 * ddl0, a3, a4, a5], axis=-1)


def _derivative_coefficients(coeffs: NDArray[np.float64], order: int) -> NDArray[np.float64]:
    """Coefficients of the order-th derivative, padded to six terms."""
    out = np.zeros_like(coeffs)
    for k in range(_QUINTIC_ORDER - order):
        out[..., k] = coeffs[..., k + order] * math.perm(k + order, order)
    return out


def _moment_matrix(h: float) -> NDArray[np.float64]:
    """M_ij = integral of u^(i+j) over [0, h]."""
    power = np.add.outer(np.arange(_QUINTIC_ORDER), np.arange(_QUINTIC_ORDER)) + 1
    return h**power / power


def _squared_integral(coeffs: NDArray[np.float64], h: float, order: int) -> Any:
    d = _derivative_coefficients(coeffs, order)
    return np.einsum("...i,ij,...j->...", d, _moment_matrix(h), d)


def _polyval(coeffs: NDArray[np.float64], u: Any, order: int = 0) -> Any:
    d = _derivative_coefficients(coeffs, order) if order else coeffs
    u_arr = np.asarray(u, dtype=float)
    result = np.zeros(np.broadcast_shapes(d.shape[:-1], u_arr.shape))
    for k in range(_QUINTIC_ORDER - 1, -1, -1):
        result = result * u_arr + d[..., k]
    return result


@dataclass(frozen=True, eq=False)
class QuinticSegment:
    """Quintic l = sum a_k (s - s0)^k over [s0, s1]."""

    s0: float
    s1: float
    coeffs: NDArray[np.float64]

    @property
    def h(self) -> float:
        """Segment length."""
        return self.s1 - self.s0

    def evaluate(self, s: ArrayLike, order: int = 0) -> Any:
        """Value or derivative at s (global arc coordinates)."""
        value = _polyval(self.coeffs, np.asarray(s, dtype=float) - self.s0, order)
        return float(value) if np.ndim(value) == 0 else value

    def squared_integral(self, order: int) -> float:
        """Integral of the squared order-th derivative over the segment."""
        return float(_squared_integral(self.coeffs, self.h, order))


def quintic_connect(node_a: PathNode, node_b: PathNode) -> QuinticSegment:
    """Unique quintic matching value, slope and second derivative at both ends."""
    h = node_b.s - node_a.s
    if h <= 0:
        raise DegenerateSegmentError(
            f"quintic needs s_b > s_a, got s_a={node_a.s}, s_b={node_b.s}"
        )
    coeffs = _quintic_coefficients(
        node_a.l, node_a.dl, node_a.ddl, node_b.l, node_b.dl, node_b.ddl, h
    )
    return QuinticSegment(node_a.s, node_b.s, coeffs)


@dataclass(frozen=True, eq=False)
class PathProfile:
    """Piecewise-quintic lateral profile through knots (s, l, l', l'')."""

    knots: tuple[PathNode, ...]
    segments: tuple[QuinticSegment, ...] = field(init=False)

    def __post_init__(self) -> None:
        """Connect the knots."""
        if len(self.knots) < 2:
            raise ValueError("path profile needs at least two knots")
        segments = tuple(
            quintic_connect(a, b) for a, b in zip(self.knots, self.knots[1:], strict=False)
        )
        object.__setattr__(self, "segments", segments)

    @classmethod
    def from_arrays(
        cls, stations: ArrayLike, l: ArrayLike, dl: ArrayLike, ddl: ArrayLike  # noqa: E741
    ) -> PathProfile:
        """Build a profile from per-station arrays."""
        return cls(
            knots=tuple(
                PathNode(float(s), float(a), float(b), float(c))
                for s, a, b, c in zip(
                    np.asarray(stations), np.asarray(l), np.asarray(dl), np.asarray(ddl), strict=True
                )
            )
        )

    @property
    def stations(self) -> NDArray[np.float64]:
        """Knot stations."""
        return np.array([k.s for k in self.knots])

    @property
    def s_start(self) -> float:
        """First knot station."""
        return self.knots[0].s

    @property
    def s_end(self) -> float:
        """Last knot station."""
        return self.knots[-1].s

    def evaluate(self, s: ArrayLike, order: int = 0) -> Any:
        """Value or derivative at s; stations outside the knots are clamped."""
        s_arr = np.clip(np.asarray(s, dtype=float), self.s_start, self.s_end)
        stations = self.stations
        index = np.clip(np.searchsorted(stations, s_arr, side="right") - 1, 0, len(self.segments) - 1)
        coeffs = np.stack([seg.coeffs for seg in self.segments])[index]
        value = _polyval(coeffs, s_arr - stations[index], order)
        return float(value) if np.ndim(value) == 0 else value

    def max_abs(self, order: int, samples_per_segment: int = 20) -> float:
        """Largest |derivative| over a dense sampling."""
        grid = np.concatenate(
            [np.linspace(seg.s0, seg.s1, samples_per_segment) for seg in self.segments]
        )
        return float(np.max(np.abs(self.evaluate(grid, order))))

    def to_rows(self, s_offset_m: float = 0.0) -> list[dict[str, float]]:
        """Rows (s, l, dl, ddl) at the knots."""
        return [
            {"s": k.s + s_offset_m, "l": k.l, "dl": k.dl, "ddl": k.ddl} for k in self.knots
        ]


def obstacle_cost(d: ArrayLike, weights: PathCostWeights) -> Any:
    """Clearance cost: 0 beyond d1, a decreasing linear ramp down to d2, infinite below."""
    d_arr = np.asarray(d, dtype=float)
    ramp = weights.ramp_k * (weights.d1_m - d_arr) / (weights.d1_m - weights.d2_m)
    cost = np.where(d_arr > weights.d1_m, 0.0, np.where(d_arr < weights.d2_m, INFINITE_COST, ramp))
    return float(cost) if cost.ndim == 0 else cost


def _smoothness_terms(coeffs: NDArray[np.float64], h: float, weights: PathCostWeights) -> Any:
    return (
        weights.w1 * _squared_integral(coeffs, h, 1)
        + weights.w2 * _squared_integral(coeffs, h, 2)
        + weights.w3 * _squared_integral(coeffs, h, 3)
    )


def smoothness_cost(profile: PathProfile | QuinticSegment, weights: PathCostWeights) -> float:
    """w1 int f'^2 + w2 int f''^2 + w3 int f'''^2 over the profile."""
    segments = (profile,) if isinstance(profile, QuinticSegment) else profile.segments
    return float(sum(_smoothness_terms(seg.coeffs, seg.h, weights) for seg in segments))


def reference_cost(
    profile: PathProfile | QuinticSegment, reference: PathProfile | None = None
) -> float:
    """Integral of (f - g)^2; g defaults to the reference line itself (g = 0)."""
    segments = (profile,) if isinstance(profile, QuinticSegment) else profile.segments
    if reference is None:
        return float(sum(_squared_integral(seg.coeffs, seg.h, 0) for seg in segments))
    knots = np.union1d(
        np.array([seg.s0 for seg in segments] + [segments[-1].s1]),
        reference.stations,
    )
    lo = max(segments[0].s0, reference.s_start)
    hi = min(segments[-1].s1, reference.s_end)
    knots = knots[(knots >= lo) & (knots <= hi)]
    total = 0.0
    for a, b in zip(knots, knots[1:], strict=False):
        s = 0.5 * (b - a) * _GAUSS_NODES + 0.5 * (a + b)
        f = np.array([_evaluate_segments(segments, x) for x in s])
        diff = f - np.asarray(reference.evaluate(s))
        total += 0.5 * (b - a) * float(_GAUSS_WEIGHTS @ diff**2)
    return total


def _evaluate_segments(segments: Sequence[QuinticSegment], s: float) -> float:
    for seg in segments:
        if s <= seg.s1:
            return float(seg.evaluate(s))
    return float(segments[-1].evaluate(s))


def path_clearance(
    s: ArrayLike,
    l: ArrayLike,  # noqa: E741
    obstacles: Sequence[SLBox],
    half_width_m: float,
    lateral_buffer_m: float = DEFAULT_LATERAL_BUFFER,
) -> Any:
    """Longitudinal clearance of ego samples to laterally conflicting boxes.

    Samples whose lateral gap to a box exceeds the buffer do not conflict with
    it; with no conflict at all the clearance is infinite.
    """
    s_arr = np.asarray(s, dtype=float)
    l_arr = np.asarray(l, dtype=float)
    s_arr, l_arr = np.broadcast_arrays(s_arr, l_arr)
    clearance = np.full(s_arr.shape, np.inf)
    for box in obstacles:
        conflict = box.lateral_gap(l_arr - half_width_m, l_arr + half_width_m) <= lateral_buffer_m
        clearance = np.where(conflict, np.minimum(clearance, box.longitudinal_gap(s_arr)), clearance)
    return clearance


@dataclass(frozen=True, eq=False)
class SLGrid:
    """Station lattice with lateral offsets, static obstacles and node costs.

    Station 0 carries the single start node; ``offsets[k]`` are the lateral
    samples of station k for k >= 1 (``offsets[0]`` holds the start offset).
    When ``road_bounds_m`` is set the start offset must lie inside it.
    """

    stations: NDArray[np.float64]
    offsets: tuple[NDArray[np.float64], ...]
    obstacles: tuple[SLBox, ...] = ()
    half_width_m: float = 0.9
    lateral_buffer_m: float = DEFAULT_LATERAL_BUFFER
    node_cost: tuple[NDArray[np.float64], ...] | None = None
    road_bounds_m: tuple[float, float] | None = None

    def __post_init__(self) -> None:
        """Validate lattice shape after initialization."""
        stations = np.asarray(self.stations, dtype=float)
        if stations.size < 2:
            raise ValueError("SL grid needs at least two stations")
        spacing = np.diff(stations)
        if np.any(spacing <= 0) or not np.allclose(spacing, spacing[0], rtol=1e-9, atol=1e-9):
            raise ValueError("SL grid stations must be uniformly increasing")
        if len(self.offsets) != stations.size or any(len(o) < 1 for o in self.offsets):
            raise ValueError("SL grid needs at least one offset per station")
        if self.node_cost is not None and [len(c) for c in self.node_cost] != [
            len(o) for o in self.offsets
        ]:
            raise ValueError("node_cost must match the offsets shape")
        object.__setattr__(self, "stations", stations)
        object.__setattr__(self, "offsets", tuple(np.asarray(o, dtype=float) for o in self.offsets))

    @property
    def ds_m(self) -> float:
        """Station spacing."""
        return float(self.stations[1] - self.stations[0])

    def clearance(self, s: ArrayLike, l: ArrayLike) -> Any:  # noqa: E741
        """Obstacle clearance at lattice samples."""
        return path_clearance(s, l, self.obstacles, self.half_width_m, self.lateral_buffer_m)


def lattice_offsets(
    road_lo_m: float, road_hi_m: float, half_width_m: float, dl_m: float
) -> NDArray[np.float64]:
    """Offsets k * dl inside [road_lo + hw, road_hi - hw]."""
    lo = road_lo_m + half_width_m
    hi = road_hi_m - half_width_m
    if lo > hi + _CONTAIN_TOL:
        raise DomainError("road is narrower than the vehicle")
    first = math.ceil(lo / dl_m - 1e-9)
    last = math.floor(hi / dl_m + 1e-9)
    if last < first:
        return np.array([0.5 * (lo + hi)])
    return np.arange(first, last + 1) * dl_m


def build_sl_grid(
    start: PathNode,
    length_m: float,
    road_bounds: tuple[float, float],
    half_width_m: float,
    config: PlannerConfig,
    obstacles: Sequence[SLBox] = (),
    rng: np.random.Generator | None = None,
) -> SLGrid:
    """Uniform lattice from the start station over length_m.

    With ``config.lattice_jitter`` and an rng, interior offsets are jittered
    by up to a quarter of the lateral spacing.
    """
    if length_m <= 0:
        raise DomainError("path lattice needs a positive length")
    stages = max(1, math.ceil(length_m / config.lattice_ds_m - 1e-9))
    stations = start.s + np.linspace(0.0, length_m, stages + 1)
    base = lattice_offsets(road_bounds[0], road_bounds[1], half_width_m, config.lattice_dl_m)
    offsets: list[NDArray[np.float64]] = [np.array([start.l])]
    for _ in range(stages):
        column = base.copy()
        if config.lattice_jitter and rng is not None and column.size > 2:
            jitter = rng.uniform(-0.25, 0.25, column.size - 2) * config.lattice_dl_m
            column[1:-1] += jitter
        offsets.append(column)
    return SLGrid(
        stations=stations,
        offsets=tuple(offsets),
        obstacles=tuple(obstacles),
        half_width_m=half_width_m,
        lateral_buffer_m=config.lateral_buffer_m,
        road_bounds_m=(float(road_bounds[0]), float(road_bounds[1])),
    )


def stage_transition_costs(
    grid: SLGrid, stage: int, weights: PathCostWeights, start: PathNode
) -> NDArray[np.float64]:
    """Transition costs from station ``stage`` to ``stage + 1``, shape (prev, next).

    Weighted obstacle, smoothness and reference costs of each connecting
    quintic plus the destination node cost. Infinite obstacle costs stay
    infinite regardless of the weight.
    """
    h = float(grid.stations[stage + 1] - grid.stations[stage])
    prev = grid.offsets[stage][:, None]
    nxt = grid.offsets[stage + 1][None, :]
    if stage == 0:
        coeffs = _quintic_coefficients(prev, start.dl, start.ddl, nxt, 0.0, 0.0, h)
    else:
        coeffs = _quintic_coefficients(prev, 0.0, 0.0, nxt, 0.0, 0.0, h)

    u = h * (np.arange(1, SEGMENT_SAMPLES + 1) / SEGMENT_SAMPLES)
    samples_l = _polyval(coeffs[..., None, :], u)
    samples_s = grid.stations[stage] + u
    c_obs = np.asarray(obstacle_cost(grid.clearance(samples_s, samples_l), weights)).sum(axis=-1)
    obs_term = np.where(np.isinf(c_obs), INFINITE_COST, weights.w_obs * np.where(np.isinf(c_obs), 0.0, c_obs))
    cost = (
        obs_term
        + weights.w_sm * _smoothness_terms(coeffs, h, weights)
        + weights.w_re * _squared_integral(coeffs, h, 0)
    )
    if grid.node_cost is not None:
        cost = cost + grid.node_cost[stage + 1][None, :]
    return cost


@dataclass(frozen=True)
class PathDPResult:
    """Minimum-cost lattice path."""

    nodes: tuple[PathNode, ...]
    profile: PathProfile
    cost: float


def dp_search(grid: SLGrid, start: PathNode, weights: PathCostWeights) -> PathDPResult:
    """Stage-wise Bellman recursion over the lattice."""
    if abs(start.s - grid.stations[0]) > _CONTAIN_TOL:
        raise DomainError("start must sit on the first lattice station")
    if grid.road_bounds_m is not None and not (
        grid.road_bounds_m[0] - _CONTAIN_TOL <= start.l <= grid.road_bounds_m[1] + _CONTAIN_TOL
    ):
        raise DomainError(
            f"start offset {start.l:.3f} m lies outside the road bounds {grid.road_bounds_m}"
        )
    cost_to_go = np.zeros(1)
    if grid.node_cost is not None:
        cost_to_go = cost_to_go + grid.node_cost[0][:1]
    parents: list[NDArray[np.intp]] = []
    for stage in range(grid.stations.size - 1):
        transition = stage_transition_costs(grid, stage, weights, start)
        total = cost_to_go[:, None] + transition
        best = np.argmin(total, axis=0)
        cost_to_go = total[best, np.arange(total.shape[1])]
        parents.append(best)

    if not np.any(np.isfinite(cost_to_go)):
        raise BlockedPathError(
            f"no finite-cost path over {grid.stations.size} stations "
            f"({len(grid.obstacles)} obstacles)"
        )
    index = int(np.argmin(cost_to_go))
    cost = float(cost_to_go[index])
    chosen = [index]
    for best in reversed(parents):
        index = int(best[index])
        chosen.append(index)
    chosen.reverse()

    nodes = [start]
    for k in range(1, grid.stations.size):
        nodes.append(PathNode(float(grid.stations[k]), float(grid.offsets[k][chosen[k]])))
    _LOGGER.debug("Path DP cost %.4f over %d stations", cost, len(nodes))
    return PathDPResult(nodes=tuple(nodes), profile=PathProfile(knots=tuple(nodes)), cost=cost)


@dataclass(frozen=True, eq=False)
class Corridor:
    """Per-station lateral bounds for the path QP."""

    stations: NDArray[np.float64]
    l_lo: NDArray[np.float64]
    l_hi: NDArray[np.float64]

    def __post_init__(self) -> None:
        """Validate bounds after initialization."""
        if not (len(self.stations) == len(self.l_lo) == len(self.l_hi)) or len(self.stations) < 2:
            raise ValueError("corridor needs matching bounds at two or more stations")
        if np.any(np.asarray(self.l_lo) > np.asarray(self.l_hi)):
            raise ValueError("corridor bounds must satisfy l_lo <= l_hi")

    def contains(self, l: ArrayLike) -> bool:  # noqa: E741
        """Whether per-station values lie within the bounds."""
        values = np.asarray(l, dtype=float)
        return bool(np.all(values >= self.l_lo) and np.all(values <= self.l_hi))

    def to_rows(self, s_offset_m: float = 0.0) -> list[dict[str, float]]:
        """Rows (s, l_lo, l_hi)."""
        return [
            {"s": float(s) + s_offset_m, "l_lo": float(lo), "l_hi": float(hi)}
            for s, lo, hi in zip(self.stations, self.l_lo, self.l_hi, strict=True)
        ]


def build_corridor(
    dp_path: PathDPResult,
    grid: SLGrid,
    obstacles: Sequence[SLBox],
    road_bounds: tuple[float, float],
    *,
    ds_m: float = DEFAULT_PATH_QP_DS,
    ego_length_m: float = 0.0,
) -> Corridor:
    """Widest collision-free lateral interval around the DP path at each QP station.

    Bounds apply to the vehicle centre: obstacles are inflated by the ego
    half-width laterally and half-length longitudinally, and the road is
    shrunk by the half-width.
    """
    hw = grid.half_width_m
    s0, s1 = dp_path.profile.s_start, dp_path.profile.s_end
    count = max(1, math.ceil((s1 - s0) / ds_m - 1e-9))
    stations = np.linspace(s0, s1, count + 1)
    centre = np.asarray(dp_path.profile.evaluate(stations))
    road_lo, road_hi = road_bounds[0] + hw, road_bounds[1] - hw
    lo = np.full(stations.size, road_lo)
    hi = np.full(stations.size, road_hi)
    half_length = 0.5 * ego_length_m

    for i, (s, l_dp) in enumerate(zip(stations, centre, strict=True)):
        if l_dp < road_lo - _CONTAIN_TOL or l_dp > road_hi + _CONTAIN_TOL:
            raise CorridorCollapseError(f"DP path leaves the road at s={s:.2f} (l={l_dp:.3f})")
        for box in obstacles:
            if not (box.s_lo - half_length <= s <= box.s_hi + half_length):
                continue
            blocked_lo, blocked_hi = box.l_lo - hw, box.l_hi + hw
            if blocked_lo + _CONTAIN_TOL < l_dp < blocked_hi - _CONTAIN_TOL:
                raise CorridorCollapseError(
                    f"DP path overlaps an obstacle at s={s:.2f} (l={l_dp:.3f})"
                )
            if blocked_hi <= l_dp + _CONTAIN_TOL:
                lo[i] = max(lo[i], blocked_hi)
            else:
                hi[i] = min(hi[i], blocked_lo)
        if not lo[i] - _CONTAIN_TOL <= l_dp <= hi[i] + _CONTAIN_TOL:
            raise CorridorCollapseError(f"no corridor margin at s={s:.2f}")
        lo[i] = min(lo[i], l_dp)
        hi[i] = max(hi[i], l_dp)
    return Corridor(stations=stations, l_lo=lo, l_hi=hi)


def discretized_path_objective(
    l: ArrayLike,  # noqa: E741
    dl: ArrayLike,
    ddl: ArrayLike,
    reference: ArrayLike,
    h: float,
    weights: PathCostWeights,
) -> float:
    """Station-sampled refinement objective with jerk from l'' differences."""
    l_arr, dl_arr, ddl_arr, g = (np.asarray(v, dtype=float) for v in (l, dl, ddl, reference))
    jerk = np.diff(ddl_arr) / h
    return float(
        h
        * (
            weights.w1 * np.sum(dl_arr**2)
            + weights.w2 * np.sum(ddl_arr**2)
            + weights.w4 * np.sum((l_arr - g) ** 2)
            + weights.w3 * np.sum(jerk**2)
        )
    )


def _linkage_constraints(
    stations: NDArray[np.float64], start: PathNode
) -> tuple[sp.csc_matrix, NDArray[np.float64]]:
    """Constant-jerk linkage rows over (l, l', l'') plus the pinned start."""
    n = stations.size
    h = float(stations[1] - stations[0])
    idx_l = np.arange(n) * 3
    idx_dl = idx_l + 1
    idx_ddl = idx_l + 2
    rows: list[dict[int, float]] = []
    for i in range(n - 1):
        rows.append({
            idx_dl[i + 1]: 1.0, idx_dl[i]: -1.0, idx_ddl[i]: -h / 2, idx_ddl[i + 1]: -h / 2,
        })
        rows.append({
            idx_l[i + 1]: 1.0, idx_l[i]: -1.0, idx_dl[i]: -h,
            idx_ddl[i]: -(h**2) / 3, idx_ddl[i + 1]: -(h**2) / 6,
        })
    rows.extend(({idx_l[0]: 1.0}, {idx_dl[0]: 1.0}, {idx_ddl[0]: 1.0}))
    a_eq = sp.lil_matrix((len(rows), 3 * n))
    for r, entries in enumerate(rows):
        for c, v in entries.items():
            a_eq[r, c] = v
    b_eq = np.zeros(len(rows))
    b_eq[-3:] = (start.l, start.dl, start.ddl)
    return a_eq.tocsc(), b_eq


def discretized_dp_reference(
    stations: ArrayLike,
    dp_profile: PathProfile,
    start: PathNode,
    lower: ArrayLike,
    upper: ArrayLike,
    *,
    tol: float = DEFAULT_QP_TOL,
    max_iter: int = DEFAULT_QP_MAX_ITER,
) -> NDArray[np.float64]:
    """The DP profile carried onto the refinement's own discretization.

    Returns the interleaved (l, l', l'') vector closest to the sampled DP
    profile, offsets weighted first, that satisfies the linkage rows, the
    pinned start and the offset bounds. The refined objective can then never
    exceed the DP objective at a certified optimum.
    """
    stations_arr = np.asarray(stations, dtype=float)
    n = stations_arr.size
    samples = np.empty(3 * n)
    for order in range(3):
        samples[order::3] = np.asarray(dp_profile.evaluate(stations_arr, order))
    a_eq, b_eq = _linkage_constraints(stations_arr, start)
    box_lo = np.full(3 * n, -np.inf)
    box_hi = np.full(3 * n, np.inf)
    box_lo[0::3] = lower
    box_hi[0::3] = upper
    constraints = QuadraticProgram(
        hessian=sp.csc_matrix((3 * n, 3 * n)),
        linear_term=np.zeros(3 * n),
        lower=box_lo,
        upper=box_hi,
        a_eq=a_eq,
        b_eq=b_eq,
    )
    solution = closest_feasible_point(
        constraints,
        samples,
        np.tile([_REFERENCE_OFFSET_WEIGHT, 1.0, 1.0], n),
        tol=tol,
        max_iter=max_iter,
    )
    if not solution.is_optimal:
        _LOGGER.debug("DP reference projection ended %s, using raw samples", solution.status)
        return samples
    return solution.x


@dataclass(frozen=True)
class PathRefineResult:
    """Refined path with its QP diagnostics."""

    profile: PathProfile
    status: QPStatus
    objective: float
    dp_objective: float
    fallback: bool
    primal_residual: float = 0.0
    dual_residual: float = 0.0


def qp_refine(
    corridor: Corridor,
    dp_profile: PathProfile,
    weights: PathCostWeights,
    *,
    start: PathNode | None = None,
    tol: float = DEFAULT_QP_TOL,
    max_iter: int = DEFAULT_QP_MAX_ITER,
) -> PathRefineResult:
    """Piecewise-jerk QP over (l, l', l'') at the corridor stations.

    The start state is pinned. The DP objective is scored on the DP profile
    carried onto the same linkage, so a certified optimum never scores worse.
    Falls back to the DP profile, with a warning, only when the QP does not
    certify.
    """
    stations = np.asarray(corridor.stations, dtype=float)
    n = stations.size
    h = float(stations[1] - stations[0])
    start = start or dp_profile.knots[0]
    g = np.asarray(dp_profile.evaluate(stations))

    idx_l = np.arange(n) * 3
    idx_dl = idx_l + 1
    idx_ddl = idx_l + 2
    diag = np.zeros(3 * n)
    diag[idx_l] = 2 * h * weights.w4
    diag[idx_dl] = 2 * h * weights.w1
    diag[idx_ddl] = 2 * h * weights.w2
    hessian = sp.lil_matrix((3 * n, 3 * n))
    hessian.setdiag(diag)
    jerk_w = 2 * weights.w3 / h
    for i in range(n - 1):
        a, b = idx_ddl[i], idx_ddl[i + 1]
        hessian[a, a] += jerk_w
        hessian[b, b] += jerk_w
        hessian[a, b] -= jerk_w
        hessian[b, a] -= jerk_w
    linear = np.zeros(3 * n)
    linear[idx_l] = -2 * h * weights.w4 * g

    a_eq, b_eq = _linkage_constraints(stations, start)
    lower = np.full(3 * n, -np.inf)
    upper = np.full(3 * n, np.inf)
    lower[idx_l] = np.minimum(corridor.l_lo, np.r_[start.l, corridor.l_lo[1:]])
    upper[idx_l] = np.maximum(corridor.l_hi, np.r_[start.l, corridor.l_hi[1:]])

    reference = discretized_dp_reference(
        stations, dp_profile, start, lower[idx_l], upper[idx_l], tol=tol, max_iter=max_iter
    )
    dp_objective = discretized_path_objective(
        reference[idx_l], reference[idx_dl], reference[idx_ddl], g, h, weights
    )

    qp = QuadraticProgram(
        hessian=hessian.tocsc(), linear_term=linear, lower=lower, upper=upper, a_eq=a_eq, b_eq=b_eq
    )
    solution = solve(qp, tol=tol, max_iter=max_iter)
    l_opt = np.clip(solution.x[idx_l], lower[idx_l], upper[idx_l])
    dl_opt, ddl_opt = solution.x[idx_dl], solution.x[idx_ddl]
    objective = discretized_path_objective(l_opt, dl_opt, ddl_opt, g, h, weights)

    if not solution.is_optimal:
        _LOGGER.warning(
            "Path QP fell back to the DP profile (status %s, objective %.6g vs DP %.6g)",
            solution.status,
            objective,
            dp_objective,
        )
        return PathRefineResult(
            profile=dp_profile,
            status=solution.status,
            objective=dp_objective,
            dp_objective=dp_objective,
            fallback=True,
            primal_residual=solution.primal_residual,
            dual_residual=solution.dual_residual,
        )
    return PathRefineResult(
        profile=PathProfile.from_arrays(stations, l_opt, dl_opt, ddl_opt),
        status=solution.status,
        objective=objective,
        dp_objective=dp_objective,
        fallback=False,
        primal_residual=solution.primal_residual,
        dual_residual=solution.dual_residual,
    )


@dataclass(frozen=True)
class PathPlan:
    """Output of one path-planning cycle."""

    grid: SLGrid
    dp: PathDPResult
    corridor: Corridor
    refined: PathRefineResult

    @property
    def profile(self) -> PathProfile:
        """Final lateral profile."""
        return self.refined.profile


def plan_path(
    start: PathNode,
    length_m: float,
    road_bounds: tuple[float, float],
    obstacles: Sequence[SLBox],
    weights: PathCostWeights,
    config: PlannerConfig,
    *,
    half_width_m: float,
    ego_length_m: float = 0.0,
    rng: np.random.Generator | None = None,
) -> PathPlan:
    """Lattice DP, corridor and QP refinement in sequence."""
    grid = build_sl_grid(start, length_m, road_bounds, half_width_m, config, obstacles, rng)
    dp = dp_search(grid, start, weights)
    corridor = build_corridor(
        dp, grid, obstacles, road_bounds, ds_m=config.path_qp_ds_m, ego_length_m=ego_length_m
    )
    refined = qp_refine(
        corridor, dp.profile, weights, start=start, tol=config.qp_tol, max_iter=config.qp_max_iter
    )
    return PathPlan(grid=grid, dp=dp, corridor=corridor, refined=refined)
