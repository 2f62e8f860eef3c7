"""Reference-line construction and Frenet (SL) coordinate conversion."""

from __future__ import annotations

from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
import logging
import math
from typing import Any, NamedTuple

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.interpolate import CubicSpline
from scipy.optimize import brentq
import scipy.sparse as sp

from .const import (
    DEFAULT_QP_MAX_ITER,
    DEFAULT_QP_TOL,
    DEFAULT_REFLINE_DS,
    DEFAULT_SMOOTH_W_FIDELITY,
    DEFAULT_SMOOTH_W_FIRST,
    DEFAULT_SMOOTH_W_SECOND,
    DEFAULT_WINDOW_AHEAD,
    DEFAULT_WINDOW_BEHIND,
    PROJECTION_ROOT_TOL,
    PROJECTION_TIE_TOL,
)
from .errors import AmbiguousProjectionError, DomainError
from .models import PlannerConfig
from .qp_core import QuadraticProgram, solve

_LOGGER = logging.getLogger(__name__)

# Slack on arc-domain checks
_DOMAIN_TOL = 1e-9


class CartesianPoint(NamedTuple):
    """A point in the global plane."""

    x: float
    y: float


class FrenetPoint(NamedTuple):
    """Arc coordinate s and signed lateral offset l (left positive)."""

    s: float
    l: float  # noqa: E741


@dataclass(frozen=True, eq=False)
class GlobalPath:
    """Ordered waypoints of a known route.

    ``s_offset_m`` is the route arc position of the first waypoint, so a
    window cut from a longer route keeps its place on that route.
    """

    waypoints: NDArray[np.float64]
    s_offset_m: float = 0.0

    def __post_init__(self) -> None:
        """Validate waypoints after initialization."""
        points = np.asarray(self.waypoints, dtype=float)
        if points.ndim != 2 or points.shape[1] != 2 or points.shape[0] < 2:
            raise ValueError("global path must have at least two (x, y) waypoints")
        if np.any(np.hypot(*np.diff(points, axis=0).T) <= 0):
            raise ValueError("consecutive waypoints must be distinct")
        object.__setattr__(self, "waypoints", points)

    @classmethod
    def from_points(cls, points: Iterable[Sequence[float]], s_offset_m: float = 0.0) -> GlobalPath:
        """Build a path from (x, y) pairs."""
        return cls(waypoints=np.array([list(p) for p in points], dtype=float), s_offset_m=s_offset_m)

    @property
    def arc_lengths(self) -> NDArray[np.float64]:
        """Cumulative chord length at each waypoint, starting at 0."""
        steps = np.hypot(*np.diff(self.waypoints, axis=0).T)
        return np.concatenate([[0.0], np.cumsum(steps)])

    @property
    def length_m(self) -> float:
        """Total chord length."""
        return float(self.arc_lengths[-1])

    def point_at(self, s: ArrayLike) -> NDArray[np.float64]:
        """Linearly interpolated position(s) at local arc length s."""
        arc = self.arc_lengths
        s_arr = np.asarray(s, dtype=float)
        return np.stack(
            [np.interp(s_arr, arc, self.waypoints[:, 0]), np.interp(s_arr, arc, self.waypoints[:, 1])],
            axis=-1,
        )

    def resample(self, ds_m: float) -> NDArray[np.float64]:
        """Points at uniform arc spacing no larger than ds_m, ends included."""
        count = max(2, math.ceil(self.length_m / ds_m - 1e-9) + 1)
        return self.point_at(np.linspace(0.0, self.length_m, count))

    def project(self, pose: ArrayLike) -> tuple[float, float]:
        """Local arc length and distance of the nearest point on the polyline."""
        p = np.asarray(pose, dtype=float)
        start = self.waypoints[:-1]
        seg = np.diff(self.waypoints, axis=0)
        seg_len2 = np.einsum("ij,ij->i", seg, seg)
        frac = np.clip(np.einsum("ij,ij->i", p - start, seg) / seg_len2, 0.0, 1.0)
        closest = start + frac[:, None] * seg
        dist = np.hypot(*(closest - p).T)
        best = int(np.argmin(dist))
        arc = self.arc_lengths
        return float(arc[best] + frac[best] * math.sqrt(seg_len2[best])), float(dist[best])


@dataclass(frozen=True)
class SmoothingWeights:
    """Elastic-band weights on fidelity, first and second differences."""

    fidelity: float = DEFAULT_SMOOTH_W_FIDELITY
    first: float = DEFAULT_SMOOTH_W_FIRST
    second: float = DEFAULT_SMOOTH_W_SECOND

    def __post_init__(self) -> None:
        """Validate weights after initialization."""
        if min(self.fidelity, self.first, self.second) < 0:
            raise ValueError("smoothing weights must be nonnegative")

    @classmethod
    def from_config(cls, config: PlannerConfig) -> SmoothingWeights:
        """Take the weights from a planner configuration."""
        return cls(config.smooth_w_fidelity, config.smooth_w_first, config.smooth_w_second)


@dataclass(frozen=True, eq=False)
class ReferenceLine:
    """Uniformly sampled reference curve, interpolated by cubic splines in s.

    Local arc coordinates start at 0; ``s_offset_m`` maps them back onto the
    route. ``smoothing_fallback`` marks a line built from the raw polyline
    after the smoothing QP failed.
    """

    s: NDArray[np.float64]
    x: NDArray[np.float64]
    y: NDArray[np.float64]
    heading: NDArray[np.float64]
    curvature: NDArray[np.float64]
    s_offset_m: float = 0.0
    smoothing_fallback: bool = False
    _spline_x: CubicSpline = field(init=False, repr=False)
    _spline_y: CubicSpline = field(init=False, repr=False)

    def __post_init__(self) -> None:
        """Validate samples and build the splines."""
        if self.s.size < 2 or np.any(np.diff(self.s) <= 0):
            raise ValueError("reference line arc length must be strictly increasing")
        object.__setattr__(self, "_spline_x", CubicSpline(self.s, self.x))
        object.__setattr__(self, "_spline_y", CubicSpline(self.s, self.y))

    @classmethod
    def from_points(
        cls,
        points: ArrayLike,
        *,
        s_offset_m: float = 0.0,
        smoothing_fallback: bool = False,
    ) -> ReferenceLine:
        """Fit a reference line through points parameterized by chord length."""
        pts = np.asarray(points, dtype=float)
        steps = np.hypot(*np.diff(pts, axis=0).T)
        if pts.shape[0] < 2 or np.any(steps <= 0):
            raise DomainError("reference line needs at least two distinct points")
        s = np.concatenate([[0.0], np.cumsum(steps)])
        spline_x = CubicSpline(s, pts[:, 0])
        spline_y = CubicSpline(s, pts[:, 1])
        dx, dy = spline_x(s, 1), spline_y(s, 1)
        ddx, ddy = spline_x(s, 2), spline_y(s, 2)
        heading = np.unwrap(np.arctan2(dy, dx))
        curvature = (dx * ddy - dy * ddx) / np.power(dx * dx + dy * dy, 1.5)
        return cls(
            s=s,
            x=pts[:, 0].copy(),
            y=pts[:, 1].copy(),
            heading=heading,
            curvature=curvature,
            s_offset_m=s_offset_m,
            smoothing_fallback=smoothing_fallback,
        )

    @property
    def length_m(self) -> float:
        """Local arc length of the line."""
        return float(self.s[-1])

    @property
    def max_abs_curvature(self) -> float:
        """Largest sampled |curvature|."""
        return float(np.max(np.abs(self.curvature)))

    def contains(self, s: float) -> bool:
        """Whether s lies in the arc domain."""
        return -_DOMAIN_TOL <= s <= self.length_m + _DOMAIN_TOL

    def position(self, s: ArrayLike) -> NDArray[np.float64]:
        """Position(s) r(s)."""
        return np.stack([self._spline_x(s), self._spline_y(s)], axis=-1)

    def derivative(self, s: ArrayLike, order: int = 1) -> NDArray[np.float64]:
        """Derivative(s) of r with respect to s."""
        return np.stack([self._spline_x(s, order), self._spline_y(s, order)], axis=-1)

    def tangent(self, s: ArrayLike) -> NDArray[np.float64]:
        """Unit tangent(s)."""
        d = self.derivative(s)
        return d / np.linalg.norm(d, axis=-1, keepdims=True)

    def normal(self, s: ArrayLike) -> NDArray[np.float64]:
        """Unit left normal(s)."""
        t = self.tangent(s)
        return np.stack([-t[..., 1], t[..., 0]], axis=-1)

    def heading_at(self, s: ArrayLike) -> Any:
        """Tangent heading in radians."""
        d = self.derivative(s)
        return np.arctan2(d[..., 1], d[..., 0])

    def curvature_at(self, s: ArrayLike) -> Any:
        """Signed curvature from the spline derivatives."""
        d1 = self.derivative(s, 1)
        d2 = self.derivative(s, 2)
        cross = d1[..., 0] * d2[..., 1] - d1[..., 1] * d2[..., 0]
        return cross / np.power(np.einsum("...i,...i->...", d1, d1), 1.5)

    def to_rows(self) -> list[dict[str, float]]:
        """Rows (s, x, y, heading, curvature) for export."""
        return [
            {
                "s": float(s) + self.s_offset_m,
                "x": float(x),
                "y": float(y),
                "heading": float(h),
                "curvature": float(k),
            }
            for s, x, y, h, k in zip(self.s, self.x, self.y, self.heading, self.curvature, strict=True)
        ]


@dataclass(frozen=True)
class SLBox:
    """Axis-aligned region in SL coordinates."""

    s_lo: float
    s_hi: float
    l_lo: float
    l_hi: float

    def __post_init__(self) -> None:
        """Validate extents after initialization."""
        if self.s_lo > self.s_hi or self.l_lo > self.l_hi:
            raise ValueError("SL box extents must be ordered")

    @property
    def s_center(self) -> float:
        """Longitudinal center of the box."""
        return 0.5 * (self.s_lo + self.s_hi)

    @property
    def length_m(self) -> float:
        """Longitudinal extent."""
        return self.s_hi - self.s_lo

    def lateral_gap(self, l_lo: ArrayLike, l_hi: ArrayLike) -> Any:
        """Lateral distance between the box and bands [l_lo, l_hi] (0 on overlap)."""
        return np.maximum(0.0, np.maximum(self.l_lo - np.asarray(l_hi), np.asarray(l_lo) - self.l_hi))

    def longitudinal_gap(self, s: ArrayLike) -> Any:
        """Distance from s to the box's s-interval (0 inside)."""
        s_arr = np.asarray(s, dtype=float)
        return np.maximum(0.0, np.maximum(self.s_lo - s_arr, s_arr - self.s_hi))


@dataclass(frozen=True)
class STParticle:
    """Obstacle as a particle s_obs(t) = s0 + v t with a footprint length."""

    s0_m: float
    speed_ms: float
    length_m: float = 0.0
    l_m: float = 0.0
    width_m: float = 0.0

    def s_at(self, t: ArrayLike) -> Any:
        """Particle station at time(s) t."""
        return self.s0_m + self.speed_ms * np.asarray(t, dtype=float)

    def gap(self, t: ArrayLike, s: ArrayLike, ego_length_m: float) -> Any:
        """Distance from ego station s to the occupied interval at time t."""
        half = 0.5 * (self.length_m + ego_length_m)
        centre = self.s_at(t)
        s_arr = np.asarray(s, dtype=float)
        return np.maximum(0.0, np.abs(s_arr - centre) - half)


@dataclass(frozen=True)
class PolygonFootprint:
    """Obstacle outline as Cartesian corners."""

    corners: tuple[CartesianPoint, ...]


@dataclass(frozen=True)
class ParticleFootprint:
    """Moving obstacle: centre, heading, constant speed and extents."""

    centre: CartesianPoint
    heading_rad: float
    speed_ms: float
    length_m: float = 0.0
    width_m: float = 0.0


def extract_window(
    path: GlobalPath,
    ego: ArrayLike,
    behind_m: float = DEFAULT_WINDOW_BEHIND,
    ahead_m: float = DEFAULT_WINDOW_AHEAD,
) -> GlobalPath:
    """Sub-path spanning [s_proj - behind_m, s_proj + ahead_m], clamped to the path."""
    s_proj, _distance = path.project(ego)
    s_lo = max(0.0, s_proj - behind_m)
    s_hi = min(path.length_m, s_proj + ahead_m)
    if s_hi - s_lo <= _DOMAIN_TOL:
        raise DomainError(f"empty window around s={s_proj:.3f}")
    arc = path.arc_lengths
    inner = path.waypoints[(arc > s_lo + _DOMAIN_TOL) & (arc < s_hi - _DOMAIN_TOL)]
    ends = path.point_at(np.array([s_lo, s_hi]))
    return GlobalPath(
        waypoints=np.vstack([ends[:1], inner, ends[1:]]),
        s_offset_m=path.s_offset_m + s_lo,
    )


def _band_hessian(count: int, weights: SmoothingWeights) -> sp.csc_matrix:
    eye = sp.identity(count, format="csc")
    first = sp.diags([-1.0, 1.0], [0, 1], shape=(count - 1, count), format="csc")
    second = sp.diags([1.0, -2.0, 1.0], [0, 1, 2], shape=(count - 2, count), format="csc")
    return 2.0 * (
        weights.fidelity * eye
        + weights.first * (first.T @ first)
        + weights.second * (second.T @ second)
    )


def smooth_reference(
    raw: GlobalPath,
    weights: SmoothingWeights | None = None,
    ds_m: float = DEFAULT_REFLINE_DS,
    *,
    tol: float = DEFAULT_QP_TOL,
    max_iter: int = DEFAULT_QP_MAX_ITER,
) -> ReferenceLine:
    """Smooth a raw polyline with an elastic-band QP and resample it.

    Each coordinate is smoothed independently with both end points pinned.
    When a QP does not certify, the raw resampled polyline is used and the
    line is flagged with ``smoothing_fallback``.
    """
    weights = weights or SmoothingWeights()
    points = raw.resample(ds_m)
    count = points.shape[0]
    if count < 3:
        raise DomainError("smoothing needs at least three resampled points")
    hessian = _band_hessian(count, weights)
    pins = sp.csc_matrix(([1.0, 1.0], ([0, 1], [0, count - 1])), shape=(2, count))

    smoothed = np.empty_like(points)
    fallback = False
    for axis in range(2):
        target = points[:, axis]
        qp = QuadraticProgram(
            hessian=hessian,
            linear_term=-2.0 * weights.fidelity * target,
            a_eq=pins,
            b_eq=target[[0, -1]],
        )
        solution = solve(qp, tol=tol, max_iter=max_iter)
        if not solution.is_optimal:
            fallback = True
            break
        smoothed[:, axis] = solution.x

    if fallback:
        _LOGGER.warning(
            "Reference-line smoothing did not certify; using raw polyline at s_offset=%.1f",
            raw.s_offset_m,
        )
        return ReferenceLine.from_points(points, s_offset_m=raw.s_offset_m, smoothing_fallback=True)
    resampled = GlobalPath(waypoints=smoothed).resample(ds_m)
    return ReferenceLine.from_points(resampled, s_offset_m=raw.s_offset_m)


def _orthogonality(line: ReferenceLine, p: NDArray[np.float64], s: float) -> float:
    return float((p - line.position(s)) @ line.derivative(s))


def _project(line: ReferenceLine, pose: ArrayLike) -> FrenetPoint:
    """Project a pose, extrapolating along the end tangents beyond the domain."""
    p = np.asarray(pose, dtype=float)
    samples = np.column_stack([line.x, line.y])
    dist = np.hypot(*(samples - p).T)
    nearest = int(np.argmin(dist))
    ties = np.flatnonzero(dist - dist[nearest] <= PROJECTION_TIE_TOL)
    far_ties = ties[np.abs(ties - nearest) > 1]
    if far_ties.size:
        candidates = tuple(
            FrenetPoint(float(line.s[i]), _signed_offset(line, p, float(line.s[i])))
            for i in (nearest, *far_ties.tolist())
        )
        raise AmbiguousProjectionError(
            f"pose {tuple(p)} is equidistant from {len(candidates)} places on the line",
            candidates,
        )

    last = line.s.size - 1
    s_star: float | None = None
    for reach in (1, 2, 3):
        lo = float(line.s[max(nearest - reach, 0)])
        hi = float(line.s[min(nearest + reach, last)])
        g_lo = _orthogonality(line, p, lo)
        g_hi = _orthogonality(line, p, hi)
        if g_lo == 0:
            s_star = lo
        elif g_hi == 0:
            s_star = hi
        elif g_lo * g_hi < 0:
            s_star = float(
                brentq(lambda s: _orthogonality(line, p, s), lo, hi, xtol=PROJECTION_ROOT_TOL)
            )
        if s_star is not None:
            break

    if s_star is None:
        # The foot lies beyond an end: extend along the end tangent
        end = 0.0 if g_lo < 0 else line.length_m
        s_star = end + float((p - line.position(end)) @ line.tangent(end))
    base = min(max(s_star, 0.0), line.length_m)
    return FrenetPoint(s_star, _signed_offset(line, p, base))


def _signed_offset(line: ReferenceLine, p: NDArray[np.float64], s: float) -> float:
    t = line.tangent(s)
    d = p - line.position(s)
    return float(t[0] * d[1] - t[1] * d[0])


def to_frenet(pose: ArrayLike, line: ReferenceLine) -> FrenetPoint:
    """Frenet coordinates of a Cartesian pose.

    Raises AmbiguousProjectionError when the pose is equidistant from
    separate parts of the line, and DomainError when its foot falls beyond
    the line's ends.
    """
    point = _project(line, pose)
    if not line.contains(point.s):
        raise DomainError(f"pose projects outside the reference line (s={point.s:.3f})")
    return FrenetPoint(min(max(point.s, 0.0), line.length_m), point.l)


def to_cartesian(pt: FrenetPoint, line: ReferenceLine) -> CartesianPoint:
    """Cartesian position r(s) + l n(s) of a Frenet point."""
    if not line.contains(pt.s):
        raise DomainError(f"s={pt.s:.3f} outside reference line [0, {line.length_m:.3f}]")
    s = min(max(pt.s, 0.0), line.length_m)
    if abs(pt.l) * abs(float(line.curvature_at(s))) >= 1.0:
        raise DomainError(f"offset l={pt.l:.3f} folds over the curvature at s={s:.3f}")
    position = line.position(s) + pt.l * line.normal(s)
    return CartesianPoint(float(position[0]), float(position[1]))


def project_obstacle(
    footprint: PolygonFootprint | ParticleFootprint, line: ReferenceLine
) -> SLBox | STParticle | None:
    """Project an obstacle footprint into the line's frame.

    Polygons become SL boxes and particles become ST trajectories. An
    obstacle whose projection lies wholly outside the line yields None.
    """
    if isinstance(footprint, PolygonFootprint):
        projected = [_project(line, corner) for corner in footprint.corners]
        s_values = [p.s for p in projected]
        if max(s_values) < 0 or min(s_values) > line.length_m:
            return None
        l_values = [p.l for p in projected]
        return SLBox(min(s_values), max(s_values), min(l_values), max(l_values))

    point = _project(line, footprint.centre)
    if not line.contains(point.s):
        return None
    relative = footprint.heading_rad - float(line.heading_at(point.s))
    return STParticle(
        s0_m=point.s,
        speed_ms=footprint.speed_ms * math.cos(relative),
        length_m=footprint.length_m,
        l_m=point.l,
        width_m=footprint.width_m,
    )
