"""Data models shared across the ecoplan toolkit."""

from __future__ import annotations

from collections.abc import Mapping
from dataclasses import asdict, dataclass, field, fields, replace
import math
from typing import Any, TypeVar

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .const import (
    DEFAULT_AIR_DENSITY,
    DEFAULT_DRAG_COEFF,
    DEFAULT_EPS_V,
    DEFAULT_F_BRAKE_MAX,
    DEFAULT_F_TRACTION_MAX,
    DEFAULT_FRONTAL_AREA,
    DEFAULT_GRAVITY,
    DEFAULT_HISTOGRAM_DEADBAND,
    DEFAULT_K_OBS,
    DEFAULT_LATERAL_BUFFER,
    DEFAULT_LATTICE_DL,
    DEFAULT_LATTICE_DS,
    DEFAULT_MASS,
    DEFAULT_OBSTACLE_RAMP_K,
    DEFAULT_P2,
    DEFAULT_P_MAX,
    DEFAULT_P_OPT,
    DEFAULT_P_REGEN_MAX,
    DEFAULT_PATH_D1,
    DEFAULT_PATH_D2,
    DEFAULT_PATH_QP_DS,
    DEFAULT_PATH_W1,
    DEFAULT_PATH_W2,
    DEFAULT_PATH_W3,
    DEFAULT_PATH_W4,
    DEFAULT_PM,
    DEFAULT_QP_MAX_ITER,
    DEFAULT_QP_TOL,
    DEFAULT_REFLINE_DS,
    DEFAULT_REGEN_DECEL_MAX,
    DEFAULT_REGEN_DECEL_MIN,
    DEFAULT_REGEN_EFFICIENCY,
    DEFAULT_ROLLING_MU,
    DEFAULT_SAFETY_BUFFER,
    DEFAULT_SMOOTH_W_FIDELITY,
    DEFAULT_SMOOTH_W_FIRST,
    DEFAULT_SMOOTH_W_SECOND,
    DEFAULT_ST_D1,
    DEFAULT_ST_D2,
    DEFAULT_ST_DS,
    DEFAULT_ST_DT,
    DEFAULT_ST_HORIZON,
    DEFAULT_STOP_BUFFER,
    DEFAULT_STOP_DECEL,
    DEFAULT_STOP_LOOKAHEAD,
    DEFAULT_V_MAX,
    DEFAULT_VEHICLE_LENGTH,
    DEFAULT_VEHICLE_WIDTH,
    DEFAULT_W1,
    DEFAULT_W2,
    DEFAULT_W3,
    DEFAULT_W_ACC,
    DEFAULT_W_JE,
    DEFAULT_W_OBS,
    DEFAULT_W_RE,
    DEFAULT_W_REF_SPEED,
    DEFAULT_W_SM,
    DEFAULT_WINDOW_AHEAD,
    DEFAULT_WINDOW_BEHIND,
    SAFETY_INTERVAL_SPAN,
)
from .errors import DomainError

_T = TypeVar("_T")

# Tolerance on slope-profile domain checks
_DOMAIN_TOL = 1e-9


def _from_mapping(cls: type[_T], data: Mapping[str, Any]) -> _T:
    """Build a flat dataclass from a mapping, ignoring unknown keys."""
    known = {f.name for f in fields(cls)}  # type: ignore[arg-type]
    return cls(**{key: value for key, value in data.items() if key in known})


@dataclass(frozen=True)
class VehicleParams:
    """Longitudinal vehicle parameters and powertrain operating points."""

    mass_kg: float = DEFAULT_MASS
    drag_coeff: float = DEFAULT_DRAG_COEFF
    frontal_area_m2: float = DEFAULT_FRONTAL_AREA
    rolling_mu: float = DEFAULT_ROLLING_MU
    p_opt_w: float = DEFAULT_P_OPT
    p2_w: float = DEFAULT_P2
    pm_w: float = DEFAULT_PM
    p_regen_max_w: float = DEFAULT_P_REGEN_MAX
    f_brake_max_n: float = DEFAULT_F_BRAKE_MAX
    regen_decel_min_ms2: float = DEFAULT_REGEN_DECEL_MIN
    regen_decel_max_ms2: float = DEFAULT_REGEN_DECEL_MAX
    v_max_ms: float = DEFAULT_V_MAX
    p_max_w: float = DEFAULT_P_MAX
    f_traction_max_n: float = DEFAULT_F_TRACTION_MAX
    length_m: float = DEFAULT_VEHICLE_LENGTH
    width_m: float = DEFAULT_VEHICLE_WIDTH

    def __post_init__(self) -> None:
        """Validate parameters after initialization."""
        if self.mass_kg <= 0:
            raise ValueError("mass_kg must be positive")
        for name in (
            "drag_coeff",
            "frontal_area_m2",
            "rolling_mu",
            "p_opt_w",
            "p2_w",
            "pm_w",
            "p_regen_max_w",
            "f_brake_max_n",
            "p_max_w",
            "f_traction_max_n",
            "length_m",
            "width_m",
        ):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if not 0 <= self.regen_decel_min_ms2 < self.regen_decel_max_ms2:
            raise ValueError(
                "regen_decel_min_ms2 must be nonnegative and below regen_decel_max_ms2"
            )
        if self.v_max_ms <= 0:
            raise ValueError("v_max_ms must be positive")

    @property
    def half_width_m(self) -> float:
        """Half of the vehicle width."""
        return 0.5 * self.width_m

    def to_dict(self) -> dict[str, Any]:
        """Convert to dictionary."""
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> VehicleParams:
        """Create from dictionary."""
        return _from_mapping(cls, data)


@dataclass(frozen=True)
class SlopeProfile:
    """Piecewise-linear road grade over arc length; positive grade is uphill."""

    stations_m: tuple[float, ...]
    grades_rad: tuple[float, ...]

    def __post_init__(self) -> None:
        """Validate profile after initialization."""
        if len(self.stations_m) < 2 or len(self.stations_m) != len(self.grades_rad):
            raise ValueError("slope profile must have at least two matching stations and grades")
        if any(b <= a for a, b in zip(self.stations_m, self.stations_m[1:], strict=False)):
            raise ValueError("slope profile stations must be strictly increasing")
        if any(abs(g) >= math.pi / 2 for g in self.grades_rad):
            raise ValueError("slope profile grades must be within (-pi/2, pi/2)")

    @classmethod
    def flat(cls, length_m: float) -> SlopeProfile:
        """Return a flat profile over [0, length_m]."""
        return cls(stations_m=(0.0, float(length_m)), grades_rad=(0.0, 0.0))

    @property
    def start_m(self) -> float:
        """First station of the profile."""
        return self.stations_m[0]

    @property
    def end_m(self) -> float:
        """Last station of the profile."""
        return self.stations_m[-1]

    def clamp(self, s: ArrayLike) -> NDArray[np.float64]:
        """Clamp arc positions into the profile domain."""
        return np.clip(np.asarray(s, dtype=float), self.start_m, self.end_m)

    def grade_at(self, s: ArrayLike) -> Any:
        """Return the grade angle at arc position(s) s."""
        s_arr = np.asarray(s, dtype=float)
        if np.any(s_arr < self.start_m - _DOMAIN_TOL) or np.any(s_arr > self.end_m + _DOMAIN_TOL):
            raise DomainError(
                f"arc position outside slope profile [{self.start_m}, {self.end_m}]"
            )
        theta = np.interp(s_arr, self.stations_m, self.grades_rad)
        if theta.ndim == 0:
            return float(theta)
        return theta

    def to_dict(self) -> dict[str, Any]:
        """Convert to dictionary."""
        return {"stations_m": list(self.stations_m), "grades_rad": list(self.grades_rad)}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> SlopeProfile:
        """Create from dictionary."""
        return cls(
            stations_m=tuple(float(v) for v in data["stations_m"]),
            grades_rad=tuple(float(v) for v in data["grades_rad"]),
        )


@dataclass(frozen=True)
class Environment:
    """Air density, gravity and road grade."""

    slope_profile: SlopeProfile
    air_density_kgm3: float = DEFAULT_AIR_DENSITY
    gravity_ms2: float = DEFAULT_GRAVITY

    def __post_init__(self) -> None:
        """Validate environment after initialization."""
        if self.air_density_kgm3 < 0:
            raise ValueError("air_density_kgm3 must be nonnegative")
        if self.gravity_ms2 <= 0:
            raise ValueError("gravity_ms2 must be positive")

    @classmethod
    def flat(cls, length_m: float, **kwargs: Any) -> Environment:
        """Return a flat-road environment over [0, length_m]."""
        return cls(slope_profile=SlopeProfile.flat(length_m), **kwargs)

    def to_dict(self) -> dict[str, Any]:
        """Convert to dictionary."""
        return {
            "air_density_kgm3": self.air_density_kgm3,
            "gravity_ms2": self.gravity_ms2,
            "slope_profile": self.slope_profile.to_dict(),
        }


@dataclass(frozen=True)
class ForceBreakdown:
    """Longitudinal forces; all but traction oppose forward motion when positive."""

    air_n: float = 0.0
    friction_n: float = 0.0
    slope_n: float = 0.0
    traction_n: float = 0.0
    regen_n: float = 0.0
    brake_n: float = 0.0

    def __post_init__(self) -> None:
        """Validate force signs after initialization."""
        if self.air_n < 0 or self.regen_n < 0 or self.brake_n < 0:
            raise ValueError("air, regen and brake forces must be nonnegative")

    @property
    def resistance_n(self) -> float:
        """Sum of the road-load terms."""
        return self.air_n + self.friction_n + self.slope_n

    def net_accel(self, mass_kg: float) -> float:
        """Newton acceleration from the force balance."""
        return (
            self.traction_n - self.resistance_n - self.regen_n - self.brake_n
        ) / mass_kg


@dataclass(frozen=True)
class LongitudinalState:
    """Arc position, speed and acceleration of the ego vehicle."""

    s_m: float = 0.0
    v_ms: float = 0.0
    a_ms2: float = 0.0

    def __post_init__(self) -> None:
        """Validate state after initialization."""
        if self.v_ms < 0:
            raise ValueError("v_ms must be nonnegative")


@dataclass(frozen=True)
class PathCostWeights:
    """Lattice and refinement weights for SL path planning."""

    w_obs: float = DEFAULT_W_OBS
    w_sm: float = DEFAULT_W_SM
    w_re: float = DEFAULT_W_RE
    w1: float = DEFAULT_PATH_W1
    w2: float = DEFAULT_PATH_W2
    w3: float = DEFAULT_PATH_W3
    w4: float = DEFAULT_PATH_W4
    d1_m: float = DEFAULT_PATH_D1
    d2_m: float = DEFAULT_PATH_D2
    ramp_k: float = DEFAULT_OBSTACLE_RAMP_K

    def __post_init__(self) -> None:
        """Validate weights after initialization."""
        for item in fields(self):
            if getattr(self, item.name) < 0:
                raise ValueError(f"{item.name} must be nonnegative")
        if self.w_sm < 10 * self.w_re:
            raise ValueError("w_sm must be at least ten times w_re")
        if not self.d1_m > self.d2_m >= 0:
            raise ValueError("d1_m must exceed d2_m and d2_m must be nonnegative")

    def with_safety_interval(self, d2_m: float) -> PathCostWeights:
        """Return weights whose breakpoints follow a speed-derived d2."""
        return replace(self, d2_m=d2_m, d1_m=d2_m + SAFETY_INTERVAL_SPAN)


@dataclass(frozen=True)
class SpeedCostWeights:
    """Weights of the ST speed costs."""

    w_ref_speed: float = DEFAULT_W_REF_SPEED
    w_acc: float = DEFAULT_W_ACC
    w_je: float = DEFAULT_W_JE
    w1: float = DEFAULT_W1
    w2: float = DEFAULT_W2
    w3: float = DEFAULT_W3
    d1_m: float = DEFAULT_ST_D1
    d2_m: float = DEFAULT_ST_D2
    k_obs: float = DEFAULT_K_OBS

    def __post_init__(self) -> None:
        """Validate weights after initialization."""
        for item in fields(self):
            if getattr(self, item.name) < 0:
                raise ValueError(f"{item.name} must be nonnegative")
        if not self.d1_m > self.d2_m >= 0:
            raise ValueError("d1_m must exceed d2_m and d2_m must be nonnegative")


@dataclass(frozen=True)
class PlannerConfig:
    """Grid, window, solver and weight settings for one planner."""

    window_behind_m: float = DEFAULT_WINDOW_BEHIND
    window_ahead_m: float = DEFAULT_WINDOW_AHEAD
    refline_ds_m: float = DEFAULT_REFLINE_DS
    smooth_w_fidelity: float = DEFAULT_SMOOTH_W_FIDELITY
    smooth_w_first: float = DEFAULT_SMOOTH_W_FIRST
    smooth_w_second: float = DEFAULT_SMOOTH_W_SECOND
    qp_tol: float = DEFAULT_QP_TOL
    qp_max_iter: int = DEFAULT_QP_MAX_ITER
    lattice_ds_m: float = DEFAULT_LATTICE_DS
    lattice_dl_m: float = DEFAULT_LATTICE_DL
    lattice_jitter: bool = False
    path_qp_ds_m: float = DEFAULT_PATH_QP_DS
    lateral_buffer_m: float = DEFAULT_LATERAL_BUFFER
    dynamic_safety_interval: bool = True
    st_dt_s: float = DEFAULT_ST_DT
    st_horizon_s: float = DEFAULT_ST_HORIZON
    st_ds_m: float = DEFAULT_ST_DS
    eps_v_ms: float = DEFAULT_EPS_V
    freeze_v_opt: bool = False
    stop_decel_ms2: float = DEFAULT_STOP_DECEL
    stop_buffer_m: float = DEFAULT_STOP_BUFFER
    stop_lookahead_m: float = DEFAULT_STOP_LOOKAHEAD
    safety_buffer_m: float = DEFAULT_SAFETY_BUFFER
    histogram_deadband_ms2: float = DEFAULT_HISTOGRAM_DEADBAND
    regen_efficiency: float = DEFAULT_REGEN_EFFICIENCY
    path_weights: PathCostWeights = field(default_factory=PathCostWeights)
    speed_weights: SpeedCostWeights = field(default_factory=SpeedCostWeights)

    def __post_init__(self) -> None:
        """Validate configuration after initialization."""
        for name in (
            "refline_ds_m",
            "qp_tol",
            "lattice_ds_m",
            "lattice_dl_m",
            "path_qp_ds_m",
            "st_dt_s",
            "st_horizon_s",
            "st_ds_m",
            "stop_decel_ms2",
        ):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.qp_max_iter < 1:
            raise ValueError("qp_max_iter must be at least 1")
        if self.st_horizon_s < self.st_dt_s:
            raise ValueError("st_horizon_s must cover at least one st_dt_s step")
        if not 0 < self.regen_efficiency <= 1:
            raise ValueError("regen_efficiency must be within (0, 1]")

    def to_dict(self) -> dict[str, Any]:
        """Convert to dictionary."""
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> PlannerConfig:
        """Create from dictionary, including nested weights."""
        flat = {
            key: value
            for key, value in data.items()
            if key not in ("path_weights", "speed_weights")
        }
        config = _from_mapping(cls, flat)
        return replace(
            config,
            path_weights=_from_mapping(PathCostWeights, data.get("path_weights", {})),
            speed_weights=_from_mapping(SpeedCostWeights, data.get("speed_weights", {})),
        )
