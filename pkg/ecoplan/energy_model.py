"""Power and energy accounting, recovery gating and planner comparison."""

from __future__ import annotations

from collections.abc import Mapping, Sequence
from dataclasses import asdict, dataclass, field
import logging
import math
from typing import Any

import numpy as np
from numpy.typing import ArrayLike
from scipy.integrate import trapezoid

from .const import (
    DEFAULT_HISTOGRAM_DEADBAND,
    DEFAULT_REGEN_EFFICIENCY,
    HEADLINE_BIN,
    HISTOGRAM_BIN_EDGES,
    PhaseLabel,
)
from .errors import ComparisonError, DomainError
from .models import LongitudinalState, VehicleParams

_LOGGER = logging.getLogger(__name__)

ENERGY_CHANNELS = (
    "traction_energy_j",
    "regen_energy_j",
    "brake_loss_j",
    "proxy_energy_j",
    "distance_m",
    "duration_s",
)


def _bin_label(lo: float, hi: float) -> str:
    return f"{lo:.1f}-{'inf' if math.isinf(hi) else f'{hi:.1f}'}"


BIN_LABELS: tuple[str, ...] = tuple(
    _bin_label(lo, hi) for lo, hi in zip(HISTOGRAM_BIN_EDGES, HISTOGRAM_BIN_EDGES[1:], strict=False)
)


def instantaneous_power(f_total_n: ArrayLike, v: ArrayLike) -> Any:
    """Mechanical power F V in W."""
    v_arr = np.asarray(v, dtype=float)
    if np.any(v_arr < 0):
        raise DomainError("speed must be nonnegative")
    power = np.asarray(f_total_n, dtype=float) * v_arr
    return float(power) if power.ndim == 0 else power


def proxy_power(a: ArrayLike, v: ArrayLike) -> Any:
    """Mass-free power proxy |a| |v|."""
    proxy = np.abs(np.asarray(a, dtype=float)) * np.abs(np.asarray(v, dtype=float))
    return float(proxy) if proxy.ndim == 0 else proxy


@dataclass(frozen=True)
class PowerSample:
    """Instantaneous powertrain state at one plant tick."""

    t: float
    v: float
    a: float
    traction_power_w: float = 0.0
    regen_power_w: float = 0.0
    brake_dissipation_w: float = 0.0
    resistive_power_w: float = 0.0
    s: float | None = None
    phase: PhaseLabel | None = None

    def __post_init__(self) -> None:
        """Validate channels after initialization."""
        if self.v < 0:
            raise ValueError("v must be nonnegative")
        for name in ("traction_power_w", "regen_power_w", "brake_dissipation_w"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.traction_power_w > 0 and self.regen_power_w > 0:
            raise ValueError("traction and regen power must not both be positive")


@dataclass(frozen=True)
class RegenSplit:
    """Braking demand split between the recovery drag and the friction brake."""

    regen_force_n: float
    brake_force_n: float
    regen_w: float
    brake_w: float


def split_braking(
    state: LongitudinalState, commanded_decel: float, p: VehicleParams
) -> RegenSplit:
    """Recovery-envelope split of a braking demand given as a decel magnitude."""
    if commanded_decel < 0:
        raise DomainError("commanded deceleration must be a nonnegative magnitude")
    demand_n = p.mass_kg * commanded_decel
    regen_n = 0.0
    if commanded_decel >= p.regen_decel_min_ms2:
        regen_n = p.mass_kg * min(commanded_decel, p.regen_decel_max_ms2)
        if state.v_ms > 0:
            regen_n = min(regen_n, p.p_regen_max_w / state.v_ms)
        # the power cap can push recovery back under its activation threshold
        if regen_n < p.mass_kg * p.regen_decel_min_ms2:
            regen_n = 0.0
    brake_n = demand_n - regen_n
    return RegenSplit(
        regen_force_n=regen_n,
        brake_force_n=brake_n,
        regen_w=regen_n * state.v_ms,
        brake_w=brake_n * state.v_ms,
    )


def regen_power(
    state: LongitudinalState, commanded_decel: float, p: VehicleParams
) -> tuple[float, float]:
    """(regen_w, brake_w) for a braking demand."""
    split = split_braking(state, commanded_decel, p)
    return split.regen_w, split.brake_w


@dataclass(frozen=True)
class AccelHistogram:
    """Time-fraction occupancy of |a| bins, separately for decel and accel samples."""

    decel: dict[str, float]
    accel: dict[str, float]
    decel_samples: int = 0
    accel_samples: int = 0

    def to_rows(self) -> list[dict[str, Any]]:
        """Rows (bin, decel_fraction, accel_fraction)."""
        return [
            {"bin": label, "decel_fraction": self.decel[label], "accel_fraction": self.accel[label]}
            for label in BIN_LABELS
        ]

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> AccelHistogram:
        """Rebuild from a report mapping."""
        return cls(
            decel={k: float(v) for k, v in data["decel"].items()},
            accel={k: float(v) for k, v in data["accel"].items()},
            decel_samples=int(data.get("decel_samples", 0)),
            accel_samples=int(data.get("accel_samples", 0)),
        )


def acceleration_histogram(
    a: ArrayLike, deadband_ms2: float = DEFAULT_HISTOGRAM_DEADBAND
) -> AccelHistogram:
    """Bin |a| of decelerating and accelerating samples; |a| under the deadband is coasting."""
    a_arr = np.asarray(a, dtype=float)
    edges = np.asarray(HISTOGRAM_BIN_EDGES)

    def occupancy(values: np.ndarray) -> dict[str, float]:
        if values.size == 0:
            return dict.fromkeys(BIN_LABELS, 0.0)
        counts, _ = np.histogram(values, bins=edges)
        return {label: float(c) / values.size for label, c in zip(BIN_LABELS, counts, strict=True)}

    decel = np.abs(a_arr[a_arr <= -deadband_ms2])
    accel = a_arr[a_arr >= deadband_ms2]
    return AccelHistogram(
        decel=occupancy(decel),
        accel=occupancy(accel),
        decel_samples=int(decel.size),
        accel_samples=int(accel.size),
    )


@dataclass(frozen=True)
class EnergyReport:
    """Integrated energy channels and the acceleration histogram of one run."""

    traction_energy_j: float
    regen_energy_j: float
    brake_loss_j: float
    proxy_energy_j: float
    accel_histogram: AccelHistogram
    distance_m: float
    duration_s: float
    resistive_work_j: float = 0.0
    kinetic_gain_j: float = 0.0
    mean_cruise_power_dev_w: float | None = None
    scenario_hash: str = ""

    def __post_init__(self) -> None:
        """Validate channels after initialization."""
        for name in ("traction_energy_j", "regen_energy_j", "brake_loss_j", "proxy_energy_j"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")

    def to_dict(self) -> dict[str, Any]:
        """Serialize for report.json."""
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> EnergyReport:
        """Rebuild from a serialized report."""
        values = dict(data)
        values["accel_histogram"] = AccelHistogram.from_dict(values["accel_histogram"])
        return cls(**values)


def integrate_energy(
    samples: Sequence[PowerSample],
    *,
    mass_kg: float | None = None,
    p_opt_w: float | None = None,
    regen_efficiency: float = DEFAULT_REGEN_EFFICIENCY,
    deadband_ms2: float = DEFAULT_HISTOGRAM_DEADBAND,
    scenario_hash: str = "",
) -> EnergyReport:
    """Trapezoidal integration of every power channel over time."""
    if len(samples) < 2:
        raise DomainError("energy integration needs at least two samples")
    t = np.array([x.t for x in samples])
    if np.any(np.diff(t) <= 0):
        raise DomainError("sample times must be strictly increasing")
    v = np.array([x.v for x in samples])
    a = np.array([x.a for x in samples])

    def channel(name: str) -> float:
        return float(trapezoid(np.array([getattr(x, name) for x in samples]), t))

    stations = [x.s for x in samples]
    if all(s is not None for s in stations):
        distance = float(stations[-1] - stations[0])  # type: ignore[operator]
    else:
        distance = float(trapezoid(v, t))

    cruise_dev = None
    if p_opt_w is not None:
        cruise = [x.traction_power_w for x in samples if x.phase is PhaseLabel.CRUISE]
        if cruise:
            cruise_dev = float(np.mean(np.abs(np.asarray(cruise) - p_opt_w)))

    kinetic = 0.0 if mass_kg is None else 0.5 * mass_kg * (v[-1] ** 2 - v[0] ** 2)
    return EnergyReport(
        traction_energy_j=channel("traction_power_w"),
        regen_energy_j=regen_efficiency * channel("regen_power_w"),
        brake_loss_j=channel("brake_dissipation_w"),
        proxy_energy_j=float(trapezoid(proxy_power(a, v), t)),
        accel_histogram=acceleration_histogram(a, deadband_ms2),
        distance_m=distance,
        duration_s=float(t[-1] - t[0]),
        resistive_work_j=channel("resistive_power_w"),
        kinetic_gain_j=float(kinetic),
        mean_cruise_power_dev_w=cruise_dev,
        scenario_hash=scenario_hash,
    )


@dataclass(frozen=True)
class EnergyAudit:
    """Traction energy against kinetic gain, resistive work, brake loss and recovery."""

    supplied_j: float
    consumed_j: float
    imbalance_j: float
    relative_imbalance: float

    def within(self, tolerance: float) -> bool:
        """Whether the relative imbalance is within tolerance."""
        return self.relative_imbalance <= tolerance


def energy_audit(
    report: EnergyReport, regen_efficiency: float = DEFAULT_REGEN_EFFICIENCY
) -> EnergyAudit:
    """Check traction = kinetic gain + resistive work + brake loss + mechanical recovery."""
    supplied = report.traction_energy_j
    recovered = report.regen_energy_j / regen_efficiency if regen_efficiency > 0 else 0.0
    consumed = report.kinetic_gain_j + report.resistive_work_j + report.brake_loss_j + recovered
    imbalance = supplied - consumed
    scale = max(abs(supplied), abs(consumed), 1.0)
    return EnergyAudit(
        supplied_j=supplied,
        consumed_j=consumed,
        imbalance_j=imbalance,
        relative_imbalance=abs(imbalance) / scale,
    )


@dataclass(frozen=True)
class ChannelDelta:
    """One channel of two reports."""

    ehmpp: float
    baseline: float
    delta: float
    ratio: float | None


@dataclass(frozen=True)
class BinDelta:
    """One histogram bin of two reports, deltas in percentage points."""

    ehmpp: float
    baseline: float
    delta_points: float
    relative_delta: float | None


@dataclass(frozen=True)
class Comparison:
    """Energy-aware planner against the baseline on one scenario."""

    scenario_hash: str
    channels: dict[str, ChannelDelta]
    decel_bins: dict[str, BinDelta]
    accel_bins: dict[str, BinDelta]
    headline: BinDelta
    headline_bin: str = HEADLINE_BIN
    flags: tuple[str, ...] = field(default_factory=tuple)

    def to_dict(self) -> dict[str, Any]:
        """Serialize for comparison.json."""
        data = asdict(self)
        data["flags"] = list(self.flags)
        return data


def _ratio(num: float, den: float) -> float | None:
    if den == 0:
        return None
    return num / den


def _bin_deltas(ehmpp: Mapping[str, float], baseline: Mapping[str, float]) -> dict[str, BinDelta]:
    return {
        label: BinDelta(
            ehmpp=ehmpp[label],
            baseline=baseline[label],
            delta_points=100.0 * (ehmpp[label] - baseline[label]),
            relative_delta=_ratio(ehmpp[label] - baseline[label], baseline[label]),
        )
        for label in BIN_LABELS
    }


def compare_reports(ehmpp: EnergyReport, baseline: EnergyReport) -> Comparison:
    """Per-channel deltas and ratios (ehmpp over baseline) and histogram bin deltas."""
    if ehmpp.scenario_hash != baseline.scenario_hash:
        raise ComparisonError(
            f"scenario hash mismatch: {ehmpp.scenario_hash!r} != {baseline.scenario_hash!r}"
        )
    channels = {
        name: ChannelDelta(
            ehmpp=getattr(ehmpp, name),
            baseline=getattr(baseline, name),
            delta=getattr(ehmpp, name) - getattr(baseline, name),
            ratio=_ratio(getattr(ehmpp, name), getattr(baseline, name)),
        )
        for name in ENERGY_CHANNELS
    }
    decel_bins = _bin_deltas(ehmpp.accel_histogram.decel, baseline.accel_histogram.decel)
    flags: list[str] = []
    if abs(ehmpp.distance_m - baseline.distance_m) > 1.0:
        flags.append("distance_mismatch")
    _LOGGER.debug(
        "Headline bin %s delta %.3f points", HEADLINE_BIN, decel_bins[HEADLINE_BIN].delta_points
    )
    return Comparison(
        scenario_hash=ehmpp.scenario_hash,
        channels=channels,
        decel_bins=decel_bins,
        accel_bins=_bin_deltas(ehmpp.accel_histogram.accel, baseline.accel_histogram.accel),
        headline=decel_bins[HEADLINE_BIN],
        flags=tuple(flags),
    )
