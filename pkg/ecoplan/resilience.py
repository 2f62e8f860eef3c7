"""Planner-failure bookkeeping and the emergency-stop policy."""

from __future__ import annotations

from dataclasses import asdict, dataclass
import logging
from typing import Any

from .const import MAX_CONSECUTIVE_FAILURES, StrEnum
from .errors import EcoPlanError
from .models import Environment, LongitudinalState, VehicleParams
from .vehicle_dynamics import max_stopping_decel

_LOGGER = logging.getLogger(__name__)

# Fraction of cycles that may fall back to the coarse profile before a run is unhealthy
QP_FALLBACK_WARN_RATIO = 0.25


class FailureAction(StrEnum):
    """What the loop does after a failed planning cycle."""

    REUSE_PLAN = "reuse_plan"
    EMERGENCY_STOP = "emergency_stop"


@dataclass
class ResilienceStats:
    """Counters kept over one closed-loop run."""

    cycles: int = 0
    planner_failures: int = 0
    consecutive_failures: int = 0
    plan_reuses: int = 0
    emergency_stops: int = 0
    path_qp_fallbacks: int = 0
    speed_qp_fallbacks: int = 0
    smoothing_fallbacks: int = 0
    cruise_caps: int = 0
    last_error_code: str | None = None


class PlannerResilience:
    """Track planner failures and decide when to stop the vehicle."""

    def __init__(self, max_consecutive_failures: int = MAX_CONSECUTIVE_FAILURES) -> None:
        """Initialize the failure tracker."""
        if max_consecutive_failures < 1:
            raise ValueError("max_consecutive_failures must be at least 1")
        self.max_consecutive_failures = max_consecutive_failures
        self.stats = ResilienceStats()
        self._error_counts: dict[str, int] = {}
        self._emergency = False

    @property
    def emergency(self) -> bool:
        """Whether the emergency stop is engaged."""
        return self._emergency

    def record_success(
        self,
        *,
        path_fallback: bool = False,
        speed_fallback: bool = False,
        smoothing_fallback: bool = False,
        cruise_capped: bool = False,
    ) -> None:
        """Count a completed cycle and its soft fallbacks."""
        self.stats.cycles += 1
        self.stats.consecutive_failures = 0
        self.stats.path_qp_fallbacks += int(path_fallback)
        self.stats.speed_qp_fallbacks += int(speed_fallback)
        self.stats.smoothing_fallbacks += int(smoothing_fallback)
        self.stats.cruise_caps += int(cruise_capped)

    def record_failure(self, err: EcoPlanError, t: float) -> FailureAction:
        """Count a failed cycle and return the action the loop must take."""
        self.stats.cycles += 1
        self.stats.planner_failures += 1
        self.stats.consecutive_failures += 1
        self.stats.last_error_code = err.error_code
        self._error_counts[err.error_code] = self._error_counts.get(err.error_code, 0) + 1

        if self.stats.consecutive_failures >= self.max_consecutive_failures:
            if not self._emergency:
                self._emergency = True
                self.stats.emergency_stops += 1
                _LOGGER.error(
                    "Planner failed %d times in a row at t=%.2f s; engaging emergency stop",
                    self.stats.consecutive_failures,
                    t,
                    exc_info=err,
                )
            return FailureAction.EMERGENCY_STOP

        self.stats.plan_reuses += 1
        _LOGGER.warning("Planner failed at t=%.2f s (%s); reusing previous plan", t, err)
        return FailureAction.REUSE_PLAN

    def is_healthy(self) -> tuple[bool, list[str]]:
        """Overall run health and the issues found."""
        issues = []
        if self._emergency:
            issues.append("Emergency stop engaged")
        if self.stats.planner_failures:
            issues.append(f"Planner failures: {self.stats.planner_failures}")
        limit = QP_FALLBACK_WARN_RATIO * self.stats.cycles
        if self.stats.cycles and self.stats.path_qp_fallbacks > limit:
            issues.append(f"Frequent path QP fallbacks: {self.stats.path_qp_fallbacks}")
        if self.stats.cycles and self.stats.speed_qp_fallbacks > limit:
            issues.append(f"Frequent speed QP fallbacks: {self.stats.speed_qp_fallbacks}")
        return not issues, issues

    def get_resilience_stats(self) -> dict[str, Any]:
        """Stats, error counts and health as a plain mapping."""
        healthy, issues = self.is_healthy()
        return {
            "healthy": healthy,
            "issues": issues,
            "stats": asdict(self.stats),
            "error_counts": dict(sorted(self._error_counts.items())),
        }


def emergency_accel(state: LongitudinalState, env: Environment, params: VehicleParams) -> float:
    """Commanded acceleration while stopping: full decel, zero at rest."""
    if state.v_ms <= 0:
        return 0.0
    s = float(env.slope_profile.clamp(state.s_m))
    return -max_stopping_decel(LongitudinalState(s_m=s, v_ms=state.v_ms), env, params)
