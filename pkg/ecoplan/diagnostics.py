"""Per-cycle planner diagnostics and run health summaries."""

from __future__ import annotations

from collections import Counter
from collections.abc import Sequence
from dataclasses import asdict, dataclass
import logging
import math
from typing import Any

from .const import PhaseLabel, QPStatus
from .errors import EcoPlanError
from .path_planner import PathPlan
from .speed_planner import SpeedPlan

_LOGGER = logging.getLogger(__name__)


@dataclass(frozen=True)
class CycleDiagnostics:
    """What one planning cycle produced, or why it failed."""

    t: float
    s_origin: float
    phase: str | None = None
    path_dp_cost: float | None = None
    path_qp_status: str | None = None
    path_fallback: bool = False
    path_primal_residual: float | None = None
    path_dual_residual: float | None = None
    path_objective: float | None = None
    path_dp_objective: float | None = None
    corridor_l_lo_max: float | None = None
    corridor_l_hi_min: float | None = None
    speed_dp_cost: float | None = None
    speed_qp_status: str | None = None
    speed_fallback: bool = False
    speed_primal_residual: float | None = None
    speed_dual_residual: float | None = None
    speed_objective: float | None = None
    speed_coarse_objective: float | None = None
    st_s_hi_min: float | None = None
    smoothing_fallback: bool = False
    error_code: str | None = None

    @property
    def failed(self) -> bool:
        """Whether the cycle raised."""
        return self.error_code is not None

    def to_dict(self) -> dict[str, Any]:
        """Convert to dictionary."""
        return asdict(self)


def cycle_diagnostics(
    t: float,
    s_origin: float,
    path_plan: PathPlan,
    speed_plan: SpeedPlan,
    *,
    smoothing_fallback: bool = False,
) -> CycleDiagnostics:
    """Diagnostics of a successful cycle."""
    corridor = path_plan.corridor
    st_hi = [float(x) for x in speed_plan.corridor.s_hi if math.isfinite(float(x))]
    return CycleDiagnostics(
        t=t,
        s_origin=s_origin,
        phase=speed_plan.phase.value,
        path_dp_cost=float(path_plan.dp.cost),
        path_qp_status=path_plan.refined.status.value,
        path_fallback=path_plan.refined.fallback,
        path_primal_residual=float(path_plan.refined.primal_residual),
        path_dual_residual=float(path_plan.refined.dual_residual),
        path_objective=float(path_plan.refined.objective),
        path_dp_objective=float(path_plan.refined.dp_objective),
        corridor_l_lo_max=float(max(corridor.l_lo)),
        corridor_l_hi_min=float(min(corridor.l_hi)),
        speed_dp_cost=float(speed_plan.dp_cost),
        speed_qp_status=speed_plan.refined.status.value,
        speed_fallback=speed_plan.refined.fallback,
        speed_primal_residual=float(speed_plan.refined.primal_residual),
        speed_dual_residual=float(speed_plan.refined.dual_residual),
        speed_objective=float(speed_plan.refined.objective),
        speed_coarse_objective=float(speed_plan.refined.coarse_objective),
        st_s_hi_min=min(st_hi) if st_hi else None,
        smoothing_fallback=smoothing_fallback,
    )


def failed_cycle(t: float, s_origin: float, err: EcoPlanError) -> CycleDiagnostics:
    """Diagnostics of a cycle that raised."""
    return CycleDiagnostics(t=t, s_origin=s_origin, error_code=err.error_code)


def summarize_cycles(cycles: Sequence[CycleDiagnostics]) -> dict[str, Any]:
    """Counts of phases and QP statuses plus the worst certified residuals."""
    ok = [c for c in cycles if not c.failed]
    residuals = [
        r
        for c in ok
        for r, status in (
            (c.path_primal_residual, c.path_qp_status),
            (c.speed_primal_residual, c.speed_qp_status),
        )
        if r is not None and status == QPStatus.OPTIMAL.value
    ]
    phases = Counter(c.phase for c in ok)
    summary = {
        "cycles": len(cycles),
        "failed_cycles": len(cycles) - len(ok),
        "phases": {phase.value: phases.get(phase.value, 0) for phase in PhaseLabel},
        "path_qp_status": dict(sorted(Counter(c.path_qp_status for c in ok).items())),
        "speed_qp_status": dict(sorted(Counter(c.speed_qp_status for c in ok).items())),
        "path_fallbacks": sum(c.path_fallback for c in ok),
        "speed_fallbacks": sum(c.speed_fallback for c in ok),
        "smoothing_fallbacks": sum(c.smoothing_fallback for c in ok),
        "max_primal_residual": max(residuals) if residuals else None,
    }
    _LOGGER.debug("Cycle summary: %s", summary)
    return summary


def run_health(
    cycles: Sequence[CycleDiagnostics],
    resilience_stats: dict[str, Any],
    flags: Sequence[str],
) -> dict[str, Any]:
    """Health block of report.json."""
    return {
        "healthy": bool(resilience_stats["healthy"]) and not flags,
        "issues": list(resilience_stats["issues"]),
        "flags": list(flags),
        "resilience": resilience_stats["stats"],
        "error_counts": resilience_stats["error_counts"],
        "cycles": summarize_cycles(cycles),
    }
