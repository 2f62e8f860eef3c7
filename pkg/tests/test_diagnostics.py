"""Tests for cycle diagnostics and run health."""

from __future__ import annotations

from ecoplan.diagnostics import CycleDiagnostics, failed_cycle, run_health, summarize_cycles
from ecoplan.errors import CorridorCollapseError
from ecoplan.resilience import PlannerResilience


def _ok(t: float, phase: str, residual: float, fallback: bool = False) -> CycleDiagnostics:
    return CycleDiagnostics(
        t=t,
        s_origin=10.0 * t,
        phase=phase,
        path_qp_status="optimal",
        path_primal_residual=residual,
        speed_qp_status="max_iter" if fallback else "optimal",
        speed_primal_residual=1.0 if fallback else residual / 2,
        speed_fallback=fallback,
    )


def test_summary_counts_and_residuals():
    cycles = [
        _ok(0.0, "cruise", 1e-8),
        _ok(0.5, "deceleration", 3e-7, fallback=True),
        failed_cycle(1.0, 10.0, CorridorCollapseError("collapsed")),
    ]
    summary = summarize_cycles(cycles)
    assert summary["cycles"] == 3
    assert summary["failed_cycles"] == 1
    assert summary["phases"] == {"acceleration": 0, "deceleration": 1, "cruise": 1}
    assert summary["speed_qp_status"] == {"max_iter": 1, "optimal": 1}
    assert summary["speed_fallbacks"] == 1
    # uncertified residuals are left out
    assert summary["max_primal_residual"] == 3e-7


def test_failed_cycle_carries_the_error_code():
    cycle = failed_cycle(2.0, 20.0, CorridorCollapseError("collapsed"))
    assert cycle.failed
    assert cycle.to_dict()["error_code"] == "corridor_collapse"


def test_run_health_includes_flags():
    tracker = PlannerResilience()
    tracker.record_success()
    health = run_health([_ok(0.0, "cruise", 0.0)], tracker.get_resilience_stats(), [])
    assert health["healthy"]
    flagged = run_health([], tracker.get_resilience_stats(), ["emergency_stop"])
    assert not flagged["healthy"]
    assert flagged["flags"] == ["emergency_stop"]
