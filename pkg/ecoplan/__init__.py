"""Energy-aware DP+QP motion planning for electric vehicles with a closed-loop simulator."""

from __future__ import annotations

from .const import PhaseLabel, PlannerKind
from .errors import EcoPlanError, PlannerError, ScenarioError
from .scenario import Scenario, load_scenario
from .sim_harness import run_closed_loop, run_comparison

__version__ = "1.0.0"

__all__ = [
    "EcoPlanError",
    "PhaseLabel",
    "PlannerError",
    "PlannerKind",
    "Scenario",
    "ScenarioError",
    "__version__",
    "load_scenario",
    "run_closed_loop",
    "run_comparison",
]
