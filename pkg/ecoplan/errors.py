"""Exceptions raised by the ecoplan toolkit."""

from __future__ import annotations

from typing import Any

from .const import (
    ERROR_CODE_AMBIGUOUS_PROJECTION,
    ERROR_CODE_BLOCKED_PATH,
    ERROR_CODE_COMPARISON,
    ERROR_CODE_CONSTRAINT,
    ERROR_CODE_CORRIDOR_COLLAPSE,
    ERROR_CODE_DEGENERATE_SEGMENT,
    ERROR_CODE_DOMAIN,
    ERROR_CODE_INFEASIBLE_HORIZON,
    ERROR_CODE_NON_CONVEX,
    ERROR_CODE_PLANNER,
    ERROR_CODE_SCENARIO,
)


class EcoPlanError(Exception):
    """Base exception for the toolkit."""

    default_code: str = ERROR_CODE_DOMAIN

    def __init__(self, message: str, error_code: str | None = None) -> None:
        """Initialize error."""
        super().__init__(message)
        self.error_code = error_code or self.default_code

    def as_dict(self) -> dict[str, Any]:
        """Return a structured form for CLI diagnostics."""
        return {"error_code": self.error_code, "message": str(self)}


class DomainError(EcoPlanError):
    """Input outside the domain of an operation."""


class ConstraintError(EcoPlanError):
    """Actuator bound violated."""

    default_code = ERROR_CODE_CONSTRAINT


class NonConvexError(DomainError):
    """QP hessian is not positive semidefinite."""

    default_code = ERROR_CODE_NON_CONVEX


class AmbiguousProjectionError(EcoPlanError):
    """A pose projects onto two distinct places of the reference line."""

    default_code = ERROR_CODE_AMBIGUOUS_PROJECTION

    def __init__(self, message: str, candidates: tuple[Any, ...]) -> None:
        """Initialize with the competing projections."""
        super().__init__(message)
        self.candidates = candidates


class DegenerateSegmentError(EcoPlanError):
    """Quintic requested over a zero-length interval."""

    default_code = ERROR_CODE_DEGENERATE_SEGMENT


class BlockedPathError(EcoPlanError):
    """Every path through the SL lattice has infinite cost."""

    default_code = ERROR_CODE_BLOCKED_PATH


class CorridorCollapseError(EcoPlanError):
    """No collision-free lateral interval keeps the DP path inside with margin."""

    default_code = ERROR_CODE_CORRIDOR_COLLAPSE


class InfeasibleHorizonError(EcoPlanError):
    """Every boundary node of the ST graph has infinite cost."""

    default_code = ERROR_CODE_INFEASIBLE_HORIZON


class ScenarioError(EcoPlanError):
    """Scenario file or override failed validation."""

    default_code = ERROR_CODE_SCENARIO

    def __init__(self, message: str, field: str | None = None) -> None:
        """Initialize with the offending field path."""
        super().__init__(message)
        self.field = field

    def as_dict(self) -> dict[str, Any]:
        """Return a structured form including the field path."""
        data = super().as_dict()
        data["field"] = self.field
        return data


class ComparisonError(EcoPlanError):
    """Reports from different scenarios cannot be compared."""

    default_code = ERROR_CODE_COMPARISON


class PlannerError(EcoPlanError):
    """A planning cycle failed."""

    default_code = ERROR_CODE_PLANNER
