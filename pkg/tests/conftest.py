"""Shared fixtures for the ecoplan tests."""

from __future__ import annotations

import numpy as np
import pytest

from ecoplan.frenet_frame import ReferenceLine
from ecoplan.models import (
    Environment,
    LongitudinalState,
    PlannerConfig,
    SlopeProfile,
    VehicleParams,
)

ROUTE_LENGTH_M = 1000.0


@pytest.fixture
def params() -> VehicleParams:
    """Default vehicle parameters."""
    return VehicleParams()


@pytest.fixture
def flat_env() -> Environment:
    """Flat road over the test route."""
    return Environment.flat(ROUTE_LENGTH_M)


@pytest.fixture
def uphill_env() -> Environment:
    """Constant 0.05 rad climb over the test route."""
    return Environment(slope_profile=SlopeProfile((0.0, ROUTE_LENGTH_M), (0.05, 0.05)))


@pytest.fixture
def config() -> PlannerConfig:
    """Default planner configuration."""
    return PlannerConfig()


@pytest.fixture
def rng() -> np.random.Generator:
    """Seeded generator for reproducible lattice jitter."""
    return np.random.default_rng(0)


@pytest.fixture
def cruising() -> LongitudinalState:
    """Vehicle at 20 m/s with no acceleration."""
    return LongitudinalState(s_m=0.0, v_ms=20.0, a_ms2=0.0)


@pytest.fixture
def straight_line() -> ReferenceLine:
    """Straight reference line along +x, 200 m long."""
    xs = np.linspace(0.0, 200.0, 201)
    return ReferenceLine.from_points(np.column_stack([xs, np.zeros_like(xs)]))
