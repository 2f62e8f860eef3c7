"""Constants for the ecoplan toolkit."""

from enum import Enum, IntEnum
from typing import Final
import math

try:
    from enum import StrEnum
except ImportError:  # Python < 3.11

    class StrEnum(str, Enum):  # type: ignore[no-redef]
        """Backport of enum.StrEnum (Python 3.11+)."""

        __str__ = str.__str__
        __format__ = str.__format__  # type: ignore[assignment]

DOMAIN: Final = "ecoplan"

# Output schema versions
SCHEMA_VERSION_SCENARIO: Final = 1
SCHEMA_VERSION_REPORT: Final = 1
SCHEMA_VERSION_COMPARISON: Final = 1
SCHEMA_VERSION_TRACE: Final = 1
SCHEMA_VERSION_PROFILES: Final = 1
SCHEMA_VERSION_SWEEP: Final = 1

# Physical environment defaults
DEFAULT_AIR_DENSITY: Final = 1.225  # kg/m^3
DEFAULT_GRAVITY: Final = 9.81  # m/s^2

# Default vehicle (mid-size EV)
DEFAULT_MASS: Final = 1500.0  # kg
DEFAULT_DRAG_COEFF: Final = 0.3
DEFAULT_FRONTAL_AREA: Final = 2.2  # m^2
DEFAULT_ROLLING_MU: Final = 0.015
DEFAULT_P_OPT: Final = 8000.0  # W, cruise optimal motor power
DEFAULT_P2: Final = 30000.0  # W, acceleration optimal motor power
DEFAULT_PM: Final = 20000.0  # W, max-efficiency recovery power
DEFAULT_P_REGEN_MAX: Final = 60000.0  # W
DEFAULT_F_BRAKE_MAX: Final = 6000.0  # N
DEFAULT_REGEN_DECEL_MIN: Final = 0.5  # m/s^2, recovery activation threshold
DEFAULT_REGEN_DECEL_MAX: Final = 3.0  # m/s^2, recovery drag ceiling
DEFAULT_V_MAX: Final = 33.3  # m/s, about 120 km/h
DEFAULT_P_MAX: Final = 100000.0  # W, peak motor power
DEFAULT_F_TRACTION_MAX: Final = 4500.0  # N
DEFAULT_VEHICLE_LENGTH: Final = 4.6  # m
DEFAULT_VEHICLE_WIDTH: Final = 1.8  # m

# Numerical guards
V_FLOOR: Final = 0.1  # m/s, guards 1/v in the power-limited terms
CRUISE_ROOT_TOL: Final = 1e-8  # m/s
CRUISE_BRACKET_FACTOR: Final = 3.0  # bracket is [0, factor * v_max]

# Reference line
DEFAULT_WINDOW_BEHIND: Final = 30.0  # m
DEFAULT_WINDOW_AHEAD: Final = 150.0  # m
DEFAULT_REFLINE_DS: Final = 1.0  # m
DEFAULT_SMOOTH_W_FIDELITY: Final = 1.0
DEFAULT_SMOOTH_W_FIRST: Final = 10.0
DEFAULT_SMOOTH_W_SECOND: Final = 100.0
PROJECTION_TIE_TOL: Final = 1e-9  # m
PROJECTION_ROOT_TOL: Final = 1e-12  # m

# QP solver
DEFAULT_QP_TOL: Final = 1e-6
DEFAULT_QP_MAX_ITER: Final = 20000
QP_SIGMA: Final = 1e-6
QP_ALPHA: Final = 1.6
QP_RHO: Final = 0.1
QP_RHO_EQ_SCALE: Final = 1e3
QP_PSD_SHIFT: Final = 1e-10
QP_CHECK_EVERY: Final = 10  # iterations between residual checks
QP_ADAPT_EVERY: Final = 50  # iterations between rho updates
QP_POLISH_DELTA: Final = 1e-9
QP_POLISH_REFINE_STEPS: Final = 5
QP_INFEASIBLE_TOL: Final = 1e-5

# Path lattice and costs
DEFAULT_LATTICE_DS: Final = 10.0  # m
DEFAULT_LATTICE_DL: Final = 0.5  # m
DEFAULT_PATH_QP_DS: Final = 2.0  # m
SEGMENT_SAMPLES: Final = 5
DEFAULT_W_OBS: Final = 1.0
DEFAULT_W_SM: Final = 10.0
DEFAULT_W_RE: Final = 1.0
DEFAULT_PATH_W1: Final = 1.0
DEFAULT_PATH_W2: Final = 10.0
DEFAULT_PATH_W3: Final = 10.0
DEFAULT_PATH_W4: Final = 5.0
DEFAULT_PATH_D1: Final = 40.0  # m, used when the safety interval is fixed
DEFAULT_PATH_D2: Final = 30.0  # m
DEFAULT_OBSTACLE_RAMP_K: Final = 100.0
SAFETY_INTERVAL_SPAN: Final = 10.0  # m, d1 - d2 when derived from speed
DEFAULT_LATERAL_BUFFER: Final = 0.3  # m
STATIC_SPEED_THRESHOLD: Final = 0.5  # m/s

# ST graph and speed costs
DEFAULT_ST_DT: Final = 0.5  # s
DEFAULT_ST_HORIZON: Final = 8.0  # s
DEFAULT_ST_DS: Final = 1.0  # m
DEFAULT_EPS_V: Final = 0.25  # m/s, phase hysteresis
DEFAULT_W_REF_SPEED: Final = 1.0
DEFAULT_W_ACC: Final = 25.0
DEFAULT_W_JE: Final = 1.0
DEFAULT_W1: Final = 1.0
DEFAULT_W2: Final = 1.0
DEFAULT_W3: Final = 1.0
DEFAULT_ST_D1: Final = 15.0  # m
DEFAULT_ST_D2: Final = 4.0  # m
DEFAULT_K_OBS: Final = 10.0
DEFAULT_STOP_DECEL: Final = 1.5  # m/s^2
DEFAULT_STOP_BUFFER: Final = 1.0  # m
DEFAULT_STOP_LOOKAHEAD: Final = 20.0  # m
DEFAULT_SAFETY_BUFFER: Final = 0.5  # m

# Simulation
DEFAULT_PLANT_DT: Final = 0.02  # s
DEFAULT_REPLAN_DT: Final = 0.5  # s
DEFAULT_END_MARGIN: Final = 5.0  # m
MAX_CONSECUTIVE_FAILURES: Final = 2

# Energy accounting
DEFAULT_REGEN_EFFICIENCY: Final = 1.0
DEFAULT_HISTOGRAM_DEADBAND: Final = 0.05  # m/s^2
HISTOGRAM_BIN_EDGES: Final = (0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0, math.inf)  # m/s^2
HEADLINE_BIN: Final = "0.0-0.5"

# CLI
SWEEP_CONCURRENCY_LIMIT: Final = 4
CSV_FLOAT_FORMAT: Final = ".10g"

# Sentinel for infeasible lattice transitions
INFINITE_COST: Final = math.inf

# Error codes
ERROR_CODE_DOMAIN: Final = "domain_error"
ERROR_CODE_CONSTRAINT: Final = "constraint_violation"
ERROR_CODE_NON_CONVEX: Final = "non_convex"
ERROR_CODE_AMBIGUOUS_PROJECTION: Final = "ambiguous_projection"
ERROR_CODE_DEGENERATE_SEGMENT: Final = "degenerate_segment"
ERROR_CODE_BLOCKED_PATH: Final = "blocked_path"
ERROR_CODE_CORRIDOR_COLLAPSE: Final = "corridor_collapse"
ERROR_CODE_INFEASIBLE_HORIZON: Final = "infeasible_horizon"
ERROR_CODE_SCENARIO: Final = "invalid_scenario"
ERROR_CODE_COMPARISON: Final = "comparison_mismatch"
ERROR_CODE_PLANNER: Final = "planner_failure"


class PhaseLabel(StrEnum):
    """Motion phase selected once per planning cycle."""

    ACCELERATION = "acceleration"
    DECELERATION = "deceleration"
    CRUISE = "cruise"


class PlannerKind(StrEnum):
    """Planner variants compared by the simulator."""

    EHMPP = "ehmpp"
    BASELINE = "baseline"


class QPStatus(StrEnum):
    """Termination status of the QP solver."""

    OPTIMAL = "optimal"
    MAX_ITER = "max_iter"
    INFEASIBLE = "infeasible"


class ExitCode(IntEnum):
    """Process exit codes of the command-line tool."""

    OK = 0
    UNEXPECTED = 1
    SCENARIO_ERROR = 2
    PLANNER_FAILURE = 3
