"""Closed-loop simulator: kinematic plant, planner drivers and A/B comparison."""

from __future__ import annotations

import asyncio
from dataclasses import dataclass, field
import logging
import math
from typing import Any

import numpy as np
from numpy.typing import NDArray

from .const import (
    SCHEMA_VERSION_REPORT,
    STATIC_SPEED_THRESHOLD,
    PhaseLabel,
    PlannerKind,
)
from .diagnostics import CycleDiagnostics, cycle_diagnostics, failed_cycle, run_health
from .energy_model import (
    Comparison,
    EnergyAudit,
    EnergyReport,
    PowerSample,
    compare_reports,
    energy_audit,
    integrate_energy,
    proxy_power,
    split_braking,
)
from .errors import DomainError, EcoPlanError, PlannerError
from .frenet_frame import (
    CartesianPoint,
    FrenetPoint,
    GlobalPath,
    ParticleFootprint,
    PolygonFootprint,
    ReferenceLine,
    SLBox,
    SmoothingWeights,
    STParticle,
    extract_window,
    project_obstacle,
    smooth_reference,
    to_frenet,
)
from .models import Environment, LongitudinalState, VehicleParams
from .path_planner import PathNode, PathPlan, PathProfile, plan_path
from .resilience import FailureAction, PlannerResilience, emergency_accel
from .scenario import ObstacleSpec, Scenario
from .speed_planner import SpeedPlan, SpeedProfile, plan_speed
from .vehicle_dynamics import (
    max_stopping_decel,
    max_traction_accel,
    min_brake_distance,
    optimal_cruise_speed,
    road_load,
)

_LOGGER = logging.getLogger(__name__)

FLAG_EMERGENCY_STOP = "emergency_stop"
FLAG_PLANNER_FAILURE = "planner_failure"


def step_plant(
    state: LongitudinalState,
    commanded_accel: float,
    dt: float,
    env: Environment | None = None,
    params: VehicleParams | None = None,
) -> LongitudinalState:
    """Semi-implicit Euler step: v+ = max(0, v + a dt), s+ = s + v+ dt.

    With an environment and vehicle the command is clipped to
    [-max stopping decel, max traction accel] first. The returned
    acceleration is the one actually realized over the step.
    """
    if dt <= 0:
        raise DomainError("plant step needs dt > 0")
    accel = float(commanded_accel)
    if env is not None and params is not None:
        on_slope = LongitudinalState(
            s_m=float(env.slope_profile.clamp(state.s_m)), v_ms=state.v_ms, a_ms2=state.a_ms2
        )
        accel = min(max(accel, -max_stopping_decel(on_slope, env, params)), max_traction_accel(on_slope, env, params))
    v_next = max(0.0, state.v_ms + accel * dt)
    return LongitudinalState(
        s_m=state.s_m + v_next * dt, v_ms=v_next, a_ms2=(v_next - state.v_ms) / dt
    )


def _route_frame(route: GlobalPath, s: float) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Point and unit tangent of the route polyline at station s."""
    arc = route.arc_lengths
    i = int(np.clip(np.searchsorted(arc, s, side="right") - 1, 0, arc.size - 2))
    leg = route.waypoints[i + 1] - route.waypoints[i]
    return route.point_at(s), leg / np.linalg.norm(leg)


def route_pose(route: GlobalPath, s: float, l: float) -> CartesianPoint:  # noqa: E741
    """Cartesian position of route coordinates (s, l)."""
    point, tangent = _route_frame(route, s)
    normal = np.array([-tangent[1], tangent[0]])
    x, y = point + l * normal
    return CartesianPoint(float(x), float(y))


def obstacle_footprint(
    route: GlobalPath, obstacle: ObstacleSpec, t: float
) -> PolygonFootprint | ParticleFootprint:
    """Footprint at time t: a polygon when static, a moving particle otherwise."""
    s = obstacle.s_at(t)
    point, tangent = _route_frame(route, s)
    normal = np.array([-tangent[1], tangent[0]])
    centre = point + obstacle.l_m * normal
    if obstacle.speed_ms < STATIC_SPEED_THRESHOLD:
        half_l = 0.5 * obstacle.length_m * tangent
        half_w = 0.5 * obstacle.width_m * normal
        corners = [centre + a + b for a in (-half_l, half_l) for b in (-half_w, half_w)]
        return PolygonFootprint(corners=tuple(CartesianPoint(float(x), float(y)) for x, y in corners))
    return ParticleFootprint(
        centre=CartesianPoint(float(centre[0]), float(centre[1])),
        heading_rad=math.atan2(tangent[1], tangent[0]),
        speed_ms=obstacle.speed_ms,
        length_m=obstacle.length_m,
        width_m=obstacle.width_m,
    )


@dataclass(frozen=True)
class LateralState:
    """Lateral offset and its station derivatives."""

    l_m: float = 0.0
    dl: float = 0.0
    ddl: float = 0.0


@dataclass(frozen=True)
class PlannerCycle:
    """Reference line, path and speed plans of one cycle.

    ``line_shift_m`` converts route stations to line stations:
    s_line = s_route + line_shift_m.
    """

    kind: PlannerKind
    t: float
    s_route_m: float
    line: ReferenceLine
    line_shift_m: float
    path: PathPlan
    speed: SpeedPlan
    st_obstacles: tuple[STParticle, ...]
    cruise_capped: bool = False

    @property
    def path_profile(self) -> PathProfile:
        """Final lateral profile."""
        return self.path.profile

    @property
    def speed_profile(self) -> SpeedProfile:
        """Final speed profile."""
        return self.speed.profile

    def lateral_at(self, s_route: float) -> LateralState:
        """Lateral state at a route station under perfect tracking."""
        s_line = s_route + self.line_shift_m
        profile = self.path_profile
        return LateralState(
            l_m=float(profile.evaluate(s_line)),
            dl=float(profile.evaluate(s_line, 1)),
            ddl=float(profile.evaluate(s_line, 2)),
        )


def _window_obstacles(
    scenario: Scenario, route: GlobalPath, window: GlobalPath, line: ReferenceLine, t: float
) -> tuple[list[SLBox], list[STParticle]]:
    """Project the obstacles overlapping the window into the line's frame."""
    lo = window.s_offset_m
    hi = window.s_offset_m + window.length_m
    boxes: list[SLBox] = []
    particles: list[STParticle] = []
    for obstacle in scenario.obstacles:
        s = obstacle.s_at(t)
        if s + 0.5 * obstacle.length_m < lo or s - 0.5 * obstacle.length_m > hi:
            continue
        projected = project_obstacle(obstacle_footprint(route, obstacle, t), line)
        if isinstance(projected, SLBox):
            boxes.append(projected)
        elif projected is not None:
            particles.append(projected)
    return boxes, particles


def _conflicts(
    particle: STParticle,
    profile: PathProfile,
    t_samples: NDArray[np.float64],
    half_width_m: float,
    buffer_m: float,
) -> bool:
    """Whether the particle comes laterally within buffer of the planned path."""
    s = np.asarray(particle.s_at(t_samples))
    l_path = np.asarray(profile.evaluate(s))
    band = SLBox(
        float(s.min()), float(s.max()),
        particle.l_m - 0.5 * particle.width_m, particle.l_m + 0.5 * particle.width_m,
    )  # fmt: skip
    return bool(np.any(band.lateral_gap(l_path - half_width_m, l_path + half_width_m) <= buffer_m))


def _st_obstacles(
    boxes: list[SLBox],
    particles: list[STParticle],
    profile: PathProfile,
    ego_s: float,
    scenario: Scenario,
) -> tuple[STParticle, ...]:
    """Laterally conflicting obstacles ahead of the ego, relative to its station."""
    config = scenario.planner
    params = scenario.vehicle
    steps = int(round(config.st_horizon_s / config.st_dt_s))
    t_samples = np.arange(steps + 1) * config.st_dt_s
    candidates = list(particles) + [
        STParticle(
            s0_m=box.s_center,
            speed_ms=0.0,
            length_m=box.length_m,
            l_m=0.5 * (box.l_lo + box.l_hi),
            width_m=box.l_hi - box.l_lo,
        )
        for box in boxes
    ]
    selected = []
    for particle in candidates:
        rear_gap = particle.s0_m - ego_s + 0.5 * (particle.length_m + params.length_m)
        if rear_gap < 0:
            continue
        if not _conflicts(particle, profile, t_samples, params.half_width_m, config.lateral_buffer_m):
            continue
        selected.append(
            STParticle(
                s0_m=particle.s0_m - ego_s,
                speed_ms=max(particle.speed_ms, 0.0),
                length_m=particle.length_m,
                l_m=particle.l_m,
                width_m=particle.width_m,
            )
        )
    return tuple(selected)


def planner_cycle(
    kind: PlannerKind,
    scenario: Scenario,
    t: float,
    state: LongitudinalState,
    lateral: LateralState,
    *,
    route: GlobalPath | None = None,
    rng: np.random.Generator | None = None,
) -> PlannerCycle:
    """Window, reference line, path and speed planning at one replanning instant.

    ``state`` is in route coordinates. Any planning error is re-raised as a
    PlannerError carrying the original error code.
    """
    kind = PlannerKind(kind)
    route = route or scenario.route
    config = scenario.planner
    params = scenario.vehicle
    env = scenario.environment
    try:
        window = extract_window(
            route, route.point_at(state.s_m), config.window_behind_m, config.window_ahead_m
        )
        line = smooth_reference(
            window,
            SmoothingWeights.from_config(config),
            config.refline_ds_m,
            tol=config.qp_tol,
            max_iter=config.qp_max_iter,
        )
        ego = to_frenet(route_pose(route, state.s_m, lateral.l_m), line)
        boxes, particles = _window_obstacles(scenario, route, window, line, t)

        on_slope = LongitudinalState(
            s_m=float(env.slope_profile.clamp(state.s_m)), v_ms=state.v_ms, a_ms2=state.a_ms2
        )
        a_dec_max = max_stopping_decel(on_slope, env, params)
        path_weights = config.path_weights
        if config.dynamic_safety_interval:
            path_weights = path_weights.with_safety_interval(
                min_brake_distance(state.v_ms, 0.0, a_dec_max)
            )
        path = plan_path(
            PathNode(ego.s, ego.l, lateral.dl, lateral.ddl),
            min(config.window_ahead_m, line.length_m - ego.s),
            scenario.road_bounds,
            boxes,
            path_weights,
            config,
            half_width_m=params.half_width_m,
            ego_length_m=params.length_m,
            rng=rng,
        )

        st_obstacles = _st_obstacles(boxes, particles, path.profile, ego.s, scenario)
        walls = [wall - state.s_m for wall in scenario.active_walls(t) if wall > state.s_m]
        v_cap = scenario.speed_limit_at(t)

        def v_limit(s: NDArray[np.float64]) -> NDArray[np.float64]:
            return np.full(np.shape(s), v_cap)

        speed = plan_speed(
            kind,
            LongitudinalState(0.0, state.v_ms, state.a_ms2),
            state.s_m,
            v_limit,
            env,
            params,
            config,
            obstacles=st_obstacles,
            wall_station_m=walls[0] if walls else None,
            a_dec_max_ms2=a_dec_max,
        )
    except (EcoPlanError, ValueError) as err:
        code = err.error_code if isinstance(err, EcoPlanError) else None
        raise PlannerError(f"{kind.value} cycle failed at t={t:.2f} s: {err}", code) from err

    capped = kind is PlannerKind.EHMPP and bool(optimal_cruise_speed(on_slope.s_m, env, params).capped)
    _LOGGER.debug(
        "Cycle t=%.2f s=%.2f phase=%s path=%s speed=%s",
        t,
        state.s_m,
        speed.phase.value,
        path.refined.status.value,
        speed.refined.status.value,
    )
    return PlannerCycle(
        kind=kind,
        t=t,
        s_route_m=state.s_m,
        line=line,
        line_shift_m=ego.s - state.s_m,
        path=path,
        speed=speed,
        st_obstacles=st_obstacles,
        cruise_capped=capped,
    )


def baseline_planner_cycle(
    scenario: Scenario,
    t: float,
    state: LongitudinalState,
    lateral: LateralState,
    *,
    route: GlobalPath | None = None,
    rng: np.random.Generator | None = None,
) -> PlannerCycle:
    """The same pipeline with comfort costs and the speed limit as reference."""
    return planner_cycle(PlannerKind.BASELINE, scenario, t, state, lateral, route=route, rng=rng)


@dataclass(frozen=True)
class TraceSample:
    """One plant tick."""

    t: float
    x: float
    y: float
    s: float
    l: float  # noqa: E741
    v: float
    a: float
    phase: str
    traction_w: float
    regen_w: float
    brake_w: float
    resistive_w: float

    def to_row(self) -> dict[str, Any]:
        """Row of trace.csv."""
        return {
            "t": self.t,
            "x": self.x,
            "y": self.y,
            "s": self.s,
            "l": self.l,
            "v": self.v,
            "a": self.a,
            "phase": self.phase,
            "traction_w": self.traction_w,
            "regen_w": self.regen_w,
            "brake_w": self.brake_w,
            "resistive_w": self.resistive_w,
        }


@dataclass
class SimTrace:
    """Plant ticks, executed plans and per-cycle diagnostics of one run."""

    planner: PlannerKind
    scenario_hash: str
    samples: list[TraceSample] = field(default_factory=list)
    cycles: list[CycleDiagnostics] = field(default_factory=list)
    plans: list[PlannerCycle] = field(default_factory=list)
    flags: list[str] = field(default_factory=list)
    min_clearance_m: float | None = None

    @property
    def final(self) -> TraceSample:
        """Last recorded tick."""
        return self.samples[-1]

    def column(self, name: str) -> NDArray[np.float64]:
        """One numeric column over all ticks."""
        return np.array([getattr(sample, name) for sample in self.samples], dtype=float)

    def trace_rows(self) -> list[dict[str, Any]]:
        """Rows of trace.csv."""
        return [sample.to_row() for sample in self.samples]

    def refline_rows(self) -> list[dict[str, Any]]:
        """Reference-line samples of every cycle."""
        return [
            {"cycle": index, **row}
            for index, plan in enumerate(self.plans)
            for row in plan.line.to_rows()
        ]

    def path_rows(self) -> list[dict[str, Any]]:
        """Path knots of every cycle in route stations."""
        return [
            {"cycle": index, **row}
            for index, plan in enumerate(self.plans)
            for row in plan.path_profile.to_rows(s_offset_m=-plan.line_shift_m)
        ]

    def speed_rows(self) -> list[dict[str, Any]]:
        """Speed samples of every cycle in absolute time and route stations."""
        return [
            {"cycle": index, **row}
            for index, plan in enumerate(self.plans)
            for row in plan.speed_profile.to_rows(t_offset_s=plan.t)
        ]

    def power_rows(self) -> list[dict[str, Any]]:
        """Traction, recovery and proxy power over distance."""
        return [
            {
                "s": sample.s,
                "traction_w": sample.traction_w,
                "regen_w": sample.regen_w,
                "proxy": proxy_power(sample.a, sample.v),
            }
            for sample in self.samples
        ]

    def cycle_rows(self) -> list[dict[str, Any]]:
        """Rows of cycles.csv."""
        return [cycle.to_dict() for cycle in self.cycles]


@dataclass(frozen=True)
class RunResult:
    """Trace, energy report and health of one closed-loop run."""

    scenario: Scenario
    trace: SimTrace
    report: EnergyReport
    audit: EnergyAudit
    health: dict[str, Any]

    @property
    def planner(self) -> PlannerKind:
        """Planner that drove the run."""
        return self.trace.planner

    @property
    def flags(self) -> list[str]:
        """Run flags."""
        return list(self.trace.flags)

    def to_report(self, outputs: dict[str, Any]) -> dict[str, Any]:
        """Content of report.json."""
        final = self.trace.final
        return {
            "schema_version": SCHEMA_VERSION_REPORT,
            "scenario": self.scenario.name,
            "scenario_hash": self.scenario.identity_hash,
            "planner": self.planner.value,
            "energy": self.report.to_dict(),
            "audit": {
                "supplied_j": self.audit.supplied_j,
                "consumed_j": self.audit.consumed_j,
                "imbalance_j": self.audit.imbalance_j,
                "relative_imbalance": self.audit.relative_imbalance,
            },
            "health": self.health,
            "min_clearance_m": self.trace.min_clearance_m,
            "final_state": {"t": final.t, "s": final.s, "v": final.v},
            "flags": self.flags,
            "outputs": outputs,
        }


def _min_clearance(
    scenario: Scenario, t: float, s: float, l: float  # noqa: E741
) -> float:
    """Bumper gap to laterally conflicting obstacles and active walls."""
    params = scenario.vehicle
    hw = params.half_width_m
    buffer = scenario.planner.lateral_buffer_m
    best = math.inf
    for obstacle in scenario.obstacles:
        lateral = max(
            obstacle.l_m - 0.5 * obstacle.width_m - (l + hw),
            (l - hw) - (obstacle.l_m + 0.5 * obstacle.width_m),
            0.0,
        )
        if lateral > buffer:
            continue
        gap = abs(s - obstacle.s_at(t)) - 0.5 * (obstacle.length_m + params.length_m)
        best = min(best, max(gap, 0.0))
    front = s + 0.5 * params.length_m
    for wall in scenario.active_walls(t):
        if wall > s - 0.5 * params.length_m:
            best = min(best, max(wall - front, 0.0))
    return best


class ClosedLoopSimulator:
    """Replan every replan_dt and track the plan with the kinematic plant."""

    def __init__(self, scenario: Scenario, planner: PlannerKind | str) -> None:
        """Initialize the simulator."""
        self.scenario = scenario
        self.planner = PlannerKind(planner)
        self.route = scenario.route
        self.resilience = PlannerResilience()
        self._rng = np.random.default_rng(scenario.rng_seed)
        self._state = scenario.initial_state
        self._lateral = LateralState(l_m=scenario.initial_l_m)
        self._active: PlannerCycle | None = None
        self.trace = SimTrace(planner=self.planner, scenario_hash=scenario.identity_hash)

    def _replan(self, t: float) -> None:
        try:
            cycle = planner_cycle(
                self.planner,
                self.scenario, t, self._state, self._lateral, route=self.route, rng=self._rng
            )
        except PlannerError as err:
            self.trace.cycles.append(failed_cycle(t, self._state.s_m, err))
            if FLAG_PLANNER_FAILURE not in self.trace.flags:
                self.trace.flags.append(FLAG_PLANNER_FAILURE)
            if self.resilience.record_failure(err, t) is FailureAction.EMERGENCY_STOP:
                self._active = None
            return
        self.resilience.record_success(
            path_fallback=cycle.path.refined.fallback,
            speed_fallback=cycle.speed.refined.fallback,
            smoothing_fallback=cycle.line.smoothing_fallback,
            cruise_capped=cycle.cruise_capped,
        )
        self.trace.cycles.append(
            cycle_diagnostics(
                t, self._state.s_m, cycle.path, cycle.speed,
                smoothing_fallback=cycle.line.smoothing_fallback,
            )
        )  # fmt: skip
        self.trace.plans.append(cycle)
        self._active = cycle

    def _command(self, t: float) -> tuple[float, PhaseLabel]:
        if self.resilience.emergency:
            return (
                emergency_accel(self._state, self.scenario.environment, self.scenario.vehicle),
                PhaseLabel.DECELERATION,
            )
        if self._active is None:
            return 0.0, PhaseLabel.CRUISE
        planned = self._active.speed_profile.state_at(t - self._active.t)
        return planned.a_ms2, self._active.speed.phase

    def _sample(self, t: float, a: float, phase: PhaseLabel) -> tuple[TraceSample, PowerSample]:
        scenario = self.scenario
        params = scenario.vehicle
        env = scenario.environment
        state = self._state
        s_env = float(env.slope_profile.clamp(state.s_m))
        resistance = float(road_load(s_env, state.v_ms, env, params))
        need = params.mass_kg * a + resistance
        traction = regen = brake = 0.0
        if need >= 0:
            traction = need * state.v_ms
        else:
            split = split_braking(
                LongitudinalState(s_m=s_env, v_ms=state.v_ms), -need / params.mass_kg, params
            )
            regen, brake = split.regen_w, split.brake_w
        x, y = route_pose(self.route, state.s_m, self._lateral.l_m)
        trace = TraceSample(
            t=t,
            x=x,
            y=y,
            s=state.s_m,
            l=self._lateral.l_m,
            v=state.v_ms,
            a=a,
            phase=phase.value,
            traction_w=traction,
            regen_w=regen,
            brake_w=brake,
            resistive_w=resistance * state.v_ms,
        )
        power = PowerSample(
            t=t,
            v=state.v_ms,
            a=a,
            traction_power_w=traction,
            regen_power_w=regen,
            brake_dissipation_w=brake,
            resistive_power_w=resistance * state.v_ms,
            s=state.s_m,
            phase=phase,
        )
        return trace, power

    def run(self) -> RunResult:
        """Simulate until the duration elapses, the route ends or the vehicle stops in an emergency."""
        scenario = self.scenario
        dt = scenario.plant_dt_s
        ticks = int(math.floor(scenario.duration_s / dt + 1e-9))
        replan_every = max(1, int(round(scenario.replan_dt_s / dt)))
        end_station = self.route.length_m - scenario.end_margin_m
        power: list[PowerSample] = []
        clearance = math.inf
        _LOGGER.info(
            "Running %s on %s (%.1f s, %d ticks)", self.planner.value, scenario.name, scenario.duration_s, ticks
        )

        for k in range(ticks + 1):
            t = k * dt
            clearance = min(clearance, _min_clearance(scenario, t, self._state.s_m, self._lateral.l_m))
            done = (
                k == ticks
                or self._state.s_m >= end_station
                or (self.resilience.emergency and self._state.v_ms == 0.0)
            )
            if done:
                phase = self._active.speed.phase if self._active else PhaseLabel.CRUISE
                trace_sample, power_sample = self._sample(t, 0.0, phase)
                self.trace.samples.append(trace_sample)
                power.append(power_sample)
                break
            if k % replan_every == 0 and not self.resilience.emergency:
                self._replan(t)
            command, phase = self._command(t)
            next_state = step_plant(
                self._state, command, dt, scenario.environment, scenario.vehicle
            )
            trace_sample, power_sample = self._sample(t, next_state.a_ms2, phase)
            self.trace.samples.append(trace_sample)
            power.append(power_sample)
            self._state = next_state
            if self._active is not None and not self.resilience.emergency:
                self._lateral = self._active.lateral_at(next_state.s_m)

        if self.resilience.emergency:
            self.trace.flags.append(FLAG_EMERGENCY_STOP)
        self.trace.min_clearance_m = None if math.isinf(clearance) else clearance

        config = scenario.planner
        report = integrate_energy(
            power,
            mass_kg=scenario.vehicle.mass_kg,
            p_opt_w=scenario.vehicle.p_opt_w,
            regen_efficiency=config.regen_efficiency,
            deadband_ms2=config.histogram_deadband_ms2,
            scenario_hash=scenario.identity_hash,
        )
        audit = energy_audit(report, config.regen_efficiency)
        health = run_health(self.trace.cycles, self.resilience.get_resilience_stats(), self.trace.flags)
        _LOGGER.info(
            "Finished %s on %s: %.1f m in %.1f s, regen %.0f J, flags %s",
            self.planner.value,
            scenario.name,
            report.distance_m,
            report.duration_s,
            report.regen_energy_j,
            self.trace.flags,
        )
        return RunResult(scenario=scenario, trace=self.trace, report=report, audit=audit, health=health)


def run_closed_loop(scenario: Scenario, planner: PlannerKind | str) -> RunResult:
    """Run one planner on a scenario."""
    return ClosedLoopSimulator(scenario, planner).run()


@dataclass(frozen=True)
class ComparisonResult:
    """Both runs of a scenario and their comparison; partial when a run errored."""

    scenario: Scenario
    ehmpp: RunResult | None
    baseline: RunResult | None
    comparison: Comparison | None
    flags: tuple[str, ...] = ()
    errors: dict[str, dict[str, Any]] = field(default_factory=dict)

    @property
    def complete(self) -> bool:
        """Whether both runs finished."""
        return self.comparison is not None

    def runs(self) -> dict[str, RunResult]:
        """Finished runs by planner name."""
        return {
            kind.value: run
            for kind, run in ((PlannerKind.EHMPP, self.ehmpp), (PlannerKind.BASELINE, self.baseline))
            if run is not None
        }

    def to_dict(self) -> dict[str, Any]:
        """Content of comparison.json (without schema_version)."""
        data = self.comparison.to_dict() if self.comparison else {}
        data["flags"] = list(self.flags)
        data["runs"] = {
            name: {
                "flags": run.flags,
                "min_clearance_m": run.trace.min_clearance_m,
                "mean_cruise_power_dev_w": run.report.mean_cruise_power_dev_w,
            }
            for name, run in self.runs().items()
        }
        data["errors"] = dict(self.errors)
        return data


def _guarded_run(scenario: Scenario, planner: PlannerKind) -> RunResult | EcoPlanError:
    try:
        return run_closed_loop(scenario, planner)
    except EcoPlanError as err:
        _LOGGER.error("Run %s on %s failed: %s", planner.value, scenario.name, err, exc_info=True)
        return err


def _pair(
    scenario: Scenario,
    ehmpp: RunResult | EcoPlanError,
    baseline: RunResult | EcoPlanError,
) -> ComparisonResult:
    flags: list[str] = []
    errors: dict[str, dict[str, Any]] = {}
    for kind, outcome in ((PlannerKind.EHMPP, ehmpp), (PlannerKind.BASELINE, baseline)):
        if isinstance(outcome, EcoPlanError):
            flags.append(f"{kind.value}_failed")
            errors[kind.value] = outcome.as_dict()
        else:
            flags.extend(f"{kind.value}:{flag}" for flag in outcome.flags)
    ehmpp_run = ehmpp if isinstance(ehmpp, RunResult) else None
    baseline_run = baseline if isinstance(baseline, RunResult) else None
    comparison = None
    if ehmpp_run is not None and baseline_run is not None:
        comparison = compare_reports(ehmpp_run.report, baseline_run.report)
        flags.extend(comparison.flags)
    return ComparisonResult(
        scenario=scenario,
        ehmpp=ehmpp_run,
        baseline=baseline_run,
        comparison=comparison,
        flags=tuple(flags),
        errors=errors,
    )


def run_comparison(scenario: Scenario) -> ComparisonResult:
    """Both planners on the identical scenario, one after the other."""
    return _pair(
        scenario,
        _guarded_run(scenario, PlannerKind.EHMPP),
        _guarded_run(scenario, PlannerKind.BASELINE),
    )


async def async_run_comparison(scenario: Scenario) -> ComparisonResult:
    """Both planners on the identical scenario, concurrently in worker threads."""
    ehmpp, baseline = await asyncio.gather(
        asyncio.to_thread(_guarded_run, scenario, PlannerKind.EHMPP),
        asyncio.to_thread(_guarded_run, scenario, PlannerKind.BASELINE),
    )
    return _pair(scenario, ehmpp, baseline)
