"""Command-line entry point: single runs, A/B comparisons and parameter sweeps."""

from __future__ import annotations

import argparse
import asyncio
from collections.abc import Sequence
from dataclasses import dataclass, field
import json
import logging
from pathlib import Path
import sys
from typing import Any

from .const import SCHEMA_VERSION_COMPARISON, SWEEP_CONCURRENCY_LIMIT, ExitCode, PlannerKind
from .errors import EcoPlanError, PlannerError, ScenarioError
from .scenario import Scenario, apply_overrides, load_document, load_scenario
from .schemas import COMPARISON_SCHEMA, REPORT_SCHEMA, validate_scenario
from .sim_harness import (
    FLAG_PLANNER_FAILURE,
    ComparisonResult,
    RunResult,
    async_run_comparison,
    run_closed_loop,
    run_comparison,
)
from .storage import (
    COMPARISON_FILE,
    CYCLES_FILE,
    HISTOGRAM_FILE,
    PATH_FILE,
    POWER_FILE,
    REFLINE_FILE,
    REPORT_FILE,
    SPEED_FILE,
    SWEEP_FILE,
    TRACE_FILE,
    OutputStore,
)

_LOGGER = logging.getLogger(__name__)

DEFAULT_OUT = Path("out")


@dataclass(frozen=True)
class RunConfig:
    """Parsed command-line options shared by every subcommand."""

    scenario: str
    out: Path
    planner: PlannerKind = PlannerKind.EHMPP
    overrides: tuple[str, ...] = ()
    verbosity: int = 0
    figures: bool = False
    jobs: int = SWEEP_CONCURRENCY_LIMIT
    param: str | None = None
    values: tuple[str, ...] = field(default_factory=tuple)

    @classmethod
    def from_args(cls, args: argparse.Namespace) -> RunConfig:
        """Build from parsed arguments, folding --seed into the overrides."""
        overrides = tuple(args.overrides or ())
        if args.seed is not None:
            overrides += (f"rng_seed={args.seed}",)
        return cls(
            scenario=args.scenario,
            out=Path(args.out),
            planner=PlannerKind(getattr(args, "planner", PlannerKind.EHMPP)),
            overrides=overrides,
            verbosity=args.verbose,
            figures=getattr(args, "figures", False),
            jobs=getattr(args, "jobs", SWEEP_CONCURRENCY_LIMIT),
            param=getattr(args, "param", None),
            values=tuple(getattr(args, "values", None) or ()),
        )

    def load(self, extra: Sequence[str] = ()) -> Scenario:
        """Load the scenario with all overrides applied."""
        return load_scenario(self.scenario, (*self.overrides, *extra))


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return value


def build_parser() -> argparse.ArgumentParser:
    """Argument parser with the run, compare and sweep subcommands."""
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "--scenario", required=True, help="Scenario file (JSON or YAML) or fixture name"
    )
    common.add_argument("--out", default=str(DEFAULT_OUT), help="Output directory")
    common.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="Override a scenario field; repeatable",
    )
    common.add_argument("--seed", type=int, default=None, help="Override the scenario rng_seed")
    common.add_argument(
        "-v", "--verbose", action="count", default=0, help="-v for INFO, -vv for DEBUG"
    )

    parser = argparse.ArgumentParser(prog="ecoplan", description=__doc__)
    commands = parser.add_subparsers(dest="command", required=True)

    run = commands.add_parser("run", parents=[common], help="Run one planner")
    run.add_argument(
        "--planner", choices=[kind.value for kind in PlannerKind], default=PlannerKind.EHMPP.value
    )
    run.add_argument(
        "--figures", action="store_true", help="Also write histogram.csv and power.csv"
    )

    commands.add_parser("compare", parents=[common], help="Run both planners and compare them")

    sweep = commands.add_parser("sweep", parents=[common], help="Compare over parameter values")
    sweep.add_argument("--param", required=True, help="Scenario key to sweep")
    sweep.add_argument("--values", nargs="*", default=[], help="Values to assign to the key")
    sweep.add_argument(
        "--jobs", type=_positive_int, default=SWEEP_CONCURRENCY_LIMIT, help="Concurrent comparisons"
    )
    return parser


def _configure_logging(verbosity: int) -> None:
    level = logging.WARNING
    if verbosity == 1:
        level = logging.INFO
    elif verbosity >= 2:
        level = logging.DEBUG
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")


def _emit_error(err: EcoPlanError) -> None:
    print(json.dumps(err.as_dict(), sort_keys=True), file=sys.stderr)


def write_run(store: OutputStore, result: RunResult, *, figures: bool = False) -> dict[str, Any]:
    """Write the CSV outputs and report.json of one run; return the report."""
    trace = result.trace
    store.write_csv(TRACE_FILE, trace.trace_rows())
    store.write_csv(REFLINE_FILE, trace.refline_rows())
    store.write_csv(PATH_FILE, trace.path_rows())
    store.write_csv(SPEED_FILE, trace.speed_rows())
    store.write_csv(CYCLES_FILE, trace.cycle_rows())
    if figures:
        store.write_csv(HISTOGRAM_FILE, result.report.accel_histogram.to_rows())
        store.write_csv(POWER_FILE, trace.power_rows())
    report = result.to_report(store.manifest)
    store.write_json(REPORT_FILE, report, REPORT_SCHEMA)
    return report


def write_comparison(store: OutputStore, result: ComparisonResult) -> dict[str, Any] | None:
    """Write both run directories and, when both finished, comparison.json."""
    for name, run in result.runs().items():
        write_run(OutputStore(store.directory / name), run, figures=True)
    if not result.complete:
        return None
    data = {"schema_version": SCHEMA_VERSION_COMPARISON, **result.to_dict()}
    store.write_json(COMPARISON_FILE, data, COMPARISON_SCHEMA)
    return data


def _run_failed(flags: Sequence[str]) -> bool:
    """Whether any run flagged a planner failure or errored outright."""
    return any(
        flag.rpartition(":")[2] == FLAG_PLANNER_FAILURE or flag.endswith("_failed") for flag in flags
    )


def cmd_run(config: RunConfig) -> int:
    """Run one planner and write its outputs."""
    scenario = config.load()
    result = run_closed_loop(scenario, config.planner)
    write_run(OutputStore(config.out), result, figures=config.figures)
    if _run_failed(result.flags):
        _emit_error(
            PlannerError(
                f"{config.planner.value} run on {scenario.name} flagged {', '.join(result.flags)}"
            )
        )
        return ExitCode.PLANNER_FAILURE
    return ExitCode.OK


def _headline_lines(result: ComparisonResult) -> list[str]:
    comparison = result.comparison
    if comparison is None:
        return []
    regen = comparison.channels["regen_energy_j"]
    lines = [
        f"scenario {result.scenario.name} ({comparison.scenario_hash[:12]})",
        f"regen energy: ehmpp {regen.ehmpp:.1f} J, baseline {regen.baseline:.1f} J, "
        f"ratio {regen.ratio if regen.ratio is not None else float('nan'):.3f}",
        f"decel bin {comparison.headline_bin} m/s^2: ehmpp {100 * comparison.headline.ehmpp:.2f}%, "
        f"baseline {100 * comparison.headline.baseline:.2f}%, "
        f"delta {comparison.headline.delta_points:+.2f} points",
    ]
    if result.ehmpp and result.baseline:
        ehmpp_dev = result.ehmpp.report.mean_cruise_power_dev_w
        baseline_dev = result.baseline.report.mean_cruise_power_dev_w
        lines.append(
            "mean |P - P_opt| in cruise: "
            f"ehmpp {'n/a' if ehmpp_dev is None else f'{ehmpp_dev:.1f} W'}, "
            f"baseline {'n/a' if baseline_dev is None else f'{baseline_dev:.1f} W'}"
        )
    return lines


def cmd_compare(config: RunConfig) -> int:
    """Run both planners on the same scenario and compare them."""
    scenario = config.load()
    result = asyncio.run(async_run_comparison(scenario))
    write_comparison(OutputStore(config.out), result)
    for line in _headline_lines(result):
        print(line)
    if result.errors or _run_failed(result.flags):
        _emit_error(PlannerError(f"comparison on {scenario.name} flagged {', '.join(result.flags)}"))
        return ExitCode.PLANNER_FAILURE
    return ExitCode.OK


def sweep_row(param: str, value: str, result: ComparisonResult) -> dict[str, Any]:
    """One row of sweep.csv."""
    comparison = result.comparison
    row: dict[str, Any] = {
        "param": param,
        "value": value,
        "scenario_hash": result.scenario.identity_hash,
        "flags": ";".join(result.flags),
    }
    if comparison is not None:
        regen = comparison.channels["regen_energy_j"]
        row.update(
            ehmpp_regen_energy_j=regen.ehmpp,
            baseline_regen_energy_j=regen.baseline,
            regen_ratio=regen.ratio,
            headline_delta_points=comparison.headline.delta_points,
        )
    for name, run in result.runs().items():
        row[f"{name}_mean_cruise_power_dev_w"] = run.report.mean_cruise_power_dev_w
        row[f"{name}_min_clearance_m"] = run.trace.min_clearance_m
    return row


async def async_sweep(config: RunConfig) -> list[dict[str, Any]]:
    """One comparison per value, at most ``jobs`` at a time, rows in value order."""
    if not config.values:
        raise ScenarioError("sweep needs at least one value", field="values")
    param = config.param or ""
    # Resolve the key once up front so an unknown parameter fails before any run.
    document = apply_overrides(validate_scenario(load_document(config.scenario)), config.overrides)
    apply_overrides(validate_scenario(document), [f"{param}={config.values[0]}"])
    scenarios = [config.load((f"{param}={value}",)) for value in config.values]
    semaphore = asyncio.Semaphore(config.jobs)

    async def _one(index: int, scenario: Scenario) -> dict[str, Any]:
        async with semaphore:
            _LOGGER.info("Sweep %s=%s (%d/%d)", param, config.values[index], index + 1, len(scenarios))
            result = await asyncio.to_thread(run_comparison, scenario)
        write_comparison(OutputStore(config.out / f"{param}={config.values[index]}"), result)
        return sweep_row(param, config.values[index], result)

    return list(await asyncio.gather(*(_one(i, s) for i, s in enumerate(scenarios))))


def cmd_sweep(config: RunConfig) -> int:
    """Compare both planners over a list of parameter values."""
    rows = asyncio.run(async_sweep(config))
    OutputStore(config.out).write_csv(SWEEP_FILE, rows)
    for row in rows:
        print(
            f"{row['param']}={row['value']}: regen ratio {row.get('regen_ratio')}, "
            f"headline delta {row.get('headline_delta_points')} points"
        )
    if any(_run_failed(row["flags"].split(";")) for row in rows):
        _emit_error(PlannerError(f"sweep over {config.param} had failing runs"))
        return ExitCode.PLANNER_FAILURE
    return ExitCode.OK


COMMANDS = {"run": cmd_run, "compare": cmd_compare, "sweep": cmd_sweep}


def main(argv: Sequence[str] | None = None) -> int:
    """Parse arguments, run the subcommand and map errors to exit codes."""
    args = build_parser().parse_args(argv)
    config = RunConfig.from_args(args)
    _configure_logging(config.verbosity)
    try:
        return int(COMMANDS[args.command](config))
    except ScenarioError as err:
        _LOGGER.debug("Scenario error", exc_info=True)
        _emit_error(err)
        return ExitCode.SCENARIO_ERROR
    except EcoPlanError as err:
        _LOGGER.error("Planner failure: %s", err)
        _emit_error(err)
        return ExitCode.PLANNER_FAILURE


if __name__ == "__main__":
    sys.exit(main())
