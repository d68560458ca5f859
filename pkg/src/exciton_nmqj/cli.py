"""Command-line entry point for rate tables, evolutions, scans and FMO runs."""

from __future__ import annotations

import argparse
import io
import json
import sys
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence

import numpy as np
import yaml
from pydantic import ValidationError
from rich.console import Console
from rich.table import Table

from . import __version__
from .config import RunSettings, ScanSpec, ScenarioConfig, load_scenario
from .errors import PositivityViolation, SimulationError
from .events import JumpLog
from .logging import configure_logging, get_logger
from .metrics import observe_run, write_metrics_file
from .output import (
    RunManifest,
    write_populations_csv,
    write_rates_csv,
    write_scan_csv,
    write_trajectory_csv,
)
from .scenarios import (
    FMO_DEFAULTS,
    build_rates,
    build_system,
    compare_fmo,
    run_evolution,
    run_fmo_pair,
    scan_table,
    transport_measure,
)
from .tcl import TclTrajectory, check_positivity

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_POSITIVITY = 3

_COMMAND_ENGINES = {"evolve-tcl": "tcl", "evolve-nmqj": "nmqj"}

logger = get_logger("exciton_nmqj.cli")


class CliError(Exception):
    """Raised when the CLI encounters an expected error condition."""


@dataclass
class RunContext:
    """Everything a subcommand needs."""

    settings: RunSettings
    config: ScenarioConfig
    output_dir: Path
    manifest: RunManifest
    summary: Dict[str, Any]


def _u64(value: str) -> int:
    try:
        seed = int(value, 0)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"invalid seed: {value}") from exc
    if not 0 <= seed < 2**64:
        raise argparse.ArgumentTypeError(f"seed must be between 0 and 2**64 - 1; got {value}")
    return seed


def _positive_float(value: str) -> float:
    try:
        number = float(value)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"invalid number: {value}") from exc
    if not number > 0:
        raise argparse.ArgumentTypeError(f"value must be positive; got {value}")
    return number


def _positive_int(value: str) -> int:
    try:
        number = int(value)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"invalid integer: {value}") from exc
    if number < 1:
        raise argparse.ArgumentTypeError(f"value must be at least 1; got {value}")
    return number


def _common_arguments() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="Scenario file (JSON, or YAML by suffix)")
    common.add_argument("--seed", type=_u64, help="Random seed (unsigned 64-bit)")
    common.add_argument("--trajectories", type=_positive_int, help="Ensemble size N")
    common.add_argument("--dt", type=_positive_float, help="Time step in ps")
    common.add_argument("--t-final", dest="t_final", type=_positive_float, help="Final time in ps")
    common.add_argument(
        "--markovian",
        action="store_true",
        default=None,
        help="Use time-independent Markovian rates",
    )
    common.add_argument("--output", type=Path, help="Output directory (default: settings output_dir)")
    common.add_argument(
        "--threads",
        type=_positive_int,
        help="Worker threads; results do not depend on it (env: NMQJ_THREADS)",
    )
    common.add_argument("--settings", type=Path, help="Runtime settings TOML (env: NMQJ_SETTINGS)")
    common.add_argument(
        "--format",
        dest="summary_format",
        choices=["table", "json", "yaml"],
        help="Summary format printed to stdout",
    )
    common.add_argument("--log-level", help="Log level (DEBUG, INFO, WARNING, ERROR)")
    common.add_argument("--log-format", choices=["plain", "json"], help="Log line format")
    return common


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="exciton-nmqj",
        description=(
            "Non-Markovian excitation transfer with time-dependent secular rates. "
            "Writes CSV outputs and manifest.json into the output directory. "
            "Examples: `exciton-nmqj rates --config configs/rates_dimer.json`, "
            "`exciton-nmqj scan --config configs/scan_lambda.json --seed 42`."
        ),
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = _common_arguments()
    subparsers = parser.add_subparsers(dest="command", required=True)

    rates = subparsers.add_parser(
        "rates",
        parents=[common],
        help="Tabulate gamma(t, omega) for every channel frequency",
        description=(
            "Writes rates.csv: t_ps, gamma_dephasing, then one gamma column per signed "
            "frequency; the last row is the Markovian limit."
        ),
    )
    rates.set_defaults(func=_cmd_rates)

    evolve_tcl = subparsers.add_parser(
        "evolve-tcl",
        parents=[common],
        help="Integrate the master equation",
        description="Writes the density-matrix trajectory and populations; exits 3 if positivity is violated.",
    )
    evolve_tcl.set_defaults(func=_cmd_evolve_tcl)

    evolve_nmqj = subparsers.add_parser(
        "evolve-nmqj",
        parents=[common],
        help="Run the quantum-jump ensemble",
        description=(
            "Writes the reconstructed density-matrix trajectory with n_groups, jumps_pos and "
            "jumps_neg columns; exits 3 when a negative jump needs an empty source group."
        ),
    )
    evolve_nmqj.add_argument(
        "--jump-log",
        action="store_true",
        help="Also write jumps.jsonl with one jump event per line",
    )
    evolve_nmqj.set_defaults(func=_cmd_evolve_nmqj)

    scan = subparsers.add_parser(
        "scan",
        parents=[common],
        help="Scan one bath parameter for the transport measure",
        description="Writes scan.csv: value, pbar_markov, pbar_nm, violation_flag.",
    )
    scan.set_defaults(func=_cmd_scan)

    fmo = subparsers.add_parser(
        "fmo",
        parents=[common],
        help="Seven-site FMO populations, non-Markovian and Markovian",
        description="Writes site and exciton populations for both rate models.",
    )
    fmo.set_defaults(func=_cmd_fmo)
    return parser


def _settings_overrides(args: argparse.Namespace) -> Dict[str, Any]:
    return {
        "threads": args.threads,
        "output_dir": args.output,
        "summary_format": args.summary_format,
        "log_level": args.log_level,
        "log_format": args.log_format,
    }


def _default_config(command: str) -> ScenarioConfig:
    if command == "fmo":
        return ScenarioConfig.model_validate(FMO_DEFAULTS)
    if command == "scan":
        return ScenarioConfig(scan=ScanSpec(axis="lambda"), measure={"target": 1, "tau": 1.0})
    return ScenarioConfig()


def _load_config(args: argparse.Namespace) -> ScenarioConfig:
    config = load_scenario(args.config) if args.config is not None else _default_config(args.command)
    return config.with_overrides(
        {
            "seed": args.seed,
            "trajectories": args.trajectories,
            "dt": args.dt,
            "t_final": args.t_final,
            "markovian": args.markovian,
        }
    )


def _print_output(data: Any, output: str) -> None:
    """Print output in specified format."""
    if output == "yaml":
        stream = io.StringIO()
        yaml.safe_dump(data, stream, sort_keys=False)
        sys.stdout.write(stream.getvalue())
    elif output == "table":
        _print_table(data, Console())
    else:
        sys.stdout.write(json.dumps(data, indent=2) + "\n")


def _print_table(data: Dict[str, Any], console: Console) -> None:
    rows = data.get("rows")
    if rows:
        table = Table(show_header=True, header_style="bold magenta", title=data.get("command"))
        for key in rows[0].keys():
            table.add_column(str(key), style="cyan")
        for row in rows:
            table.add_row(*[_format_cell(value) for value in row.values()])
        console.print(table)
    table = Table(show_header=True, header_style="bold magenta")
    table.add_column("Key", style="cyan")
    table.add_column("Value", style="yellow")
    for key, value in data.items():
        if key == "rows":
            continue
        if isinstance(value, (dict, list)):
            value = json.dumps(value)
        table.add_row(str(key), _format_cell(value))
    console.print(table)


def _format_cell(value: Any) -> str:
    if isinstance(value, float):
        return f"{value:.6g}"
    return "-" if value is None else str(value)


def _json_float(value: float) -> Optional[float]:
    value = float(value)
    return value if np.isfinite(value) else None


def _temperatures(config: ScenarioConfig) -> List[float]:
    return list(config.temperatures) if config.temperatures else [config.temperature]


def _suffix(temperature: float, series: bool) -> str:
    return f"_{temperature:g}K" if series else ""


def _first_negative(times: np.ndarray, values: np.ndarray) -> Optional[float]:
    negative = np.flatnonzero(values < 0)
    return float(times[negative[0]]) if negative.size else None


def _cmd_rates(context: RunContext, args: argparse.Namespace) -> None:
    config = context.config
    system = build_system(config)
    temperatures = _temperatures(config)
    rows: List[Dict[str, Any]] = []
    for temperature in temperatures:
        table = build_rates(config, system, temperature=temperature, threads=context.settings.threads)
        path = write_rates_csv(
            context.output_dir / f"rates{_suffix(temperature, len(temperatures) > 1)}.csv", table
        )
        context.manifest.add_output(path)
        for column, omega in enumerate(table.frequencies):
            values = table.gamma[:, column]
            rows.append(
                {
                    "temperature_K": temperature,
                    "omega_cm": float(omega),
                    "gamma_final": float(values[-1]),
                    "gamma_markov": float(table.markovian_gamma[column]),
                    "gamma_min": float(values.min()),
                    "first_negative_ps": _first_negative(table.times, values),
                }
            )
    context.summary["rows"] = rows


def _trajectory_summary(config: ScenarioConfig, trajectory: TclTrajectory, temperature: float) -> Dict[str, Any]:
    row: Dict[str, Any] = {
        "temperature_K": temperature,
        "min_eigenvalue": float(trajectory.min_eigenvalues.min()),
        "final_populations": [float(p) for p in trajectory.site_populations()[-1]],
    }
    if config.measure is not None:
        measure = config.measure
        row["pbar"] = transport_measure(trajectory, measure.target, measure.tau, measure.basis)
    return row


def _evolve(context: RunContext, engine: str, jump_log: Optional[JumpLog] = None) -> None:
    config = context.config.with_overrides({"engine": engine})
    system = build_system(config)
    temperatures = _temperatures(config)
    series = len(temperatures) > 1
    rows: List[Dict[str, Any]] = []
    violation: Optional[PositivityViolation] = None
    for temperature in temperatures:
        suffix = _suffix(temperature, series)
        trajectory = run_evolution(
            config, system=system, temperature=temperature,
            threads=context.settings.threads, jump_log=jump_log,
        )
        context.manifest.add_output(
            write_trajectory_csv(context.output_dir / f"trajectory_{engine}{suffix}.csv", trajectory)
        )
        context.manifest.add_output(
            write_populations_csv(context.output_dir / f"populations_{engine}{suffix}.csv", trajectory)
        )
        rows.append(_trajectory_summary(config, trajectory, temperature))
        if engine == "tcl" and violation is None:
            try:
                check_positivity(trajectory, config.positivity_tolerance)
            except PositivityViolation as exc:
                violation = exc
    if jump_log is not None:
        context.manifest.add_output(jump_log.write_jsonl(context.output_dir / "jumps.jsonl"))
        context.summary["jumps"] = jump_log.totals()
    context.summary["rows"] = rows
    if violation is not None:
        raise violation


def _cmd_evolve_tcl(context: RunContext, args: argparse.Namespace) -> None:
    _evolve(context, "tcl")


def _cmd_evolve_nmqj(context: RunContext, args: argparse.Namespace) -> None:
    _evolve(context, "nmqj", JumpLog() if args.jump_log else None)


def _cmd_scan(context: RunContext, args: argparse.Namespace) -> None:
    config = context.config
    if config.scan is None:
        raise CliError("scan needs a scenario with a 'scan' section")
    rows = scan_table(config, threads=context.settings.threads)
    context.manifest.add_output(write_scan_csv(context.output_dir / "scan.csv", rows))
    context.summary["axis"] = config.scan.axis
    context.summary["rows"] = [
        {key: (_json_float(value) if key != "violation_flag" else int(value)) for key, value in row.items()}
        for row in rows
    ]


def _cmd_fmo(context: RunContext, args: argparse.Namespace) -> None:
    config = context.config
    if config.hamiltonian.kind != "fmo":
        raise CliError("fmo needs a scenario with hamiltonian.kind 'fmo'")
    non_markov, markov = run_fmo_pair(config, threads=context.settings.threads)
    for label, run in (("nm", non_markov), ("markov", markov)):
        context.manifest.add_output(
            write_populations_csv(context.output_dir / f"fmo_populations_{label}.csv", run.trajectory)
        )
        context.manifest.add_output(
            write_populations_csv(
                context.output_dir / f"fmo_exciton_populations_{label}.csv", run.trajectory, exciton=True
            )
        )
    gap = compare_fmo(non_markov, markov)
    census = non_markov.census
    context.summary.update(
        {
            "initial_site": non_markov.initial_site,
            "temperature_K": non_markov.temperature,
            "relaxation_frequencies": census.relaxation_frequencies,
            "dephasing_channels": census.dephasing_channels,
            "max_population_difference": gap.max_difference,
            "max_difference_time_ps": gap.time_of_max,
            "max_difference_site": gap.site,
        }
    )


def _finish(context: RunContext, started: float, command: str) -> None:
    duration = time.perf_counter() - started
    observe_run(command, duration)
    context.manifest.wall_time_s = duration
    if context.settings.write_metrics:
        context.manifest.add_output(write_metrics_file(context.output_dir / "metrics.prom"))
    context.manifest.write(context.output_dir / "manifest.json")


def main(argv: Optional[Iterable[str]] = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(args=None if argv is None else list(argv))
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_CONFIG

    try:
        settings = RunSettings.from_sources(_settings_overrides(args), settings_path=args.settings)
        configure_logging(settings)
        config = _load_config(args)
    except (ValidationError, ValueError, OSError, yaml.YAMLError) as exc:
        sys.stderr.write(f"Error: {exc}\n")
        return EXIT_CONFIG

    output_dir = Path(settings.output_dir)
    manifest = RunManifest(
        command=args.command,
        config=config.echo(),
        seed=config.seed,
        engine=_COMMAND_ENGINES.get(args.command, config.engine),
    )
    context = RunContext(settings, config, output_dir, manifest, {"command": args.command})
    logger.info(
        "Starting run",
        extra={"command": args.command, "scenario": config.name, "settings": settings.logging_dict()},
    )
    func: Callable[[RunContext, argparse.Namespace], None] = args.func
    started = time.perf_counter()
    exit_code = EXIT_OK
    try:
        func(context, args)
    except PositivityViolation as violation:
        sys.stderr.write(violation.diagnostic() + "\n")
        manifest.violations.append(violation.to_dict())
        exit_code = EXIT_POSITIVITY
    except (CliError, ValidationError, ValueError) as exc:
        sys.stderr.write(f"Error: {exc}\n")
        return EXIT_CONFIG
    except (SimulationError, OSError) as exc:
        logger.error("Run failed", extra={"error": str(exc)})
        sys.stderr.write(f"Error: {exc}\n")
        exit_code = EXIT_FAILURE

    _finish(context, started, args.command)
    context.summary["outputs"] = list(manifest.outputs)
    context.summary["wall_time_s"] = manifest.wall_time_s
    _print_output(context.summary, settings.summary_format)
    return exit_code


def run(argv: Optional[Sequence[str]] = None) -> None:
    """CLI entrypoint used by setuptools."""

    sys.exit(main(argv))


if __name__ == "__main__":
    run()
