#!/usr/bin/env python3
# PYTHON_ARGCOMPLETE_OK
"""
Command-line interface for the CVaR safety filter toolkit.

Exit codes: 0 success, 1 verification failed, 2 invalid input, 3 solver
failure in a rollout, 4 output I/O error, 5 scenario tree too large.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import time
from pathlib import Path

import argcomplete
import yaml

from ._version import __version__
from .barrier import TreeBudgetError
from .config import Config
from .reports import RunManifest, write_manifest, write_summary, write_sweep, write_traces
from .safety_filter import FilterMethod, FilterSolverError
from .scenario_config import (
    ScenarioConfig,
    ScenarioConfigError,
    apply_overrides,
    config_hash,
    load_scenario,
    parse_override,
    save_scenario,
)
from .scenarios import CaseId, builtin_scenario, parse_betas, run_monte_carlo, sweep_beta, verify_scenario

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VERIFY_FAILED = 1
EXIT_INVALID = 2
EXIT_SOLVER = 3
EXIT_IO = 4
EXIT_BUDGET = 5


def _setup_logging(verbosity: int, config: Config) -> None:
    if verbosity >= 2:
        level = logging.DEBUG
    elif verbosity == 1:
        level = logging.INFO
    else:
        level = getattr(logging, config.log_level, logging.WARNING)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def _error(message: str) -> None:
    print(f"❌ {message}", file=sys.stderr)


def _overrides(items: list[str] | None) -> dict:
    return dict(parse_override(item) for item in items or [])


def _scenario_from_args(args: argparse.Namespace, config: Config) -> ScenarioConfig:
    """Scenario named by ``--config`` or ``--case`` with command-line overrides applied.

    Raises:
        FileNotFoundError: if the scenario file does not exist.
        ScenarioConfigError: if the scenario or an override is invalid.
    """
    overrides = _overrides(getattr(args, "set", None))
    if getattr(args, "case", None):
        cfg = builtin_scenario(args.case, overrides)
    elif getattr(args, "config", None):
        cfg = load_scenario(args.config)
        if overrides:
            cfg = ScenarioConfig.from_dict(apply_overrides(cfg.to_dict(), overrides))
    else:
        raise ScenarioConfigError("config", "pass --config PATH or --case CASE")

    changes = {}
    if getattr(args, "seed", None) is not None:
        changes["master_seed"] = args.seed
    if getattr(args, "method", None):
        changes["method"] = FilterMethod(args.method)
    if getattr(args, "legacy_only", False):
        changes["filter_enabled"] = False
    changes["dccp"] = config.dccp_options(cfg.dccp)
    return dataclasses.replace(cfg, **changes)


def _out_dir(args: argparse.Namespace, config: Config, cfg: ScenarioConfig) -> Path:
    return args.out if args.out is not None else config.output_dir / cfg.name


def simulate_command(args: argparse.Namespace, config: Config, command: str) -> int:
    """Run the Monte Carlo simulation and write traces, summary and manifest."""
    cfg = _scenario_from_args(args, config)
    out_dir = _out_dir(args, config, cfg)
    manifest = RunManifest(config_hash=config_hash(cfg), tool_version=__version__, command=command)
    started = time.perf_counter()

    mode = "legacy only" if not cfg.filter_enabled else f"{cfg.method.value}, beta={cfg.cert.beta.beta:g}"
    print(f"▶️  {cfg.name}: {cfg.num_rollouts} rollouts x {cfg.steps} steps ({mode})")
    report = run_monte_carlo(
        cfg,
        keep_traces=True,
        settings=config.filter_settings,
        solver_settings=config.solver_settings,
    )

    sys_model = cfg.system_model()
    try:
        outputs = write_traces(out_dir, report.traces or {}, sys_model.n, sys_model.m)
        outputs.append(write_summary(out_dir, report, manifest.config_hash))
        manifest.outputs = [str(path) for path in outputs]
        manifest.wall_clock_s = time.perf_counter() - started
        write_manifest(out_dir, manifest)
    except OSError as e:
        _error(f"cannot write outputs to {out_dir}: {e}")
        return EXIT_IO

    icon = "✅" if report.violation_count == 0 else "⚠️"
    print(
        f"{icon} {report.violation_count}/{report.num_rollouts} rollouts violated safety "
        f"(rate {report.violation_rate:.4f})"
    )
    if report.mean_interference is not None:
        print(f"   mean interference {report.mean_interference:.6g}, mean margin {report.mean_margin:.6g}")
    print(f"📁 Results written to {out_dir}")
    if report.failed:
        _error(f"{len(report.failed)} rollout(s) failed: {report.failed[0].message}")
        return EXIT_SOLVER
    return EXIT_OK


def verify_command(args: argparse.Namespace, config: Config) -> int:
    """Exact nested CVaR check over the scenario tree; exit 1 if any step fails."""
    cfg = _scenario_from_args(args, config)
    report = verify_scenario(
        cfg,
        args.horizon,
        policy=args.policy,
        node_budget=config.node_budget,
        tolerance=config.verify_tolerance,
        settings=config.filter_settings,
        solver_settings=config.solver_settings,
    )
    print(f"{'t':>3}  {'nested CVaR':>14}  {'alpha^t h(x0)':>14}  holds")
    for row in report.rows:
        print(f"{row.t:>3}  {row.nested:>14.6g}  {row.bound:>14.6g}  {'yes' if row.holds else 'NO'}")
    if report.min_one_step_margin is not None:
        print(f"   minimum one-step margin {report.min_one_step_margin:.6g} over {report.nodes} nodes")
    if report.all_hold:
        print(f"✅ Nested CVaR bound holds for every t <= {args.horizon}")
        return EXIT_OK
    print(f"⚠️  Nested CVaR bound violated (tolerance {report.tolerance:g})")
    return EXIT_VERIFY_FAILED


def sweep_command(args: argparse.Namespace, config: Config, command: str) -> int:
    """Run the scenario at several confidence levels and write ``sweep.csv``."""
    betas = parse_betas(args.betas)
    cfg = _scenario_from_args(args, config)
    out_dir = _out_dir(args, config, cfg)
    manifest = RunManifest(config_hash=config_hash(cfg), tool_version=__version__, command=command)
    started = time.perf_counter()

    rows = sweep_beta(cfg, betas, settings=config.filter_settings, solver_settings=config.solver_settings)
    try:
        path = write_sweep(out_dir, rows)
        manifest.outputs = [str(path)]
        manifest.wall_clock_s = time.perf_counter() - started
        write_manifest(out_dir, manifest)
    except OSError as e:
        _error(f"cannot write outputs to {out_dir}: {e}")
        return EXIT_IO

    print(f"{'beta':>8}  {'rate':>8}  {'interference':>13}")
    for row in rows:
        interference = "-" if row.mean_interference is None else f"{row.mean_interference:.6g}"
        print(f"{row.beta:>8g}  {row.violation_rate:>8.4f}  {interference:>13}")
    print(f"📁 Sweep written to {path}")
    if any(row.report.failed for row in rows):
        _error("some rollouts failed; see the log for details")
        return EXIT_SOLVER
    return EXIT_OK


def builtin_command(args: argparse.Namespace) -> int:
    """Write (or print) the scenario document of a built-in case."""
    cfg = builtin_scenario(args.case, _overrides(args.set))
    if args.output is None:
        print(yaml.safe_dump(cfg.to_dict(), sort_keys=False, allow_unicode=True, default_flow_style=None), end="")
        return EXIT_OK
    try:
        save_scenario(cfg, args.output)
    except OSError as e:
        _error(f"cannot write {args.output}: {e}")
        return EXIT_IO
    print(f"✅ Wrote {cfg.name} to {args.output}")
    return EXIT_OK


def config_command(show: bool = False, show_path: bool = False) -> int:
    """Show configuration information."""
    config = Config()

    if show_path:
        if config.path:
            print(config.path)
        else:
            print("No configuration file found")
        return EXIT_OK

    if config.path:
        print(f"# Configuration loaded from: {config.path}")
    else:
        print("# No configuration file found, showing defaults")
    print()
    print(json.dumps(config.data, indent=2))
    return EXIT_OK


def _add_scenario_arguments(parser: argparse.ArgumentParser) -> None:
    source = parser.add_mutually_exclusive_group()
    source.add_argument("--config", "-c", type=Path, help="Scenario document (YAML or JSON)")
    source.add_argument("--case", choices=[c.value for c in CaseId], help="Use a built-in scenario")
    parser.add_argument(
        "--set",
        action="append",
        metavar="KEY=VALUE",
        help="Override a scenario field by dotted path, e.g. cert.beta=0.5 (repeatable)",
    )
    parser.add_argument("--seed", type=int, help="Override the master seed")
    parser.add_argument(
        "--method",
        choices=[m.value for m in FilterMethod],
        help="Filter synthesis method; dccp iterates the convex-concave procedure only with "
        "--set dccp.tail=upper_tail, the default lower tail is solved exactly in one step",
    )


def main(argv: list[str] | None = None) -> int:
    """Main entry point for the CLI."""
    config = Config()

    parser_cli = argparse.ArgumentParser(
        prog="cvar-filter",
        description="CVaR barrier-function safety filters for stochastic linear systems",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  # Risk-averse filter on the forward-boundary case
  cvar-filter simulate --case case1 --set cert.beta=0.1 --out runs/case1

  # Legacy controller alone, for comparison
  cvar-filter simulate --case case1 --legacy-only --out runs/legacy

  # Violation rate as a function of beta
  cvar-filter sweep --case case1 --betas 0.999,0.5,0.1 --out runs/sweep

  # Exact nested CVaR check over a 3-step scenario tree
  cvar-filter verify --config example/case1.yaml --horizon 3

  # Write an editable scenario document
  cvar-filter builtin case3 -o my-case3.yaml
        """,
    )
    parser_cli.add_argument("--version", "-V", action="version", version=f"%(prog)s {__version__}")
    parser_cli.add_argument("--verbose", "-v", action="count", default=0, help="More log output (repeatable)")

    subparsers = parser_cli.add_subparsers(dest="command", help="Command to run")

    simulate_parser = subparsers.add_parser("simulate", help="Monte Carlo rollouts with traces and summary")
    _add_scenario_arguments(simulate_parser)
    simulate_parser.add_argument("--out", "-o", type=Path, help="Output directory (default: <output.dir>/<name>)")
    simulate_parser.add_argument("--legacy-only", action="store_true", help="Run the legacy law without the filter")

    verify_parser = subparsers.add_parser("verify", help="Exact nested CVaR check over the scenario tree")
    _add_scenario_arguments(verify_parser)
    verify_parser.add_argument("--horizon", type=int, required=True, help="Number of steps to expand")
    verify_parser.add_argument(
        "--policy", choices=["filter", "legacy"], default="filter", help="Control law applied at every node"
    )

    sweep_parser = subparsers.add_parser("sweep", help="Violation statistics for several confidence levels")
    _add_scenario_arguments(sweep_parser)
    sweep_parser.add_argument("--betas", required=True, help="Comma-separated confidence levels, e.g. 0.999,0.5,0.1")
    sweep_parser.add_argument("--out", "-o", type=Path, help="Output directory (default: <output.dir>/<name>)")

    builtin_parser = subparsers.add_parser("builtin", help="Write the scenario document of a built-in case")
    builtin_parser.add_argument("case", choices=[c.value for c in CaseId], help="Built-in case")
    builtin_parser.add_argument("--set", action="append", metavar="KEY=VALUE", help="Override a field (repeatable)")
    builtin_parser.add_argument("--output", "-o", type=Path, help="Output file (.yaml or .json); default stdout")

    config_parser = subparsers.add_parser("config", help="Show configuration")
    config_parser.add_argument("--show", action="store_true", help="Show merged configuration")
    config_parser.add_argument("--path", action="store_true", help="Show config file path")

    # Enable shell tab completion
    argcomplete.autocomplete(parser_cli)

    args = parser_cli.parse_args(argv)
    _setup_logging(args.verbose, config)
    command = " ".join(["cvar-filter", *(sys.argv[1:] if argv is None else argv)])

    try:
        if args.command == "simulate":
            return simulate_command(args, config, command)
        elif args.command == "verify":
            return verify_command(args, config)
        elif args.command == "sweep":
            return sweep_command(args, config, command)
        elif args.command == "builtin":
            return builtin_command(args)
        elif args.command == "config":
            return config_command(show=args.show, show_path=args.path)
    except FileNotFoundError as e:
        _error(f"config: file not found: {e.filename}")
        return EXIT_INVALID
    except ScenarioConfigError as e:
        _error(f"invalid scenario: {e}")
        return EXIT_INVALID
    except ValueError as e:
        _error(str(e))
        return EXIT_INVALID
    except FilterSolverError as e:
        _error(f"solver failure at {e}")
        return EXIT_SOLVER
    except TreeBudgetError as e:
        _error(f"{e}; lower --horizon or raise verify.node_budget")
        return EXIT_BUDGET
    except OSError as e:
        _error(str(e))
        return EXIT_IO

    parser_cli.print_help()
    return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
