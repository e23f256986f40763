import argparse
import logging
import sys
from pathlib import Path
from typing import Any

from .artifacts import (
    assignment_record,
    sidecar,
    write_assignment,
    write_conflicts,
    write_histogram,
    write_hotspots,
    write_layout,
    write_manifest,
    write_mc_summary,
    write_report,
    write_table,
    write_travel_times,
)
from .assignment import Demand, Scenario, classify_scenario, solve_max_flow
from .config import SphereaboutConfig, load_config
from .conflict import build_conflict_graph
from .errors import ConfigError
from .experiments import build_graphs, run_sweep, run_table, top_conflicting_flows
from .geometry import ClearanceSpec, NodeId, validate_clearances
from .reference import Orientation, compare_to_reference
from .sensitivity import (
    baseline_mc,
    fixed_lag_mc,
    random_velocity_mc,
    target_scenarios,
    travel_time_grid,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_VALIDATION = 4
EXIT_INTERNAL = 5


class ValidationFailure(Exception):
    """Outputs were written but the layout failed one or more clearance checks."""


def _clearance(config: SphereaboutConfig, config_path: Path) -> ClearanceSpec:
    try:
        return config.clearance()
    except ValueError as e:
        raise ConfigError(f"{config_path}: clearance: {e}") from e


def cmd_layout(
    config: SphereaboutConfig, config_path: Path, out: Path, args: argparse.Namespace
) -> None:
    layout = config.layout()
    clearance = _clearance(config, config_path)
    report = validate_clearances(layout, clearance, config.d_min_m)
    write_layout(out, layout, clearance, report)
    write_manifest(out, "layout", config, [config_path], [out])
    if not report.passed:
        raise ValidationFailure(f"clearance checks failed: {', '.join(report.failures)}")


def cmd_conflicts(
    config: SphereaboutConfig, config_path: Path, out: Path, args: argparse.Namespace
) -> None:
    graph = build_conflict_graph(config.layout(), config.policy(), args.threads)
    write_conflicts(out, graph)
    write_manifest(out, "conflicts", config, [config_path], [out])


def cmd_table(
    config: SphereaboutConfig, config_path: Path, out: Path, args: argparse.Namespace
) -> None:
    experiment = config.experiment()
    run = run_table(experiment, args.threads)
    write_table(out, config.radius_m, config.d_min_m, run.rows)

    orientation = Orientation(args.orientation)
    comparison = compare_to_reference(run.rows, config.radius_m, config.d_min_m, orientation)
    report = sidecar(out, ".report.json")
    write_report(
        report,
        {
            "radius_m": config.radius_m,
            "d_min_m": config.d_min_m,
            "layout_angles_deg": {
                "equatorial_offset": config.equatorial_offset_deg,
                "polar_offset": config.polar_offset_deg,
            },
            "circulation": str(config.circulation),
            "orientation": str(orientation),
            "reference": comparison.model_dump(mode="python") if comparison else None,
            "path_usage": {str(s.row.n_uavs): s.path_usage for s in run.sweeps},
        },
    )
    write_manifest(out, "table", config, [config_path], [out, report])


def cmd_montecarlo(
    config: SphereaboutConfig, config_path: Path, out: Path, args: argparse.Namespace
) -> None:
    experiment = config.experiment()
    mc = config.montecarlo()
    graphs = build_graphs(experiment, args.threads)
    targets = target_scenarios(mc, experiment, *graphs)
    baseline = None
    if config.montecarlo_mode == "fixed_lag":
        histogram = fixed_lag_mc(mc, experiment, args.threads, targets, graphs)
        baseline = baseline_mc(mc, experiment, args.threads, targets, graphs)
    else:
        histogram = random_velocity_mc(mc, experiment, args.threads, targets, graphs)
    write_histogram(out, histogram)
    summary = sidecar(out, ".summary.json")
    write_mc_summary(summary, config, histogram, baseline)
    write_manifest(out, "montecarlo", config, [config_path], [out, summary])


def cmd_traveltime(
    config: SphereaboutConfig, config_path: Path, out: Path, args: argparse.Namespace
) -> None:
    summaries = travel_time_grid(
        config.experiment(),
        config.travel_radii_m,
        config.travel_velocities_mps,
        args.source,
        args.threads,
    )
    write_travel_times(out, summaries)
    write_manifest(
        out, "traveltime", config, [config_path], [out, sidecar(out, ".histogram.json")]
    )


def cmd_hotspots(
    config: SphereaboutConfig, config_path: Path, out: Path, args: argparse.Namespace
) -> None:
    experiment = config.experiment()
    graph, direct_graph = build_graphs(experiment, args.threads)
    sweep = run_sweep(experiment, graph, direct_graph, args.threads)
    ranked = top_conflicting_flows(experiment, sweep)
    write_hotspots(out, ranked[: args.top] if args.top else ranked)
    write_manifest(out, "hotspots", config, [config_path], [out])


def parse_demands(values: list[str]) -> Scenario:
    """``x+:y-`` style flow pairs, numbered from 1 in the given order."""
    demands = []
    for k, value in enumerate(values, start=1):
        src, sep, dst = value.partition(":")
        if not sep:
            raise ValueError(f"demand {value!r} is not of the form ENTRY:EXIT")
        demands.append(
            Demand(uav_id=k, entry=NodeId.parse(f"{src}_in"), exit=NodeId.parse(f"{dst}_out"))
        )
    return Scenario(demands=tuple(demands))


def cmd_assign(
    config: SphereaboutConfig, config_path: Path, out: Path, args: argparse.Namespace
) -> None:
    scenario: Scenario = args.scenario
    graph, direct_graph = build_graphs(config.experiment(), args.threads)
    assignment = solve_max_flow(scenario, graph)
    cls = classify_scenario(scenario, graph, direct_graph, assignment)
    write_assignment(out, [assignment_record(scenario, assignment, cls)])
    write_manifest(out, "assign", config, [config_path], [out])


COMMANDS = {
    "layout": cmd_layout,
    "conflicts": cmd_conflicts,
    "table": cmd_table,
    "montecarlo": cmd_montecarlo,
    "traveltime": cmd_traveltime,
    "hotspots": cmd_hotspots,
    "assign": cmd_assign,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "--config",
        type=Path,
        help="TOML/JSON config or a run manifest (default $SPHEREABOUT_CONFIG)",
    )
    common.add_argument("--out", type=Path, required=True, help="output file")
    common.add_argument("--threads", type=int, default=1, help="worker processes")
    common.add_argument("--seed", type=int, help="override the master seed")
    common.add_argument("--dmin", type=float, help="override d_min_m")
    common.add_argument("--radius", type=float, help="override radius_m")
    common.add_argument(
        "--log-level",
        default="INFO",
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        help="stderr log level",
    )

    parser = argparse.ArgumentParser(
        prog="sphereabout", description="spherical UAV intersection simulator"
    )
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("layout", parents=[common], help="node coordinates and clearance checks")
    sub.add_parser("conflicts", parents=[common], help="pairwise conflict graph CSV")

    table = sub.add_parser("table", parents=[common], help="scenario sweep for N=2..6")
    table.add_argument(
        "--orientation",
        default=Orientation.FIRST_BLOCK.value,
        choices=[o.value for o in Orientation],
        help="column reading of the published rows",
    )

    mc = sub.add_parser("montecarlo", parents=[common], help="conflict-count histograms")
    mc.add_argument("--mode", choices=["fixed_lag", "random_velocity"])

    tt = sub.add_parser("traveltime", parents=[common], help="travel-time summaries")
    tt.add_argument(
        "--source",
        choices=["usage", "all_paths"],
        default="usage",
        help="served paths across the sweep, or every candidate once",
    )

    hot = sub.add_parser("hotspots", parents=[common], help="flow pairs left in conflict")
    hot.add_argument("--n-uavs", type=int, help="override n_uavs")
    hot.add_argument("--top", type=int, default=0, help="keep the first N rows (0 = all)")

    assign = sub.add_parser("assign", parents=[common], help="solve one scenario")
    assign.add_argument(
        "demands", nargs="+", metavar="ENTRY:EXIT", help="flow pairs such as x+:y-"
    )
    return parser


def _overrides(args: argparse.Namespace) -> dict[str, Any]:
    return {
        "radius_m": args.radius,
        "d_min_m": args.dmin,
        "seed": args.seed,
        "montecarlo_mode": getattr(args, "mode", None),
        "n_uavs": getattr(args, "n_uavs", None),
    }


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else EXIT_USAGE

    logging.basicConfig(
        level=args.log_level,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
        force=True,
    )
    if args.threads < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return EXIT_USAGE
    if args.command == "assign":
        try:
            args.scenario = parse_demands(args.demands)
        except ValueError as e:
            print(f"error: {e}", file=sys.stderr)
            return EXIT_USAGE

    try:
        config, config_path = load_config(args.config, _overrides(args))
        COMMANDS[args.command](config, config_path, args.out, args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except ValidationFailure as e:
        print(f"validation failed: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception:
        logger.exception("%s failed", args.command)
        return EXIT_INTERNAL
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
