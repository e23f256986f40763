"""CSV/JSON emission. Formatting is fixed so identical inputs give identical bytes."""

import csv
import hashlib
import io
import json
import math
from pathlib import Path
from typing import Any

from pydantic import BaseModel, ConfigDict

from .assignment import Assignment, Scenario, ScenarioClass
from .config import TOOL_NAME, TOOL_VERSION, SphereaboutConfig
from .conflict import ConflictGraph
from .experiments import FlowPattern, MetricsRow, compass_label
from .geometry import ClearanceSpec, SphereLayout, ValidationReport
from .sensitivity import RNG_ALGORITHM, ConflictHistogram, TravelTimeSummary


def fmt6(value: float) -> str:
    """Six significant digits, locale independent."""
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return f"{value:.6g}"


def fmt3(value: float) -> str:
    return f"{value:.3f}"


def _write_csv(path: Path, header: list[str], rows: list[list[str]]) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    path.write_text(buf.getvalue(), encoding="utf-8")


def _write_json(path: Path, payload: Any) -> None:
    path.write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")


def sidecar(out: Path, suffix: str) -> Path:
    return out.with_name(out.name + suffix)


def write_layout(
    path: Path, layout: SphereLayout, clearance: ClearanceSpec, report: ValidationReport
) -> None:
    _write_json(
        path,
        {
            "radius_m": fmt6(layout.radius_m),
            "equatorial_offset_deg": fmt6(layout.equatorial_offset_deg),
            "polar_offset_deg": fmt6(layout.polar_offset_deg),
            "circulation": str(layout.circulation),
            "nodes": [
                {"id": n.label, "xyz_m": [fmt6(c) for c in layout.nodes[n.label]]}
                for n in layout.node_ids
            ],
            "clearance": {k: fmt6(v) for k, v in clearance.model_dump().items()},
            "validation": {
                "passed": report.passed,
                "checks": [
                    {
                        "name": c.name,
                        "measured": fmt6(c.measured),
                        "threshold": fmt6(c.threshold),
                        "passed": c.passed,
                        "detail": c.detail,
                    }
                    for c in report.checks
                ],
            },
        },
    )


def write_conflicts(path: Path, graph: ConflictGraph) -> None:
    rows = [
        [
            str(a.entry),
            str(a.exit),
            str(int(a.kind)),
            str(b.entry),
            str(b.exit),
            str(int(b.kind)),
            fmt6(dist),
            str(int(flag)),
        ]
        for a, b, dist, flag in graph.pair_rows()
    ]
    header = ["entry_a", "exit_a", "kind_a", "entry_b", "exit_b", "kind_b"]
    _write_csv(path, header + ["min_dist_m", "conflict_flag"], rows)


TABLE_HEADER = [
    "radius_m",
    "d_min_m",
    "n_uavs",
    "scenarios",
    "collisions",
    "no_conflict",
    "resolved",
    "avg_flow",
    "path_load_1",
    "path_load_2",
    "path_load_3",
]


def write_table(path: Path, radius_m: float, d_min_m: float, rows: list[MetricsRow]) -> None:
    _write_csv(
        path,
        TABLE_HEADER,
        [
            [
                fmt6(radius_m),
                fmt6(d_min_m),
                str(r.n_uavs),
                str(r.scenarios),
                str(r.collisions),
                str(r.no_conflict),
                str(r.resolved),
                fmt3(r.avg_flow),
                *(fmt3(load) for load in r.path_load),
            ]
            for r in rows
        ],
    )


def write_histogram(path: Path, histogram: ConflictHistogram) -> None:
    _write_csv(
        path,
        ["conflict_count", "frequency"],
        [[str(k), str(v)] for k, v in sorted(histogram.counts.items())],
    )


def write_mc_summary(
    path: Path,
    config: SphereaboutConfig,
    histogram: ConflictHistogram,
    baseline: ConflictHistogram | None = None,
) -> None:
    payload: dict[str, Any] = {
        "mode": config.montecarlo_mode,
        "seed": config.seed,
        "rng": RNG_ALGORITHM,
        "n_experiments": histogram.n_experiments,
        "mean": fmt6(histogram.mean),
        "fraction_zero": fmt6(histogram.fraction_zero),
    }
    if baseline is not None:
        payload["baseline_mean"] = fmt6(baseline.mean)
        payload["baseline_fraction_zero"] = fmt6(baseline.fraction_zero)
    payload["config"] = config.model_dump(mode="json")
    _write_json(path, payload)


def write_travel_times(path: Path, summaries: list[TravelTimeSummary]) -> None:
    _write_csv(
        path,
        ["radius_m", "speed_mps", "min_s", "mean_s", "max_s", "count"],
        [
            [
                fmt6(s.radius_m),
                fmt6(s.speed_mps),
                fmt6(s.min_s),
                fmt6(s.mean_s),
                fmt6(s.max_s),
                str(s.count),
            ]
            for s in summaries
        ],
    )
    _write_json(
        sidecar(path, ".histogram.json"),
        [
            {
                "radius_m": fmt6(s.radius_m),
                "speed_mps": fmt6(s.speed_mps),
                "bins": [[fmt6(edge), count] for edge, count in s.histogram],
            }
            for s in summaries
        ],
    )


def write_hotspots(path: Path, ranked: list[tuple[FlowPattern, int]]) -> None:
    _write_csv(
        path,
        ["rank", "flow_a", "flow_b", "compass", "count"],
        [
            [str(rank), a, b, compass_label((a, b)), str(count)]
            for rank, ((a, b), count) in enumerate(ranked, start=1)
        ],
    )


def assignment_record(
    scenario: Scenario, assignment: Assignment, cls: ScenarioClass
) -> dict[str, Any]:
    return {
        "demands": [
            {"uav_id": d.uav_id, "entry": str(d.entry), "exit": str(d.exit)}
            for d in scenario.ordered
        ],
        "served": {str(uav): int(kind) for uav, kind in sorted(assignment.served.items())},
        "unserved": list(assignment.unserved),
        "objective": fmt6(assignment.objective),
        "class": str(cls),
        "total_length_m": fmt6(assignment.total_length_m),
    }


def sha256_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


class RunManifest(BaseModel):
    model_config = ConfigDict(frozen=True)

    tool: str = TOOL_NAME
    tool_version: str = TOOL_VERSION
    command: str
    seed: int
    rng: str = RNG_ALGORITHM
    config: dict[str, Any]
    inputs: dict[str, str]
    outputs: list[str]


def write_manifest(
    out: Path, command: str, config: SphereaboutConfig, inputs: list[Path], outputs: list[Path]
) -> Path:
    manifest = RunManifest(
        command=command,
        seed=config.seed,
        config=config.model_dump(mode="json"),
        inputs={p.name: sha256_file(p) for p in inputs},
        outputs=[p.name for p in outputs],
    )
    path = sidecar(out, ".manifest.json")
    path.write_text(manifest.model_dump_json(indent=2) + "\n", encoding="utf-8")
    return path


def _fmt_floats(value: Any) -> Any:
    if isinstance(value, bool):
        return value
    if isinstance(value, float):
        return fmt6(value)
    if isinstance(value, dict):
        return {str(k): _fmt_floats(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_fmt_floats(v) for v in value]
    return value


def write_report(path: Path, payload: dict[str, Any]) -> None:
    """JSON report with every float at six significant digits."""
    _write_json(path, _fmt_floats(payload))


def write_assignment(path: Path, records: list[dict[str, Any]]) -> None:
    _write_json(path, records)
