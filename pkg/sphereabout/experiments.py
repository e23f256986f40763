"""Exhaustive scenario sweeps and throughput metrics."""

import itertools
import logging
import math
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from typing import Self

from pydantic import BaseModel, ConfigDict, model_validator

from .assignment import (
    Demand,
    Scenario,
    ScenarioClass,
    classify_scenario,
    complete_assignment,
    residual_conflicts,
    solve_max_flow,
)
from .conflict import ConflictGraph, ConflictPolicy, SharedNodeRule, build_conflict_graph
from .geometry import (
    ENTRIES,
    EXITS,
    Circulation,
    NodeId,
    PathKind,
    SphereLayout,
    build_layout,
    is_feasible,
)

logger = logging.getLogger(__name__)

MIN_UAVS = 2
MAX_UAVS = 6
PUBLISHED_BLOCKS = {(13.0, 3.0), (13.0, 4.0), (26.0, 3.0), (26.0, 5.0)}

FlowPattern = tuple[str, str]


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    radius_m: float
    d_min_m: float
    n_uavs: int = MAX_UAVS
    policy: ConflictPolicy
    equatorial_offset_deg: float = 22.5
    polar_offset_deg: float = 22.5
    circulation: Circulation = Circulation.COUNTERCLOCKWISE
    # shared-node rule for the all-direct (no_conflict) test; None follows the policy
    direct_check_rule: SharedNodeRule | None = None

    @model_validator(mode="after")
    def _check(self) -> Self:
        if not MIN_UAVS <= self.n_uavs <= MAX_UAVS:
            raise ValueError(f"n_uavs must be in [{MIN_UAVS}, {MAX_UAVS}]")
        if self.policy.d_min_m != self.d_min_m:
            raise ValueError("policy.d_min_m must equal d_min_m")
        return self

    @property
    def is_published_block(self) -> bool:
        return (float(self.radius_m), float(self.d_min_m)) in PUBLISHED_BLOCKS

    def layout(self) -> SphereLayout:
        return build_layout(
            self.radius_m,
            self.equatorial_offset_deg,
            self.polar_offset_deg,
            self.circulation,
        )

    def for_n(self, n_uavs: int) -> "ExperimentConfig":
        return self.model_copy(update={"n_uavs": n_uavs})


class MetricsRow(BaseModel):
    model_config = ConfigDict(frozen=True)

    n_uavs: int
    scenarios: int
    collisions: int
    no_conflict: int
    resolved: int
    avg_flow: float
    path_load: tuple[float, float, float]

    @model_validator(mode="after")
    def _check(self) -> Self:
        if self.collisions + self.no_conflict + self.resolved != self.scenarios:
            raise ValueError("scenario classes must partition the scenarios")
        if abs(sum(self.path_load) - self.avg_flow) > 1e-9:
            raise ValueError("path loads must sum to the average flow")
        if self.avg_flow > self.n_uavs + 1e-9:
            raise ValueError("average flow cannot exceed the number of UAVs")
        return self


class SweepResult(BaseModel):
    """One N of the sweep: the metrics row plus what downstream studies reuse."""

    model_config = ConfigDict(frozen=True)

    row: MetricsRow
    # servings per conflict-graph path index
    path_usage: dict[int, int]
    # positions in enumerate_scenarios(N) order
    collision_indices: tuple[int, ...]
    hotspots: dict[FlowPattern, int]


class TableRun(BaseModel):
    model_config = ConfigDict(frozen=True)

    config: ExperimentConfig
    sweeps: list[SweepResult]

    @property
    def rows(self) -> list[MetricsRow]:
        return [s.row for s in self.sweeps]

    def sweep(self, n_uavs: int) -> SweepResult:
        for s in self.sweeps:
            if s.row.n_uavs == n_uavs:
                return s
        raise KeyError(n_uavs)


def feasible_exits(entry_node: NodeId) -> list[NodeId]:
    return [j for j in EXITS if is_feasible(entry_node, j)]


def enumerate_scenarios(n_uavs: int) -> list[Scenario]:
    """Every entry subset of size N times every choice of feasible exits, canonical order."""
    if not MIN_UAVS <= n_uavs <= MAX_UAVS:
        raise ValueError(f"n_uavs must be in [{MIN_UAVS}, {MAX_UAVS}], got {n_uavs!r}")
    scenarios = []
    for entries in itertools.combinations(ENTRIES, n_uavs):
        options = [feasible_exits(i) for i in entries]
        for exits in itertools.product(*options):
            demands = tuple(
                Demand(uav_id=k + 1, entry=i, exit=j)
                for k, (i, j) in enumerate(zip(entries, exits))
            )
            scenarios.append(Scenario(demands=demands))
    return scenarios


def scenario_count(n_uavs: int) -> int:
    return math.comb(len(ENTRIES), n_uavs) * (len(EXITS) - 1) ** n_uavs


def flow_label(entry_node: NodeId, exit_node: NodeId) -> str:
    return f"{entry_node.flow_direction}->{exit_node.flow_direction}"


def compass_label(pattern: FlowPattern) -> str:
    parts = []
    for flow in pattern:
        src, _, dst = flow.partition("->")
        parts.append(
            f"{NodeId.parse(src + '_in').flow_direction.compass}"
            f"->{NodeId.parse(dst + '_out').flow_direction.compass}"
        )
    return " & ".join(parts)


def build_graphs(
    config: ExperimentConfig, threads: int = 1
) -> tuple[ConflictGraph, ConflictGraph | None]:
    """Solver graph, plus a second graph when the all-direct test uses another rule."""
    layout = config.layout()
    graph = build_conflict_graph(layout, config.policy, threads)
    rule = config.direct_check_rule
    if rule is None or rule == config.policy.shared_node_rule:
        return graph, None
    policy = config.policy.model_copy(update={"shared_node_rule": rule})
    return graph, build_conflict_graph(layout, policy, threads)


# (class, served kinds 1..3, served path indices, residual flow patterns)
_Outcome = tuple[str, tuple[int, int, int], tuple[int, ...], tuple[FlowPattern, ...]]

_worker_graphs: tuple[ConflictGraph, ConflictGraph | None] | None = None


def _init_worker(graph: ConflictGraph, direct_graph: ConflictGraph | None) -> None:
    global _worker_graphs
    _worker_graphs = (graph, direct_graph)


def evaluate_scenario(
    scenario: Scenario, graph: ConflictGraph, direct_graph: ConflictGraph | None = None
) -> _Outcome:
    assignment = solve_max_flow(scenario, graph)
    cls = classify_scenario(scenario, graph, direct_graph, assignment)
    kinds = assignment.kind_counts()
    by_id = {d.uav_id: d for d in scenario.demands}
    served = tuple(
        graph.index_of(by_id[uav].entry, by_id[uav].exit, kind)
        for uav, kind in sorted(assignment.served.items())
    )
    patterns: list[FlowPattern] = []
    if cls == ScenarioClass.COLLISION:
        full = complete_assignment(scenario, graph, assignment)
        for k, l in residual_conflicts(scenario, graph, full):
            a = flow_label(by_id[k].entry, by_id[k].exit)
            b = flow_label(by_id[l].entry, by_id[l].exit)
            patterns.append((a, b) if a <= b else (b, a))
    return (
        cls.value,
        (kinds[PathKind.DIRECT], kinds[PathKind.SHORT_ARC], kinds[PathKind.LONG_ARC]),
        served,
        tuple(patterns),
    )


def _evaluate_chunk(chunk: list[Scenario]) -> list[_Outcome]:
    assert _worker_graphs is not None
    graph, direct_graph = _worker_graphs
    return [evaluate_scenario(s, graph, direct_graph) for s in chunk]


def _chunks(items: list[Scenario], size: int) -> list[list[Scenario]]:
    return [items[k : k + size] for k in range(0, len(items), size)]


def run_sweep(
    config: ExperimentConfig,
    graph: ConflictGraph,
    direct_graph: ConflictGraph | None = None,
    threads: int = 1,
) -> SweepResult:
    """Classify and solve every scenario for ``config.n_uavs``.

    Tallies are integers accumulated in canonical scenario order; averages are one final
    division, so worker count never changes the emitted digits.
    """
    scenarios = enumerate_scenarios(config.n_uavs)
    logger.info("Sweeping %d scenarios with N=%d", len(scenarios), config.n_uavs)

    if threads > 1:
        with ProcessPoolExecutor(
            max_workers=threads, initializer=_init_worker, initargs=(graph, direct_graph)
        ) as pool:
            parts = pool.map(_evaluate_chunk, _chunks(scenarios, 500))
            outcomes = [o for part in parts for o in part]
    else:
        outcomes = [evaluate_scenario(s, graph, direct_graph) for s in scenarios]

    classes: Counter[str] = Counter()
    kind_totals = [0, 0, 0]
    usage: Counter[int] = Counter()
    hotspots: Counter[FlowPattern] = Counter()
    collisions: list[int] = []
    for position, (cls, kinds, served, patterns) in enumerate(outcomes):
        classes[cls] += 1
        for k in range(3):
            kind_totals[k] += kinds[k]
        usage.update(served)
        hotspots.update(patterns)
        if cls == ScenarioClass.COLLISION:
            collisions.append(position)

    total = len(scenarios)
    loads = (kind_totals[0] / total, kind_totals[1] / total, kind_totals[2] / total)
    row = MetricsRow(
        n_uavs=config.n_uavs,
        scenarios=total,
        collisions=classes[ScenarioClass.COLLISION],
        no_conflict=classes[ScenarioClass.NO_CONFLICT],
        resolved=classes[ScenarioClass.RESOLVED],
        avg_flow=sum(kind_totals) / total,
        path_load=loads,
    )
    logger.info(
        "N=%d: %d collisions, %d no_conflict, %d resolved, avg flow %.3f",
        row.n_uavs,
        row.collisions,
        row.no_conflict,
        row.resolved,
        row.avg_flow,
    )
    return SweepResult(
        row=row,
        path_usage=dict(sorted(usage.items())),
        collision_indices=tuple(collisions),
        hotspots=dict(sorted(hotspots.items())),
    )


def run_table(
    config: ExperimentConfig,
    threads: int = 1,
    n_values: tuple[int, ...] = tuple(range(MIN_UAVS, MAX_UAVS + 1)),
    graphs: tuple[ConflictGraph, ConflictGraph | None] | None = None,
) -> TableRun:
    graph, direct_graph = graphs if graphs is not None else build_graphs(config, threads)
    sweeps = [
        run_sweep(config.for_n(n), graph, direct_graph, threads) for n in n_values
    ]
    return TableRun(config=config, sweeps=sweeps)


def top_conflicting_flows(
    config: ExperimentConfig,
    sweep: SweepResult | None = None,
    threads: int = 1,
) -> list[tuple[FlowPattern, int]]:
    """Flow pairs still in conflict across collision scenarios, most frequent first."""
    if sweep is None:
        graph, direct_graph = build_graphs(config, threads)
        sweep = run_sweep(config, graph, direct_graph, threads)
    return sorted(sweep.hotspots.items(), key=lambda item: (-item[1], item[0]))
