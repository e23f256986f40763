"""Maximum-throughput conflict-free path assignment.

The model is the binary program

    max   sum w_ij f_ij
    s.t.  sum_p x^p_ij = f_ij                  for every demanded (i, j)
          x^p_ij + x^p'_i'j' <= 1              whenever the two paths conflict
          x, f binary

solved exactly by depth-first enumeration with bound pruning; instances have at most six
UAVs and three path kinds each.
"""

import itertools
import math
from collections.abc import Mapping
from enum import StrEnum
from typing import Self

from pydantic import BaseModel, ConfigDict, computed_field, model_validator

from .conflict import ConflictGraph
from .errors import InfeasiblePairError
from .geometry import NodeId, PathKind, is_feasible

_TOL = 1e-9

# ranks "unserved" after every path kind in the deterministic tie-break
_UNSERVED = None


class Demand(BaseModel):
    model_config = ConfigDict(frozen=True)

    uav_id: int
    entry: NodeId
    exit: NodeId

    @property
    def flow(self) -> tuple[NodeId, NodeId]:
        return (self.entry, self.exit)

    def __str__(self) -> str:
        return f"{self.uav_id}:{self.entry}->{self.exit}"


class Scenario(BaseModel):
    model_config = ConfigDict(frozen=True)

    demands: tuple[Demand, ...]

    @model_validator(mode="after")
    def _check(self) -> Self:
        entries = [d.entry for d in self.demands]
        if len(set(entries)) != len(entries):
            raise ValueError("at most one UAV per entry corridor")
        ids = [d.uav_id for d in self.demands]
        if len(set(ids)) != len(ids):
            raise ValueError("uav_id values must be unique")
        for d in self.demands:
            if not is_feasible(d.entry, d.exit):
                raise ValueError(f"demand {d} is outside the feasibility set")
        return self

    @property
    def n_uavs(self) -> int:
        return len(self.demands)

    @property
    def ordered(self) -> list[Demand]:
        return sorted(self.demands, key=lambda d: d.uav_id)

    def __str__(self) -> str:
        return " ".join(str(d) for d in self.ordered)


class Assignment(BaseModel):
    model_config = ConfigDict(frozen=True)

    served: dict[int, PathKind]
    unserved: tuple[int, ...]
    objective: float
    total_length_m: float

    @computed_field
    @property
    def served_count(self) -> int:
        return len(self.served)

    def kind_counts(self) -> dict[PathKind, int]:
        counts = dict.fromkeys(PathKind, 0)
        for kind in self.served.values():
            counts[kind] += 1
        return counts


class ScenarioClass(StrEnum):
    NO_CONFLICT = "no_conflict"
    RESOLVED = "resolved"
    COLLISION = "collision"


def candidate_indices(scenario: Scenario, graph: ConflictGraph) -> list[list[int]]:
    """Graph indices of each demand's paths (kinds 1..3), demands in uav_id order."""
    out = []
    for d in scenario.ordered:
        if not is_feasible(d.entry, d.exit):
            raise InfeasiblePairError(f"Demand {d} is outside the feasibility set")
        out.append([graph.index_of(d.entry, d.exit, kind) for kind in PathKind])
    return out


def _weights_for(
    scenario: Scenario, weights: Mapping[tuple[NodeId, NodeId], float] | None
) -> list[float]:
    if weights is None:
        return [1.0] * scenario.n_uavs
    return [float(weights.get(d.flow, 1.0)) for d in scenario.ordered]


def _compare(a: tuple[float, ...], b: tuple[float, ...]) -> int:
    for x, y in zip(a, b):
        tol = _TOL * max(1.0, abs(x), abs(y))
        if x > y + tol:
            return 1
        if x < y - tol:
            return -1
    return 0


def _build_assignment(
    scenario: Scenario,
    graph: ConflictGraph,
    choices: list[PathKind | None],
    weights: list[float],
) -> Assignment:
    served: dict[int, PathKind] = {}
    unserved: list[int] = []
    objective = 0.0
    length = 0.0
    for d, kind, w in zip(scenario.ordered, choices, weights):
        if kind is None:
            unserved.append(d.uav_id)
            continue
        served[d.uav_id] = kind
        objective += w
        length += graph.paths[graph.index_of(d.entry, d.exit, kind)].length_m
    return Assignment(
        served=served,
        unserved=tuple(unserved),
        objective=objective,
        total_length_m=length,
    )


def solve_max_flow(
    scenario: Scenario,
    graph: ConflictGraph,
    weights: Mapping[tuple[NodeId, NodeId], float] | None = None,
) -> Assignment:
    """Provably optimal assignment.

    Lexicographic objective: weighted flow, served count, then shortest total length; among
    exact ties the first kind vector in uav_id order wins (direct < short < long < unserved).
    """
    cands = candidate_indices(scenario, graph)
    w = _weights_for(scenario, weights)
    masks = graph.conflict_masks
    lengths = [graph.paths[k].length_m for k in range(len(graph.paths))]
    n = len(cands)
    rest_weight = [sum(w[pos:]) for pos in range(n + 1)]

    best_score: tuple[float, ...] | None = None
    best_choices: list[PathKind | None] = [_UNSERVED] * n
    choices: list[PathKind | None] = [_UNSERVED] * n

    def visit(pos: int, blocked: int, value: float, served: int, length: float) -> None:
        nonlocal best_score, best_choices
        if best_score is not None:
            optimistic = (value + rest_weight[pos], float(served + n - pos), -length)
            if _compare(optimistic, best_score) <= 0:
                return
        if pos == n:
            best_score = (value, float(served), -length)
            best_choices = list(choices)
            return
        for kind, path in zip(PathKind, cands[pos]):
            if blocked >> path & 1:
                continue
            choices[pos] = kind
            visit(pos + 1, blocked | masks[path], value + w[pos], served + 1, length + lengths[path])
        choices[pos] = _UNSERVED
        visit(pos + 1, blocked, value, served, length)

    visit(0, 0, 0.0, 0, 0.0)
    return _build_assignment(scenario, graph, best_choices, w)


def _conflict_free(graph: ConflictGraph, paths: list[int]) -> bool:
    return not any(graph.in_conflict(m, k) for m, k in itertools.combinations(paths, 2))


def assign_paths_oracle(scenario: Scenario, graph: ConflictGraph) -> Assignment:
    """Literal subset enumeration: largest served subsets first, first conflict-free hit wins."""
    cands = candidate_indices(scenario, graph)
    n = len(cands)
    w = _weights_for(scenario, None)
    for size in range(n, 0, -1):
        for subset in itertools.combinations(range(n), size):
            for kinds in itertools.product(PathKind, repeat=size):
                paths = [cands[pos][kind - 1] for pos, kind in zip(subset, kinds)]
                if _conflict_free(graph, paths):
                    choices: list[PathKind | None] = [_UNSERVED] * n
                    for pos, kind in zip(subset, kinds):
                        choices[pos] = kind
                    return _build_assignment(scenario, graph, choices, w)
    return _build_assignment(scenario, graph, [_UNSERVED] * n, w)


def classify_scenario(
    scenario: Scenario,
    graph: ConflictGraph,
    direct_graph: ConflictGraph | None = None,
    assignment: Assignment | None = None,
) -> ScenarioClass:
    """no_conflict when everybody flies direct safely, resolved when the optimum serves all.

    ``direct_graph`` judges the all-direct test under another shared-node rule;
    ``assignment`` reuses an already solved optimum.
    """
    check = direct_graph if direct_graph is not None else graph
    direct = [check.index_of(d.entry, d.exit, PathKind.DIRECT) for d in scenario.ordered]
    if _conflict_free(check, direct):
        return ScenarioClass.NO_CONFLICT
    if assignment is None:
        assignment = solve_max_flow(scenario, graph)
    if assignment.served_count == scenario.n_uavs:
        return ScenarioClass.RESOLVED
    return ScenarioClass.COLLISION


def check_assignment(
    scenario: Scenario, graph: ConflictGraph, assignment: Assignment
) -> list[tuple[int, int]]:
    """UAV pairs whose served paths conflict; empty for a feasible assignment."""
    ids = {d.uav_id for d in scenario.demands}
    if set(assignment.served) & set(assignment.unserved):
        raise ValueError("a UAV cannot be both served and unserved")
    if set(assignment.served) | set(assignment.unserved) != ids:
        raise ValueError("assignment does not cover the scenario's demands")
    return _conflicting_pairs(scenario, graph, assignment.served)


def _conflicting_pairs(
    scenario: Scenario, graph: ConflictGraph, kinds: Mapping[int, PathKind]
) -> list[tuple[int, int]]:
    by_id = {d.uav_id: d for d in scenario.demands}
    placed = {
        uav: graph.index_of(by_id[uav].entry, by_id[uav].exit, kind)
        for uav, kind in sorted(kinds.items())
    }
    return [
        (k, l)
        for (k, m), (l, n) in itertools.combinations(placed.items(), 2)
        if graph.in_conflict(m, n)
    ]


def complete_assignment(
    scenario: Scenario, graph: ConflictGraph, assignment: Assignment
) -> dict[int, PathKind]:
    """Kinds for every UAV: served ones keep theirs, unserved ones take their least-conflicting
    kind against the paths already placed (uav_id order, ties to the lower kind)."""
    by_id = {d.uav_id: d for d in scenario.demands}
    placed = dict(assignment.served)
    for uav in sorted(assignment.unserved):
        d = by_id[uav]
        placed_paths = [
            graph.index_of(by_id[u].entry, by_id[u].exit, kind) for u, kind in placed.items()
        ]
        best_kind, best_hits = PathKind.DIRECT, math.inf
        for kind in PathKind:
            path = graph.index_of(d.entry, d.exit, kind)
            hits = sum(graph.in_conflict(path, other) for other in placed_paths)
            if hits < best_hits:
                best_kind, best_hits = kind, hits
        placed[uav] = best_kind
    return dict(sorted(placed.items()))


def residual_conflicts(
    scenario: Scenario, graph: ConflictGraph, kinds: Mapping[int, PathKind]
) -> list[tuple[int, int]]:
    """Conflicting UAV pairs once every UAV flies its (completed) kind."""
    return _conflicting_pairs(scenario, graph, kinds)
