"""Timing studies: travel-time distributions and the conflict-count Monte Carlos."""

import logging
from collections import Counter
from collections.abc import Mapping
from concurrent.futures import ProcessPoolExecutor
from enum import StrEnum
from typing import Literal, Self

import numpy as np
from pydantic import BaseModel, ConfigDict, computed_field, model_validator

from .assignment import (
    Scenario,
    complete_assignment,
    residual_conflicts,
    solve_max_flow,
)
from .conflict import (
    DEFAULT_DT_S,
    ConflictGraph,
    ConflictPolicy,
    MotionProfile,
    closest_approach,
    temporal_conflicts,
    temporal_min_distance,
)
from .experiments import (
    ExperimentConfig,
    SweepResult,
    build_graphs,
    enumerate_scenarios,
    run_sweep,
    run_table,
)
from .geometry import SampledPath, SphereLayout, candidate_paths, sample_path

logger = logging.getLogger(__name__)

RNG_ALGORITHM = "numpy.random.PCG64 via SeedSequence.spawn"
_LENGTH_TIE_M = 1e-9


class TargetSet(StrEnum):
    COLLISION_SCENARIOS = "collision_scenarios"
    ALL_SCENARIOS = "all_scenarios"


class McConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    n_experiments: int = 3000
    seed: int = 2024
    velocity_range_mps: tuple[float, float] = (1.0, 5.0)
    dt_s: float = DEFAULT_DT_S
    target_set: TargetSet = TargetSet.COLLISION_SCENARIOS
    # common speed for the fixed-lag study and the lag computation
    reference_speed_mps: float = 5.0

    @model_validator(mode="after")
    def _check(self) -> Self:
        if self.n_experiments <= 0:
            raise ValueError("n_experiments must be positive")
        lo, hi = self.velocity_range_mps
        if not 0 < lo <= hi:
            raise ValueError("velocity_range_mps must be positive and ordered")
        if self.dt_s <= 0:
            raise ValueError("dt_s must be positive")
        if self.reference_speed_mps <= 0:
            raise ValueError("reference_speed_mps must be positive")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        return self


class ConflictHistogram(BaseModel):
    model_config = ConfigDict(frozen=True)

    counts: dict[int, int]
    n_experiments: int

    @model_validator(mode="after")
    def _check(self) -> Self:
        if sum(self.counts.values()) != self.n_experiments:
            raise ValueError("histogram frequencies must sum to n_experiments")
        return self

    @classmethod
    def from_samples(cls, samples: list[int]) -> "ConflictHistogram":
        return cls(counts=dict(sorted(Counter(samples).items())), n_experiments=len(samples))

    @computed_field
    @property
    def mean(self) -> float:
        if not self.n_experiments:
            return 0.0
        return sum(k * v for k, v in self.counts.items()) / self.n_experiments

    @computed_field
    @property
    def fraction_zero(self) -> float:
        if not self.n_experiments:
            return 0.0
        return self.counts.get(0, 0) / self.n_experiments


class TravelTimeSummary(BaseModel):
    model_config = ConfigDict(frozen=True)

    radius_m: float
    speed_mps: float
    min_s: float
    mean_s: float
    max_s: float
    count: int
    # (lower bin edge in seconds, frequency)
    histogram: list[tuple[float, int]]


def travel_time_stats(
    layout: SphereLayout,
    velocities_mps: list[float],
    source: Literal["all_paths"] | Mapping[int, int],
    bin_width_s: float = 5.0,
) -> list[TravelTimeSummary]:
    """Travel times (path length over speed) per speed.

    ``source`` is either every candidate path once, or a tally of servings per
    candidate-path index as accumulated by a scenario sweep.
    """
    if any(v <= 0 for v in velocities_mps):
        raise ValueError("velocities must be positive")
    lengths = np.array([p.length_m for p in candidate_paths(layout)])
    if source == "all_paths":
        weights = np.ones(len(lengths), dtype=int)
    else:
        weights = np.zeros(len(lengths), dtype=int)
        for index, count in source.items():
            weights[int(index)] = count
    served = np.repeat(lengths, weights)

    summaries = []
    for v in velocities_mps:
        times = served / v
        if len(times) == 0:
            summaries.append(
                TravelTimeSummary(
                    radius_m=layout.radius_m,
                    speed_mps=v,
                    min_s=0.0,
                    mean_s=0.0,
                    max_s=0.0,
                    count=0,
                    histogram=[],
                )
            )
            continue
        top = bin_width_s * (np.floor(times.max() / bin_width_s) + 1)
        freq, edges = np.histogram(times, bins=np.arange(0.0, top + bin_width_s / 2, bin_width_s))
        summaries.append(
            TravelTimeSummary(
                radius_m=layout.radius_m,
                speed_mps=v,
                min_s=float(times.min()),
                mean_s=float(times.mean()),
                max_s=float(times.max()),
                count=len(times),
                histogram=[(float(e), int(f)) for e, f in zip(edges[:-1], freq)],
            )
        )
    return summaries


def path_usage_tally(
    experiment: ExperimentConfig,
    threads: int = 1,
    graphs: tuple[ConflictGraph, ConflictGraph | None] | None = None,
) -> dict[int, int]:
    """How often each candidate-path index is served across the N=2..6 sweep."""
    usage: Counter[int] = Counter()
    for sweep in run_table(experiment, threads, graphs=graphs).sweeps:
        usage.update(sweep.path_usage)
    return dict(sorted(usage.items()))


def travel_time_grid(
    experiment: ExperimentConfig,
    radii_m: list[float],
    velocities_mps: list[float],
    source: Literal["usage", "all_paths"] = "usage",
    threads: int = 1,
) -> list[TravelTimeSummary]:
    """travel_time_stats for every (radius, speed).

    With ``usage`` each radius gets its own sweep, and every served path counts once per
    serving. ``all_paths`` counts each candidate path once.
    """
    out = []
    for radius in radii_m:
        at_radius = experiment.model_copy(update={"radius_m": radius})
        tally: Literal["all_paths"] | Mapping[int, int] = "all_paths"
        if source == "usage":
            tally = path_usage_tally(at_radius, threads)
        out.extend(travel_time_stats(at_radius.layout(), velocities_mps, tally))
    return out


def target_scenarios(
    config: McConfig,
    experiment: ExperimentConfig,
    graph: ConflictGraph,
    direct_graph: ConflictGraph | None = None,
    sweep: SweepResult | None = None,
) -> list[Scenario]:
    scenarios = enumerate_scenarios(experiment.n_uavs)
    if config.target_set == TargetSet.ALL_SCENARIOS:
        return scenarios
    if sweep is None:
        sweep = run_sweep(experiment, graph, direct_graph)
    return [scenarios[k] for k in sweep.collision_indices]


def _candidate_lags(
    waiting: SampledPath,
    other: SampledPath,
    waiting_entry_s: float,
    other_entry_s: float,
    policy: ConflictPolicy,
    speed_mps: float,
    dt_s: float,
) -> list[float]:
    floor = policy.d_min_m / speed_mps
    step = max(floor, dt_s)
    arrival_gap = abs(waiting.spec.length_m - other.spec.length_m) / speed_mps
    # entering after the other UAV has left always separates the pair
    clear = other_entry_s + other.spec.length_m / speed_mps - waiting_entry_s + dt_s
    lags = {max(arrival_gap, floor), clear}

    approach = closest_approach(waiting, other, policy)
    if approach is not None:
        s_waiting, s_other = approach
        behind = (other_entry_s + s_other / speed_mps) - (waiting_entry_s + s_waiting / speed_mps)
        lag = max(behind, 0.0) + step
        while lag < clear:
            lags.add(lag)
            lag += step
    return sorted(lag for lag in lags if 0.0 < lag <= clear)


def lagged_entry_times(
    paths: Mapping[int, SampledPath],
    pairs: list[tuple[int, int]],
    policy: ConflictPolicy,
    speed_mps: float,
    dt_s: float,
    rng: np.random.Generator,
) -> dict[int, float]:
    """Entry times that stagger the given conflicting pairs, all UAVs at one speed.

    Pairs are taken in order and skipped once they no longer meet. The UAV on the longer
    path waits, with a coin flip from ``rng`` between equally long paths. Candidate lags are
    the exit-arrival difference (at least d_min over the speed), steps of that floor past
    the other UAV's arrival at the pair's closest approach, and finally entering once the
    other UAV has left. The smallest lag that separates the pair without adding a conflict
    for the waiting UAV is applied; a pair no candidate separates keeps its timing.
    """
    times = dict.fromkeys(paths, 0.0)

    def profile(uav: int, entry_time_s: float) -> MotionProfile:
        return MotionProfile(path=paths[uav], speed_mps=speed_mps, entry_time_s=entry_time_s)

    def partners(uav: int, entry_time_s: float) -> set[int]:
        moving = profile(uav, entry_time_s)
        return {
            other
            for other in paths
            if other != uav
            and temporal_min_distance(moving, profile(other, times[other]), dt_s, policy)
            <= policy.d_min_m
        }

    for k, l in pairs:
        if l not in partners(k, times[k]):
            continue
        len_k, len_l = paths[k].spec.length_m, paths[l].spec.length_m
        if abs(len_k - len_l) <= _LENGTH_TIE_M:
            waiting, other = (k, l) if rng.integers(2) == 0 else (l, k)
        else:
            waiting, other = (k, l) if len_k > len_l else (l, k)

        before = partners(waiting, times[waiting]) - {other}
        for lag in _candidate_lags(
            paths[waiting],
            paths[other],
            times[waiting],
            times[other],
            policy,
            speed_mps,
            dt_s,
        ):
            after = partners(waiting, times[waiting] + lag)
            if other not in after and after <= before:
                logger.debug("UAV %d waits %.3f s for UAV %d", waiting, lag, other)
                times[waiting] += lag
                break
    return times


class _Study(BaseModel):
    """Everything one experiment needs; shipped once to each worker."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    mode: Literal["fixed_lag", "baseline", "random_velocity"]
    config: McConfig
    layout: SphereLayout
    graph: ConflictGraph
    targets: list[Scenario]


_worker_study: _Study | None = None
_sample_cache: dict[int, SampledPath] = {}


def _init_worker(study: _Study) -> None:
    global _worker_study
    _worker_study = study
    _sample_cache.clear()


def _sampled(study: _Study, index: int) -> SampledPath:
    if index not in _sample_cache:
        _sample_cache[index] = sample_path(
            study.graph.paths[index], study.layout, study.graph.policy.max_spacing_m
        )
    return _sample_cache[index]


def _run_experiment(study: _Study, seq: np.random.SeedSequence) -> int:
    rng = np.random.Generator(np.random.PCG64(seq))
    scenario = study.targets[int(rng.integers(len(study.targets)))]
    graph = study.graph
    kinds = complete_assignment(scenario, graph, solve_max_flow(scenario, graph))
    by_id = {d.uav_id: d for d in scenario.demands}
    uavs = sorted(kinds)
    paths = {
        uav: _sampled(study, graph.index_of(by_id[uav].entry, by_id[uav].exit, kinds[uav]))
        for uav in uavs
    }
    v_ref = study.config.reference_speed_mps
    speeds = dict.fromkeys(uavs, v_ref)
    entry_times = dict.fromkeys(uavs, 0.0)

    if study.mode == "fixed_lag":
        entry_times = lagged_entry_times(
            paths,
            residual_conflicts(scenario, graph, kinds),
            graph.policy,
            v_ref,
            study.config.dt_s,
            rng,
        )
    elif study.mode == "random_velocity":
        lo, hi = study.config.velocity_range_mps
        drawn = rng.uniform(lo, hi, size=len(uavs))
        speeds = {uav: float(v) for uav, v in zip(uavs, drawn)}

    profiles = [
        MotionProfile(path=paths[uav], speed_mps=speeds[uav], entry_time_s=entry_times[uav])
        for uav in uavs
    ]
    return len(temporal_conflicts(profiles, graph.policy, study.config.dt_s))


def _run_chunk(seqs: list[np.random.SeedSequence]) -> list[int]:
    assert _worker_study is not None
    return [_run_experiment(_worker_study, seq) for seq in seqs]


def _monte_carlo(
    mode: Literal["fixed_lag", "baseline", "random_velocity"],
    config: McConfig,
    experiment: ExperimentConfig,
    threads: int,
    targets: list[Scenario] | None,
    graphs: tuple[ConflictGraph, ConflictGraph | None] | None,
) -> ConflictHistogram:
    graph, direct_graph = graphs if graphs is not None else build_graphs(experiment, threads)
    if targets is None:
        targets = target_scenarios(config, experiment, graph, direct_graph)
    if not targets:
        logger.warning("Target set %s is empty; reporting an empty histogram", config.target_set)
        return ConflictHistogram(counts={}, n_experiments=0)

    study = _Study(
        mode=mode, config=config, layout=experiment.layout(), graph=graph, targets=targets
    )
    seqs = np.random.SeedSequence(config.seed).spawn(config.n_experiments)
    logger.info(
        "Monte Carlo (%s): %d experiments over %d target scenarios",
        mode,
        config.n_experiments,
        len(targets),
    )
    if threads > 1:
        chunks = [seqs[k : k + 100] for k in range(0, len(seqs), 100)]
        with ProcessPoolExecutor(
            max_workers=threads, initializer=_init_worker, initargs=(study,)
        ) as pool:
            samples = [c for part in pool.map(_run_chunk, chunks) for c in part]
    else:
        _init_worker(study)
        samples = [_run_experiment(study, seq) for seq in seqs]

    histogram = ConflictHistogram.from_samples(samples)
    logger.info(
        "Monte Carlo (%s) done: mean %.3f conflicts, %.1f%% conflict-free",
        mode,
        histogram.mean,
        100 * histogram.fraction_zero,
    )
    return histogram


def fixed_lag_mc(
    config: McConfig,
    experiment: ExperimentConfig,
    threads: int = 1,
    targets: list[Scenario] | None = None,
    graphs: tuple[ConflictGraph, ConflictGraph | None] | None = None,
) -> ConflictHistogram:
    """Delay one UAV of each residual conflicting pair, see lagged_entry_times.

    All UAVs fly at the reference speed. Every experiment ends with at most as many
    conflicts as the same draw in baseline_mc.
    """
    return _monte_carlo("fixed_lag", config, experiment, threads, targets, graphs)


def baseline_mc(
    config: McConfig,
    experiment: ExperimentConfig,
    threads: int = 1,
    targets: list[Scenario] | None = None,
    graphs: tuple[ConflictGraph, ConflictGraph | None] | None = None,
) -> ConflictHistogram:
    """The fixed-lag draws replayed with every entry at t = 0."""
    return _monte_carlo("baseline", config, experiment, threads, targets, graphs)


def random_velocity_mc(
    config: McConfig,
    experiment: ExperimentConfig,
    threads: int = 1,
    targets: list[Scenario] | None = None,
    graphs: tuple[ConflictGraph, ConflictGraph | None] | None = None,
) -> ConflictHistogram:
    """Per-UAV speeds drawn uniformly from the velocity range; all entries at t = 0."""
    return _monte_carlo("random_velocity", config, experiment, threads, targets, graphs)
