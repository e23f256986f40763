"""Tests for sensitivity.py"""

import logging
import math
from unittest.mock import MagicMock, patch

import numpy as np
import pytest
from pydantic import ValidationError

from sphereabout.assignment import complete_assignment, residual_conflicts, solve_max_flow
from sphereabout.conflict import MotionProfile, temporal_conflicts
from sphereabout.experiments import enumerate_scenarios, run_sweep
from sphereabout.geometry import build_layout, candidate_paths, sample_path
from sphereabout.sensitivity import (
    ConflictHistogram,
    McConfig,
    TargetSet,
    baseline_mc,
    fixed_lag_mc,
    lagged_entry_times,
    path_usage_tally,
    random_velocity_mc,
    travel_time_grid,
    travel_time_stats,
)

SMALL = McConfig(n_experiments=30, seed=11, target_set=TargetSet.ALL_SCENARIOS)


def flown_paths(scenario, layout, graph):
    kinds = complete_assignment(scenario, graph, solve_max_flow(scenario, graph))
    by_id = {d.uav_id: d for d in scenario.demands}
    paths = {
        u: sample_path(
            graph.paths[graph.index_of(by_id[u].entry, by_id[u].exit, kinds[u])],
            layout,
            graph.policy.max_spacing_m,
        )
        for u in sorted(kinds)
    }
    return kinds, paths


def conflict_count(paths, policy, entry_times=None, speeds=None, dt_s=0.02):
    uavs = sorted(paths)
    profiles = [
        MotionProfile(
            path=paths[u],
            speed_mps=5.0 if speeds is None else speeds[u],
            entry_time_s=0.0 if entry_times is None else entry_times[u],
        )
        for u in uavs
    ]
    return temporal_conflicts(profiles, policy, dt_s)


@pytest.fixture(scope="module")
def targets():
    return enumerate_scenarios(2)[::5]


@pytest.fixture(scope="module")
def crossing_scenarios(experiment, graph):
    scenarios = enumerate_scenarios(2)
    return [scenarios[k] for k in run_sweep(experiment, graph).collision_indices]


class TestMcConfig:
    def test_defaults(self):
        config = McConfig()

        assert config.n_experiments == 3000
        assert config.velocity_range_mps == (1.0, 5.0)

    def test_rejects_reversed_range(self):
        with pytest.raises(ValidationError, match="velocity_range_mps"):
            McConfig(velocity_range_mps=(5.0, 1.0))

    def test_rejects_zero_experiments(self):
        with pytest.raises(ValidationError, match="n_experiments"):
            McConfig(n_experiments=0)


class TestConflictHistogram:
    def test_from_samples(self):
        h = ConflictHistogram.from_samples([0, 1, 0, 3])

        assert h.counts == {0: 2, 1: 1, 3: 1}
        assert h.n_experiments == 4
        assert h.mean == pytest.approx(1.0)
        assert h.fraction_zero == pytest.approx(0.5)

    def test_rejects_bad_total(self):
        with pytest.raises(ValidationError, match="sum"):
            ConflictHistogram(counts={0: 2}, n_experiments=3)


class TestTravelTime:
    def test_doubling_speed_halves_times(self, layout):
        slow, fast = travel_time_stats(layout, [2.0, 4.0], "all_paths")

        assert fast.min_s == pytest.approx(slow.min_s / 2)
        assert fast.mean_s == pytest.approx(slow.mean_s / 2)
        assert fast.max_s == pytest.approx(slow.max_s / 2)
        assert slow.count == fast.count == 90

    def test_longest_trip_exceeds_a_minute(self, experiment):
        summaries = travel_time_grid(experiment, [13.0, 26.0], [1.0, 5.0], "all_paths")
        longest = max(s.max_s for s in summaries)
        expected = max(p.length_m for p in candidate_paths(build_layout(26.0)))

        assert longest == pytest.approx(expected / 1.0, abs=1e-6)
        assert longest > 60.0

    def test_usage_tally(self, layout):
        (summary,) = travel_time_stats(layout, [5.0], {0: 3, 1: 1})
        lengths = [p.length_m for p in candidate_paths(layout)[:2]]

        assert summary.count == 4
        assert summary.mean_s == pytest.approx((3 * lengths[0] + lengths[1]) / 4 / 5.0)
        assert sum(f for _, f in summary.histogram) == 4

    def test_rejects_bad_speed(self, layout):
        with pytest.raises(ValueError, match="velocities"):
            travel_time_stats(layout, [0.0], "all_paths")


class TestMonteCarlo:
    def test_fixed_lag_reproducible(self, experiment, graph, targets):
        first = fixed_lag_mc(SMALL, experiment, targets=targets, graphs=(graph, None))
        second = fixed_lag_mc(SMALL, experiment, targets=targets, graphs=(graph, None))

        assert first == second
        assert first.n_experiments == 30
        assert max(first.counts) <= 1

    def test_worker_count_does_not_change_histogram(self, experiment, graph, targets):
        serial = random_velocity_mc(SMALL, experiment, targets=targets, graphs=(graph, None))
        parallel = random_velocity_mc(
            SMALL, experiment, threads=2, targets=targets, graphs=(graph, None)
        )

        assert parallel == serial

    def test_baseline_uses_same_draws(self, experiment, graph, targets):
        h = baseline_mc(SMALL, experiment, targets=targets, graphs=(graph, None))

        assert h.n_experiments == 30

    def test_empty_target_set(self, experiment, graph, caplog):
        with caplog.at_level(logging.WARNING):
            h = fixed_lag_mc(SMALL, experiment, targets=[], graphs=(graph, None))

        assert h.counts == {}
        assert h.n_experiments == 0
        assert "empty" in caplog.text


class TestEqualSpeeds:
    def test_temporal_conflicts_are_geometric(self, layout, graph):
        for scenario in enumerate_scenarios(3)[::50]:
            kinds, paths = flown_paths(scenario, layout, graph)
            uavs = sorted(paths)
            temporal = {(uavs[k], uavs[l]) for k, l in conflict_count(paths, graph.policy)}

            assert temporal <= set(residual_conflicts(scenario, graph, kinds))


class TestLaggedEntryTimes:
    def test_two_uavs_always_separate(self, layout, graph, crossing_scenarios):
        rng = np.random.default_rng(3)
        crossing = 0
        for scenario in crossing_scenarios:
            kinds, paths = flown_paths(scenario, layout, graph)
            pairs = residual_conflicts(scenario, graph, kinds)
            times = lagged_entry_times(paths, pairs, graph.policy, 5.0, 0.02, rng)

            crossing += bool(conflict_count(paths, graph.policy))
            assert conflict_count(paths, graph.policy, times) == set()
        assert crossing > 0

    def test_lag_never_adds_conflicts(self, layout, graph):
        rng = np.random.default_rng(8)
        for scenario in enumerate_scenarios(3)[::40]:
            kinds, paths = flown_paths(scenario, layout, graph)
            pairs = residual_conflicts(scenario, graph, kinds)
            times = lagged_entry_times(paths, pairs, graph.policy, 5.0, 0.02, rng)

            lagged = conflict_count(paths, graph.policy, times)
            assert len(lagged) <= len(conflict_count(paths, graph.policy))

    def test_no_pairs_no_waiting(self, layout, graph):
        scenario = enumerate_scenarios(2)[0]
        _, paths = flown_paths(scenario, layout, graph)

        times = lagged_entry_times(paths, [], graph.policy, 5.0, 0.02, np.random.default_rng(0))

        assert times == dict.fromkeys(paths, 0.0)

    def test_longer_path_waits(self, layout, graph, crossing_scenarios):
        for scenario in crossing_scenarios:
            kinds, paths = flown_paths(scenario, layout, graph)
            (k, l), *_ = residual_conflicts(scenario, graph, kinds)
            if abs(paths[k].spec.length_m - paths[l].spec.length_m) < 1e-6:
                continue
            times = lagged_entry_times(
                paths, [(k, l)], graph.policy, 5.0, 0.02, np.random.default_rng(0)
            )
            longer = k if paths[k].spec.length_m > paths[l].spec.length_m else l

            assert [u for u, t in times.items() if t > 0] in ([], [longer])


class TestFixedLagStudy:
    def test_clears_every_two_uav_crossing(self, experiment, graph):
        config = McConfig(n_experiments=40, seed=5)

        lagged = fixed_lag_mc(config, experiment, graphs=(graph, None))
        unlagged = baseline_mc(config, experiment, graphs=(graph, None))

        assert lagged.counts == {0: 40}
        assert unlagged.mean > 0

    def test_not_worse_than_baseline(self, experiment, graph):
        three = experiment.for_n(3)
        picked = enumerate_scenarios(3)[::25]

        lagged = fixed_lag_mc(SMALL, three, targets=picked, graphs=(graph, None))
        unlagged = baseline_mc(SMALL, three, targets=picked, graphs=(graph, None))

        assert lagged.mean <= unlagged.mean


class TestRandomVelocities:
    def test_conflicts_bounded_by_pair_count(self, experiment, graph):
        three = experiment.for_n(3)
        picked = enumerate_scenarios(3)[::50]

        h = random_velocity_mc(SMALL, three, targets=picked, graphs=(graph, None))

        assert h.n_experiments == 30
        assert max(h.counts) <= math.comb(3, 2)

    def test_halving_dt_keeps_verdicts(self, layout, graph, crossing_scenarios):
        rng = np.random.default_rng(2024)
        for _ in range(100):
            scenario = crossing_scenarios[int(rng.integers(len(crossing_scenarios)))]
            _, paths = flown_paths(scenario, layout, graph)
            speeds = {u: float(rng.uniform(1.0, 5.0)) for u in paths}

            coarse = conflict_count(paths, graph.policy, speeds=speeds, dt_s=0.02)
            fine = conflict_count(paths, graph.policy, speeds=speeds, dt_s=0.01)
            assert coarse == fine


class TestPathUsage:
    def test_tally_sums_sweeps(self, experiment):
        table = MagicMock(
            sweeps=[MagicMock(path_usage={5: 2, 0: 1}), MagicMock(path_usage={5: 1})]
        )
        with patch("sphereabout.sensitivity.run_table", return_value=table):
            assert path_usage_tally(experiment) == {0: 1, 5: 3}

    def test_grid_defaults_to_served_paths(self, experiment):
        with patch(
            "sphereabout.sensitivity.path_usage_tally", return_value={0: 2}
        ) as tally:
            summaries = travel_time_grid(experiment, [13.0, 26.0], [5.0])

        assert [c.args[0].radius_m for c in tally.call_args_list] == [13.0, 26.0]
        assert [s.count for s in summaries] == [2, 2]
        assert summaries[1].mean_s == pytest.approx(
            candidate_paths(build_layout(26.0))[0].length_m / 5.0
        )
