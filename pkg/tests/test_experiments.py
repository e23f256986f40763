"""Tests for experiments.py"""

import itertools

import pytest
from pydantic import ValidationError

from sphereabout.conflict import ConflictPolicy
from sphereabout.experiments import (
    ExperimentConfig,
    MetricsRow,
    compass_label,
    enumerate_scenarios,
    run_sweep,
    run_table,
    scenario_count,
    top_conflicting_flows,
)
from sphereabout.geometry import PathKind


class TestEnumerateScenarios:
    @pytest.mark.parametrize(
        "n, expected", [(2, 375), (3, 2500), (4, 9375), (5, 18750), (6, 15625)]
    )
    def test_counts(self, n, expected):
        assert len(enumerate_scenarios(n)) == expected
        assert scenario_count(n) == expected

    @pytest.mark.parametrize("n", [1, 7])
    def test_rejects_out_of_range(self, n):
        with pytest.raises(ValueError, match="n_uavs"):
            enumerate_scenarios(n)

    def test_canonical_order(self):
        first, second = enumerate_scenarios(2)[:2]

        assert str(first) == "1:x+_in->x+_out 2:x-_in->x-_out"
        assert str(second) == "1:x+_in->x+_out 2:x-_in->y+_out"

    def test_deterministic(self):
        assert enumerate_scenarios(3) == enumerate_scenarios(3)


class TestExperimentConfig:
    def test_policy_must_match(self):
        with pytest.raises(ValidationError, match="d_min_m"):
            ExperimentConfig(radius_m=13.0, d_min_m=3.0, policy=ConflictPolicy(d_min_m=4.0))

    def test_published_block(self, experiment):
        assert experiment.is_published_block


class TestMetricsRow:
    def test_rejects_broken_partition(self):
        with pytest.raises(ValidationError, match="partition"):
            MetricsRow(
                n_uavs=2,
                scenarios=375,
                collisions=0,
                no_conflict=300,
                resolved=70,
                avg_flow=2.0,
                path_load=(2.0, 0.0, 0.0),
            )

    def test_rejects_loads_not_summing(self):
        with pytest.raises(ValidationError, match="path loads"):
            MetricsRow(
                n_uavs=2,
                scenarios=375,
                collisions=0,
                no_conflict=314,
                resolved=61,
                avg_flow=2.0,
                path_load=(1.9, 0.0, 0.0),
            )


class TestRunSweep:
    def test_two_uavs(self, experiment, graph):
        sweep = run_sweep(experiment, graph)
        row = sweep.row

        assert row.scenarios == 375
        assert row.collisions + row.no_conflict + row.resolved == 375
        assert row.collisions == 16
        assert row.avg_flow == pytest.approx(734 / 375)
        assert sum(sweep.path_usage.values()) == round(row.avg_flow * 375)
        assert len(sweep.collision_indices) == row.collisions

    def test_two_uav_collisions_are_equatorial_crossings(self, experiment, graph):
        scenarios = enumerate_scenarios(2)
        for k in run_sweep(experiment, graph).collision_indices:
            first, second = scenarios[k].demands
            for d in (first, second):
                assert not d.entry.flow_direction.is_axial
                assert not d.exit.flow_direction.is_axial
            for a, b in itertools.product(PathKind, repeat=2):
                m = graph.index_of(first.entry, first.exit, a)
                n = graph.index_of(second.entry, second.exit, b)
                assert graph.in_conflict(m, n), (scenarios[k], a, b)

    def test_worker_count_does_not_change_results(self, experiment, graph):
        serial = run_sweep(experiment, graph)
        parallel = run_sweep(experiment, graph, threads=2)

        assert parallel == serial

    def test_run_table_rows(self, experiment, graph):
        run = run_table(experiment, n_values=(2, 3), graphs=(graph, None))

        assert [r.n_uavs for r in run.rows] == [2, 3]
        assert run.sweep(3).row.scenarios == 2500
        with pytest.raises(KeyError):
            run.sweep(6)


class TestTopConflictingFlows:
    def test_ranked(self, graph):
        config = ExperimentConfig(
            radius_m=13.0, d_min_m=3.0, n_uavs=4, policy=graph.policy
        )
        sweep = run_sweep(config, graph)
        ranked = top_conflicting_flows(config, sweep)

        counts = [count for _, count in ranked]
        assert counts == sorted(counts, reverse=True)
        for (a, b), _ in ranked:
            assert a <= b

    def test_compass_label(self):
        assert compass_label(("x+->y-", "z+->z+")) == "eastbound->southbound & climbing->climbing"
