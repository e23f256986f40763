"""Whole-sweep reproduction of the published table. Takes minutes; opt in with
SPHEREABOUT_FULL_SWEEP=1."""

import json
import logging
import os
from unittest.mock import patch

import numpy as np
import pytest

from sphereabout.assignment import assign_paths_oracle, solve_max_flow
from sphereabout.conflict import ConflictPolicy, build_conflict_graph
from sphereabout.experiments import (
    PUBLISHED_BLOCKS,
    ExperimentConfig,
    build_graphs,
    enumerate_scenarios,
    run_table,
)
from sphereabout.geometry import build_layout
from sphereabout.main import EXIT_OK, run
from sphereabout.reference import compare_to_reference
from sphereabout.sensitivity import (
    McConfig,
    baseline_mc,
    fixed_lag_mc,
    random_velocity_mc,
    target_scenarios,
)

pytestmark = pytest.mark.skipif(
    not os.getenv("SPHEREABOUT_FULL_SWEEP"),
    reason="SPHEREABOUT_FULL_SWEEP environment variable not set",
)

THREADS = int(os.getenv("SPHEREABOUT_THREADS", "4"))


def experiment_for(radius, d_min):
    return ExperimentConfig(radius_m=radius, d_min_m=d_min, policy=ConflictPolicy(d_min_m=d_min))


@pytest.fixture(scope="module")
def tables():
    return {
        block: run_table(experiment_for(*block), THREADS) for block in sorted(PUBLISHED_BLOCKS)
    }


class TestPublishedRows:
    def test_row_counts(self, tables):
        for run_ in tables.values():
            assert [r.scenarios for r in run_.rows] == [375, 2500, 9375, 18750, 15625]

    def test_partition(self, tables):
        for run_ in tables.values():
            for row in run_.rows:
                assert row.collisions + row.no_conflict + row.resolved == row.scenarios

    def test_collisions_grow_with_dmin(self, tables):
        for looser, tighter in zip(tables[(13.0, 3.0)].rows, tables[(13.0, 4.0)].rows):
            assert looser.collisions <= tighter.collisions

    def test_larger_sphere_collides_less(self, tables):
        for small, large in zip(tables[(13.0, 3.0)].rows, tables[(26.0, 3.0)].rows):
            assert large.collisions <= small.collisions

    def test_every_block_is_compared(self, tables):
        for (radius, d_min), run_ in tables.items():
            comparison = compare_to_reference(run_.rows, radius, d_min)
            assert comparison is not None
            assert [r.n_uavs for r in comparison.rows] == [2, 3, 4, 5, 6]


class TestReportFallback:
    def test_report_carries_deltas_and_angles(self, tables, tmp_path, caplog):
        config = tmp_path / "r13.toml"
        config.write_text("radius_m = 13\nd_min_m = 3\n")
        out = tmp_path / "table.csv"

        with (
            patch("sphereabout.main.run_table", return_value=tables[(13.0, 3.0)]),
            caplog.at_level(logging.WARNING),
        ):
            code = run(["table", "--config", str(config), "--out", str(out)])

        assert code == EXIT_OK
        report = json.loads((tmp_path / "table.csv.report.json").read_text())
        assert set(report["layout_angles_deg"]) == {"equatorial_offset", "polar_offset"}
        rows = report["reference"]["rows"]
        assert [r["n_uavs"] for r in rows] == [2, 3, 4, 5, 6]
        for r in rows:
            for key in (
                "collisions_delta",
                "no_conflict_delta",
                "resolved_delta",
                "avg_flow_delta",
                "within_band",
            ):
                assert key in r
        if not report["reference"]["passed"]:
            assert "misses the published band" in caplog.text


class TestSolverAgainstOracle:
    @pytest.mark.parametrize("n", [4, 5, 6])
    def test_random_scenarios(self, n):
        graph, _ = build_graphs(experiment_for(13.0, 3.0), THREADS)
        scenarios = enumerate_scenarios(n)
        rng = np.random.default_rng(1000 + n)
        for k in rng.choice(len(scenarios), size=200, replace=False):
            scenario = scenarios[int(k)]
            assert (
                solve_max_flow(scenario, graph).served_count
                == assign_paths_oracle(scenario, graph).served_count
            )


class TestConvergence:
    def test_halving_spacing(self):
        layout = build_layout(13.0)
        coarse = build_conflict_graph(layout, ConflictPolicy(d_min_m=3.0), THREADS)
        fine = build_conflict_graph(
            layout, ConflictPolicy(d_min_m=3.0, max_spacing_m=0.05), THREADS
        )

        finite = np.isfinite(coarse.min_dist) & np.isfinite(fine.min_dist)
        assert np.array_equal(np.isfinite(coarse.min_dist), np.isfinite(fine.min_dist))
        assert np.all(np.abs(coarse.min_dist - fine.min_dist)[finite] < 1e-3)
        for d_min in (3.0, 4.0, 5.0):
            assert coarse.with_threshold(d_min).conflict_set() == fine.with_threshold(
                d_min
            ).conflict_set()


class TestMonteCarlo:
    def test_lag_and_random_speeds(self):
        experiment = experiment_for(13.0, 3.0)
        config = McConfig()
        graphs = build_graphs(experiment, THREADS)
        targets = target_scenarios(config, experiment, *graphs)

        lagged = fixed_lag_mc(config, experiment, THREADS, targets, graphs)
        unlagged = baseline_mc(config, experiment, THREADS, targets, graphs)
        random_speeds = random_velocity_mc(config, experiment, THREADS, targets, graphs)

        assert lagged.n_experiments == unlagged.n_experiments == 3000
        assert lagged.mean < unlagged.mean
        assert random_speeds.fraction_zero > 0
        assert lagged.counts.get(0, 0) > 0
