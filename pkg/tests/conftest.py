"""Pytest configuration."""

import pytest

from sphereabout.conflict import ConflictPolicy, build_conflict_graph
from sphereabout.experiments import ExperimentConfig
from sphereabout.geometry import build_layout


@pytest.fixture(scope="session")
def layout():
    return build_layout(13.0)


@pytest.fixture(scope="session")
def policy():
    return ConflictPolicy(d_min_m=3.0)


@pytest.fixture(scope="session")
def graph(layout, policy):
    return build_conflict_graph(layout, policy)


@pytest.fixture(scope="session")
def experiment(policy):
    return ExperimentConfig(radius_m=13.0, d_min_m=3.0, n_uavs=2, policy=policy)
