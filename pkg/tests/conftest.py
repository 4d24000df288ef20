"""Shared fixtures for the stagger_mesh tests."""

import random

import pytest

from stagger_mesh.pattern_engine import build_table
from stagger_mesh.primal_grid import PrimalGrid, random_refinement


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow convergence and census tests")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: level 5+ grids (run with --runslow)")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(scope="session")
def table2():
    """Complete 2D pattern table."""
    return build_table(2)


@pytest.fixture(scope="session")
def table3():
    """Complete 3D pattern table."""
    return build_table(3)


@pytest.fixture
def graded_grid_3d():
    """Small randomly refined graded 3D grid."""
    return random_refinement(PrimalGrid.uniform(3, 1, max_level=3), random.Random(7), rounds=2)


@pytest.fixture
def graded_grid_2d():
    """Randomly refined graded 2D grid."""
    return random_refinement(PrimalGrid.uniform(2, 1, max_level=4), random.Random(11), rounds=3)
