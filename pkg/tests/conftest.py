import os

import numpy as np
import pytest

from coveragemarl.CoverageGrid import CoverageEnvironment, GridSpec, parse_field_mask


SIM3_MASK = '\n'.join(['.......',
                       '.##.##.',
                       '.#####.',
                       '..###..',
                       '..###..',
                       '...#...',
                       '.......'])

# Footprints tiling SIM3_MASK at altitude 1 without overlap
SIM3_TILING = ((2, 2, 1), (5, 2, 1), (3, 5, 1))


def pytest_collection_modifyitems(config, items):
    if os.environ.get('COVERAGE_MARL_SLOW') == '1': return
    skip = pytest.mark.skip(reason="long run, set COVERAGE_MARL_SLOW=1")
    for item in items:
        if 'slow' in item.keywords: item.add_marker(skip)


@pytest.fixture
def rng():
    return np.random.default_rng(20240501)

@pytest.fixture
def grid775():
    return GridSpec(7, 7, 5)

@pytest.fixture
def sim3_env(grid775):
    return CoverageEnvironment(grid775, parse_field_mask(SIM3_MASK, grid775), 3, reward=0.1)

@pytest.fixture
def tiny2_env():
    grid = GridSpec(3, 3, 2, 0.5, 0.5)
    return CoverageEnvironment(grid, parse_field_mask('...\n#.#\n...\n', grid), 2, reward=0.1)

@pytest.fixture
def tiny1_env():
    grid = GridSpec(5, 5, 3)
    field = parse_field_mask('.....\n..#..\n.###.\n..#..\n.....\n', grid)
    return CoverageEnvironment(grid, field, 1, reward=0.1)
