"""Shared fixtures: small hand-built systems used across the suite."""

import numpy as np
import pytest

from blockswe.grid import (
    Block,
    GridLevel,
    InitialCondition,
    NestedGridSystem,
    SimulationConfig,
)


def flat_block(block_id, origin, ni, nj, depth, manning_n=0.025):
    return Block(block_id=block_id, origin=origin, ni=ni, nj=nj,
                 h=np.full((ni, nj), float(depth)), manning_n=manning_n)


@pytest.fixture
def single_level_system():
    """One closed 24x20 block, 10 m cells, 50 m deep."""
    return NestedGridSystem(levels=[
        GridLevel(1, 10.0, [flat_block(1, (0.0, 0.0), 24, 20, 50.0)])])


@pytest.fixture
def identity_nested_system():
    """A child exactly coincident with its 3x-coarser parent block."""
    return NestedGridSystem(levels=[
        GridLevel(1, 9.0, [flat_block(1, (0.0, 0.0), 8, 6, 8.0)]),
        GridLevel(2, 3.0, [flat_block(2, (0.0, 0.0), 24, 18, 8.0)]),
    ])


@pytest.fixture
def two_parent_system():
    """Two abutting parent blocks with one child straddling their seam.

    Parents: 9 m cells, each 6x6, chained in x.  Child: 3 m cells, 18x12,
    spanning parent columns 2..8 (the seam sits at parent column 6).
    """
    return NestedGridSystem(levels=[
        GridLevel(1, 9.0, [flat_block(1, (0.0, 0.0), 6, 6, 8.0),
                           flat_block(2, (54.0, 0.0), 6, 6, 8.0)]),
        GridLevel(2, 3.0, [flat_block(3, (18.0, 9.0), 18, 12, 8.0)]),
    ])


@pytest.fixture
def chain_level_system():
    """Three abutting single-level blocks (halo-exchange workhorse)."""
    return NestedGridSystem(levels=[
        GridLevel(1, 10.0, [flat_block(1, (0.0, 0.0), 8, 10, 40.0),
                            flat_block(2, (80.0, 0.0), 12, 10, 40.0),
                            flat_block(3, (220.0, 0.0), 6, 10, 40.0)])])


@pytest.fixture
def default_settings():
    return SimulationConfig(dt=0.2)


def hump_settings(amplitude, sigma, center, dt=0.2):
    return SimulationConfig(dt=dt, initial=InitialCondition(
        kind="gaussian", amplitude=amplitude, sigma=sigma, center=center))
