import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from ismpc.bench import get_fixture, random_stable_plant  # noqa: E402
from ismpc.palm import PartitionSpec  # noqa: E402
from ismpc.synthesis import design_controller  # noqa: E402

PLANT_SEEDS = (0, 1, 2, 3)


def three_slabs(system, center=1.2):
    theta = np.zeros(system.dim)
    theta[0] = 1.0
    return PartitionSpec(theta, [0.0, center, -center])


@pytest.fixture(scope="session")
def plant_designs():
    """``(system, design, model)`` for the randomized stable test plants."""
    out = []
    for seed in PLANT_SEEDS:
        system = random_stable_plant(seed)
        design, model = design_controller(system, three_slabs(system))
        out.append((system, design, model))
    return out


@pytest.fixture(scope="session")
def pendulum_fixture():
    return get_fixture("pendulum")


@pytest.fixture(scope="session")
def chua_fixture():
    return get_fixture("chua")
