"""Shared fixtures: the default humanoid and small synthetic scenes.

Scene fixtures are session-scoped because generating a scene builds a
knot-per-frame truth spline, which dominates collection time otherwise.
"""

import numpy as np
import pytest

from physmo import build_default_humanoid, generate_synthetic


@pytest.fixture(scope="session")
def skel():
    return build_default_humanoid()


@pytest.fixture(scope="session")
def standing_scene():
    return generate_synthetic("standing_sway", duration=4.0, seed=0)


@pytest.fixture(scope="session")
def squat_scene():
    return generate_synthetic("squat", duration=4.0, seed=0)


@pytest.fixture(scope="session")
def hop_scene():
    return generate_synthetic("ballistic_hop", duration=4.0, seed=0)


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
