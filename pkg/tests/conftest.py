import sys
from pathlib import Path

import numpy as np
import pytest

scripts_dir = Path(__file__).resolve().parent.parent / "scripts"
if str(scripts_dir) not in sys.path:
    sys.path.insert(0, str(scripts_dir))

from shapes import asymmetric_shape, cube_mesh  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_shape():
    """300 points of the asymmetric test body"""
    return asymmetric_shape(300, seed=3)


@pytest.fixture
def unit_cube():
    return cube_mesh()


@pytest.fixture
def tiny_sets(rng):
    """A handful of source and target points for brute-force oracles"""
    return rng.normal(size=(7, 3)) * 0.3, rng.normal(size=(5, 3)) * 0.3
