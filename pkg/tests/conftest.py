import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from scyfi.core import PlrnnParams  # noqa: E402
from scyfi.oracle2d import Pwl2dParams  # noqa: E402


def random_params(rng, M, a_range=0.9, w_scale=0.6):
    W = rng.normal(0, w_scale, (M, M))
    np.fill_diagonal(W, 0.0)
    return PlrnnParams(rng.uniform(-a_range, a_range, M), W, rng.normal(0, 1, M))


def coexist_params(a_l=0.253, a_r=-2.83, h1=1.0):
    """Two-unit normal form whose reference point has a stable 2-cycle and 3-cycle."""
    return Pwl2dParams(a_l=a_l, a_r=a_r, b_l=-0.4, b_r=0.5, c=0.8, d=0.2, h1=h1, h2=0.0)


def tent(a_l, a_r, h=1.0):
    return PlrnnParams([[a_l]], [[a_r - a_l]], [h])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
