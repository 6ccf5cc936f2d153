import numpy as np
import pytest

from fdstokes.assembly import assemble_RT_parametric, assemble_TH
from fdstokes.geometry import make_geometry
from fdstokes.splines import build_space


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def cubic_space():
    return build_space(3, 4, 2)


@pytest.fixture
def random_spd(rng):
    """Factory for random SPD matrices a a^T + shift I."""

    def make(n, shift=None):
        a = rng.standard_normal((n, n))
        return a @ a.T + (n if shift is None else shift) * np.eye(n)

    return make


@pytest.fixture(scope="session")
def cube_th():
    """Taylor-Hood, p=2, two elements per direction, identity map."""
    return assemble_TH(2, 2)


@pytest.fixture(scope="session")
def annulus_th():
    return assemble_TH(2, 2, geometry=make_geometry("annulus"))


@pytest.fixture(scope="session")
def cube_rt():
    return assemble_RT_parametric(2, 2)
