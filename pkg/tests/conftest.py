import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from fourthnls.spectral import Field, Grid

settings.register_profile(
    "default",
    max_examples=25,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
    derandomize=True,
)
settings.load_profile("default")


def random_field(grid: Grid, seed: int, band: int | None = None) -> Field:
    """Complex random field; band-limited to modes ``|m| <= band`` when given."""
    rng = np.random.default_rng(seed)
    spec = rng.standard_normal(grid.shape) + 1j * rng.standard_normal(grid.shape)
    if band is not None:
        mask = np.ones(grid.shape, dtype=bool)
        for ax, m in enumerate(grid.mode_indices):
            shape = [1] * grid.dim
            shape[ax] = -1
            mask &= np.abs(m).reshape(shape) <= band
        spec = spec * mask
    return Field.from_spectrum(grid, spec)


def rel(a, b) -> float:
    a = np.asarray(a)
    b = np.asarray(b)
    return float(np.linalg.norm((a - b).ravel()) / np.linalg.norm(b.ravel()))


@pytest.fixture
def grid1():
    return Grid(1, 256, 20.0)


@pytest.fixture
def grid2():
    return Grid(2, 64, 8.0)
