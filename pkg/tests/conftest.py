import numpy as np
import pytest

from fnlslab.lattice import LatticeField, LatticeGrid


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_field(grid: LatticeGrid, rng) -> LatticeField:
    v = rng.standard_normal(grid.shape) + 1j * rng.standard_normal(grid.shape)
    return LatticeField(grid, v)


def direct_forward(u: LatticeField) -> np.ndarray:
    """F_h by explicit summation over every (x, xi) pair."""
    g = u.grid
    x = g.axis_points()
    k = g.axis_freqs()
    E = np.exp(-1j * np.outer(k, x))  # [xi, x]
    out = u.values
    for ax in range(g.d):
        out = np.moveaxis(np.tensordot(E, np.moveaxis(out, ax, 0), axes=(1, 0)), 0, ax)
    return g.h**g.d * out


def direct_inverse(f: np.ndarray, g: LatticeGrid) -> np.ndarray:
    x = g.axis_points()
    k = g.axis_freqs()
    E = np.exp(1j * np.outer(x, k))
    out = f
    for ax in range(g.d):
        out = np.moveaxis(np.tensordot(E, np.moveaxis(out, ax, 0), axes=(1, 0)), 0, ax)
    return (g.dxi / (2 * np.pi)) ** g.d * out
