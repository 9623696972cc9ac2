"""Continuum/lattice bridges: cell-average discretization, the axis-difference
linear interpolation, and Littlewood-Paley blocks on the dual grid."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import erf

from .lattice import (
    LatticeField,
    LatticeGrid,
    MultiplierSymbol,
    apply_multiplier,
)

Evaluator = Callable[[Sequence[np.ndarray]], np.ndarray]
CellAverager = Callable[[LatticeGrid], np.ndarray]


class QuadratureError(RuntimeError):
    def __init__(self, cell, estimate):
        super().__init__(f"cell quadrature did not converge at cell {cell} (error estimate {estimate:.3e})")
        self.cell = cell
        self.estimate = estimate


@dataclass(frozen=True)
class ContinuumFunction:
    """A function on R^d, evaluated on broadcastable coordinate arrays.

    ``evaluator([x1, ..., xd])`` must broadcast like numpy ufuncs. When
    ``cell_average(grid)`` is given it returns the exact averages over the
    cells ``x + [0, h)^d`` in grid layout and is used by :func:`discretize`.
    """

    evaluator: Evaluator
    cell_average: Optional[CellAverager] = None
    label: str = ""
    params: dict = field(default_factory=dict)

    def __call__(self, coords) -> np.ndarray:
        return np.asarray(self.evaluator(coords))

    def on_grid(self, grid: LatticeGrid) -> np.ndarray:
        return np.broadcast_to(self(grid.points()), grid.shape).astype(complex)


def gaussian(d: int, a: float = 1.0, amp: complex = 1.0, center=None) -> ContinuumFunction:
    """``amp * exp(-a |y - center|^2)`` with erf-based exact cell averages."""
    c = np.zeros(d) if center is None else np.asarray(center, float)
    if c.shape != (d,):
        raise ValueError("center must have one entry per dimension")

    def ev(coords):
        r2 = sum((np.asarray(x) - c[i]) ** 2 for i, x in enumerate(coords))
        return amp * np.exp(-a * r2)

    sa = math.sqrt(a)

    def avg(grid: LatticeGrid):
        out = np.asarray(amp, complex)
        for i, x in enumerate(grid.points()):
            lo, hi = sa * (x - c[i]), sa * (x + grid.h - c[i])
            out = out * (math.sqrt(math.pi) / (2 * sa * grid.h)) * (erf(hi) - erf(lo))
        return np.broadcast_to(out, grid.shape).astype(complex)

    return ContinuumFunction(ev, avg, f"gaussian(a={a})", {"d": d, "a": a, "amp": amp, "center": c.tolist()})


def gaussian_sobolev_norm(d: int, a: float, s: float, amp: float = 1.0) -> float:
    """``||amp exp(-a|y|^2)||_{H^s(R^d)}`` from its radial Fourier integral."""
    from scipy.integrate import quad

    # f^(xi) = amp (pi/a)^{d/2} exp(-|xi|^2/(4a)); sphere area S_{d-1}
    area = 2 * math.pi ** (d / 2) / math.gamma(d / 2)
    c = amp**2 * (math.pi / a) ** d * area / (2 * math.pi) ** d
    val, _ = quad(lambda r: (1 + r * r) ** s * math.exp(-r * r / (2 * a)) * r ** (d - 1), 0, math.inf,
                  epsabs=0, epsrel=1e-13, limit=200)
    return math.sqrt(c * val)


# -- discretization d_h -----------------------------------------------------

def _gl(n):
    t, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (t + 1), 0.5 * w


def _cell_quadrature(f: ContinuumFunction, grid: LatticeGrid, n: int, rows: slice) -> np.ndarray:
    nodes, w = _gl(n)
    h, d = grid.h, grid.d
    x = grid.axis_points()
    coords = []
    for ax in range(d):
        xa = x[rows] if ax == 0 else x
        c = xa[:, None] + h * nodes[None, :]
        shape = [1] * (2 * d)
        shape[2 * ax], shape[2 * ax + 1] = c.shape
        coords.append(c.reshape(shape))
    vals = np.asarray(f(coords), complex)
    vals = np.broadcast_to(vals, np.broadcast_shapes(*(c.shape for c in coords)))
    for ax in reversed(range(d)):
        vals = np.tensordot(vals, w, axes=([2 * ax + 1], [0]))
    return vals


def discretize(f: ContinuumFunction, grid: LatticeGrid, order: int = 8, tol: float = 1e-9,
               use_analytic: bool = True) -> LatticeField:
    """Cell averages ``d_h f(x) = h^{-d} int_{x+[0,h)^d} f``.

    Without an analytic averager, tensor Gauss-Legendre of ``order`` points is
    compared against ``order - 2`` points; a gap above ``tol`` raises
    :class:`QuadratureError` naming the worst cell.
    """
    if use_analytic and f.cell_average is not None:
        return LatticeField(grid, f.cell_average(grid))
    out = np.empty(grid.shape, complex)
    per_row = max(1, grid.size // grid.m)
    budget = 1 << 22
    step = max(1, budget // (per_row * order**grid.d))
    for i0 in range(0, grid.m, step):
        rows = slice(i0, min(grid.m, i0 + step))
        hi = _cell_quadrature(f, grid, order, rows)
        lo = _cell_quadrature(f, grid, order - 2, rows)
        gap = np.abs(hi - lo)
        k = int(np.argmax(gap))
        if gap.flat[k] > tol:
            idx = np.unravel_index(k, gap.shape)
            raise QuadratureError((idx[0] + i0,) + tuple(int(j) for j in idx[1:]), float(gap.flat[k]))
        out[rows] = hi
    return LatticeField(grid, out)


# -- interpolation p_h ------------------------------------------------------

def interpolate(u: LatticeField, y) -> np.ndarray:
    """``p_h u`` at points ``y`` of shape ``(d,)`` or ``(n, d)``.

    Uses forward differences along each axis from the lower cell corner, with
    periodic neighbours at the box edge.
    """
    g = u.grid
    y = np.asarray(y, float)
    single = y.ndim == 1
    y = np.atleast_2d(y)
    if y.shape[1] != g.d:
        raise ValueError(f"points must have {g.d} coordinates")
    s = y / g.h + g.m // 2
    k = np.floor(s).astype(np.int64)
    frac = s - k
    k %= g.m
    v = u.values
    base = v[tuple(k.T)]
    out = base.copy()
    for i in range(g.d):
        kn = k.copy()
        kn[:, i] = (kn[:, i] + 1) % g.m
        out += (v[tuple(kn.T)] - base) * frac[:, i]
    return out[0] if single else out


def interpolate_to_grid(u: LatticeField, fine: LatticeGrid) -> LatticeField:
    """Sample ``p_h u`` on every point of a nested finer grid."""
    g = u.grid
    r = g.nests_in(fine)
    v = u.values
    frac = np.arange(r) / r

    def up(a):
        for ax in range(g.d):
            a = np.repeat(a, r, axis=ax)
        return a

    out = up(v)
    for i in range(g.d):
        shape = [1] * g.d
        shape[i] = fine.m
        w = np.tile(frac, g.m).reshape(shape)
        out += up(np.roll(v, -1, axis=i) - v) * w
    return LatticeField(fine, out)


# -- Littlewood-Paley -------------------------------------------------------

def _g(t):
    t = np.asarray(t, float)
    out = np.zeros_like(t)
    pos = t > 0
    out[pos] = np.exp(-1.0 / t[pos])
    return out


def psi(r):
    """Smooth radial step: 1 on ``[0, pi]``, 0 on ``[2 pi, inf)``."""
    r = np.asarray(r, float)
    a = _g((2 * math.pi - r) / math.pi)
    b = _g((r - math.pi) / math.pi)
    return a / (a + b)


def phi(xi_norm):
    return psi(xi_norm)


def eta(xi_norm):
    r = np.asarray(xi_norm, float)
    return psi(r) - psi(2 * r)


def check_dyadic(N: float) -> int:
    """Return ``k`` with ``N = 2^{-k}``, ``k >= 0``."""
    mant, ex = math.frexp(N)
    if N <= 0 or mant != 0.5 or ex > 1:
        raise ValueError(f"N={N} is not a dyadic number <= 1")
    return 1 - ex


@dataclass(frozen=True)
class LPCutoff:
    N: float

    def __post_init__(self):
        check_dyadic(self.N)

    def symbol(self, grid: LatticeGrid) -> MultiplierSymbol:
        r = grid.h * np.sqrt(grid.freq_norm2()) / self.N
        return MultiplierSymbol(grid, eta(r), "lp", {"N": self.N})

    def support(self, h: float) -> tuple:
        """Radii ``|xi|`` where the block can be nonzero."""
        return (0.5 * math.pi * self.N / h, 2 * math.pi * self.N / h)


def lp_project(u: LatticeField, N: float) -> LatticeField:
    return apply_multiplier(u, LPCutoff(N).symbol(u.grid))


def dyadic_levels(grid: LatticeGrid) -> list:
    """All ``N = 2^{-k}`` whose blocks meet a nonzero dual-grid frequency."""
    kmax = max(0, int(math.ceil(math.log2(grid.m))) - 1)
    return [2.0**-k for k in range(kmax + 1)]
