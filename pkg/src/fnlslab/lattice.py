"""Lattice substrate: grids, fields, scaled discrete Fourier transforms,
lattice norms and Fourier multipliers on a periodic box of hZ^d.

Conventions
-----------
Physical points are ``x = h*k`` with ``k`` in ``[-m/2, m/2)`` along each axis,
so the box is ``[-L, L)^d`` with ``m*h = 2L``.  The dual grid has spacing
``dxi = pi/L`` and covers ``[-pi/h, pi/h)``.  Both sides are stored in natural
order (negative coordinates first, zero at index ``m//2``).

The transform pair is::

    F_h u(xi)      = h^d     sum_x  u(x) exp(-i x.xi)
    F_h^{-1} f(x)  = (2pi)^-d sum_xi f(xi) exp(i x.xi) dxi^d

which makes ``||u||_{L^2_h}^2 = (2pi)^-d dxi^d sum |F_h u|^2`` exact.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import scipy.fft as sfft

PHYSICAL = "physical"
FREQUENCY = "frequency"


class GridMismatchError(ValueError):
    pass


def _is_pow2(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class LatticeGrid:
    """Truncated periodic lattice ``h*Z^d`` with ``m`` points per axis."""

    d: int
    h: float
    m: int

    def __post_init__(self):
        if self.d not in (1, 2, 3):
            raise ValueError(f"dimension must be 1, 2 or 3, got {self.d}")
        if not self.h > 0:
            raise ValueError(f"spacing must be positive, got {self.h}")
        if not (_is_pow2(self.m) and self.m >= 8):
            raise ValueError(f"points per axis must be a power of two >= 8, got {self.m}")
        object.__setattr__(self, "h", float(self.h))

    @classmethod
    def from_box(cls, d: int, h: float, L: float) -> "LatticeGrid":
        m = 2 * L / h
        if abs(m - round(m)) > 1e-9 * m:
            raise ValueError(f"2L/h = {m} is not an integer")
        return cls(d, h, int(round(m)))

    @property
    def L(self) -> float:
        return 0.5 * self.m * self.h

    @property
    def shape(self) -> tuple:
        return (self.m,) * self.d

    @property
    def size(self) -> int:
        return self.m**self.d

    @property
    def dxi(self) -> float:
        return 2 * math.pi / (self.m * self.h)

    @property
    def cell_volume(self) -> float:
        return self.h**self.d

    def axis_points(self) -> np.ndarray:
        return self.h * (np.arange(self.m) - self.m // 2)

    def axis_freqs(self) -> np.ndarray:
        return self.dxi * (np.arange(self.m) - self.m // 2)

    def _broadcast(self, ax: np.ndarray) -> list:
        out = []
        for i in range(self.d):
            shape = [1] * self.d
            shape[i] = self.m
            out.append(ax.reshape(shape))
        return out

    def points(self) -> list:
        """Open (broadcastable) coordinate arrays, one per axis."""
        return self._broadcast(self.axis_points())

    def freqs(self) -> list:
        return self._broadcast(self.axis_freqs())

    def freq_norm2(self) -> np.ndarray:
        return sum(k**2 for k in self.freqs())

    def refine(self, factor: int) -> "LatticeGrid":
        """Same box, spacing divided by ``factor``."""
        return LatticeGrid(self.d, self.h / factor, self.m * factor)

    def nests_in(self, fine: "LatticeGrid") -> int:
        """Refinement ratio ``h / fine.h`` if ``fine`` refines this grid on the same box."""
        if fine.d != self.d:
            raise GridMismatchError("dimension mismatch")
        r = self.h / fine.h
        if abs(r - round(r)) > 1e-9 or round(r) < 1 or abs(fine.L - self.L) > 1e-9 * self.L:
            raise GridMismatchError(f"grid h={fine.h}, L={fine.L} does not nest h={self.h}, L={self.L}")
        return int(round(r))

    def as_dict(self) -> dict:
        return {"d": self.d, "h": self.h, "m": self.m, "L": self.L}


@dataclass(frozen=True)
class LatticeField:
    grid: LatticeGrid
    values: np.ndarray
    side: str = PHYSICAL

    def __post_init__(self):
        if self.side not in (PHYSICAL, FREQUENCY):
            raise ValueError(f"side must be '{PHYSICAL}' or '{FREQUENCY}'")
        v = np.asarray(self.values, dtype=np.complex128)
        if v.size != self.grid.size:
            raise ValueError(f"expected {self.grid.size} values, got {v.size}")
        object.__setattr__(self, "values", v.reshape(self.grid.shape))

    def with_values(self, values) -> "LatticeField":
        return LatticeField(self.grid, values, self.side)

    def __add__(self, other):
        _check_same(self, other)
        return self.with_values(self.values + other.values)

    def __sub__(self, other):
        _check_same(self, other)
        return self.with_values(self.values - other.values)

    def __mul__(self, c):
        return self.with_values(self.values * c)

    __rmul__ = __mul__


def _check_same(a: LatticeField, b: LatticeField):
    if a.grid != b.grid:
        raise GridMismatchError(f"{a.grid} != {b.grid}")
    if a.side != b.side:
        raise ValueError("fields live on different sides of the transform")


@dataclass(frozen=True)
class MultiplierSymbol:
    grid: LatticeGrid
    values: np.ndarray
    label: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != self.grid.shape:
            v = np.broadcast_to(v, self.grid.shape)
        if not np.all(np.isfinite(v)):
            raise ValueError(f"symbol '{self.label}' has non-finite values")
        object.__setattr__(self, "values", v)

    def fft_order(self) -> np.ndarray:
        """Values rearranged to the unshifted order used by raw FFT routines."""
        return sfft.ifftshift(self.values)


# -- summation -------------------------------------------------------------

def compensated_sum(a) -> float:
    """Sum with error bounded independently of the array length.

    Blocks are reduced by numpy's pairwise summation, the block totals by an
    exactly rounded ``math.fsum``.
    """
    a = np.ravel(np.asarray(a))
    if np.iscomplexobj(a):
        return complex(compensated_sum(a.real), compensated_sum(a.imag))
    n = a.size
    if n <= 4096:
        return math.fsum(a.tolist())
    k = 2048
    nb = n // k
    parts = a[: nb * k].reshape(nb, k).sum(axis=1).tolist()
    parts.append(float(a[nb * k:].sum()))
    return math.fsum(parts)


# -- transforms ------------------------------------------------------------

def _fwd(values: np.ndarray, h: float, d: int) -> np.ndarray:
    return h**d * sfft.fftshift(sfft.fftn(sfft.ifftshift(values)))


def _inv(values: np.ndarray, h: float, d: int) -> np.ndarray:
    return h ** (-d) * sfft.fftshift(sfft.ifftn(sfft.ifftshift(values)))


def forward_transform(u: LatticeField) -> LatticeField:
    if u.side != PHYSICAL:
        raise ValueError("forward_transform expects a physical-side field")
    g = u.grid
    return LatticeField(g, _fwd(u.values, g.h, g.d), FREQUENCY)


def inverse_transform(f: LatticeField) -> LatticeField:
    if f.side != FREQUENCY:
        raise ValueError("inverse_transform expects a frequency-side field")
    g = f.grid
    return LatticeField(g, _inv(f.values, g.h, g.d), PHYSICAL)


# -- norms -----------------------------------------------------------------

def lp_norm(u: LatticeField, p: float = 2.0) -> float:
    """``h^{d/p} (sum |u|^p)^{1/p}``; ``p = inf`` gives the supremum."""
    if u.side != PHYSICAL:
        raise ValueError("lp_norm expects a physical-side field")
    if not p >= 1:
        raise ValueError(f"p must be >= 1, got {p}")
    a = np.abs(u.values)
    if math.isinf(p):
        return float(a.max())
    g = u.grid
    if p == 2:
        s = compensated_sum(a * a)
    else:
        s = compensated_sum(a**p)
    return g.h ** (g.d / p) * s ** (1.0 / p)


def dual_l2_norm(f: LatticeField, weight: Optional[np.ndarray] = None) -> float:
    """``((2pi)^-d dxi^d sum w |f|^2)^{1/2}`` over the dual grid."""
    g = f.grid
    a = np.abs(f.values) ** 2
    if weight is not None:
        a = a * weight
    return math.sqrt((g.dxi / (2 * math.pi)) ** g.d * compensated_sum(a))


def sobolev_norm(u: LatticeField, s: float) -> float:
    """``||<nabla_h>^s u||_{L^2_h}`` with ``<xi> = (1 + |xi|^2)^{1/2}``."""
    uh = forward_transform(u)
    if s == 0:
        return dual_l2_norm(uh)
    return dual_l2_norm(uh, (1.0 + u.grid.freq_norm2()) ** s)


# -- symbols and multipliers ------------------------------------------------

def lattice_sin2(grid: LatticeGrid) -> np.ndarray:
    """``sum_i (4/h^2) sin^2(h xi_i / 2)`` on the dual grid."""
    h = grid.h
    return sum((4.0 / h**2) * np.sin(0.5 * h * k) ** 2 for k in grid.freqs())


def omega_h_at(xi, h: float, alpha: float) -> np.ndarray:
    """Lattice symbol at arbitrary frequencies (last axis = components)."""
    xi = np.asarray(xi, dtype=float)
    return np.sum((4.0 / h**2) * np.sin(0.5 * h * xi) ** 2, axis=-1) ** (0.5 * alpha)


def _check_alpha(alpha):
    if alpha is None or not (0 < alpha <= 2):
        raise ValueError(f"alpha must lie in (0, 2], got {alpha}")


def build_symbol(grid: LatticeGrid, alpha: Optional[float] = None, kind: str = "omega_h",
                 s: Optional[float] = None) -> MultiplierSymbol:
    """Precompute a real Fourier symbol on the dual grid.

    kinds: ``omega_h`` (lattice fractional Laplacian), ``omega_continuum``
    (``|xi|^alpha``), ``bracket`` (``<xi>^s``), ``lattice_grad``
    (``|nabla_h|^s``, i.e. ``omega_h^{s/alpha}``).
    """
    if kind == "omega_h":
        _check_alpha(alpha)
        vals = lattice_sin2(grid) ** (0.5 * alpha)
    elif kind == "omega_continuum":
        _check_alpha(alpha)
        vals = grid.freq_norm2() ** (0.5 * alpha)
    elif kind == "bracket":
        if s is None:
            raise ValueError("bracket symbol needs s")
        vals = (1.0 + grid.freq_norm2()) ** (0.5 * s)
    elif kind == "lattice_grad":
        if s is None:
            raise ValueError("lattice_grad symbol needs s")
        base = lattice_sin2(grid)
        if s < 0:
            raise ValueError("negative powers of |nabla_h| are singular at xi = 0")
        vals = base ** (0.5 * s)
    else:
        raise ValueError(f"unknown symbol kind '{kind}'")
    return MultiplierSymbol(grid, vals, kind, {"alpha": alpha, "s": s})


def apply_multiplier(u: LatticeField, sym: MultiplierSymbol,
                     f: Optional[Callable[[np.ndarray], np.ndarray]] = None) -> LatticeField:
    """``F_h^{-1} { f(sym) F_h u }``; ``f`` defaults to the identity."""
    if u.grid != sym.grid:
        raise GridMismatchError(f"field grid {u.grid} != symbol grid {sym.grid}")
    if u.side != PHYSICAL:
        raise ValueError("apply_multiplier expects a physical-side field")
    g = u.grid
    mult = sym.values if f is None else f(sym.values)
    # the shifted transform pair cancels; work in raw FFT order
    uh = sfft.fftn(sfft.ifftshift(u.values))
    uh *= sfft.ifftshift(mult)
    return LatticeField(g, sfft.fftshift(sfft.ifftn(uh)), PHYSICAL)


def discrete_laplacian(u: LatticeField) -> LatticeField:
    """Second-difference stencil ``Delta_h`` with periodic neighbours."""
    v = u.values
    out = np.zeros_like(v)
    for ax in range(u.grid.d):
        out += np.roll(v, 1, axis=ax) + np.roll(v, -1, axis=ax) - 2 * v
    return u.with_values(out / u.grid.h**2)


# -- binary dumps ------------------------------------------------------------

def save_field(u: LatticeField, path, label: str = "") -> Path:
    """Write ``path`` (little-endian float64 re/im pairs, row-major) and ``path.json``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.ascontiguousarray(u.values, dtype="<c16").tofile(path)
    meta = dict(u.grid.as_dict(), side=u.side, label=label)
    Path(str(path) + ".json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    return path


def load_field(path) -> LatticeField:
    path = Path(path)
    meta = json.loads(Path(str(path) + ".json").read_text())
    grid = LatticeGrid(int(meta["d"]), float(meta["h"]), int(meta["m"]))
    if abs(meta["L"] - grid.L) > 1e-12 * grid.L:
        raise ValueError("sidecar L inconsistent with m*h/2")
    vals = np.fromfile(path, dtype="<c16")
    return LatticeField(grid, vals, meta["side"])
