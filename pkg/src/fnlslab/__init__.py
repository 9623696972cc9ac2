"""Numerical laboratory for the fractional nonlinear Schrodinger equation on hZ^d."""

from .lattice import (
    LatticeField,
    LatticeGrid,
    MultiplierSymbol,
    apply_multiplier,
    build_symbol,
    forward_transform,
    inverse_transform,
    lp_norm,
    sobolev_norm,
)

__version__ = "0.1.0"

__all__ = [
    "LatticeField",
    "LatticeGrid",
    "MultiplierSymbol",
    "apply_multiplier",
    "build_symbol",
    "forward_transform",
    "inverse_transform",
    "lp_norm",
    "sobolev_norm",
]
