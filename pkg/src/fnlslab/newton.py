"""Newton polygons of two-variable phases, Newton distance, principal faces,
the root-multiplicity adaptedness test and the resulting decay pairs.

All outputs are exact: exponents are integers, coefficients are kept as
``Fraction`` and the one-variable root analysis runs in sympy over Q.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Optional

import numpy as np
import sympy

UNKNOWN = "unknown"


def _frac(c) -> Fraction:
    if isinstance(c, Fraction):
        return c
    if isinstance(c, str):
        return Fraction(c.strip())
    return Fraction(c)


@dataclass(frozen=True)
class TaylorSupport2D:
    """Finite map ``(g1, g2) -> s_g`` of a phase vanishing to second order."""

    terms: dict

    def __post_init__(self):
        clean = {}
        for g, c in dict(self.terms).items():
            g1, g2 = (int(x) for x in g)
            if (g1, g2) != tuple(g) or g1 < 0 or g2 < 0:
                raise ValueError(f"bad multi-index {g}")
            if g1 + g2 <= 1:
                raise ValueError(f"term {g} violates S(0) = 0, grad S(0) = 0")
            c = _frac(c)
            if c != 0:
                clean[(g1, g2)] = clean.get((g1, g2), Fraction(0)) + c
        clean = {g: c for g, c in clean.items() if c != 0}
        if not clean:
            raise ValueError("empty Taylor support")
        object.__setattr__(self, "terms", dict(sorted(clean.items())))

    @property
    def support(self) -> list:
        return list(self.terms)

    def with_term(self, g, c) -> "TaylorSupport2D":
        t = dict(self.terms)
        t[tuple(g)] = t.get(tuple(g), Fraction(0)) + _frac(c)
        return TaylorSupport2D(t)

    @classmethod
    def parse(cls, text: str) -> "TaylorSupport2D":
        """Lines of ``coeff g1 g2``; ``#`` starts a comment."""
        terms: dict = {}
        for n, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 3:
                raise ValueError(f"line {n}: expected 'coeff g1 g2', got {line!r}")
            g = (int(parts[1]), int(parts[2]))
            terms[g] = terms.get(g, Fraction(0)) + _frac(parts[0])
        return cls(terms)

    @classmethod
    def load(cls, path) -> "TaylorSupport2D":
        return cls.parse(Path(path).read_text())

    def as_sympy(self, x, y):
        return sum(sympy.Rational(c.numerator, c.denominator) * x**g1 * y**g2 for (g1, g2), c in self.terms.items())

    def __str__(self):
        return " + ".join(f"{c}*x^{g1}*y^{g2}" for (g1, g2), c in self.terms.items())


@dataclass(frozen=True)
class Face:
    kind: str  # vertex | edge | ray
    points: tuple  # vertex, edge endpoints, or ray anchor
    line: Optional[tuple] = None  # (a, b, c) with a x + b y = c
    direction: Optional[tuple] = None  # ray direction

    @property
    def compact(self) -> bool:
        return self.kind != "ray"

    @property
    def dimension(self) -> int:
        return 0 if self.kind == "vertex" else 1

    def contains(self, g) -> bool:
        g1, g2 = g
        if self.kind == "vertex":
            return tuple(g) == self.points[0]
        a, b, c = self.line
        if a * g1 + b * g2 != c:
            return False
        if self.kind == "edge":
            (x1, _), (x2, _) = self.points
            return x1 <= g1 <= x2
        (x0, y0), (dx, dy) = self.points[0], self.direction
        return (g1 - x0) * dx >= 0 and (g2 - y0) * dy >= 0

    def as_dict(self) -> dict:
        return {"kind": self.kind, "points": [list(p) for p in self.points],
                "line": list(self.line) if self.line else None, "compact": self.compact}


def _cross(o, a, b):
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def _line(p, q):
    """Integer ``(a, b, c)`` with ``a, b >= 0`` and ``a x + b y = c`` through p, q."""
    a, b = q[1] - p[1], p[0] - q[0]
    if a < 0 or (a == 0 and b < 0):
        a, b = -a, -b
    g = math.gcd(a, b)
    a, b = a // g, b // g
    return (a, b, a * p[0] + b * p[1])


@dataclass
class NewtonPolyhedron2D:
    support: TaylorSupport2D
    hull_vertices: list
    edges: list
    d_S: Fraction = field(default=Fraction(0))
    principal_face: Optional[Face] = None
    k_S: int = 0
    adapted: object = UNKNOWN
    decay: object = UNKNOWN

    def as_dict(self) -> dict:
        dec = self.decay
        return {
            "polynomial": str(self.support),
            "hull_vertices": [list(v) for v in self.hull_vertices],
            "edges": [f.as_dict() for f in self.edges],
            "d_S": str(self.d_S),
            "d_S_float": float(self.d_S),
            "principal_face": self.principal_face.as_dict() if self.principal_face else None,
            "k_S": self.k_S,
            "adapted": self.adapted,
            "decay": [str(dec[0]), dec[1]] if isinstance(dec, tuple) else dec,
        }

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2)


def _staircase(points) -> list:
    """Vertices of the lower-left boundary of ``conv(points + R^2_+)``."""
    best: dict = {}
    for x, y in points:
        best[x] = min(y, best.get(x, y))
    pts = sorted(best.items())
    # keep only points not dominated from the left
    stair = []
    for p in pts:
        if not stair or p[1] < stair[-1][1]:
            stair.append(p)
    hull: list = []
    for p in stair:
        while len(hull) >= 2 and _cross(hull[-2], hull[-1], p) <= 0:
            hull.pop()
        hull.append(p)
    return hull


def build_polyhedron(S: TaylorSupport2D) -> NewtonPolyhedron2D:
    verts = _staircase(S.support)
    edges = [Face("edge", (p, q), _line(p, q)) for p, q in zip(verts, verts[1:])]
    P = NewtonPolyhedron2D(S, verts, edges)
    P.principal_face, P.d_S = _principal(P)
    P.k_S = 2 - P.principal_face.dimension
    P.adapted = adapted_check(S, P)
    P.decay = _decay(P)
    return P


def _principal(P: NewtonPolyhedron2D):
    verts = P.hull_vertices
    for v in verts:
        if v[0] == v[1]:
            return Face("vertex", (v,)), Fraction(v[0])
    for e in P.edges:
        a, b, c = e.line
        t = Fraction(c, a + b)
        if e.points[0][0] < t < e.points[1][0]:
            return e, t
    (xl, yl), (xb, yb) = verts[0], verts[-1]
    if xl > yl:
        return Face("ray", ((xl, yl),), (1, 0, xl), (0, 1)), Fraction(xl)
    if yb > xb:
        return Face("ray", ((xb, yb),), (0, 1, yb), (1, 0)), Fraction(yb)
    raise AssertionError("diagonal misses the Newton polygon boundary")


def newton_distance(P: NewtonPolyhedron2D) -> Fraction:
    return P.d_S


def principal_face(P: NewtonPolyhedron2D) -> Face:
    return P.principal_face


def restrict(S: TaylorSupport2D, face: Face) -> TaylorSupport2D:
    return TaylorSupport2D({g: c for g, c in S.terms.items() if face.contains(g)})


def _max_real_root_multiplicity(poly) -> int:
    """Largest multiplicity of a nonzero real root of a univariate polynomial."""
    y = poly.gens[0]
    worst = 0
    _, factors = poly.sqf_list()
    for f, mult in factors:
        f = sympy.Poly(f, y)
        while f.degree() > 0 and f.eval(0) == 0:
            f = sympy.Poly(sympy.quo(f.as_expr(), y), y)
        if f.degree() > 0 and f.count_roots() > 0:
            worst = max(worst, mult)
    return worst


def adapted_check(S: TaylorSupport2D, P: Optional[NewtonPolyhedron2D] = None):
    """``True`` / ``False`` from the root-multiplicity criterion on ``S_pi(+-1, y)``;
    ``"unknown"`` when the principal face is not compact."""
    P = P or build_polyhedron(S)
    face = P.principal_face
    if not face.compact:
        return UNKNOWN
    x, y = sympy.symbols("x y")
    Spi = restrict(S, face).as_sympy(x, y)
    for s in (1, -1):
        poly = sympy.Poly(Spi.subs(x, s), y)
        if poly.is_zero:
            return False
        if _max_real_root_multiplicity(poly) >= P.d_S:
            return False
    return True


def _decay(P: NewtonPolyhedron2D):
    if P.adapted is not True:
        return UNKNOWN
    # log power: codimension of the principal face minus one, once d_S > 1
    p = P.k_S - 1 if P.d_S > 1 else 0
    return (Fraction(-1) / P.d_S, p)


def decay_pair(S: TaylorSupport2D):
    """``(-1/d_S, p)`` in certified adapted coordinates, else ``"unknown"``."""
    return build_polyhedron(S).decay


def monomial_decay(k: int):
    if int(k) != k or k < 1:
        raise ValueError("k must be an integer >= 1")
    return (Fraction(-1, int(k)), 0)


class PolynomialPhase:
    """Float evaluation of a support as an oscillatory phase in two variables."""

    def __init__(self, S: TaylorSupport2D):
        self.terms = [(g1, g2, float(c)) for (g1, g2), c in S.terms.items()]

    def __call__(self, xi):
        x, y = xi[..., 0], xi[..., 1]
        return sum(c * x**g1 * y**g2 for g1, g2, c in self.terms)

    def on_mesh(self, axes):
        x, y = axes
        return sum(c * x**g1 * y**g2 for g1, g2, c in self.terms)

    def grad(self, xi):
        x, y = xi[..., 0], xi[..., 1]
        gx = sum(c * g1 * x ** max(g1 - 1, 0) * y**g2 for g1, g2, c in self.terms if g1)
        gy = sum(c * g2 * x**g1 * y ** max(g2 - 1, 0) for g1, g2, c in self.terms if g2)
        return np.stack(np.broadcast_arrays(gx + 0 * x, gy + 0 * y), -1)


MODEL_PHASES = {
    "x^2y+xy^2": TaylorSupport2D({(2, 1): 1, (1, 2): 1}),
    "x^2y+y^2": TaylorSupport2D({(2, 1): 1, (0, 2): 1}),
    "x^2y+y^2+x^4": TaylorSupport2D({(2, 1): 1, (0, 2): 1, (4, 0): 1}),
}
