"""Stationary-phase tools for ``Phi_v(xi) = v.xi - omega(xi)`` on the torus,
with ``omega(xi) = (sum_i 2 - 2 cos xi_i)^{alpha/2}``."""

from __future__ import annotations

import csv
import itertools
import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import least_squares, minimize
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .operators import eta, psi

log = logging.getLogger(__name__)

NONDEGENERATE = "nondegenerate"
GAMMA1, GAMMA2, GAMMA3 = "Gamma1", "Gamma2", "Gamma3"

PREDICTED = {
    NONDEGENERATE: (Fraction(-3, 2), 0),
    GAMMA1: (Fraction(-4, 3), 0),
    GAMMA2: (Fraction(-5, 4), 0),
    GAMMA3: (Fraction(-7, 6), 0),
}

CLASS_TOL = 1e-9
RESIDUAL_MAX = 1e-10


def _check_alpha(alpha):
    if not 1 < alpha < 2:
        raise ValueError(f"alpha={alpha} must lie in (1, 2)")


def _S(xi):
    return np.sum(2 - 2 * np.cos(xi), axis=-1)


def omega(xi, alpha: float):
    return _S(np.asarray(xi, float)) ** (alpha / 2)


def _nonzero(xi):
    xi = np.asarray(xi, float)
    if np.any(_S(xi) <= 0):
        raise ValueError("omega is singular at xi = 0 (mod 2 pi)")
    return xi


def grad_omega(xi, alpha: float) -> np.ndarray:
    xi = _nonzero(xi)
    return alpha * _S(xi)[..., None] ** ((alpha - 2) / 2) * np.sin(xi)


def hessian_omega(xi, alpha: float) -> np.ndarray:
    xi = _nonzero(xi)
    S = _S(xi)[..., None, None]
    s, c = np.sin(xi), np.cos(xi)
    inner = (alpha - 2) * s[..., :, None] * s[..., None, :] + S * (c[..., :, None] * np.eye(xi.shape[-1]))
    return alpha * S ** ((alpha - 4) / 2) * inner


def degeneracy_criterion(xi, alpha: float) -> np.ndarray:
    """``prod cos - ((2-alpha)/S) sum_i sin_i^2 prod_{j != i} cos_j``.

    ``det H = alpha^d S^{d(alpha-2)/2}`` times this for ``d = 3``.
    """
    xi = _nonzero(xi)
    s, c = np.sin(xi), np.cos(xi)
    d = xi.shape[-1]
    others = np.stack([np.prod(np.delete(c, i, axis=-1), axis=-1) for i in range(d)], axis=-1)
    return np.prod(c, axis=-1) - (2 - alpha) / _S(xi) * np.sum(s**2 * others, axis=-1)


def hessian_det_from_criterion(xi, alpha: float):
    xi = np.asarray(xi, float)
    d = xi.shape[-1]
    return alpha**d * _S(xi) ** (d * (alpha - 2) / 2) * degeneracy_criterion(xi, alpha)


def gamma1_defect(xi, alpha: float):
    """``2d - sum((2-alpha) sec xi_i + alpha cos xi_i)``; zero on Gamma1."""
    c = np.cos(np.asarray(xi, float))
    d = c.shape[-1]
    with np.errstate(divide="ignore"):
        return 2 * d - np.sum((2 - alpha) / c + alpha * c, axis=-1)


def canonical(xi) -> np.ndarray:
    """Representative in ``[0, pi]^d`` under sign flips and ``2 pi`` shifts."""
    xi = np.asarray(xi, float)
    return np.abs(np.mod(xi + math.pi, 2 * math.pi) - math.pi)


def classify(xi, alpha: float, tol: float = CLASS_TOL) -> str:
    x = canonical(xi)
    _nonzero(x)
    k = int(np.sum(np.abs(x - math.pi / 2) <= tol))
    if k >= 2:
        return {2: GAMMA2, 3: GAMMA3}.get(k, f"Gamma{k}")
    if k == 0:
        sec = 1 / np.cos(x)
        if abs(gamma1_defect(x, alpha)) <= tol * (1 + np.sum(np.abs(sec))):
            return GAMMA1
    return NONDEGENERATE


@dataclass(frozen=True)
class Phase:
    alpha: float
    v: tuple

    def __post_init__(self):
        _check_alpha(self.alpha)
        object.__setattr__(self, "v", tuple(float(x) for x in self.v))

    @property
    def d(self) -> int:
        return len(self.v)

    def __call__(self, xi):
        xi = np.asarray(xi, float)
        return xi @ np.asarray(self.v) - omega(xi, self.alpha)

    def grad(self, xi):
        return np.asarray(self.v) - grad_omega(xi, self.alpha)

    @classmethod
    def at_critical_point(cls, xi, alpha: float) -> "Phase":
        return cls(alpha, tuple(grad_omega(xi, alpha)))


def grad_sup_bound(alpha: float, d: int = 3) -> float:
    """Upper bound on ``|grad omega|`` from ``sin^2 <= 2 - 2 cos``."""
    return alpha * (4.0 * d) ** ((alpha - 1) / 2)


# -- critical points ---------------------------------------------------------

@dataclass
class CriticalPointRecord:
    xi: tuple
    v: tuple
    grad_residual: float
    hessian: np.ndarray
    det: float
    criterion: float
    cls: str
    predicted_exponent: tuple

    def row(self) -> dict:
        return {
            "xi1": self.xi[0], "xi2": self.xi[1], "xi3": self.xi[2] if len(self.xi) > 2 else "",
            "grad_residual": self.grad_residual, "det": self.det, "criterion": self.criterion,
            "class": self.cls, "beta": str(self.predicted_exponent[0]), "p": self.predicted_exponent[1],
        }


class CriticalPoints(list):
    """Records plus a search status: ``found``, ``no_roots_found`` (Newton
    never converged; emptiness is not proved) or ``out_of_range``."""

    status: str = "found"


def make_record(xi, v, alpha: float) -> CriticalPointRecord:
    xi = np.asarray(xi, float)
    H = hessian_omega(xi, alpha)
    cls = classify(xi, alpha)
    return CriticalPointRecord(
        tuple(xi), tuple(np.asarray(v, float)), float(np.linalg.norm(grad_omega(xi, alpha) - v)),
        H, float(np.linalg.det(H)), float(degeneracy_criterion(xi, alpha)), cls, PREDICTED.get(cls, (None, None)))


def _newton_batch(x, v, alpha, iters=80):
    """Levenberg-damped Newton on ``grad omega - v`` for a batch of starts."""
    lam = np.full(len(x), 1e-6)
    alive = np.ones(len(x), bool)
    F = grad_omega(x, alpha) - v
    r = np.linalg.norm(F, axis=1)
    eye = np.eye(x.shape[1])
    for _ in range(iters):
        idx = np.nonzero(alive & (r > 1e-13))[0]
        if idx.size == 0:
            break
        H = hessian_omega(x[idx], alpha)
        A = np.einsum("nki,nkj->nij", H, H) + lam[idx, None, None] * eye
        b = np.einsum("nki,nk->ni", H, F[idx])
        step = np.linalg.solve(A, b[..., None])[..., 0]
        trial = x[idx] - step
        bad = _S(trial) < 1e-12
        trial[bad] = x[idx][bad]
        Ft = grad_omega(trial, alpha) - v
        rt = np.linalg.norm(Ft, axis=1)
        ok = (rt < r[idx]) & ~bad
        good = idx[ok]
        x[good], F[good], r[good] = trial[ok], Ft[ok], rt[ok]
        lam[good] = np.maximum(lam[good] / 10, 1e-15)
        lam[idx[~ok]] *= 8
        alive[idx[~ok & (lam[idx] > 1e8)]] = False
    return x, r


SPECIAL = (0.0, math.pi / 2, math.pi)
CLUSTER = 1e-4
SNAP = 1e-5


def _polish(z, va, alpha, steps=6):
    for _ in range(steps):
        F = grad_omega(z, alpha) - va
        z = canonical(z - np.einsum("nij,nj->ni", np.linalg.pinv(hessian_omega(z, alpha)), F))
    return z, np.linalg.norm(grad_omega(z, alpha) - va, axis=1)


def _clusters(z):
    """Single-linkage groups at radius ``2 CLUSTER``.

    Newton only converges linearly onto degenerate roots, so one root leaves a
    small cloud of iterates that all pass the residual test.
    """
    pairs = cKDTree(z).query_pairs(2 * CLUSTER, output_type="ndarray")
    adj = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(len(z), len(z)))
    _, labels = connected_components(adj, directed=False)
    return [np.nonzero(labels == k)[0] for k in range(labels.max() + 1)]


def _refine_degenerate(z, va, alpha):
    """Gauss-Newton on ``grad omega = v`` together with a vanishing criterion."""
    def F(x):
        return np.append(grad_omega(x, alpha) - va, degeneracy_criterion(x, alpha))
    sol = least_squares(F, z, xtol=1e-15, ftol=1e-15, gtol=1e-15, method="lm")
    return canonical(sol.x)


def _representative(z, res, va, alpha):
    k = int(np.argmin(res))
    best, best_res = z[k], res[k]
    snapped = best.copy()
    for i, x in enumerate(best):
        for sp in SPECIAL:
            if abs(x - sp) <= SNAP:
                snapped[i] = sp
    cands = [snapped]
    H = hessian_omega(best, alpha)
    if len(z) > 1 or abs(np.linalg.det(H)) < 1e-6 * np.linalg.norm(H) ** 3:
        cands.append(_refine_degenerate(best, va, alpha))
    valid = [best]
    for c in cands:
        if _S(c) > 0 and np.linalg.norm(c - best) <= 10 * CLUSTER \
                and np.linalg.norm(grad_omega(c, alpha) - va) <= max(best_res, 1e-14):
            valid.append(c)
    # degenerate roots are pinned down by the criterion, not the residual
    return min(valid, key=lambda c: abs(float(degeneracy_criterion(c, alpha))))

def critical_points(v, alpha: float, starts: int = 24) -> CriticalPoints:
    """All ``xi`` on the torus with ``grad omega(xi) = v``.

    Solved in the canonical octant for ``|v|`` from a ``starts^d`` grid and
    mapped back through the signs of ``v``.
    """
    _check_alpha(alpha)
    v = np.asarray(v, float)
    d = v.size
    out = CriticalPoints()
    if np.linalg.norm(v) > grad_sup_bound(alpha, d):
        out.status = "out_of_range"
        return out
    va = np.abs(v)
    ax = np.linspace(0, math.pi, starts)
    x0 = np.array(list(itertools.product(ax, repeat=d)))
    x0 = x0[_S(x0) > 1e-12]
    x, r = _newton_batch(x0.copy(), va, alpha)
    roots = canonical(x[r <= 1e-9])
    roots = roots[_S(roots) > 1e-12]
    kept = []
    if len(roots):
        z, res = _polish(roots, va, alpha)
        ok = res <= RESIDUAL_MAX
        z, res = z[ok], res[ok]
        if len(z):
            # one survivor per CLUSTER/2 cell, lowest residual first
            order = np.argsort(res, kind="stable")
            _, first = np.unique(np.floor(z[order] / (CLUSTER / 2)), axis=0, return_index=True)
            sel = order[np.sort(first)]
            z, res = z[sel], res[sel]
            kept = [_representative(z[g], res[g], va, alpha) for g in _clusters(z)]
    sign = np.where(v < 0, -1.0, 1.0)
    for z in kept:
        rec = make_record(sign * z, v, alpha)
        if rec.grad_residual <= RESIDUAL_MAX:
            out.append(rec)
    out.sort(key=lambda rc: rc.xi)
    out.status = "found" if out else "no_roots_found"
    return out


def write_critical_points(records: Sequence[CriticalPointRecord], path):
    fields = ["xi1", "xi2", "xi3", "grad_residual", "det", "criterion", "class", "beta", "p"]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        w.writerows(r.row() for r in records)


# -- r_alpha -----------------------------------------------------------------

def r_alpha(alpha: float, grid: int = 64, candidates: int = 12) -> float:
    """``min |xi|`` over Gamma1 in the canonical octant.

    Sign changes of ``gamma1_defect / |xi|^2`` between grid neighbours that
    share cosine signs seed SLSQP on ``min |xi|^2`` subject to the smooth
    criterion vanishing.
    """
    _check_alpha(alpha)
    ax = np.linspace(0, math.pi, grid)
    X = np.stack(np.meshgrid(ax, ax, ax, indexing="ij"), -1)
    n2 = np.sum(X**2, -1)
    n2[0, 0, 0] = 1.0
    with np.errstate(divide="ignore", invalid="ignore"):
        g = gamma1_defect(X, alpha) / n2
    g[0, 0, 0] = alpha - 1
    cs = np.sign(np.cos(X))
    seeds = []
    for a in range(3):
        sl0 = [slice(None)] * 3
        sl1 = [slice(None)] * 3
        sl0[a], sl1[a] = slice(0, -1), slice(1, None)
        s0, s1 = tuple(sl0), tuple(sl1)
        flip = (np.sign(g[s0]) != np.sign(g[s1])) & np.all(cs[s0] == cs[s1], -1) & np.isfinite(g[s0]) & np.isfinite(g[s1])
        seeds.append(X[s0][flip])
    seeds = np.concatenate(seeds)
    if len(seeds) == 0:
        raise RuntimeError("no Gamma1 crossing found on the search grid")
    seeds = seeds[np.argsort(np.linalg.norm(seeds, axis=1))][:candidates]
    best = math.inf
    for s0 in seeds:
        res = minimize(lambda z: z @ z, s0, jac=lambda z: 2 * z, method="SLSQP",
                       bounds=[(0, math.pi)] * 3,
                       constraints=[{"type": "eq", "fun": lambda z: degeneracy_criterion(z, alpha)}],
                       options={"ftol": 1e-15, "maxiter": 500})
        z = res.x
        if not res.success or abs(degeneracy_criterion(z, alpha)) > 1e-10:
            continue
        if classify(z, alpha, tol=1e-6) != GAMMA1:
            continue
        best = min(best, float(np.linalg.norm(z)))
    if not math.isfinite(best) or best <= 0:
        raise RuntimeError("Gamma1 search failed")
    return best


# -- oscillatory integrals ---------------------------------------------------

def _mesh_phase(phase, axes):
    if hasattr(phase, "on_mesh"):
        return phase.on_mesh(axes)
    P = np.stack(np.broadcast_arrays(*axes), -1)
    return phase(P)


class Cutoff:
    label = "cutoff"
    lo: np.ndarray
    hi: np.ndarray

    def __call__(self, xi) -> np.ndarray:
        raise NotImplementedError

    def on_mesh(self, axes) -> np.ndarray:
        return self(np.stack(np.broadcast_arrays(*axes), -1))

    def slab_bounds(self, x0: np.ndarray):
        """Box in the remaining axes that contains the support over ``x0``."""
        return self.lo[1:], self.hi[1:]


class Bump(Cutoff):
    """Radial plateau: 1 for ``|xi - c| <= radius/2``, 0 beyond ``radius``,
    smooth in between (the Littlewood-Paley profile rescaled)."""

    def __init__(self, center, radius: float):
        self.center = np.asarray(center, float)
        self.radius = float(radius)
        self.lo, self.hi = self.center - radius, self.center + radius
        self.label = f"bump(r={radius:g})"

    def _profile(self, r2):
        return psi(2 * math.pi * np.sqrt(r2) / self.radius)

    def __call__(self, xi):
        return self._profile(np.sum((np.asarray(xi) - self.center) ** 2, -1))

    def on_mesh(self, axes):
        return self._profile(sum((a - c) ** 2 for a, c in zip(axes, self.center)))

    def slab_bounds(self, x0):
        off = np.min(np.abs(x0 - self.center[0]))
        r = math.sqrt(max(self.radius**2 - off**2, 0.0))
        return self.center[1:] - r, self.center[1:] + r


class Annulus(Cutoff):
    """``eta(|xi|/N)``; needs ``N <= 1/2`` to sit inside the fundamental cell."""

    def __init__(self, N: float, d: int = 3):
        if N > 0.5:
            raise ValueError("annulus must lie inside [-pi, pi]^d (N <= 1/2)")
        self.N = N
        r = 2 * math.pi * N
        self.lo, self.hi = np.full(d, -r), np.full(d, r)
        self.label = f"annulus(N={N:g})"

    def __call__(self, xi):
        return eta(np.linalg.norm(xi, axis=-1) / self.N)

    def on_mesh(self, axes):
        return eta(np.sqrt(sum(a**2 for a in axes)) / self.N)


@dataclass
class OscIntegralSample:
    tau: float
    value: complex
    zeta_label: str
    points: int = 0
    change: float = 0.0
    mass: float = 0.0


class UnresolvedOscillation(RuntimeError):
    pass


def grad_max(phase, lo, hi, n: int = 25) -> np.ndarray:
    """Per-axis ``max |d Phi / d xi_i|`` sampled over the box."""
    axes = [np.linspace(a, b, n) for a, b in zip(lo, hi)]
    P = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, len(lo))
    if isinstance(phase, Phase):
        P = P[_S(P) > 1e-10]
    return 1.1 * np.max(np.abs(phase.grad(P)), axis=0) + 1e-3


def _trapezoid(phase, zeta: Cutoff, tau: float, n, chunk: int = 1 << 22):
    """Sum of ``zeta exp(i tau Phi)`` and of ``|zeta|`` on a uniform mesh.

    The cutoff vanishes on the box faces, so the trapezoid rule is a plain sum.
    """
    lo, hi = np.asarray(zeta.lo, float), np.asarray(zeta.hi, float)
    d = len(lo)
    step = (hi - lo) / n
    axes = [lo[i] + step[i] * np.arange(n[i] + 1) for i in range(d)]
    w = float(np.prod(step))
    per_row = int(np.prod(n[1:] + 1)) if d > 1 else 1
    rows = max(1, chunk // per_row)
    re, im, ab, count = [], [], [], 0
    for i0 in range(0, n[0] + 1, rows):
        a0 = axes[0][i0:i0 + rows]
        sub = [a0.reshape((-1,) + (1,) * (d - 1))]
        if d > 1:
            blo, bhi = zeta.slab_bounds(a0)
            for j in range(1, d):
                a = axes[j]
                a = a[(a >= blo[j - 1] - step[j]) & (a <= bhi[j - 1] + step[j])]
                shape = [1] * d
                shape[j] = a.size
                sub.append(a.reshape(shape))
        z = zeta.on_mesh(sub)
        if not np.any(z):
            continue
        vals = z * np.exp(1j * tau * _mesh_phase(phase, sub)) if tau else z.astype(complex)
        re.append(float(vals.real.sum()))
        im.append(float(vals.imag.sum()))
        ab.append(float(np.abs(z).sum()))
        count += z.size
    return w * complex(math.fsum(re), math.fsum(im)), w * math.fsum(ab), count


def osc_integral(phase, zeta: Cutoff, tau: float, ppw: int = 8, rtol: float = 1e-6,
                 floor: float = 1e-12, max_refine: int = 2, min_points: int = 64) -> OscIntegralSample:
    """Tensor trapezoid for ``int exp(i tau Phi) zeta`` with a mesh-doubling check.

    The accepted mesh has at least ``ppw`` points per local wavelength of
    ``Phi`` along each axis; it is compared with the mesh of half that density
    and refined by doubling until the two agree to ``rtol |J| + floor int|zeta|``.
    """
    lo, hi = np.asarray(zeta.lo, float), np.asarray(zeta.hi, float)
    gm = grad_max(phase, lo, hi) if tau else np.zeros(len(lo))
    waves = (hi - lo) * abs(tau) * gm / (2 * math.pi)
    n = np.maximum(min_points // 2, np.ceil(waves * ppw / 2)).astype(int)
    prev, _, _ = _trapezoid(phase, zeta, tau, n)
    for _ in range(max_refine + 1):
        n = 2 * n
        cur, mass, count = _trapezoid(phase, zeta, tau, n)
        change = abs(cur - prev)
        if change <= rtol * abs(cur) + floor * mass:
            return OscIntegralSample(float(tau), cur, zeta.label, count, change / max(abs(cur), 1e-300), mass)
        prev = cur
    raise UnresolvedOscillation(f"unresolved oscillation at tau={tau} (mesh {n.tolist()})")


def zeta_mass(zeta: Cutoff, n: int = 128) -> float:
    return _trapezoid(None, zeta, 0.0, np.full(len(zeta.lo), n))[1]


def tau_ladder(lo: float = 10.0, hi: float = 200.0, n: int = 8) -> list:
    return [float(round(t)) for t in np.geomspace(lo, hi, n)]


@dataclass
class DecayFit:
    beta_hat: float
    stderr: float
    used: int
    excluded: list = field(default_factory=list)


def fit_decay_exponent(samples: Sequence[OscIntegralSample], floor: float = 1e-13) -> DecayFit:
    """Least-squares slope of ``log |J|`` against ``log tau``."""
    keep = [s for s in samples if abs(s.value) >= floor]
    dropped = [s.tau for s in samples if abs(s.value) < floor]
    for t in dropped:
        log.warning("|J(%g)| below %g; sample excluded", t, floor)
    if len(keep) < 6:
        raise ValueError("need at least 6 resolved samples")
    taus = np.array([s.tau for s in keep])
    if taus.max() / taus.min() < 10:
        raise ValueError("tau samples must span at least a decade")
    x = np.log(taus)
    y = np.log([abs(s.value) for s in keep])
    A = np.vstack([x, np.ones_like(x)]).T
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    dof = max(1, len(x) - 2)
    se = math.sqrt(float(resid @ resid) / dof / float(np.sum((x - x.mean()) ** 2)))
    return DecayFit(float(coef[0]), se, len(keep), dropped)


def decay_check(xi, alpha: float, radius: float, taus: Optional[Sequence[float]] = None) -> dict:
    """Fit the decay of ``J`` for a bump centred on the critical point ``xi``."""
    xi = np.asarray(xi, float)
    rec = make_record(xi, grad_omega(xi, alpha), alpha)
    ph = Phase.at_critical_point(xi, alpha)
    zeta = Bump(xi, radius)
    samples = [osc_integral(ph, zeta, t) for t in (taus or tau_ladder())]
    fit = fit_decay_exponent(samples)
    beta = float(rec.predicted_exponent[0])
    return {
        "class": rec.cls,
        "xi": xi.tolist(),
        "radius": radius,
        "beta_predicted": beta,
        "beta_hat": fit.beta_hat,
        "stderr": fit.stderr,
        "pass": fit.beta_hat <= beta + 0.1,
        "samples": [{"tau": s.tau, "abs_J": abs(s.value), "points": s.points} for s in samples],
    }
