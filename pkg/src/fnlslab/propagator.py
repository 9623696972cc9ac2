"""Linear flows, the dispersive kernel of ``U_h(t) P_N`` and the empirical
kernel-decay and Strichartz suites."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
import scipy.fft as sfft

from .lattice import (
    FREQUENCY,
    LatticeField,
    LatticeGrid,
    MultiplierSymbol,
    apply_multiplier,
    build_symbol,
    compensated_sum,
    inverse_transform,
    lp_norm,
)
from .operators import LPCutoff, check_dyadic, eta

log = logging.getLogger(__name__)

RATIO_SPREAD = 25.0
GRID_DRIFT = 0.02
DIVERGENCE_SLOPE = 0.1


def evolve_linear(u: LatticeField, t: float, sym: MultiplierSymbol) -> LatticeField:
    """``exp(-i t sym) u``; ``sym`` should be an omega kind on ``u.grid``."""
    if not sym.label.startswith("omega"):
        raise ValueError(f"evolve_linear needs an omega symbol, got '{sym.label}'")
    if t == 0:
        return u
    return apply_multiplier(u, sym, lambda w: np.exp(-1j * t * w))


def kernel(t: float, N: float, grid: LatticeGrid, alpha: float) -> LatticeField:
    """``K_{t,N,h} = F_h^{-1}[exp(-i t omega_h) eta(h xi / N)]`` on the whole grid."""
    w = build_symbol(grid, alpha).values
    e = LPCutoff(N).symbol(grid).values
    return inverse_transform(LatticeField(grid, np.exp(-1j * t * w) * e, FREQUENCY))


def trivial_kernel_bound(N: float, grid: LatticeGrid) -> float:
    """Triangle-inequality bound ``(2 pi)^{-d} sum eta(h xi / N) dxi^d``."""
    e = LPCutoff(N).symbol(grid).values
    return compensated_sum(e) * (grid.dxi / (2 * math.pi)) ** grid.d


def max_group_velocity(alpha: float) -> float:
    """Largest ``|d omega / d xi_i|`` of the unit-spacing symbol along an axis."""
    # with theta = xi/2 the derivative is alpha 2^(alpha-1) sin^(alpha-1) cos, peaking at tan^2 = alpha-1
    s2, c2 = (alpha - 1) / alpha, 1 / alpha
    return alpha * 2 ** (alpha - 1) * s2 ** ((alpha - 1) / 2) * c2**0.5


# -- fast sup via even symmetry ---------------------------------------------

class KernelSupEngine:
    """``sup_x |K_{t,N,h}|`` through a type-I DCT on the nonnegative octant.

    The unit-spacing symbol and cutoff are even in every coordinate, so the
    inverse transform collapses to cosine sums over ``m/2 + 1`` points per
    axis. Spacing is removed by ``K_{t,N,h}(x) = h^{-d} K_{t/h^alpha,N,1}(x/h)``.
    Tables are cached per ``m``; the float32 path kicks in at ``m >= float32_from``.
    """

    def __init__(self, alpha: float, N: float, d: int = 3, float32_from: int = 1024):
        check_dyadic(N)
        self.alpha, self.N, self.d = alpha, N, d
        self.float32_from = float32_from
        self._tables: dict = {}
        self._sups: dict = {}

    def _build(self, m: int):
        n = m // 2 + 1
        dt = np.float32 if m >= self.float32_from else np.float64
        xi = np.linspace(0.0, math.pi, n)
        s = 2 - 2 * np.cos(xi)
        if self.d == 1:
            return (s ** (self.alpha / 2)).astype(dt), eta(xi / self.N).astype(dt)
        tail = sum(np.meshgrid(*([s] * (self.d - 1)), indexing="ij", sparse=True))
        tail_r = sum(np.meshgrid(*([xi**2] * (self.d - 1)), indexing="ij", sparse=True))
        w = np.empty((n,) * self.d, dt)
        e = np.empty((n,) * self.d, dt)
        for i in range(n):
            w[i] = (s[i] + tail) ** (self.alpha / 2)
            e[i] = eta(np.sqrt(xi[i] ** 2 + tail_r) / self.N)
        return w, e

    def tables(self, m: int):
        if m not in self._tables:
            # keep at most the two most recent sizes resident
            for old in sorted(self._tables)[:-1]:
                del self._tables[old]
            self._tables[m] = self._build(m)
        return self._tables[m]

    def sup_unit(self, t: float, m: int) -> float:
        """Sup over the unit-spacing lattice of ``m^d`` points."""
        key = (float(t), m)
        if key in self._sups:
            return self._sups[key]
        w, e = self.tables(m)
        re = np.empty_like(w)
        im = np.empty_like(w)
        for i in range(w.shape[0]):
            ph = t * w[i].astype(np.float64)
            re[i] = np.cos(ph) * e[i]
            im[i] = -np.sin(ph) * e[i]
        re = sfft.dctn(re, type=1, overwrite_x=True)
        im = sfft.dctn(im, type=1, overwrite_x=True)
        np.square(re, out=re)
        np.square(im, out=im)
        re += im
        del im
        val = math.sqrt(float(re.max())) / m**self.d
        self._sups[key] = val
        return val

    def sup(self, t: float, h: float, m: int) -> float:
        return h ** (-self.d) * self.sup_unit(t / h**self.alpha, m)

    def start_m(self, t: float, h: float, floor: int = 32) -> int:
        """Smallest power of two whose box holds the kernel's main body."""
        tu = t / h**self.alpha
        need = 2 * (max_group_velocity(self.alpha) * tu + 8 / self.N)
        return max(floor, 1 << math.ceil(math.log2(need)))


@dataclass
class SupSample:
    t: float
    sup: float
    m: int
    drift: float
    resolved: bool


def resolve_sup(engine: KernelSupEngine, t: float, h: float, m_start: int,
                m_cap: int = 1024, tol: float = GRID_DRIFT) -> SupSample:
    """Double ``m`` until the sup changes by less than ``tol``; give up at ``m_cap``."""
    m = min(m_start, m_cap // 2)
    while True:
        lo, hi = engine.sup(t, h, m), engine.sup(t, h, 2 * m)
        drift = abs(hi - lo) / hi
        if drift < tol or 2 * m >= m_cap:
            return SupSample(t, hi, 2 * m, drift, drift < tol)
        m *= 2


# -- decay suite -------------------------------------------------------------

@dataclass
class KernelProbe:
    alpha: float
    h: float
    N: float
    t_samples: list
    grid: Optional[LatticeGrid] = None
    sup_values: list = field(default_factory=list)
    bound_ratios: list = field(default_factory=list)
    samples: list = field(default_factory=list)

    def __post_init__(self):
        check_dyadic(self.N)
        ts = [float(t) for t in self.t_samples]
        if any(t <= 0 for t in ts) or any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError("t_samples must be positive and strictly increasing")
        self.t_samples = ts

    def ratio(self, t: float, sup: float) -> float:
        return sup * t * (self.h / self.N) ** (3 - self.alpha)


@dataclass
class DecayReport:
    verdict: str
    max_ratio: float
    min_ratio: float
    spread: float
    diverging: list
    monotone_violations: list
    grid_check: dict
    rows: list
    thresholds: dict

    def summary(self) -> dict:
        return {k: v for k, v in asdict(self).items() if k != "rows"}

    def write(self, csv_path, json_path=None):
        csv_path = Path(csv_path)
        with csv_path.open("w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["alpha", "h", "N", "t", "sup_value", "bound_ratio"])
            for r in self.rows:
                wr.writerow([r["alpha"], r["h"], r["N"], r["t"], f"{r['sup_value']:.12e}", f"{r['bound_ratio']:.12e}"])
        if json_path is not None:
            Path(json_path).write_text(json.dumps(self.summary(), indent=2, sort_keys=True))


def _slope(ts, rs):
    x, y = np.log(ts), np.log(rs)
    return float(np.polyfit(x, y, 1)[0])


def decay_suite(probes: Sequence[KernelProbe] | KernelProbe, m_cap: int = 1024,
                tol: float = GRID_DRIFT, float32_from: int = 1024) -> DecayReport:
    """Measure ``sup_x |K|`` for every probe sample and judge boundedness of
    ``sup * t * (h/N)^{3-alpha}``.

    PASS needs every sample grid-converged (drift under ``tol``), the ratio
    spread (max/min over all probes given) at most 25 and no probe whose ratio
    grows with ``t``. Samples that cannot converge under ``m_cap`` make the
    verdict INCONCLUSIVE.
    """
    if isinstance(probes, KernelProbe):
        probes = [probes]
    for p in probes:
        if not 1 < p.alpha < 2:
            raise ValueError(f"alpha={p.alpha} outside the kernel-bound range (need 1 < alpha < 2)")
    engines: dict = {}
    rows, diverging, monotone = [], [], []
    for p in sorted(probes, key=lambda q: (q.alpha, q.N, -q.h)):
        eng = engines.get((p.alpha, p.N))
        if eng is None:
            engines.clear()  # tables are large; one cutoff at a time
            eng = engines[(p.alpha, p.N)] = KernelSupEngine(p.alpha, p.N, 3, float32_from)
        p.sup_values, p.bound_ratios, p.samples = [], [], []
        m = 0
        for t in p.t_samples:
            m = max(m, eng.start_m(t, p.h))
            smp = resolve_sup(eng, t, p.h, m, m_cap, tol)
            m = min(smp.m // 2, m_cap // 2)
            p.samples.append(smp)
            p.sup_values.append(smp.sup)
            p.bound_ratios.append(p.ratio(t, smp.sup))
            rows.append({"alpha": p.alpha, "h": p.h, "N": p.N, "t": t, "sup_value": smp.sup,
                         "bound_ratio": p.bound_ratios[-1], "m": smp.m, "drift": smp.drift,
                         "resolved": smp.resolved})
            log.info("alpha=%g h=%g N=%g t=%g sup=%.6e m=%d drift=%.2e", p.alpha, p.h, p.N, t,
                     smp.sup, smp.m, smp.drift)
        p.grid = LatticeGrid(3, p.h, max(s.m for s in p.samples))
        ok = [(s.t, r) for s, r in zip(p.samples, p.bound_ratios) if s.resolved]
        if len(ok) >= 3 and _slope(*zip(*ok[-3:])) > DIVERGENCE_SLOPE:
            diverging.append({"alpha": p.alpha, "h": p.h, "N": p.N})
        for a, b in zip(p.samples, p.samples[1:]):
            if a.resolved and b.resolved and b.sup > a.sup * (1 + tol):
                monotone.append({"alpha": p.alpha, "h": p.h, "N": p.N, "t": b.t})
    ratios = [r["bound_ratio"] for r in rows]
    if not all(math.isfinite(r) and r > 0 for r in ratios):
        raise FloatingPointError("non-finite bound ratio")
    unresolved = [r for r in rows if not r["resolved"]]
    spread = max(ratios) / min(ratios)
    if unresolved:
        verdict = "INCONCLUSIVE"
    elif spread <= RATIO_SPREAD and not diverging:
        verdict = "PASS"
    else:
        verdict = "FAIL"
    grid_check = {
        "tolerance": tol,
        "max_drift": max(r["drift"] for r in rows),
        "m_cap": m_cap,
        "under_resolved": [{k: r[k] for k in ("alpha", "h", "N", "t", "m", "drift")} for r in unresolved],
    }
    return DecayReport(verdict, max(ratios), min(ratios), spread, diverging, monotone, grid_check, rows,
                       {"ratio_spread": RATIO_SPREAD, "grid_drift": tol, "divergence_slope": DIVERGENCE_SLOPE})


# -- Strichartz --------------------------------------------------------------

@dataclass
class StrichartzProbe:
    q: float
    r: float
    alpha: float
    window: float
    dt: float
    lhs: Optional[float] = None
    rhs: Optional[float] = None
    ratio: Optional[float] = None
    dt_used: Optional[float] = None

    def __post_init__(self):
        check_admissible(self.q, self.r)
        if self.window <= 0 or self.dt <= 0:
            raise ValueError("window and dt must be positive")

    @property
    def derivative_order(self) -> float:
        return (3 - self.alpha) * (0.5 - 1 / self.r)


def check_admissible(q: float, r: float):
    if math.isinf(r):
        raise ValueError("r = inf is not admissible")
    if not (2 <= q <= math.inf and 2 <= r):
        raise ValueError(f"(q, r) = ({q}, {r}) outside q in [2, inf], r in [2, inf)")
    if abs(1 / q + 1 / r - 0.5) > 1e-12:
        raise ValueError(f"(q, r) = ({q}, {r}) violates 1/q + 1/r = 1/2")


def _time_norm(u: LatticeField, sym: MultiplierSymbol, probe: StrichartzProbe, dt: float) -> float:
    n = max(1, int(round(probe.window / dt)))
    ts = np.linspace(0.0, probe.window, n + 1)
    vals = np.array([lp_norm(evolve_linear(u, t, sym), probe.r) for t in ts])
    if math.isinf(probe.q):
        return float(vals.max())
    f = vals**probe.q
    integral = (ts[1] - ts[0]) * (math.fsum(f) - 0.5 * (f[0] + f[-1]))
    return integral ** (1 / probe.q)


def strichartz_suite(probe: StrichartzProbe, u: LatticeField, rtol: float = 0.01,
                     max_halvings: int = 8) -> StrichartzProbe:
    """Fill ``probe`` with ``||U_h u||_{L^q_t L^r_h}`` over the window, the
    ``|nabla_h|^s`` right side and their ratio. The time step is halved until
    the mixed norm moves by less than ``rtol``."""
    sym = build_symbol(u.grid, probe.alpha)
    s = probe.derivative_order
    rhs = lp_norm(apply_multiplier(u, build_symbol(u.grid, kind="lattice_grad", s=s)), 2) if s > 0 else lp_norm(u, 2)
    dt = probe.dt
    prev = _time_norm(u, sym, probe, dt)
    for _ in range(max_halvings):
        dt /= 2
        cur = _time_norm(u, sym, probe, dt)
        if abs(cur - prev) <= rtol * abs(cur):
            prev = cur
            break
        prev = cur
    else:
        raise RuntimeError("time quadrature did not settle; lower dt")
    probe.lhs, probe.rhs, probe.dt_used = float(prev), float(rhs), dt
    probe.ratio = probe.lhs / probe.rhs
    return probe


def strichartz_uniform(ratios: Iterable[float], factor: float = 2.0) -> bool:
    rs = list(ratios)
    return max(rs) / min(rs) <= factor
