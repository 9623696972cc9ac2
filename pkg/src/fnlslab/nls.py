"""Strang-split integrator for ``i u_t = omega u + mu |u|^(p-1) u`` on the lattice
and its pseudo-spectral continuum counterpart."""

from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .lattice import LatticeField, LatticeGrid, MultiplierSymbol, apply_multiplier, build_symbol, lp_norm, save_field, sobolev_norm
from .propagator import evolve_linear

log = logging.getLogger(__name__)

LATTICE = "lattice"
CONTINUUM = "continuum-reference"
# nonlinear rotation per step beyond which the phase exp(-i theta) is numerically meaningless
MAX_PHASE = 1e6
STRICHARTZ_DELTA = 0.01


class BlowUpError(FloatingPointError):
    def __init__(self, t: float, amplitude: float, reason: str):
        super().__init__(f"blow-up diagnostic at t={t:.6g}: {reason} (max |u| = {amplitude:.3e})")
        self.t = t
        self.amplitude = amplitude


class LocalExistenceWarning(UserWarning):
    pass


def rate_regime(alpha: float, p: float) -> bool:
    return 3 <= p < 5 and 3 * (p - 1) / (p + 1) < alpha < 2


def critical_regularity(d: int, alpha: float, p: float) -> float:
    return d / 2 - alpha / (p - 1)


@dataclass
class NLSProblem:
    grid: LatticeGrid
    alpha: float
    p: float
    mu: float
    u0: LatticeField
    T: float
    dt: float
    regime: str = LATTICE
    guard_constant: float = 1.0

    def __post_init__(self):
        if self.regime not in (LATTICE, CONTINUUM):
            raise ValueError(f"regime must be '{LATTICE}' or '{CONTINUUM}'")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.T < 0:
            raise ValueError("T must be nonnegative")
        if self.mu not in (-1, 0, 1):
            raise ValueError("mu must be -1, 0 or +1")
        if self.p <= 1:
            raise ValueError("p must exceed 1")
        if self.u0.grid != self.grid:
            raise ValueError("u0 lives on a different grid")
        self._sym: Optional[MultiplierSymbol] = None

    @property
    def certified(self) -> bool:
        return rate_regime(self.alpha, self.p) and self.energy_subcritical

    @property
    def s_c(self) -> float:
        return critical_regularity(self.grid.d, self.alpha, self.p)

    @property
    def energy_subcritical(self) -> bool:
        return self.s_c < self.alpha / 2

    @property
    def symbol(self) -> MultiplierSymbol:
        if self._sym is None:
            kind = "omega_h" if self.regime == LATTICE else "omega_continuum"
            self._sym = build_symbol(self.grid, self.alpha, kind)
        return self._sym

    def existence_time(self) -> float:
        """Guarded local-existence window ``c ||u0||_{H^{alpha/2}}^(-1/(1/(p-1) - 1/q0))``."""
        q0 = 2 * self.alpha / (3 - self.alpha + STRICHARTZ_DELTA)
        gap = 1 / (self.p - 1) - 1 / q0
        if gap <= 0:
            return math.inf
        norm = sobolev_norm(self.u0, self.alpha / 2)
        if norm == 0:
            return math.inf
        return self.guard_constant * norm ** (-1 / gap)

    def as_dict(self) -> dict:
        return {"grid": self.grid.as_dict(), "alpha": self.alpha, "p": self.p, "mu": self.mu,
                "T": self.T, "dt": self.dt, "regime": self.regime, "certified": self.certified,
                "s_c": self.s_c, "energy_subcritical": self.energy_subcritical}


def _nonlinear(u: np.ndarray, tau: float, prob: NLSProblem, t: float) -> np.ndarray:
    """Exact flow of ``i u_t = mu |u|^(p-1) u`` over ``tau``; ``|u|`` is invariant."""
    if prob.mu == 0 or tau == 0:
        return u
    with np.errstate(over="ignore", invalid="ignore"):
        amp = np.abs(u)
        rate = amp ** (prob.p - 1)
        top = float(np.max(rate))
    if not math.isfinite(top):
        a = float(np.max(amp))
        raise BlowUpError(t, a, "NaN in field" if math.isnan(a) else "|u|^(p-1) overflowed")
    if top * abs(tau) > MAX_PHASE:
        raise BlowUpError(t, float(np.max(amp)), "nonlinear phase per step exceeds resolution")
    return u * np.exp(-1j * prob.mu * tau * rate)


def step_strang(u: LatticeField, dt: float, prob: NLSProblem, t: float = 0.0) -> LatticeField:
    """Half nonlinear flow, full linear flow, half nonlinear flow."""
    v = _nonlinear(u.values, dt / 2, prob, t)
    v = evolve_linear(u.with_values(v), dt, prob.symbol).values
    return u.with_values(_nonlinear(v, dt / 2, prob, t + dt))


def mass(u: LatticeField) -> float:
    return lp_norm(u, 2) ** 2


def energy(u: LatticeField, prob: NLSProblem) -> float:
    """``1/2 ||omega^(1/2) u||^2 + mu/(p+1) ||u||_{p+1}^{p+1}``."""
    kin = lp_norm(apply_multiplier(u, prob.symbol, np.sqrt), 2) ** 2
    pot = lp_norm(u, prob.p + 1) ** (prob.p + 1) if prob.mu else 0.0
    return 0.5 * kin + prob.mu / (prob.p + 1) * pot


@dataclass
class Trajectory:
    problem: NLSProblem
    times: list = field(default_factory=list)
    fields: list = field(default_factory=list)
    mass: list = field(default_factory=list)
    energy: list = field(default_factory=list)
    steps: int = 0
    diagnostics: dict = field(default_factory=dict)

    def at(self, t: float) -> LatticeField:
        for s, u in zip(self.times, self.fields):
            if abs(s - t) <= 1e-12 * max(1.0, abs(t)):
                return u
        raise KeyError(f"no checkpoint at t={t}")

    @property
    def mass_drift(self) -> float:
        m0 = self.mass[0]
        return max(abs(m - m0) for m in self.mass) / m0 if m0 else 0.0

    @property
    def energy_drift(self) -> float:
        return abs(self.energy[-1] - self.energy[0])

    def write(self, directory, stem: str = "traj") -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        files = []
        for k, (t, u) in enumerate(zip(self.times, self.fields)):
            files.append(save_field(u, directory / f"{stem}_{k:03d}.bin", label=f"t={t:.6g}").name)
        meta = {"problem": self.problem.as_dict(), "times": self.times, "mass": self.mass,
                "energy": self.energy, "steps": self.steps, "checkpoints": files,
                "diagnostics": self.diagnostics}
        out = directory / f"{stem}.json"
        out.write_text(json.dumps(meta, indent=2))
        return out


def solve(prob: NLSProblem, checkpoints: Optional[Sequence[float]] = None) -> Trajectory:
    """Integrate to ``prob.T`` recording fields, mass and energy at ``checkpoints``.

    Each checkpoint interval is split into equal steps no longer than ``dt``.
    Consecutive half nonlinear flows are merged, which is exact.
    """
    marks = sorted(set([0.0, *(checkpoints or []), prob.T]))
    if marks[0] < 0 or marks[-1] > prob.T:
        raise ValueError("checkpoints must lie in [0, T]")
    if not prob.certified:
        log.info("alpha=%g, p=%g, s_c=%.3g: run is not certified", prob.alpha, prob.p, prob.s_c)
    guard = prob.existence_time()
    if prob.mu and prob.T > guard:
        warnings.warn(f"T={prob.T} exceeds the local-existence guard {guard:.3g}", LocalExistenceWarning)

    traj = Trajectory(prob, diagnostics={"certified": prob.certified, "existence_guard": guard})
    u = prob.u0
    t = 0.0

    def record(t, u):
        traj.times.append(t)
        traj.fields.append(u)
        traj.mass.append(mass(u))
        traj.energy.append(energy(u, prob))

    record(0.0, u)
    sym = prob.symbol
    for t1 in marks[1:]:
        n = max(1, math.ceil((t1 - t) / prob.dt - 1e-9))
        tau = (t1 - t) / n
        v = _nonlinear(u.values, tau / 2, prob, t)
        for k in range(n):
            v = evolve_linear(u.with_values(v), tau, sym).values
            v = _nonlinear(v, tau if k < n - 1 else tau / 2, prob, t + (k + 1) * tau)
        if not np.all(np.isfinite(v)):
            raise BlowUpError(t1, float(np.max(np.abs(v), initial=0.0, where=np.isfinite(v))), "NaN in field")
        traj.steps += n
        t = t1
        u = u.with_values(v)
        record(t, u)
    traj.diagnostics["mass_drift"] = traj.mass_drift
    if traj.mass_drift > 1e-10:
        log.warning("mass drift %.3e exceeds 1e-10", traj.mass_drift)
    return traj
