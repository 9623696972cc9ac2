"""``fnlslab`` command line: one subcommand per experiment, TOML configuration,
CSV/JSON artifacts and a manifest in the output directory.

Exit codes: 0 on PASS or a completed run, 2 on an inconclusive verdict, 1 on
errors and FAIL verdicts.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import platform
import signal
import sys
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import __version__

log = logging.getLogger("fnlslab")

EXIT_OK, EXIT_ERROR, EXIT_INCONCLUSIVE = 0, 1, 2
VERDICT_EXIT = {"PASS": EXIT_OK, "INCONCLUSIVE": EXIT_INCONCLUSIVE, "FAIL": EXIT_ERROR}

COMMON_KEYS = {"out", "seed", "workers", "caps"}
CAP_KEYS = {"max_memory_gb", "max_wall_s"}


class ConfigError(ValueError):
    pass


class CapError(RuntimeError):
    pass


def _strict(section: dict, allowed: dict, where: str) -> dict:
    """Fill defaults from ``allowed`` and reject unknown keys."""
    extra = set(section) - set(allowed)
    if extra:
        raise ConfigError(f"unknown keys in [{where}]: {', '.join(sorted(extra))}")
    out = dict(allowed)
    out.update(section)
    return out


# -- parameter schemas (defaults double as documentation) --------------------

SIMULATE = {"d": 3, "h": 0.25, "L": 4.0, "alpha": 1.6, "p": 3.0, "mu": 1, "T": 1.0, "dt": 0.01,
            "regime": "lattice", "data": {"kind": "gaussian", "a": 1.0, "amp": 1.0}, "checkpoints": []}
CONVERGE = {"alpha": 1.6, "p": 3.0, "mu": 1, "d": 3, "L": 2.0,
            "data": {"kind": "gaussian", "a": 3.0, "amp": 1.0},
            "h_ladder": [0.5, 0.25, 0.125, 0.0625], "ref_factor": 4, "times": [0.25, 0.5], "dt": 0.01,
            "allow_noncertified": False}
KERNEL = {"alpha": [1.3, 1.5, 1.8], "h": [1.0, 0.5], "N": [1.0, 0.5, 0.25],
          "t": [1, 2, 5, 10, 20, 50, 100], "m_cap": 1024, "tol": 0.02}
STRICHARTZ = {"q": 4.0, "r": 4.0, "alpha": 1.5, "h": [1.0, 0.5, 0.25], "L": 16.0, "window": 2.0, "dt": 0.1,
              "data": {"kind": "gaussian", "a": 0.25, "amp": 1.0}, "factor": 2.0}
CRITICAL = {"alpha": 1.5, "samples": 500, "v_scale": 1.0, "r_alpha": True,
            "decay": [], "taus": []}
DECAY_ITEM = {"xi": None, "radius": 1.0}
NEWTON = {"files": [], "polynomials": {}}


@dataclass
class RunConfig:
    subcommand: str
    params: dict
    out: Path
    seed: int = 0
    workers: int = 1
    caps: dict = field(default_factory=dict)
    base: Path = Path(".")

    def manifest(self) -> dict:
        return {"subcommand": self.subcommand, "params": self.params, "out": str(self.out), "seed": self.seed,
                "workers": self.workers, "caps": self.caps, "version": __version__,
                "numpy": np.__version__, "python": platform.python_version()}


def load_config(subcommand: str, path, schema: dict) -> RunConfig:
    path = Path(path)
    raw = tomllib.loads(path.read_text())
    if not raw:
        raise ConfigError("empty configuration")
    extra = set(raw) - COMMON_KEYS - {subcommand}
    if extra:
        raise ConfigError(f"unknown top-level keys: {', '.join(sorted(extra))}")
    caps = _strict(raw.get("caps", {}), {k: None for k in CAP_KEYS}, "caps")
    params = _strict(raw.get(subcommand, {}), schema, subcommand)
    out = Path(raw.get("out", f"out/{subcommand}"))
    if not out.is_absolute():
        out = path.parent / out
    return RunConfig(subcommand, params, out, int(raw.get("seed", 0)), int(raw.get("workers", 1)),
                     caps, path.parent)


def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _write_json(path: Path, obj):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=str) + "\n")


def _check_memory(cfg: RunConfig, estimate_bytes: float):
    cap = cfg.caps.get("max_memory_gb")
    if cap is not None and estimate_bytes > cap * 2**30:
        raise CapError(f"estimated memory {estimate_bytes / 2**30:.2f} GB exceeds cap {cap} GB")


@contextmanager
def _wall_cap(seconds):
    if not seconds or not hasattr(signal, "SIGALRM"):
        yield
        return

    def expire(*_):
        raise CapError(f"wall-time cap of {seconds} s exceeded")

    old = signal.signal(signal.SIGALRM, expire)
    signal.setitimer(signal.ITIMER_REAL, float(seconds))
    try:
        yield
    finally:
        signal.setitimer(signal.ITIMER_REAL, 0)
        signal.signal(signal.SIGALRM, old)


def _gaussian(d, data):
    from .operators import gaussian

    if data.get("kind", "gaussian") != "gaussian" or set(data) - {"kind", "a", "amp"}:
        raise ConfigError(f"unsupported initial data {data}")
    return gaussian(d, float(data.get("a", 1.0)), complex(data.get("amp", 1.0)))


# -- subcommands -------------------------------------------------------------

def cmd_simulate(cfg: RunConfig) -> int:
    from .lattice import LatticeGrid
    from .nls import NLSProblem, solve
    from .operators import discretize

    P = cfg.params
    grid = LatticeGrid.from_box(P["d"], P["h"], P["L"])
    _check_memory(cfg, 16 * grid.size * (6 + len(P["checkpoints"])))
    u0 = discretize(_gaussian(P["d"], P["data"]), grid)
    prob = NLSProblem(grid, P["alpha"], P["p"], P["mu"], u0, P["T"], P["dt"], regime=P["regime"])
    tr = solve(prob, checkpoints=P["checkpoints"])
    tr.write(cfg.out, "trajectory")
    _write_csv(cfg.out / "conserved.csv", ["t", "mass", "energy"],
               [(repr(t), repr(m), repr(e)) for t, m, e in zip(tr.times, tr.mass, tr.energy)])
    return EXIT_OK


def cmd_converge(cfg: RunConfig) -> int:
    from .convergence import CertificationError, RatePlan, run_rate_experiment

    plan = RatePlan.from_mapping(dict(cfg.params, csv_path=str(cfg.out / "rate.csv"),
                                      json_path=str(cfg.out / "rate.json")))
    ref = plan.reference_grid()
    _check_memory(cfg, 16 * ref.size * (3 * len(plan.times) + 8))
    try:
        rep = run_rate_experiment(plan)
    except CertificationError as err:
        log.error("reference not certified: %s", err)
        return EXIT_INCONCLUSIVE
    print(f"verdict {rep.verdict}: slopes " + ", ".join(f"t={t:g}: {s:.3f}" for t, s in rep.slopes.items())
          + f" (target >= {rep.target:.3f})")
    return VERDICT_EXIT[rep.verdict]


def _decay_one(args):
    from .propagator import KernelProbe, decay_suite

    alpha, P = args
    probes = [KernelProbe(alpha, h, N, P["t"]) for h in P["h"] for N in P["N"]]
    return decay_suite(probes, m_cap=P["m_cap"], tol=P["tol"])


def _pool_map(fn: Callable, items, workers: int):
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


def cmd_kernel_decay(cfg: RunConfig) -> int:
    P = cfg.params
    m = P["m_cap"]
    _check_memory(cfg, 2 * 4 * 3 * (m // 2 + 1) ** 3)
    reports = _pool_map(_decay_one, [(a, P) for a in P["alpha"]], cfg.workers)
    rows, summary = [], {}
    for a, rep in zip(P["alpha"], reports):
        rows += rep.rows
        summary[f"{a:g}"] = rep.summary()
    cols = ["alpha", "h", "N", "t", "sup_value", "bound_ratio"]
    _write_csv(cfg.out / "kernel_decay.csv", cols, [tuple(repr(float(r[c])) for c in cols) for r in rows])
    _write_json(cfg.out / "kernel_decay.json", summary)
    verdicts = [r.verdict for r in reports]
    for a, r in zip(P["alpha"], reports):
        print(f"alpha={a:g}: {r.verdict} (spread {r.spread:.3g})")
    if "FAIL" in verdicts:
        return EXIT_ERROR
    return EXIT_INCONCLUSIVE if "INCONCLUSIVE" in verdicts else EXIT_OK


def _strichartz_one(args):
    from .lattice import LatticeGrid
    from .operators import discretize
    from .propagator import StrichartzProbe, strichartz_suite

    h, P = args
    g = LatticeGrid.from_box(3, h, P["L"])
    u = discretize(_gaussian(3, P["data"]), g)
    return strichartz_suite(StrichartzProbe(P["q"], P["r"], P["alpha"], P["window"], P["dt"]), u)


def cmd_strichartz(cfg: RunConfig) -> int:
    from .propagator import strichartz_uniform

    P = cfg.params
    P["q"], P["r"] = (math.inf if str(x) == "inf" else float(x) for x in (P["q"], P["r"]))
    m = int(2 * P["L"] / min(P["h"]))
    _check_memory(cfg, 16 * m**3 * 6)
    probes = _pool_map(_strichartz_one, [(h, P) for h in P["h"]], cfg.workers)
    rows = [(repr(h), repr(p.lhs), repr(p.rhs), repr(p.ratio), repr(p.dt_used)) for h, p in zip(P["h"], probes)]
    _write_csv(cfg.out / "strichartz.csv", ["h", "lhs", "rhs", "ratio", "dt_used"], rows)
    ok = strichartz_uniform([p.ratio for p in probes], P["factor"])
    _write_json(cfg.out / "strichartz.json", {"uniform": ok, "ratios": [p.ratio for p in probes],
                                              "factor": P["factor"]})
    print("uniform" if ok else "not uniform", [round(p.ratio, 4) for p in probes])
    return EXIT_OK if ok else EXIT_ERROR


def cmd_critical_points(cfg: RunConfig) -> int:
    from .oscillatory import critical_points, decay_check, grad_sup_bound, r_alpha, write_critical_points

    P = cfg.params
    alpha = float(P["alpha"])
    rng = np.random.default_rng(cfg.seed)
    bound = grad_sup_bound(alpha, 3)
    records, counts = [], []
    for _ in range(int(P["samples"])):
        v = rng.uniform(-1, 1, 3) * P["v_scale"] * bound
        found = critical_points(v, alpha)
        counts.append(len(found))
        records += list(found)
    write_critical_points(records, cfg.out / "critical_points.csv")
    summary = {"alpha": alpha, "samples": int(P["samples"]), "max_count": max(counts, default=0),
               "count_histogram": {str(k): counts.count(k) for k in sorted(set(counts))}}
    if P["r_alpha"]:
        summary["r_alpha"] = r_alpha(alpha)
    fits = []
    for item in P["decay"]:
        item = _strict(item, DECAY_ITEM, "critical-points.decay")
        if item["xi"] is None:
            raise ConfigError("decay entries need xi")
        fits.append(decay_check(item["xi"], alpha, item["radius"], P["taus"] or None))
    summary["decay"] = fits
    _write_json(cfg.out / "critical_points.json", summary)
    return EXIT_OK


def cmd_newton_poly(cfg: RunConfig) -> int:
    from .newton import TaylorSupport2D, build_polyhedron

    P = cfg.params
    inputs = [(Path(f).stem, TaylorSupport2D.load(cfg.base / f)) for f in P["files"]]
    inputs += [(name, TaylorSupport2D.parse(text)) for name, text in P["polynomials"].items()]
    if not inputs:
        raise ConfigError("newton-poly needs files or polynomials")
    rows, out = [], {}
    for name, S in inputs:
        poly = build_polyhedron(S)
        d = poly.as_dict()
        out[name] = d
        beta, p = (d["decay"] if isinstance(d["decay"], list) else ("unknown", "unknown"))
        rows.append((name, d["d_S"], poly.principal_face.kind, poly.k_S, str(poly.adapted).lower(), beta, p))
    _write_csv(cfg.out / "newton.csv", ["name", "d_S", "principal_face", "k_S", "adapted", "beta", "p"], rows)
    _write_json(cfg.out / "newton.json", out)
    for r in rows:
        print(*r, sep="\t")
    return EXIT_OK


COMMANDS = {
    "simulate": (cmd_simulate, SIMULATE, "integrate the lattice or reference equation"),
    "converge": (cmd_converge, CONVERGE, "lattice-to-continuum rate experiment"),
    "kernel-decay": (cmd_kernel_decay, KERNEL, "dispersive kernel sup-norm decay suite"),
    "strichartz": (cmd_strichartz, STRICHARTZ, "Strichartz ratios across spacings"),
    "critical-points": (cmd_critical_points, CRITICAL, "critical points, classes and decay fits"),
    "newton-poly": (cmd_newton_poly, NEWTON, "Newton polygon data for 2D polynomial phases"),
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fnlslab", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command")
    for name, (_, _, help_) in COMMANDS.items():
        p = sub.add_parser(name, help=help_)
        p.add_argument("config", nargs="?", help="TOML configuration file")
        p.add_argument("--out", help="output directory (overrides the config)")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if not args.command or not args.config:
        ap.print_usage(sys.stderr)
        return EXIT_ERROR
    fn, schema, _ = COMMANDS[args.command]
    try:
        cfg = load_config(args.command, args.config, schema)
        if args.out:
            cfg.out = Path(args.out)
        cfg.out.mkdir(parents=True, exist_ok=True)
        _write_json(cfg.out / "manifest.json", cfg.manifest())
        with _wall_cap(cfg.caps.get("max_wall_s")):
            return fn(cfg)
    except ConfigError as err:
        ap.print_usage(sys.stderr)
        print(f"configuration error: {err}", file=sys.stderr)
        return EXIT_ERROR
    except Exception as err:  # every failure maps to exit 1 with a message
        log.debug("run failed", exc_info=True)
        print(f"error: {type(err).__name__}: {err}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
