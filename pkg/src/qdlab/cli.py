"""Command-line entry point: `qdlab <command> [--config cfg.json] [--out dir] ...`.

Every run writes its module outputs plus run_meta.json into --out.  Exit
codes: 0 success, 2 verification failure, 1 error.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import platform
import sys
import time
from contextlib import nullcontext

import numpy as np

EXIT_OK, EXIT_ERROR, EXIT_VERIFY = 0, 1, 2
EXAMPLES = ("three-point", "radial-energy", "equal-energy-root", "nonexistence", "junction", "symmetric")
METHODS = ("sm", "smmu", "construct", "point-mass")


class ConfigError(ValueError):
    pass


# --- configuration --------------------------------------------------------

def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    with open(path) as fh:
        cfg = json.load(fh)
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    return cfg


def _num(cfg: dict, key: str, default=None, positive: bool = False):
    v = cfg.get(key, default)
    if v is None:
        return None
    if not isinstance(v, (int, float)) or isinstance(v, bool) or not math.isfinite(v):
        raise ConfigError(f"{key} must be a finite number")
    if positive and v <= 0:
        raise ConfigError(f"{key} must be positive")
    return float(v)


def _measure(spec_cfg) -> "Measure":
    from .measures import Measure

    if spec_cfg is None:
        return Measure()
    if not isinstance(spec_cfg, dict):
        raise ConfigError("a measure is an object with an 'atoms' list")
    atoms = spec_cfg.get("atoms", [])
    if not isinstance(atoms, list) or any(not isinstance(a, list) or len(a) != 3 for a in atoms):
        raise ConfigError("atoms must be a list of [x, y, mass] triples")
    try:
        return Measure(tuple(tuple(float(t) for t in a) for a in atoms))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _grid(cfg: dict, mu, h: float, eps: float | None):
    from .balayage import auto_grid
    from .potential import GridSpec

    g = cfg.get("grid", "AUTO")
    if g == "AUTO":
        return auto_grid(mu, h, eps)
    if isinstance(g, dict):
        try:
            return GridSpec(float(g["x0"]), float(g["y0"]), int(g["nx"]), int(g["ny"]), float(g.get("h", h)))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad grid: {exc}") from exc
    raise ConfigError("grid must be 'AUTO' or an object {x0, y0, nx, ny, h}")


def _domain(cfg, spec):
    from .analytic import sector_mask

    d = cfg.get("D", "ALL")
    if d == "ALL":
        return None
    X, Y = spec.mesh()
    if isinstance(d, dict) and "disk" in d:
        cx, cy, r = (float(t) for t in d["disk"])
        return np.hypot(X - cx, Y - cy) < r
    if isinstance(d, dict) and "sector" in d:
        return sector_mask(spec, float(d["sector"]))
    if isinstance(d, dict) and "halfplane_x_gt" in d:
        return X > float(d["halfplane_x_gt"])
    raise ConfigError("D must be 'ALL' or one of {disk: [x, y, r]}, {sector: θ0}, {halfplane_x_gt: a}")


# --- outputs ---------------------------------------------------------------

def _versions() -> dict:
    import pyamg
    import scipy

    from . import __version__

    return {"python": platform.python_version(), "numpy": np.__version__, "scipy": scipy.__version__,
            "pyamg": pyamg.__version__, "qdlab": __version__}


def _write_json(out: str, name: str, data) -> None:
    from .multiphase import _jsonable

    with open(os.path.join(out, name), "w") as fh:
        json.dump(_jsonable(data), fh, indent=2, sort_keys=True)


# --- commands --------------------------------------------------------------

def cmd_balayage(cfg: dict, args, out: str) -> tuple[int, dict]:
    from .balayage import partial_balayage
    from .verify import check_one_phase_qd

    h = _num(cfg, "h", args.h or 1 / 128, positive=True)
    eps = _num(cfg, "eps", None, positive=True)
    mu = _measure(cfg.get("measure"))
    spec = _grid(cfg, mu, h, eps)
    D = _domain(cfg, spec)
    rho = _num(cfg, "rho", 1.0)
    if rho < 0:
        raise ConfigError("rho must be non-negative")
    res = partial_balayage(mu, D, rho, spec, eps=eps, solver=cfg.get("solver", "pdas"))
    res.save(out)
    rep = check_one_phase_qd(res.omega, res.mu, res.W) if D is None and rho == 1.0 else None
    if rep is not None:
        rep.save(os.path.join(out, "verify_report.json"))
    return (EXIT_OK if rep is None or rep.overall else EXIT_VERIFY), {"kind": "balayage", "report": res.report()}


def _problem_from(cfg: dict, h: float, method: str):
    from .balayage import auto_grid
    from .measures import Measure
    from .multiphase import PhaseProblem
    from .potential import GridFunction

    raw = cfg.get("measures")
    if not isinstance(raw, list) or not raw:
        raise ConfigError("multiphase needs a non-empty 'measures' list")
    mus = [_measure(m) for m in raw]
    eps = _num(cfg, "eps", None, positive=True)
    total = mus[0]
    for m in mus[1:]:
        total = total + m
    spec = _grid(cfg, total, h, eps)
    if method == "smmu":
        # seeds are disks carrying their atom's mass uniformly
        X, Y = spec.mesh()
        radius = eps or 4 * h
        dens, seeds = [], []
        for mu in mus:
            d = np.zeros(spec.shape)
            A = np.zeros(spec.shape, bool)
            for (x, y, c) in mu.atoms:
                disk = np.hypot(X - x, Y - y) <= radius
                d[disk] += c / (disk.sum() * h * h)
                A |= disk
            dens.append(Measure(density=GridFunction(spec, d)))
            seeds.append(A)
        return PhaseProblem(dens, spec, eps=radius, seeds=seeds), mus
    return PhaseProblem(mus, spec, eps=eps), mus


def _atom_exclusion(spec, mus, radius):
    X, Y = spec.mesh()
    ex = np.zeros(spec.shape, bool)
    for mu in mus:
        for (x, y, _) in mu.atoms:
            ex |= np.hypot(X - x, Y - y) < radius
    return ex


def _save_state(state, problem, out, *, exclude=None, smmu=False, extra=None) -> tuple[int, dict]:
    from .verify import certify

    state.save(out)
    rep = certify(state, problem, exclude=exclude, smmu=smmu)
    rep.save(os.path.join(out, "verify_report.json"))
    info = {k: v for k, v in state.info.items() if k != "energy_trace"}
    if extra:
        info.update(extra)
    return (EXIT_OK if rep.overall else EXIT_VERIFY), info


def cmd_multiphase(cfg: dict, args, out: str) -> tuple[int, dict]:
    from .multiphase import construct_via_disjoint_one_phase, minimize_Sm, minimize_Smmu, point_mass_qd

    method = args.method or cfg.get("method", "sm")
    if method not in METHODS:
        raise ConfigError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")
    h = _num(cfg, "h", args.h or 1 / 128, positive=True)
    if method == "point-mass":
        mus = [_measure(m) for m in cfg.get("measures", [])]
        if not mus:
            raise ConfigError("multiphase needs a non-empty 'measures' list")
        total = mus[0]
        for m in mus[1:]:
            total = total + m
        spec = _grid(cfg, total, h, None)
        state, problem = point_mass_qd(mus, spec)
        ex = _atom_exclusion(spec, mus, 2 * state.info["delta"])
        code, info = _save_state(state, problem, out, exclude=ex, smmu=True)
        return code, {"kind": "multiphase", "method": method, **info}
    problem, mus = _problem_from(cfg, h, method)
    if method == "sm":
        state = minimize_Sm(problem)
    elif method == "smmu":
        state = minimize_Smmu(problem)
    else:
        state = construct_via_disjoint_one_phase(problem)
    code, info = _save_state(state, problem, out, smmu=(method == "smmu"))
    return code, {"kind": "multiphase", "method": method, **info}


def cmd_sector(cfg: dict, args, out: str) -> tuple[int, dict]:
    from .analytic import SectorProblem, sector_balayage
    from .potential import GridFunction, write_gf1

    h = _num(cfg, "h", args.h or 1 / 128, positive=True)
    p = SectorProblem(_num(cfg, "theta0", math.pi / 3), _num(cfg, "C", 50.0, positive=True), h)
    res = sector_balayage(p)
    res.result.save(out)
    data = {"theta0": p.theta0, "C": p.C, "h": h, "truncated": res.truncated, "hole_radius": res.hole_radius()}
    _write_json(out, "sector_report.json", data)
    return EXIT_OK, {"kind": "sector", **data}


def _example_three_point(cfg, args, out):
    from .measures import Measure
    from .multiphase import PhaseProblem, construct_via_disjoint_one_phase
    from .balayage import auto_grid

    h = _num(cfg, "h", args.h or 1 / 128, positive=True)
    c = 4 * math.pi / 9
    mus = [Measure.point(x, 0.0, c) for x in (-1.0, 0.0, 1.0)]
    spec = auto_grid(mus[0] + mus[1] + mus[2], h)
    problem = PhaseProblem(mus, spec)
    state = construct_via_disjoint_one_phase(problem)
    code, info = _save_state(state, problem, out)
    return code, {"kind": "three-point", **info}


def _example_radial_energy(cfg, args, out):
    from .analytic import (discrete_radial_energy, radial_W, radial_energy, radial_energy_quadrature,
                           solve_equal_energy)

    h = _num(cfg, "h", args.h or 1 / 128, positive=True)
    R = solve_equal_energy()
    rows = []
    data = {}
    for (R1, R2) in ((4.0, 16.0), (R, 17.0)):
        r = np.linspace(0.0, R2 + 1.0, 401)
        prof = radial_W(R1, R2, r)
        name = f"profile_{R1:.6g}_{R2:.6g}.csv"
        np.savetxt(os.path.join(out, name), np.column_stack([r, prof]), delimiter=",", header="r,W",
                   comments="", fmt="%.17g")
        E = radial_energy(R1, R2)
        Eq = radial_energy_quadrature(R1, R2)
        Ed = discrete_radial_energy(R1, R2, h)
        data[f"{R1:.12g},{R2:.12g}"] = {"formula": E, "quadrature": Eq, "discrete": Ed, "h": h,
                                        "quadrature_rel_diff": abs(E - Eq) / abs(E),
                                        "discrete_rel_diff": abs(E - Ed) / abs(E)}
        rows.append(abs(E - Eq) / abs(E))
    _write_json(out, "radial_energy.json", data)
    return EXIT_OK, {"kind": "radial-energy", **data}


def _example_equal_energy(cfg, args, out):
    from .analytic import equal_energy_gap, radial_energy, solve_equal_energy

    R = solve_equal_energy()
    data = {"R": R, "gap": equal_energy_gap(R), "E_4_16": radial_energy(4.0, 16.0), "interval": [5.0, 5.1]}
    _write_json(out, "equal_energy.json", data)
    print(f"R = {R:.12f}")
    return EXIT_OK, {"kind": "equal-energy-root", **data}


def _example_nonexistence(cfg, args, out):
    from .analytic import nonexistence_search, radial_two_phase_root

    n = int(cfg.get("resolution", 200))
    pos = nonexistence_search(n, 2)
    zero = nonexistence_search(n, 2, branch="r1=0")
    root = radial_two_phase_root()
    data = {"r1>0": pos.to_dict(), "r1=0": zero.to_dict(), "r1=0_root": root}
    _write_json(out, "nonexistence.json", data)
    return EXIT_OK, {"kind": "nonexistence", **data}


def _example_junction(cfg, args, out):
    from .analytic import SectorProblem, barrier_certificate, junction_test, sector_balayage, Inconclusive
    from .potential import GridFunction, write_gf1

    h = _num(cfg, "h", args.h or 1 / 128, positive=True)
    cases = cfg.get("cases", [[math.pi / 3, 50.0], [math.pi / 4, 100.0], [math.pi / 4, 1000.0],
                              [math.pi / 4, 10000.0], [math.pi / 8, 1000.0]])
    results = []
    for k, (th, C) in enumerate(cases):
        t0 = time.perf_counter()
        res = sector_balayage(SectorProblem(float(th), float(C), h))
        try:
            ans = junction_test(th, C, 4 * h, h, result=res)
        except Inconclusive:
            ans = None
        row = {"theta0": th, "C": C, "junction": ans, "hole_radius": res.hole_radius(),
               "truncated": res.truncated, "seconds": time.perf_counter() - t0}
        if abs(th - math.pi / 4) < 1e-12:
            cert = barrier_certificate(res)
            row["barrier"] = cert.__dict__
        write_gf1(os.path.join(out, f"omega_{k}.gf1"), GridFunction(res.result.spec, res.omega.astype(float)))
        results.append(row)
    _write_json(out, "junction.json", {"eps": 4 * h, "cases": results})
    return EXIT_OK, {"kind": "junction", "cases": results}


def _example_symmetric(cfg, args, out):
    from .analytic import symmetric_mqd

    h = _num(cfg, "h", args.h or 1 / 128, positive=True)
    m = int(cfg.get("m", 3))
    C = _num(cfg, "C", 50.0, positive=True)
    state, problem = symmetric_mqd(m, C, h)
    code, info = _save_state(state, problem, out)
    return code, {"kind": "symmetric", "m": m, "C": C, **info}


_EXAMPLE_FUNCS = {
    "three-point": _example_three_point,
    "radial-energy": _example_radial_energy,
    "equal-energy-root": _example_equal_energy,
    "nonexistence": _example_nonexistence,
    "junction": _example_junction,
    "symmetric": _example_symmetric,
}


def cmd_example(cfg: dict, args, out: str) -> tuple[int, dict]:
    if args.name not in _EXAMPLE_FUNCS:
        raise ConfigError(f"unknown example {args.name!r}; choose from {', '.join(EXAMPLES)}")
    return _EXAMPLE_FUNCS[args.name](cfg, args, out)


# --- verify ----------------------------------------------------------------

def _load_state(out: str, m: int, tau: float):
    from .multiphase import SegregatedState
    from .potential import read_gf1

    return SegregatedState([read_gf1(os.path.join(out, f"u_{j}.gf1")) for j in range(1, m + 1)], tau)


def cmd_verify(cfg: dict, args, out: str) -> tuple[int, dict]:
    """Re-check a saved run directory; the run's own config rebuilds the problem."""
    from .verify import Check, VerificationReport, certify, check_one_phase_qd
    from .potential import read_gf1

    target = args.target or out
    meta_path = os.path.join(target, "run_meta.json")
    if not os.path.exists(meta_path):
        raise ConfigError(f"{target} has no run_meta.json")
    with open(meta_path) as fh:
        meta = json.load(fh)
    kind = meta.get("result", {}).get("kind")
    mcfg = meta.get("config", {})
    margs = argparse.Namespace(**meta.get("args", {}))
    checks = []
    if kind == "balayage":
        W = read_gf1(os.path.join(target, "W.gf1"))
        omega = read_gf1(os.path.join(target, "omega.gf1")).values > 0.5
        rep = VerificationReport([Check("mask_matches_W", float((omega != (W.values > meta["result"]["report"]["tau_pos"])).sum()),
                                        0.0, bool((omega == (W.values > meta["result"]["report"]["tau_pos"])).all()))])
        if mcfg.get("D", "ALL") == "ALL" and mcfg.get("rho", 1.0) == 1.0:
            from .balayage import prepare_source

            mu = prepare_source(_measure(mcfg.get("measure")), W.spec, _num(mcfg, "eps", None))
            rep = rep.merged(check_one_phase_qd(omega, mu, W))
    elif kind in ("three-point", "multiphase", "symmetric"):
        rep = _reverify_state(kind, meta, mcfg, margs, target)
    elif kind == "equal-energy-root":
        from .analytic import equal_energy_gap, radial_energy

        R = meta["result"]["R"]
        g = abs(equal_energy_gap(R))
        rep = VerificationReport([Check("in_interval", R, 5.0, 5.0 < R < 5.1, None, "min"),
                                  Check("gap", g, 1e-8 * abs(radial_energy(4, 16)), g <= 1e-8 * abs(radial_energy(4, 16)))])
    elif kind == "radial-energy":
        from .analytic import radial_energy, radial_energy_quadrature

        for key in meta["result"]:
            if key == "kind":
                continue
            R1, R2 = (float(t) for t in key.split(","))
            d = abs(radial_energy(R1, R2) - radial_energy_quadrature(R1, R2)) / abs(radial_energy(R1, R2))
            checks.append(Check(f"quadrature_{key}", d, 1e-8, d <= 1e-8))
        rep = VerificationReport(checks)
    elif kind == "nonexistence":
        from .analytic import nonexistence_residuals

        R = meta["result"]["r1>0"]["extra"]["R"]
        pos = meta["result"]["r1>0"]
        got = float(np.sqrt((nonexistence_residuals(*pos["argmin"], R) ** 2).sum()))
        checks.append(Check("r1>0_recomputed", abs(got - pos["min_residual"]), 1e-9 * (1 + got),
                            abs(got - pos["min_residual"]) <= 1e-9 * (1 + got)))
        root = meta["result"]["r1=0_root"]
        res = float(np.abs(nonexistence_residuals(0.0, root["r2"], root["r3"], R, "r1=0")).max())
        checks.append(Check("r1=0_root_recomputed", res, 1e-8, res <= 1e-8))
        rep = VerificationReport(checks)
    elif kind in ("junction", "sector"):
        rows = meta["result"]["cases"] if kind == "junction" else [meta["result"]]
        for k, row in enumerate(rows):
            name = f"omega_{k}.gf1" if kind == "junction" else "omega.gf1"
            om = read_gf1(os.path.join(target, name))
            X, Y = om.spec.mesh()
            mask = om.values > 0.5
            hole = float(np.hypot(X[mask], Y[mask]).min()) if mask.any() else math.inf
            ok = math.isclose(hole, row["hole_radius"], rel_tol=0, abs_tol=1e-12) or hole == row["hole_radius"]
            checks.append(Check(f"hole_radius_{k}", abs(hole - row["hole_radius"]) if math.isfinite(hole) else 0.0,
                                0.0, ok))
            inside = np.abs(np.arctan2(Y[mask], X[mask])) < row["theta0"]
            checks.append(Check(f"inside_sector_{k}", float((~inside).sum()), 0.0, bool(inside.all())))
        rep = VerificationReport(checks)
    else:
        raise ConfigError(f"cannot verify a run of kind {kind!r}")
    rep.save(os.path.join(target, "verify_report.json") if args.target else os.path.join(out, "verify_report.json"))
    print(rep.summary())
    return (EXIT_OK if rep.overall else EXIT_VERIFY), {"kind": "verify", "target": target, "status": rep.status}


def _reverify_state(kind, meta, mcfg, margs, target):
    from .verify import certify

    if kind == "three-point":
        from .measures import Measure
        from .multiphase import PhaseProblem
        from .balayage import auto_grid

        h = _num(mcfg, "h", getattr(margs, "h", None) or 1 / 128)
        c = 4 * math.pi / 9
        mus = [Measure.point(x, 0.0, c) for x in (-1.0, 0.0, 1.0)]
        problem = PhaseProblem(mus, auto_grid(mus[0] + mus[1] + mus[2], h))
        return certify(_load_state(target, 3, problem.tau), problem)
    if kind == "symmetric":
        from .analytic import symmetric_problem

        h = _num(mcfg, "h", getattr(margs, "h", None) or 1 / 128)
        problem = symmetric_problem(int(mcfg.get("m", 3)), _num(mcfg, "C", 50.0), h)
        return certify(_load_state(target, problem.m, problem.tau), problem)
    method = meta["result"]["method"]
    h = _num(mcfg, "h", getattr(margs, "h", None) or 1 / 128)
    if method == "point-mass":
        from .multiphase import PhaseProblem, point_mass_problem

        mus = [_measure(m) for m in mcfg["measures"]]
        total = mus[0]
        for m in mus[1:]:
            total = total + m
        problem = point_mass_problem(mus, _grid(mcfg, total, h, None))
        ex = _atom_exclusion(problem.spec, mus, 2 * problem.eps)
        return certify(_load_state(target, problem.m, problem.tau), problem, exclude=ex, smmu=True)
    problem, _ = _problem_from(mcfg, h, method)
    return certify(_load_state(target, problem.m, problem.tau), problem, smmu=(method == "smmu"))


# --- entry point -----------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qdlab", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON configuration file")
    common.add_argument("--out", default="qdlab_out", help="output directory")
    common.add_argument("--h", type=float, help="grid spacing (overrides the config)")
    common.add_argument("--threads", type=int, help="BLAS/solver thread count")
    common.add_argument("--seed", type=int, default=0, help="random seed, recorded in run_meta.json")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("balayage", parents=[common], help="one-phase partial balayage")
    mp = sub.add_parser("multiphase", parents=[common], help="m-phase minimisation or construction")
    mp.add_argument("--method", choices=METHODS)
    vp = sub.add_parser("verify", parents=[common], help="re-check a saved run directory")
    vp.add_argument("target", nargs="?", help="run directory (default: --out)")
    ep = sub.add_parser("example", parents=[common], help="reproduce a planar example")
    ep.add_argument("name", choices=EXAMPLES)
    sub.add_parser("sector", parents=[common], help="partial balayage of a point mass in a sector")
    return p


_COMMANDS = {"balayage": cmd_balayage, "multiphase": cmd_multiphase, "verify": cmd_verify,
             "example": cmd_example, "sector": cmd_sector}


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_ERROR if exc.code else EXIT_OK
    t0 = time.perf_counter()
    try:
        cfg = _load_config(args.config)
        if args.h is not None and not args.h > 0:
            raise ConfigError("--h must be positive")
        if args.threads is not None and args.threads < 1:
            raise ConfigError("--threads must be at least 1")
        out = args.out if args.command != "verify" or args.target is None else args.target
        os.makedirs(out, exist_ok=True)
        limiter = nullcontext()
        if args.threads:
            from threadpoolctl import threadpool_limits

            limiter = threadpool_limits(args.threads)
        np.random.seed(args.seed % 2 ** 32)
        with limiter:
            code, result = _COMMANDS[args.command](cfg, args, out)
    except (ConfigError, ValueError, OSError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    meta = {"command": args.command, "args": {k: v for k, v in vars(args).items() if k != "command"},
            "config": cfg, "versions": _versions(), "threads": args.threads, "seed": args.seed,
            "timings": {"total_seconds": time.perf_counter() - t0}, "exit_code": code, "result": result}
    if args.command != "verify":
        _write_json(out, "run_meta.json", meta)
    return code


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
