"""Command-line experiment runner.

One subcommand per solver/study; every run reads a declarative JSON config,
writes a manifest plus result artifacts into the output directory, and maps
failures to distinct exit codes with a machine-readable error record:

    0  success, all requested tolerances met
    2  config or validation error
    3  solver failure (fixed point, Newton, shooting, ...)
    4  run completed but a requested tolerance was not met

``--override key=value`` (repeatable, dotted paths, JSON values) patches the
config; ``--seed`` and ``--out`` override their config/default counterparts.
The environment variable FSMFG_OUT_ROOT prefixes relative output paths.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import cost as costmod
from . import mfg as mfgmod
from . import nplayer as nplmod
from . import potential as potmod
from . import serialize
from .core import SimplexError, TimeGrid, as_simplex

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_TOLERANCE = 4

SUBCOMMANDS = ("solve-mfg", "solve-nplayer", "simulate", "converge",
               "stationary", "trend", "potential-check", "planning", "audit")


class ConfigError(ValueError):
    pass


class ToleranceError(RuntimeError):
    pass


_SOLVER_DEFAULTS = {
    "damping": 0.5,
    "fp_tol": 1e-9,
    "fp_max_iter": 500,
    "stationary_tol": 1e-8,
    "planning_tol": 1e-6,
}

_TOP_KEYS = {
    "model", "psi", "T", "M", "theta0", "N", "N_list", "mode", "paths",
    "seed", "T_list", "thetaT", "samples", "solver", "start_state",
}


def _check_keys(mapping, allowed, where):
    unknown = set(mapping) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")


def build_coupling(spec, d):
    _check_keys(spec, {"kind", "A", "b"}, "model.coupling")
    kind = spec.get("kind")
    if kind == "self":
        return costmod.coupling_self(d)
    if kind == "zero":
        return costmod.coupling_zero(d)
    if kind == "affine":
        A = np.asarray(spec["A"], dtype=float)
        if A.shape != (d, d):
            raise ConfigError(f"coupling A must be {d}x{d}")
        b = np.asarray(spec.get("b", np.zeros(d)), dtype=float)
        return costmod.coupling_affine(A, b)
    raise ConfigError(f"unknown coupling kind {kind!r}")


def build_psi(spec, d):
    if spec is None:
        return costmod.psi_zero(d)
    _check_keys(spec, {"kind", "A", "b"}, "psi")
    kind = spec.get("kind")
    if kind == "zero":
        return costmod.psi_zero(d)
    if kind == "linear":
        return costmod.psi_linear(d)
    if kind == "affine":
        A = np.asarray(spec["A"], dtype=float)
        b = np.asarray(spec.get("b", np.zeros(d)), dtype=float)
        return costmod.psi_affine(A, b)
    raise ConfigError(f"unknown psi kind {kind!r}")


def build_model(config):
    spec = config.get("model")
    if not isinstance(spec, dict):
        raise ConfigError("config needs a 'model' table")
    _check_keys(spec, {"family", "d", "coupling", "alpha_cap"}, "model")
    family = spec.get("family", "quadratic")
    if family != "quadratic":
        raise ConfigError(f"unknown model family {family!r} (built-in: quadratic)")
    d = spec.get("d")
    if not isinstance(d, int) or d < 2:
        raise ConfigError("model.d must be an integer >= 2")
    coupling = build_coupling(spec.get("coupling", {"kind": "self"}), d)
    psi = build_psi(config.get("psi"), d)
    cap = float(spec.get("alpha_cap", costmod.DEFAULT_ALPHA_CAP))
    return costmod.QuadraticCost(coupling, terminal_cost=psi, alpha_cap=cap)


def load_config(path, overrides=(), seed_flag=None):
    try:
        with open(path) as fh:
            config = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(config, dict):
        raise ConfigError("config root must be a JSON object")
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--override needs key=value, got {item!r}")
        key, _, raw = item.partition("=")
        try:
            val = json.loads(raw)
        except json.JSONDecodeError:
            val = raw
        node = config
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override path {key!r} crosses a non-table")
        node[parts[-1]] = val
    if seed_flag is not None:
        config["seed"] = seed_flag
    _check_keys(config, _TOP_KEYS, "config")
    solver = dict(_SOLVER_DEFAULTS)
    user_solver = config.get("solver", {})
    _check_keys(user_solver, set(_SOLVER_DEFAULTS), "solver")
    solver.update(user_solver)
    config["solver"] = solver
    config.setdefault("seed", 0)
    config.setdefault("M", 1000)
    return config


def _require(config, key, kind=None):
    if key not in config:
        raise ConfigError(f"config key {key!r} is required for this subcommand")
    val = config[key]
    if kind is not None and not isinstance(val, kind):
        raise ConfigError(f"config key {key!r} has wrong type {type(val).__name__}")
    return val


def _grid(config):
    T = float(_require(config, "T"))
    if T <= 0:
        raise ConfigError("T must be positive")
    M = int(config["M"])
    if M < 1:
        raise ConfigError("M must be >= 1")
    return TimeGrid(T, M)


def _theta0(config, d):
    theta0 = _require(config, "theta0", list)
    if len(theta0) != d:
        raise ConfigError(f"theta0 must have length d={d}")
    try:
        return as_simplex(theta0)
    except SimplexError as exc:
        raise ConfigError(f"theta0 is not on the simplex: {exc}") from exc


def _solve_opts(config):
    s = config["solver"]
    return {"damping": float(s["damping"]), "tol": float(s["fp_tol"]),
            "max_iter": int(s["fp_max_iter"])}


# ---------------------------------------------------------------------------
# runners; each returns extra-manifest dict and may raise ToleranceError


def run_solve_mfg(config, outdir, threads):
    model = build_model(config)
    sol = mfgmod.solve_mfg(model, _theta0(config, model.d), _grid(config),
                           **_solve_opts(config))
    serialize.write_json(os.path.join(outdir, "result.json"),
                         serialize.mfg_solution_record(sol))
    return {"residual": sol.residual, "iterations": sol.iterations}


def run_solve_nplayer(config, outdir, threads):
    model = build_model(config)
    N = int(_require(config, "N"))
    grid = _grid(config)
    nf = nplmod.solve_equilibrium(model, N, grid)
    serialize.write_json(os.path.join(outdir, "nfield.json"),
                         serialize.nfield_record(nf))
    prof = nplmod.gradient_profile(nf)
    serialize.write_csv(os.path.join(outdir, "gradient_profile.csv"),
                        ["t", "max_diff"],
                        list(zip(grid.nodes.tolist(), prof.tolist())))
    return {"N": N, "sup_gradient": float(prof.max())}


def run_simulate(config, outdir, threads):
    model = build_model(config)
    N = int(_require(config, "N"))
    grid = _grid(config)
    theta0 = _theta0(config, model.d)
    paths = int(config.get("paths", 10_000))
    nf = nplmod.solve_equilibrium(model, N, grid)
    batch = nplmod.simulate_paths(model, nf, theta0, paths, seed=int(config["seed"]))
    I, _ = batch.states_at_nodes()
    counts = np.stack([(I == i).mean(axis=0) for i in range(model.d)], axis=1)
    header = ["t"] + [f"p_state_{i}" for i in range(model.d)]
    rows = [[t, *counts[k].tolist()] for k, t in enumerate(grid.nodes.tolist())]
    serialize.write_csv(os.path.join(outdir, "marginals.csv"), header, rows)
    n_jumps = sum(len(ev) for ev in batch.events)
    serialize.write_json(os.path.join(outdir, "paths_summary.json"), {
        "schema": "fsmfg/paths-summary/1",
        "paths": paths, "seed": int(config["seed"]),
        "rate_bound": batch.rate_bound, "total_jumps": n_jumps,
        "terminal_marginal": counts[-1].tolist(),
    })
    return {"paths": paths, "total_jumps": n_jumps}


def run_converge(config, outdir, threads):
    model = build_model(config)
    theta0 = _theta0(config, model.d)
    T = float(_require(config, "T"))
    N_list = [int(n) for n in _require(config, "N_list", list)]
    if N_list != sorted(set(N_list)):
        raise ConfigError("N_list must be strictly increasing")
    mode = config.get("mode", "exact")
    if mode not in ("exact", "mc"):
        raise ConfigError("mode must be 'exact' or 'mc'")
    grid = TimeGrid(T, int(config["M"]))
    solution = mfgmod.solve_mfg(model, theta0, grid, **_solve_opts(config))

    def one(N):
        nf = nplmod.solve_equilibrium(model, N, grid)
        if mode == "exact":
            src = nplmod.propagate_exact_law(model, nf, theta0, grid)
        else:
            src = nplmod.simulate_paths(model, nf, theta0,
                                        int(config.get("paths", 10_000)),
                                        seed=int(config["seed"]) + N)
        vw = nplmod.estimate_VW(nf, src, solution)
        return nplmod.ConvergenceRow(N, float(vw.VN.max()), float(vw.WN.max()),
                                     vw.sup_total)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(one, N_list))
    else:
        rows = [one(N) for N in N_list]
    slope, r2 = nplmod.loglog_slope([r.N for r in rows], [r.sup_total for r in rows])
    serialize.write_csv(os.path.join(outdir, "converge.csv"),
                        ["N", "sup_V", "sup_W", "sup_total"],
                        [(r.N, r.sup_V, r.sup_W, r.sup_total) for r in rows])
    serialize.write_json(os.path.join(outdir, "study.json"), {
        "schema": "fsmfg/converge-study/1", "mode": mode,
        "slope": slope, "r_squared": r2,
        "rows": [{"N": r.N, "sup_V": r.sup_V, "sup_W": r.sup_W,
                  "sup_total": r.sup_total} for r in rows],
    })
    return {"slope": slope, "r_squared": r2}


def run_stationary(config, outdir, threads):
    model = build_model(config)
    tol = float(config["solver"]["stationary_tol"])
    triples, spread = mfgmod.multistart_stationary(
        model, n_starts=10, seed=int(config["seed"]), tol=tol)
    best = triples[0]
    serialize.write_json(os.path.join(outdir, "stationary.json"), {
        "schema": "fsmfg/stationary/1",
        "theta_bar": best.theta_bar.tolist(),
        "u_bar": best.u_bar.tolist(),
        "kappa": best.kappa,
        "residual": best.residual,
        "multistart_spread": spread,
    })
    if spread > 1e-7:
        raise ToleranceError(f"multistart spread {spread:.3e} above 1e-7")
    return {"kappa": best.kappa, "spread": spread}


def run_trend(config, outdir, threads):
    model = build_model(config)
    theta0 = _theta0(config, model.d)
    T_list = [float(t) for t in _require(config, "T_list", list)]
    res = mfgmod.trend_experiment(model, theta0, T_list, M=int(config["M"]),
                                  damping=float(config["solver"]["damping"]),
                                  tol=float(config["solver"]["fp_tol"]))
    serialize.write_csv(os.path.join(outdir, "trend.csv"),
                        ["T", "theta_gap", "u_gap"], res.rows())
    serialize.write_json(os.path.join(outdir, "trend.json"), {
        "schema": "fsmfg/trend/1",
        "theta_rate": res.theta_rate, "u_rate": res.u_rate,
        "stationary": {"theta_bar": res.stationary.theta_bar.tolist(),
                       "u_bar": res.stationary.u_bar.tolist(),
                       "kappa": res.stationary.kappa},
        "rows": [{"T": a, "theta_gap": b, "u_gap": c} for a, b, c in res.rows()],
    })
    if not (res.theta_rate > 0 and res.u_rate > 0):
        raise ToleranceError(
            f"no positive decay rate (theta {res.theta_rate:.3e}, u {res.u_rate:.3e})")
    return {"theta_rate": res.theta_rate, "u_rate": res.u_rate}


def run_potential_check(config, outdir, threads):
    model = build_model(config)
    if model.coupling.affine is None:
        raise ConfigError("potential-check needs an affine (gradient) coupling")
    pm = potmod.PotentialModel(model, _phi_from_affine(model))
    sol = mfgmod.solve_mfg(model, _theta0(config, model.d), _grid(config),
                           **_solve_opts(config))
    drift = potmod.conservation_drift(pm, sol)
    mass = float(np.abs(sol.theta.values.sum(axis=1) - 1.0).max())
    resid = potmod.hamilton_residuals(pm, sol)
    probe = potmod.criticality_probe(pm, sol, n_directions=8,
                                     seed=int(config["seed"]))
    serialize.write_json(os.path.join(outdir, "potential_check.json"), {
        "schema": "fsmfg/potential-check/1",
        "hamiltonian_drift": drift,
        "mass_drift": mass,
        "hamilton_residual": resid,
        "criticality_worst": probe.worst,
    })
    if drift > 1e-6:
        raise ToleranceError(f"Hamiltonian drift {drift:.3e} above 1e-6")
    if mass > 1e-10:
        raise ToleranceError(f"mass drift {mass:.3e} above 1e-10")
    return {"hamiltonian_drift": drift, "criticality_worst": probe.worst}


def _phi_from_affine(model):
    A, b = model.coupling.affine
    if np.abs(A - A.T).max() > 1e-12:
        raise ConfigError("potential-check needs symmetric coupling matrix A")
    return lambda th: 0.5 * float(th @ A @ th) + float(b @ th)


def run_planning(config, outdir, threads):
    model = build_model(config)
    theta0 = _theta0(config, model.d)
    thetaT = np.asarray(_require(config, "thetaT", list), dtype=float)
    try:
        thetaT = as_simplex(thetaT)
    except SimplexError as exc:
        raise ConfigError(f"thetaT is not on the simplex: {exc}") from exc
    res = potmod.solve_planning(model, theta0, thetaT, float(_require(config, "T")),
                                grid_M=int(config["M"]),
                                tol=float(config["solver"]["planning_tol"]),
                                solver_opts=_solve_opts(config))
    serialize.write_json(os.path.join(outdir, "planning.json"), {
        "schema": "fsmfg/planning/1",
        "terminal_value": res.terminal_value.tolist(),
        "terminal_gap": res.terminal_gap,
        "iterations": res.iterations,
    })
    serialize.write_json(os.path.join(outdir, "result.json"),
                         serialize.mfg_solution_record(res.solution))
    return {"terminal_gap": res.terminal_gap, "iterations": res.iterations}


def run_audit(config, outdir, threads):
    model = build_model(config)
    samples = int(config.get("samples", 2000))
    seed = int(config["seed"])
    lip = costmod.lipschitz_audit(model, samples=min(samples, 2000), seed=seed)
    mono = mfgmod.monotonicity_audit(model, samples=min(samples, 500), seed=seed)
    thr = costmod.contractivity_threshold(model, seed=seed)
    rng = np.random.default_rng(seed)
    sign_fail = 0
    for _ in range(200):
        u = rng.standard_normal(model.d)
        spread = 0.5 * (u.max() - u.min())
        u *= 1.2 * thr / max(spread, 1e-12)
        th = rng.dirichlet(np.ones(model.d))
        chk = costmod.check_contractive_signs(model, u, th)
        if chk.applicable and not chk.ok:
            sign_fail += 1
    serialize.write_json(os.path.join(outdir, "audit.json"), {
        "schema": "fsmfg/audit/1",
        "lipschitz": {
            "max_p_ratio": lip.max_p_ratio, "p_bound": lip.p_bound,
            "max_theta_ratio": lip.max_theta_ratio, "theta_bound": lip.theta_bound,
            "p_violations": lip.p_violations, "theta_violations": lip.theta_violations,
            "cap_hits": lip.cap_hits,
        },
        "monotonicity": {
            "psi_worst": mono.psi_worst,
            "concavity_worst": mono.concavity_worst,
            "gamma_i": [None if not np.isfinite(g) else float(g) for g in mono.gamma_i],
            "monot_worst": mono.monot_worst,
            "gamma": None if not np.isfinite(mono.gamma) else float(mono.gamma),
        },
        "contractivity": {"threshold": thr, "sign_failures": sign_fail},
    })
    if not lip.ok or not mono.ok() or sign_fail:
        raise ToleranceError("audit found violations; see audit.json")
    return {"lipschitz_ok": lip.ok, "monotonicity_ok": mono.ok(),
            "contractivity_sign_failures": sign_fail}


_RUNNERS = {
    "solve-mfg": run_solve_mfg,
    "solve-nplayer": run_solve_nplayer,
    "simulate": run_simulate,
    "converge": run_converge,
    "stationary": run_stationary,
    "trend": run_trend,
    "potential-check": run_potential_check,
    "planning": run_planning,
    "audit": run_audit,
}


def _error_record(outdir, exc, code):
    try:
        serialize.write_json(os.path.join(outdir, "error.json"), {
            "schema": "fsmfg/error/1",
            "type": type(exc).__name__,
            "message": str(exc),
            "exit_code": code,
        })
    except OSError:
        pass


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="fsmfg",
        description="Finite-state mean field game experiment runner")
    parser.add_argument("subcommand", choices=SUBCOMMANDS)
    parser.add_argument("--config", required=True, help="JSON config file")
    parser.add_argument("--seed", type=int, default=None, help="override config seed")
    parser.add_argument("--out", default="out", help="output directory")
    parser.add_argument("--threads", type=int, default=1,
                        help="parallel workers for sweep subcommands")
    parser.add_argument("--override", action="append", default=[],
                        metavar="KEY=VAL", help="config override (dotted path)")
    args = parser.parse_args(argv)

    outdir = args.out
    root = os.environ.get("FSMFG_OUT_ROOT")
    if root and not os.path.isabs(outdir):
        outdir = os.path.join(root, outdir)
    os.makedirs(outdir, exist_ok=True)

    t0 = time.monotonic()
    try:
        config = load_config(args.config, args.override, args.seed)
    except ConfigError as exc:
        _error_record(outdir, exc, EXIT_CONFIG)
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        extra = _RUNNERS[args.subcommand](config, outdir, max(1, args.threads))
        code = EXIT_OK
    except ConfigError as exc:
        _error_record(outdir, exc, EXIT_CONFIG)
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ToleranceError as exc:
        _error_record(outdir, exc, EXIT_TOLERANCE)
        print(f"tolerance not met: {exc}", file=sys.stderr)
        extra = {"tolerance_error": str(exc)}
        code = EXIT_TOLERANCE
    except (mfgmod.FixedPointError, mfgmod.StationaryError, potmod.PlanningError,
            nplmod.RateBoundError, costmod.ControlSolveError, SimplexError,
            ValueError, RuntimeError) as exc:
        _error_record(outdir, exc, EXIT_SOLVER)
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    manifest = serialize.manifest_record(
        args.subcommand, config, config["seed"], time.monotonic() - t0, extra)
    serialize.write_json(os.path.join(outdir, "manifest.json"), manifest)
    return code


if __name__ == "__main__":
    sys.exit(main())
