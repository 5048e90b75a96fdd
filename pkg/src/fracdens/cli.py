"""Command-line entry point.

Exit status: 0 when every internal check passes, 1 when a check fails
(results are still written), 2 on usage or config errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import __version__
from .config import SCHEMA_HELP, RunManifest, atomic_write_text, load_config, write_manifest
from .errors import BudgetTooSmall, ConfigError, FracDensError, Nonconvergence
from .harness import (
    ExperimentConfig,
    OracleBudget,
    OracleDensity,
    build_oracle,
    closed_form_oracle,
    fmt,
    gaussian_density,
    mc_mse,
    mc_variance_scaling,
    variance_h_scaling,
    write_result,
    _jsonable,
)
from .kernels import kernel_moment, legendre_kernel
from .rates import RateRegime, rates_record
from .sde import check_semi_contractive, drift_from_config, simulate_stationary
from .theory_checks import ControlOdeRun, control_ode_run, control_ode_suite, innovation_decomposition_check

THREADS_ENV = "FRACDENS_THREADS"
SUBCOMMANDS = ("simulate", "kernel-check", "drift-check", "oracle-build", "mse-rates", "variance-scaling",
               "variance-h", "control-ode", "innovation-check", "rates")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n\n{SCHEMA_HELP}")
        sys.exit(2)


def _default_threads() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML/JSON config file or a run manifest")
    common.add_argument("--seed", type=int, help="base seed (overrides the config)")
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("--threads", type=int, default=_default_threads(),
                        help=f"worker processes (default from ${THREADS_ENV} or 1)")

    p = _Parser(prog="fracdens", description=__doc__.splitlines()[0], parents=[common])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", parents=[common], help="simulate one stationary path")
    s.add_argument("--H", type=float)
    s.add_argument("--T", type=float)
    s.add_argument("--dt", type=float)
    s.add_argument("--d", type=int)
    s.add_argument("--drift", help="builtin drift name")

    k = sub.add_parser("kernel-check", parents=[common], help="moment conditions of the order-M kernel")
    k.add_argument("--M", type=int, required=True)
    k.add_argument("--nodes", type=int, default=64)

    dc = sub.add_parser("drift-check", parents=[common], help="test declared drift constants on random pairs")
    dc.add_argument("--drift", default=None)
    dc.add_argument("--d", type=int, default=None)
    dc.add_argument("--pairs", type=int, default=100_000)
    dc.add_argument("--radius", type=float, default=5.0)

    for name, hlp in (("oracle-build", "long-run reference density"), ("mse-rates", "MSE against an oracle"),
                      ("variance-scaling", "variance versus T at fixed h"),
                      ("variance-h", "scaled variance versus h at fixed T")):
        sub.add_parser(name, parents=[common], help=hlp)

    c = sub.add_parser("control-ode", parents=[common], help="finite-time control ODE")
    c.add_argument("--runs", type=int, default=None, help="randomized suite size (0: single fOU run)")
    c.add_argument("--n-steps", type=int, default=None)

    ic = sub.add_parser("innovation-check", parents=[common], help="past/innovation split of an fBm increment")
    ic.add_argument("--H", type=float)
    ic.add_argument("--n-steps", type=int)

    r = sub.add_parser("rates", parents=[common], help="bandwidth exponents and rates")
    r.add_argument("--H", type=float, required=True)
    r.add_argument("--beta", type=float, required=True)
    r.add_argument("--d", type=int, default=1)
    r.add_argument("--eps", type=float, default=0.01)
    r.add_argument("--variant", choices=("basic", "improved"), default="basic")
    r.add_argument("--T-grid", type=float, nargs="+", default=[2.0**j for j in range(6, 12)])
    return p


# --------------------------------------------------------------------------
# subcommand bodies: each returns (resolved config, outputs, checks)

def _section(cfg: dict, name: str) -> dict:
    sec = cfg.get(name) or {}
    if not isinstance(sec, dict):
        raise ConfigError(f"section {name!r} must be a mapping")
    return dict(sec)


def _write_json(path: str, obj) -> str:
    atomic_write_text(path, json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")
    return path


def cmd_simulate(args, cfg, seed):
    sec = {"drift": {"name": "fou", "kappa": 1.0}, "sigma": 1.0, "H": 0.25, "d": 1, "T": 100.0, "dt": 0.01,
           "burn_in": 50.0}
    sec.update(_section(cfg, "simulate"))
    for key in ("H", "T", "dt", "d"):
        if getattr(args, key) is not None:
            sec[key] = getattr(args, key)
    if args.drift is not None:
        sec["drift"] = {"name": args.drift}
    drift = drift_from_config(sec["drift"], int(sec["d"]))
    traj = simulate_stationary(drift, sec["sigma"], float(sec["H"]), float(sec["T"]), float(sec["dt"]),
                               sec["burn_in"], seed)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "trajectory.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t"] + [f"x_{i + 1}" for i in range(traj.d)])
        for t, row in zip(traj.times, traj.states):
            w.writerow([fmt(t)] + [fmt(v) for v in row])
    finite = bool(np.all(np.isfinite(traj.states)))
    summary = {"T": traj.T, "dt": traj.dt, "n": traj.states.shape[0], "mean": traj.states.mean(axis=0),
               "var": traj.states.var(axis=0), "finite": finite}
    return {"simulate": sec}, [path, _write_json(os.path.join(args.out, "simulate.json"), summary)], {"finite": finite}


def cmd_kernel_check(args, cfg, seed):
    K = legendre_kernel(args.M)
    devs = [abs(kernel_moment(K, i, args.nodes) - (1.0 if i == 0 else 0.0)) for i in range(args.M + 1)]
    rec = {"M": args.M, "nodes": args.nodes, "moment_deviations": devs, "max_abs_deviation": max(devs),
           "sup_norm": K.sup_norm(), "coefficients": K.coeffs.tolist()}
    print(json.dumps(_jsonable(rec)))
    ok = max(devs) < 1e-10
    path = _write_json(os.path.join(args.out, "kernel-check.json"), rec)
    return {"M": args.M, "nodes": args.nodes}, [path], {"moments": ok}


def cmd_drift_check(args, cfg, seed):
    exp = _section(cfg, "experiment")
    dcfg = {"name": args.drift} if args.drift else exp.get("drift", {"name": "fou", "kappa": 1.0})
    d = args.d or int(exp.get("d", 1))
    drift = drift_from_config(dcfg, d)
    rep = check_semi_contractive(drift, args.pairs, args.radius, seed)
    rec = {"drift": drift.describe(), "violations": rep.violations, "lipschitz_violations": rep.lip_violations,
           "worst_margin": rep.worst_margin, "pairs": rep.n_pairs}
    print(json.dumps(_jsonable(rec)))
    path = _write_json(os.path.join(args.out, "drift-check.json"), rec)
    return {"drift": dcfg, "d": d, "pairs": args.pairs, "radius": args.radius}, [path], {"semi_contractive": rep.ok}


def _experiment(cfg, seed) -> ExperimentConfig:
    sec = _section(cfg, "experiment")
    sec["seed"] = seed
    return ExperimentConfig.from_dict(sec)


def _oracle(cfg, exp: ExperimentConfig, args, seed) -> tuple[OracleDensity, dict]:
    sec = _section(cfg, "oracle")
    if "path" in sec:
        with open(sec["path"]) as fh:
            return OracleDensity.from_dict(json.load(fh)), sec
    if sec.get("closed_form") == "gaussian":
        pdf = gaussian_density(sec["mean"], sec["cov"])
        return closed_form_oracle(pdf, exp.query_points, exp.d, "gaussian"), sec
    oseed = int(sec.pop("seed", seed))
    budget = OracleBudget.from_dict(sec or {"T_oracle": 20 * max(exp.T_grid)})
    orc = build_oracle(exp.drift, exp.sigma, exp.H, budget, oseed, exp.d, exp.query_points, args.threads,
                       max_T=max(exp.T_grid))
    resolved = dict(budget.__dict__, seed=oseed)
    return orc, resolved


def cmd_oracle_build(args, cfg, seed):
    exp = _experiment(cfg, seed)
    orc, osec = _oracle(cfg, exp, args, seed)
    path = _write_json(os.path.join(args.out, "oracle.json"), orc.to_dict())
    checks = {"nonnegative_at_queries": bool(np.all(orc.at(exp.query_points) >= 0))}
    if "mass" in orc.meta:
        checks["mass_within_1pct"] = abs(orc.meta["mass"] - 1.0) <= 0.01
    return {"experiment": exp.to_dict(), "oracle": osec}, [path], checks


def _finish_experiment(res, args, stem):
    return write_result(res, args.out, stem), {k: bool(v) for k, v in res.checks.items()}


def cmd_mse_rates(args, cfg, seed):
    exp = _experiment(cfg, seed)
    orc, osec = _oracle(cfg, exp, args, seed)
    res = mc_mse(exp, orc, args.threads)
    outs, checks = _finish_experiment(res, args, "mse-rates")
    checks["no_failed_cells"] = not any(res.failed)
    return {"experiment": exp.to_dict(), "oracle": osec}, outs, checks


def cmd_variance_scaling(args, cfg, seed):
    exp = _experiment(cfg, seed)
    res = mc_variance_scaling(exp, args.threads)
    outs, checks = _finish_experiment(res, args, "variance-scaling")
    checks["no_failed_cells"] = not any(res.failed)
    return {"experiment": exp.to_dict()}, outs, checks


def cmd_variance_h(args, cfg, seed):
    exp = _experiment(cfg, seed)
    res = variance_h_scaling(exp, args.threads)
    outs, checks = _finish_experiment(res, args, "variance-h")
    return {"experiment": exp.to_dict()}, outs, checks


def cmd_control_ode(args, cfg, seed):
    sec = {"n_runs": 100, "n_steps": 10_000}
    sec.update(_section(cfg, "control_ode"))
    if args.runs is not None:
        sec["n_runs"] = args.runs
    if args.n_steps is not None:
        sec["n_steps"] = args.n_steps
    os.makedirs(args.out, exist_ok=True)
    if int(sec["n_runs"]) <= 0:
        from .sde import builtin_drift
        run = ControlOdeRun(builtin_drift("fou", 2), [1.0, 0.0], n_steps=int(sec["n_steps"]),
                            sdot=lambda t: np.hstack([0.2 * np.pi * np.cos(2 * np.pi * t), 0 * t]))
        results = [control_ode_run(run, raise_on_fail=False)]
        verdict = {"terminal": results[0].rho_final < 1e-6, "envelope": results[0].envelope_ok}
        summary = {"rho_final": results[0].rho_final, "sup_phi": results[0].sup_phi,
                   "sup_phi_dot": results[0].sup_phi_dot}
    else:
        rep = control_ode_suite(int(sec["n_runs"]), seed, int(sec["n_steps"]))
        results = rep.results
        verdict = {"terminal": rep.all_terminal, "envelope": rep.all_envelope, "C_stable": rep.C_stable}
        summary = {"fitted_C": rep.fitted_C, "half_C": rep.half_C,
                   "rho_final_max": max(r.rho_final for r in results),
                   "envelope_excess_max": max(r.envelope_excess for r in results)}
    path = os.path.join(args.out, "control-ode.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["run", "t", "rho_norm", "phi_norm"])
        for i, r in enumerate(results):
            rn, pn = np.linalg.norm(r.rho, axis=1), np.linalg.norm(r.phi, axis=1)
            for t, a, b in zip(r.times, rn, pn):
                w.writerow([i, fmt(t), fmt(a), fmt(b)])
    jpath = _write_json(os.path.join(args.out, "control-ode.json"), {"verdict": verdict, "summary": summary})
    return {"control_ode": sec}, [path, jpath], verdict


def cmd_innovation(args, cfg, seed):
    sec = {"H": 0.25, "t": 1.0, "lag": 1.0, "past_horizon": None, "n_steps": 20_000, "n_paths": 64}
    sec.update(_section(cfg, "innovation"))
    if args.H is not None:
        sec["H"] = args.H
    if args.n_steps is not None:
        sec["n_steps"] = args.n_steps
    res = innovation_decomposition_check(seed=seed, **sec)
    rec = dict(res.__dict__)
    path = _write_json(os.path.join(args.out, "innovation-check.json"), rec)
    print(json.dumps(_jsonable(rec)))
    checks = {"gap_below_1pct": res.rel_max_gap < 1e-2}
    return {"innovation": sec}, [path], checks


def cmd_rates(args, cfg, seed):
    reg = RateRegime(args.variant, args.H, args.beta, args.d, args.eps)
    rec = rates_record(reg, args.T_grid)
    print(json.dumps(_jsonable(rec)))
    path = _write_json(os.path.join(args.out, "rates.json"), rec)
    return {"H": args.H, "beta": args.beta, "d": args.d, "eps": args.eps, "variant": args.variant,
            "T_grid": args.T_grid}, [path], {}


COMMANDS = {
    "simulate": cmd_simulate,
    "kernel-check": cmd_kernel_check,
    "drift-check": cmd_drift_check,
    "oracle-build": cmd_oracle_build,
    "mse-rates": cmd_mse_rates,
    "variance-scaling": cmd_variance_scaling,
    "variance-h": cmd_variance_h,
    "control-ode": cmd_control_ode,
    "innovation-check": cmd_innovation,
    "rates": cmd_rates,
}


def dispatch(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.threads < 1:
        parser.error("--threads must be >= 1")
    try:
        cfg, cfg_hash = load_config(args.config)
        seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
        manifest = RunManifest(args.command, {}, seed, cfg_hash)
        resolved, outputs, checks = COMMANDS[args.command](args, cfg, seed)
    except (ConfigError, ValueError, KeyError, TypeError) as exc:
        sys.stderr.write(f"fracdens: config error: {exc}\n\n{SCHEMA_HELP}")
        return 2
    except (BudgetTooSmall, Nonconvergence) as exc:
        sys.stderr.write(f"fracdens: check failed: {type(exc).__name__}: {exc}\n")
        return 1
    except FracDensError as exc:
        sys.stderr.write(f"fracdens: error: {type(exc).__name__}: {exc}\n")
        return 1
    manifest.config = _jsonable(dict(resolved, seed=seed))
    manifest.finish(outputs, checks)
    write_manifest(manifest, args.out)
    return 0 if all(checks.values()) else 1


def main() -> None:
    sys.exit(dispatch())
