"""
Command line entry point ``levyldp``.

Exit codes: 0 success, 2 invalid input (flags, config, targets), 3 numerical
failure. Outputs go to ``--output``, else ``$LEVYLDP_OUTPUT``, else
``./levyldp-out``; every run writes ``manifest.json`` next to its tables.
"""
import argparse
import os
import sys

import numpy as np

from ..noise import check_h5_h6
from ..operators import check_conditions
from ..rate import brute_force_rate, minimize_rate
from ..skeleton import solve_skeleton
from ..spde import NumericalFailure, run_ensemble, solve_controlled_spde, solve_spde
from .config import SCHEMA, ConfigError, load_config
from .experiments import (config_control, experiment_convergence, experiment_ldp,
                          experiment_skeleton_continuity, moment_powers,
                          rate_problem)
from .io import write_csv, write_manifest
from .models import PRESETS, build_model

OUTPUT_ENV = "LEVYLDP_OUTPUT"
COMMANDS = ("simulate", "skeleton", "rate", "verify-ldp", "verify-convergence", "check-conditions")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def build_parser():
    p = _Parser(prog="levyldp", description="Small-noise jump SPDEs: simulation, skeleton, "
                "rate function and large-deviation checks.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="INI configuration file")
    p.add_argument("--model", choices=sorted(PRESETS), help="model preset (overrides [model] kind)")
    p.add_argument("--target", help="terminal set such as 'XT>=2.0' or '|XT|<=0.5'")
    p.add_argument("--control", help="control grid file (JSON) for simulate/skeleton")
    p.add_argument("--output", help=f"output directory (default ${OUTPUT_ENV} or ./levyldp-out)")
    p.add_argument("--seed", type=int, help="base seed (overrides [run] seed)")
    p.add_argument("--workers", type=int, help="worker threads for ensembles")
    p.add_argument("--strict-order", action="store_true",
                   help="single worker and fixed chunking: byte-identical reruns")
    p.add_argument("--continuity", action="store_true",
                   help="skeleton: also run the continuity-in-control study")
    p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override one config entry; repeatable")
    return p


def _overrides(args):
    out = {}
    for item in args.set:
        key, sep, raw = item.partition("=")
        section, _, name = key.partition(".")
        if not sep or section not in SCHEMA or name not in SCHEMA[section]:
            raise ConfigError(f"bad --set entry {item!r}")
        try:
            out[(section, name)] = SCHEMA[section][name][0](raw)
        except ValueError as exc:
            raise ConfigError(f"bad value in --set {item!r}: {exc}") from None
    if args.model:
        out[("model", "kind")] = args.model
    if args.target:
        out[("target", "predicate")] = args.target
    if args.control:
        out[("control", "file")] = args.control
    if args.seed is not None:
        out[("run", "seed")] = args.seed
    if args.workers is not None:
        out[("run", "workers")] = args.workers
    return out


def _workers(cfg, args):
    return 1 if args.strict_order else cfg["run"]["workers"]


def cmd_simulate(cfg, args, out):
    b = build_model(cfg)
    eps, dt, seed = cfg["run"]["eps"], cfg["run"]["dt"], cfg["run"]["seed"]
    n = cfg["run"]["trajectories"][0]
    g = config_control(cfg, b) if cfg["control"]["file"] else None
    ps = moment_powers(cfg, b)
    res = run_ensemble(b.spec, b.op, b.noise, b.x0, eps, dt, n, seed, T=b.T, g=g, ps=ps,
                       workers=_workers(cfg, args))
    if np.any(res.blown_up):
        first = float(np.min(res.blowup_time))
        raise NumericalFailure(f"{int(np.sum(res.blown_up))} trajectories blew up, first at t = {first!r}",
                               first)
    d = b.spec.dim
    header = ["index", "eps", "seed"] + [f"xT{k}" for k in range(d)] + [
        "sup_h", "sup_m2", "v_integral", "n_jumps", "log_weight"]
    rows = []
    for i in range(len(res)):
        lw = res.log_weight[i] if res.log_weight is not None else 0.0
        rows.append([int(res.indices[i]), eps, seed] + list(res.x_T[i]) + [
            res.sup_h[i], res.sup_m2[i], res.v_integral[i], int(res.n_jumps[i]), lw])
    write_csv(os.path.join(out, "trajectories.csv"), header, rows)
    if g is None:
        first = solve_spde(b.spec, b.op, b.noise, b.x0, eps, dt, seed, T=b.T)
    else:
        first = solve_controlled_spde(b.spec, b.op, b.noise, b.x0, eps, g, dt, seed)
    first.path.to_csv(os.path.join(out, "path0.csv"), b.spec)
    from ..spde import monitor_moments
    mrows = []
    for p in ps:
        rep = monitor_moments(res, p)
        mrows.append([eps, seed, n, p, rep.sup_moment, rep.sup_moment_se, rep.energy_moment])
    write_csv(os.path.join(out, "moments.csv"),
              ["eps", "seed", "n", "p", "sup_moment", "sup_moment_se", "energy_moment"], mrows)
    print(f"simulated {n} trajectories at eps={eps!r}; mean |X_T| = "
          f"{float(np.mean(np.linalg.norm(res.x_T, axis=1))):.6g}")
    return ["trajectories.csv", "path0.csv", "moments.csv"], {}


def cmd_skeleton(cfg, args, out):
    b = build_model(cfg)
    g = config_control(cfg, b)
    sol = solve_skeleton(b.spec, b.op, b.noise, b.x0, g, cfg["run"]["dt"])
    sol.to_csv(os.path.join(out, "skeleton.csv"), b.spec)
    files = ["skeleton.csv"]
    extra = {"richardson_error_estimate": sol.error_estimate}
    print(f"skeleton X_T = {np.array2string(sol.final, precision=6)}; "
          f"raw-step error estimate {sol.error_estimate:.3g}")
    if args.continuity:
        table = experiment_skeleton_continuity(cfg)
        table.to_csv(os.path.join(out, "continuity.csv"))
        files.append("continuity.csv")
        extra["continuity_verdict"] = table.verdict
        print(f"continuity in the control: {'PASS' if table.verdict else 'FAIL'}")
    return files, extra


def cmd_rate(cfg, args, out):
    b = build_model(cfg)
    problem = rate_problem(cfg, b)
    res = minimize_rate(problem)
    res.to_csv(os.path.join(out, "rate.csv"))
    res.trace_to_csv(os.path.join(out, "rate_trace.csv"))
    res.control.to_file(os.path.join(out, "control.json"))
    files = ["rate.csv", "rate_trace.csv", "control.json"]
    extra = {"cost": res.cost, "feasible": res.feasible}
    if problem.n_cells <= 3:
        points = {1: 1000, 2: 100, 3: 40}[problem.n_cells]
        oracle = brute_force_rate(problem, grid_points=points)
        oracle.to_csv(os.path.join(out, "oracle.csv"))
        files.append("oracle.csv")
        extra["oracle_cost"] = oracle.cost
        print(f"rate {res.cost:.6g} (brute-force oracle {oracle.cost:.6g}, "
              f"grid step {oracle.grid_step_cost if oracle.grid_step_cost is not None else float('nan'):.3g})")
    else:
        print(f"rate {res.cost:.6g}")
    return files, extra


def cmd_verify_ldp(cfg, args, out):
    table = experiment_ldp(cfg, workers=_workers(cfg, args))
    write_csv(os.path.join(out, "ldp.csv"), table.columns, table.rows)
    table.control.to_file(os.path.join(out, "control.json"))
    tol = 0.2 * table.rate if np.isfinite(table.rate) else 0.0
    summary = [["rate", table.rate], ["rate_interior", table.rate_interior],
               ["rate_closure", table.rate_closure], ["extrapolated", table.extrapolated],
               ["relative_error", table.relative_error], ["bracket_ok", table.bracket_ok(tol)],
               ["consistent", table.consistent]]
    write_csv(os.path.join(out, "ldp_summary.csv"), ["quantity", "value"], summary)
    for flag in table.flags:
        print("note:", flag)
    print(f"I(A) = {table.rate:.6g}, extrapolated -eps log P = {table.extrapolated:.6g} "
          f"(relative error {table.relative_error:.3g})")
    return ["ldp.csv", "ldp_summary.csv", "control.json"], {"flags": table.flags}


def cmd_verify_convergence(cfg, args, out):
    table = experiment_convergence(cfg, workers=_workers(cfg, args))
    table.to_csv(os.path.join(out, "convergence.csv"))
    print(f"convergence to the skeleton: {'PASS' if table.verdict else 'FAIL'} "
          f"(gap reduction {table.extra['gap_reduction']:.3g}x, "
          f"martingale reduction {table.extra['m2_reduction']:.3g}x)")
    return ["convergence.csv"], {"verdict": table.verdict}


def cmd_check_conditions(cfg, args, out):
    b = build_model(cfg)
    c = cfg["conditions"]
    rep = check_conditions(b.op, b.spec, samples=c["samples"], seed=cfg["run"]["seed"],
                           tol=c["tol"], noise=b.noise, T=b.T)
    rep.to_csv(os.path.join(out, "conditions.csv"))
    nrep = check_h5_h6(b.noise, b.spec, samples=c["samples"], seed=cfg["run"]["seed"], T=b.T)
    nrep.to_csv(os.path.join(out, "noise_conditions.csv"))
    for r in rep.results + nrep.results:
        print(f"{r.condition:36s} {'pass' if r.passed else 'FAIL'}  margin {r.margin:.3g}")
    return ["conditions.csv", "noise_conditions.csv"], {"passed": rep.passed and nrep.passed}


HANDLERS = {
    "simulate": cmd_simulate,
    "skeleton": cmd_skeleton,
    "rate": cmd_rate,
    "verify-ldp": cmd_verify_ldp,
    "verify-convergence": cmd_verify_convergence,
    "check-conditions": cmd_check_conditions,
}


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = build_parser().parse_args(argv)
        cfg = load_config(args.config, _overrides(args))
    except (ConfigError, OSError) as exc:
        print(f"levyldp: error: {exc}", file=sys.stderr)
        return 2
    out = args.output or os.environ.get(OUTPUT_ENV) or "levyldp-out"
    try:
        os.makedirs(out, exist_ok=True)
        files, extra = HANDLERS[args.command](cfg, args, out)
        extra = dict(extra, strict_order=bool(args.strict_order), workers=_workers(cfg, args))
        write_manifest(os.path.join(out, "manifest.json"), args.command, cfg, files + [], extra)
    except (NumericalFailure, FloatingPointError, OverflowError) as exc:
        print(f"levyldp: numerical failure: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"levyldp: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
