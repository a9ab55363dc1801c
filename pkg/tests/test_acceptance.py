"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The Monte Carlo criteria (6 to 10) are marked slow; deselect them with
``-m "not slow"`` for a quick run.
"""
import time

import numpy as np
import pytest
from scipy import stats

from levyldp.harness.cli import main
from levyldp.harness.config import parse_config
from levyldp.harness.experiments import experiment_convergence, experiment_ldp, experiment_moments
from levyldp.harness.models import build_model
from levyldp.noise import MarkSpace, additive, multiplicative
from levyldp.operators import DriftOperator, builtin_linear, check_conditions
from levyldp.prm import Control, sample_controlled_prm, sample_prm
from levyldp.rate import (RateProblem, TerminalTarget, brute_force_rate, cost_lt, ell,
                          gradient_check, minimize_rate)
from levyldp.skeleton import richardson_table, solve_skeleton
from levyldp.spde import run_ensemble
from levyldp.triple import TripleSpec


def test_01_entropy_and_cost(acceptance_log):
    t0 = time.perf_counter()
    values_ok = (abs(ell(1.0)) <= 1e-12 and abs(ell(0.0) - 1) <= 1e-12
                 and abs(ell(2.0) - (2 * np.log(2) - 1)) <= 1e-12)
    rng = np.random.default_rng(0)
    a, b = rng.uniform(0, 20, (2, 10_000))
    lam = rng.uniform(0, 1, 10_000)
    lhs = ell(lam * a + (1 - lam) * b)
    rhs = lam * ell(a) + (1 - lam) * ell(b)
    convex_ok = bool(np.all(lhs <= rhs + 1e-12 * (1 + rhs)))
    worst = 0.0
    for c, m, T in [(0.0, 1.0, 1.0), (2.0, 0.5, 3.0), (7.3, 2.5, 0.4), (0.2, 1e-3, 10.0)]:
        marks = MarkSpace.discrete([0.0], [m])
        got = cost_lt(Control.constant(marks, T, c), marks)
        worst = max(worst, abs(got - T * m * ell(c)) / max(1.0, T * m * ell(c)))
    elapsed = time.perf_counter() - t0
    ok = values_ok and convex_ok and worst <= 1e-12 and elapsed < 1.0
    acceptance_log(1, ok, f"values {values_ok}, convexity {convex_ok}, factorization error "
                          f"{worst:.1e}, {elapsed:.2f}s")
    assert ok


def test_02_condition_checkers(acceptance_log):
    t0 = time.perf_counter()
    spec = TripleSpec.dirichlet(8)
    op = builtin_linear(spec, 1.0)
    margins = []
    for seed in range(5):
        rep = check_conditions(op, spec, samples=1000, seed=seed)
        margins.append(min(r.margin for r in rep.results if r.condition != "hemicontinuity")
                       if rep.passed else -1.0)
    linear_ok = all(m > 0 for m in margins)
    bad = DriftOperator(op.apply, theta=3.0, alpha=2.0, beta=0.0, C=op.C, stiff=op.stiff)
    coer = check_conditions(bad, spec, samples=1000, seed=0)["coercivity"]
    fails_ok = (not coer.passed) and coer.witness is not None
    elapsed = time.perf_counter() - t0
    ok = linear_ok and fails_ok and elapsed < 10
    acceptance_log(2, ok, f"linear min margin {min(margins):.3g} over 5 seeds; inflated theta "
                          f"fails coercivity with witness: {fails_ok}, {elapsed:.2f}s")
    assert ok


def test_03_skeleton_accuracy(acceptance_log):
    t0 = time.perf_counter()
    spec = TripleSpec.dirichlet(1)
    marks = MarkSpace.discrete([0.0], [1.0])
    op = builtin_linear(spec, 1.0)
    model = multiplicative(marks, 1.0)
    g = Control.constant(marks, 1.0, 2.5)
    # x' = -x + (g - 1) x, so x_t = exp((g - 2) t)
    sol = solve_skeleton(spec, op, model, [1.0], g, 1e-4)
    exact = np.exp(0.5 * sol.times)
    err = float(np.max(np.abs(sol.values[:, 0] - exact) / exact))
    rows = richardson_table(spec, op, model, [1.0], g, 1e-2, halvings=3)
    ratios = [r.ratio for r in rows[1:]]
    elapsed = time.perf_counter() - t0
    ok = err <= 1e-6 and all(1.7 <= r <= 2.3 for r in ratios) and elapsed < 10
    acceptance_log(3, ok, f"relative error {err:.2e} at dt=1e-4; step-halving ratios "
                          f"{', '.join(f'{r:.3f}' for r in ratios)}, {elapsed:.2f}s")
    assert ok


def _rate_problems():
    s = TripleSpec.dirichlet(1)
    op = builtin_linear(s, 1.0)
    one = MarkSpace.discrete([0.0], [1.0])
    two = MarkSpace.discrete([0.0, 1.0], [1.0, 0.5])
    return [
        ("multiplicative XT>=1.5", RateProblem(s, op, multiplicative(one, 1.0), [1.0], 1.0,
                                               TerminalTarget(1.5)), 1000),
        ("additive, 2 time cells, XT>=0.5", RateProblem(s, op, additive(one, [0.5]), [0.0], 1.0,
                                                        TerminalTarget(0.5), n_t=2), 300),
        ("two atoms XT>=1.2", RateProblem(s, op, multiplicative(two, [0.5, 1.5]), [1.0], 1.0,
                                          TerminalTarget(1.2)), 300),
    ]


def test_04_rate_oracle_agreement(acceptance_log):
    t0 = time.perf_counter()
    parts, ok = [], True
    for name, problem, points in _rate_problems():
        opt = minimize_rate(problem)
        oracle = brute_force_rate(problem, grid_points=points)
        diff = abs(opt.cost - oracle.cost)
        allowed = max(0.02 * oracle.cost, oracle.grid_step_cost)
        ok &= bool(diff <= allowed)
        parts.append(f"{name}: {opt.cost:.4f} vs {oracle.cost:.4f} (allowed {allowed:.4f})")
    s = TripleSpec.dirichlet(3)
    problem = RateProblem(s, builtin_linear(s, 1.0),
                          multiplicative(MarkSpace.discrete([0.0, 1.0], [1.0, 0.5]), [0.5, 1.5]),
                          np.ones(3), 1.0, TerminalTarget(1.2), n_t=3)
    vals = np.random.default_rng(0).uniform(0.5, 2.0, problem.shape)
    grad_err = gradient_check(problem, vals, 10.0, directions=20)
    elapsed = time.perf_counter() - t0
    ok = ok and grad_err <= 1e-5 and elapsed < 300
    acceptance_log(4, ok, "; ".join(parts) + f"; adjoint error {grad_err:.1e}, {elapsed:.1f}s")
    assert ok


def test_05_controlled_prm(acceptance_log):
    t0 = time.perf_counter()
    marks = MarkSpace.discrete([0.0, 1.0], [0.5, 1.0])
    eps, c, T, n = 0.5, 1.7, 1.0, 10_000
    g = Control.constant(marks, T, c)
    counts = np.array([len(sample_controlled_prm(marks, eps, g, T, s)) for s in range(n)])
    lam = c * T * marks.total() / eps
    z = (counts.mean() - lam) / np.sqrt(lam / n)
    g1 = Control.constant(marks, T, 1.0)
    thinned = np.concatenate([np.diff(sample_controlled_prm(marks, 0.01, g1, T, s).times)
                              for s in range(200)])
    plain = np.concatenate([np.diff(sample_prm(marks, 0.01, T, s).times)
                            for s in range(1000, 1200)])
    rate = marks.total() / 0.01
    p_exp = stats.kstest(thinned, "expon", args=(0.0, 1.0 / rate)).pvalue
    p_two = stats.ks_2samp(thinned, plain).pvalue
    elapsed = time.perf_counter() - t0
    ok = abs(z) <= 3 and p_exp > 0.01 and p_two > 0.01 and elapsed < 60
    acceptance_log(5, ok, f"count z-score {z:.2f}; inter-arrival KS p-values {p_exp:.3f} "
                          f"(exponential), {p_two:.3f} (vs plain), {elapsed:.1f}s")
    assert ok


@pytest.mark.slow
def test_06_importance_sampling_identity(acceptance_log):
    t0 = time.perf_counter()
    b = build_model(parse_config("[model]\nkind = scalar-linear\n"))
    eps, dt, n = 0.2, 1e-2, 100_000
    g = Control.constant(b.noise.marks, b.T, 1.5)
    phi = lambda x: np.tanh(2.0 * x[:, 0])  # noqa: E731
    plain = run_ensemble(b.spec, b.op, b.noise, b.x0, eps, dt, n, 0, T=b.T)
    tilted = run_ensemble(b.spec, b.op, b.noise, b.x0, eps, dt, n, 0, T=b.T, g=g, start=n)
    a = phi(plain.x_T)
    w = phi(tilted.x_T) * np.exp(tilted.log_weight)
    se = np.hypot(a.std(ddof=1), w.std(ddof=1)) / np.sqrt(n)
    diff = abs(a.mean() - w.mean())
    elapsed = time.perf_counter() - t0
    ok = diff <= 3 * se and elapsed < 300
    acceptance_log(6, ok, f"naive {a.mean():.5f}, weighted {w.mean():.5f}, difference "
                          f"{diff / se:.2f} combined SE, {elapsed:.1f}s")
    assert ok


_LADDER_CFG = """
[model]
kind = scalar-linear
[run]
eps_ladder = 0.4, 0.2, 0.1, 0.05
trajectories = 10000
seed = 0
"""


@pytest.fixture(scope="module")
def convergence_table():
    t0 = time.perf_counter()
    table = experiment_convergence(parse_config(_LADDER_CFG))
    return table, time.perf_counter() - t0


@pytest.mark.slow
def test_07_convergence_to_skeleton(acceptance_log, convergence_table):
    table, elapsed = convergence_table
    gaps = table.column("sup_gap2")
    strict = bool(np.all(np.diff(gaps) < 0))
    red = gaps[0] / gaps[-1]
    ok = strict and red >= 4 and elapsed < 600
    acceptance_log(7, ok, f"E sup|X - skeleton|^2 = {', '.join(f'{v:.3g}' for v in gaps)}; "
                          f"reduction {red:.1f}x, {elapsed:.1f}s")
    assert ok


@pytest.mark.slow
def test_08_martingale_decay(acceptance_log, convergence_table):
    table, elapsed = convergence_table
    m2 = table.column("sup_m2")
    red = m2[0] / m2[-1]
    ok = red >= 4
    acceptance_log(8, ok, f"E sup|M|^2 = {', '.join(f'{v:.3g}' for v in m2)}; reduction "
                          f"{red:.1f}x")
    assert ok


@pytest.mark.slow
def test_09_ldp_asymptotics(acceptance_log):
    t0 = time.perf_counter()
    cfg = parse_config(_LADDER_CFG)
    table = experiment_ldp(cfg)
    b = build_model(cfg)
    from levyldp.harness.experiments import rate_problem
    oracle = brute_force_rate(rate_problem(cfg, b), grid_points=1000)
    rel = abs(table.extrapolated - oracle.cost) / oracle.cost
    smallest = sorted(table.rows, key=lambda r: r["eps"])[:2]
    carried = all(r["source"] == "importance" for r in smallest)
    elapsed = time.perf_counter() - t0
    ok = rel <= 0.2 and carried and elapsed < 1800
    acceptance_log(9, ok, f"extrapolated {table.extrapolated:.4f} vs oracle I(A) "
                          f"{oracle.cost:.4f} (relative {rel:.3f}); two smallest eps by "
                          f"importance sampling: {carried}, {elapsed:.0f}s")
    assert ok


@pytest.mark.slow
def test_10_moment_stability(acceptance_log):
    parts, ok = [], True
    for kind, n, limit in (("linear", 10_000, 600), ("burgers", 10_000, 7200)):
        t0 = time.perf_counter()
        cfg = parse_config(f"[model]\nkind = {kind}\n[run]\ntrajectories = {n}\n")
        table = experiment_moments(cfg)
        elapsed = time.perf_counter() - t0
        for p, v in sorted(table.variation.items()):
            ok &= bool(v < 0.25)
            parts.append(f"{kind} p={p:g}: {100 * v:.1f}%")
        ok &= elapsed < limit
        parts.append(f"{kind} {elapsed:.0f}s")
    acceptance_log(10, ok, "variation across the ladder " + "; ".join(parts))
    assert ok


_SMALL = ["--set", "run.trajectories=200", "--set", "run.eps_ladder=0.4,0.2",
          "--set", "ldp.naive=2000", "--set", "ldp.importance=500",
          "--set", "conditions.samples=200"]


def test_11_strict_order_reproducibility(acceptance_log, tmp_path):
    mismatched = []
    for command in ("simulate", "skeleton", "rate", "verify-ldp", "verify-convergence",
                    "check-conditions"):
        dirs = [tmp_path / f"{command}-{k}" for k in "ab"]
        for d in dirs:
            assert main([command, "--model", "scalar-linear", "--strict-order", "--seed", "11",
                         "--output", str(d), *_SMALL]) == 0
        names = sorted(p.name for p in dirs[0].iterdir())
        assert names == sorted(p.name for p in dirs[1].iterdir())
        for name in names:
            if (dirs[0] / name).read_bytes() != (dirs[1] / name).read_bytes():
                mismatched.append(f"{command}/{name}")
    ok = not mismatched
    acceptance_log(11, ok, "all six commands byte-identical" if ok
                   else f"differing files: {', '.join(mismatched)}")
    assert ok
