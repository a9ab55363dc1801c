"""
Verification experiments.

* ``experiment_ldp``: tail probabilities P(X_T in A) along an eps ladder,
  by plain Monte Carlo and by importance sampling under the cost-optimal
  control, against the minimum control cost of A.
* ``experiment_convergence``: controlled solutions approach the skeleton
  path as eps shrinks, together with the martingale part.
* ``experiment_skeleton_continuity``: skeleton paths depend continuously on
  the control in the weak topology.
* ``experiment_moments``: sup-moments stay bounded uniformly along the ladder.
"""
from dataclasses import dataclass, field

import numpy as np

from ..prm import Control
from ..rate import OptimizerOptions, RateProblem, TerminalTarget, minimize_rate
from ..skeleton import (ConvergenceTable, continuity_in_control, decreasing_trend,
                        integrate_skeleton, step_controls)
from ..spde import (StepQuadrature, continuous_step, ladder_stability, monitor_moments,
                    run_ensemble, time_grid)
from .models import build_model


def config_control(cfg, bundle):
    """The fixed control of a config: a grid file or a constant."""
    path = cfg["control"]["file"]
    if path:
        g = Control.from_file(path)
        if abs(g.T - bundle.T) > 1e-12:
            raise ValueError("control file horizon differs from T")
        return g
    return Control.constant(bundle.noise.marks, bundle.T, cfg["control"]["value"],
                            cfg["control"]["n_t"])


def rate_problem(cfg, bundle, target=None):
    target = TerminalTarget.parse(cfg["target"]["predicate"]) if target is None else target
    return RateProblem(bundle.spec, bundle.op, bundle.noise, bundle.x0, bundle.T, target,
                       n_t=cfg["control"]["n_t"], dt=cfg["run"]["dt"], g_hi=cfg["control"]["g_hi"])


def _mean_se(a):
    a = np.asarray(a, dtype=float)
    if a.size == 0:
        return np.nan, np.nan
    return float(a.mean()), float(a.std(ddof=1) / np.sqrt(a.size)) if a.size > 1 else 0.0


@dataclass
class LdpTable:
    """Per-eps probability estimates and the rate-function reference.

    ``estimate`` in each row is the importance-sampling value where one was
    computed, the plain Monte Carlo value otherwise; ``exponent`` is
    -eps log(estimate). ``extrapolated`` is the eps -> 0 intercept of a
    straight-line fit of ``exponent`` against eps.
    """
    columns: list
    rows: list
    rate: float
    rate_interior: float
    rate_closure: float
    extrapolated: float
    margin: float
    control: Control
    consistent: bool
    flags: list = field(default_factory=list)

    @property
    def relative_error(self):
        if self.rate == 0:
            return abs(self.extrapolated)
        return abs(self.extrapolated - self.rate) / self.rate

    def bracket_ok(self, tol):
        """I(closure) - tol <= extrapolated <= I(interior) + tol."""
        return self.rate_closure - tol <= self.extrapolated <= self.rate_interior + tol


LDP_COLUMNS = ["eps", "seed", "first_index", "n_naive", "hits", "p_naive", "se_naive",
               "is_first_index", "n_is", "p_is", "se_is", "estimate", "exponent", "source"]


def importance_estimate(bundle, g, eps, dt, n, seed, indicator, start=0, workers=1):
    """Mean of indicator(X_T) exp(log-weight) under the controlled dynamics, with its standard error."""
    res = run_ensemble(bundle.spec, bundle.op, bundle.noise, bundle.x0, eps, dt, n, seed,
                       T=bundle.T, g=g, start=start, workers=workers)
    if np.any(res.blown_up):
        from ..spde import NumericalFailure
        raise NumericalFailure("blow-up in importance-sampling ensemble")
    vals = indicator(res.x_T) * np.exp(res.log_weight)
    return _mean_se(vals)


def experiment_ldp(cfg, workers=1):
    bundle = build_model(cfg)
    ladder = cfg["run"]["eps_ladder"]
    naive = cfg.counts_for(("ldp", "naive"), ladder)
    importance = cfg.counts_for(("ldp", "importance"), ladder)
    dt, seed, margin = cfg["run"]["dt"], cfg["run"]["seed"], cfg["target"]["margin"]
    target = TerminalTarget.parse(cfg["target"]["predicate"])
    opts = OptimizerOptions()
    res = minimize_rate(rate_problem(cfg, bundle, target), opts)
    interior = minimize_rate(rate_problem(cfg, bundle, target.shifted(margin)), opts)
    closure = minimize_rate(rate_problem(cfg, bundle, target.shifted(-margin)), opts)
    g_star = res.control
    rows, flags = [], []
    consistent = True
    for eps, nn, ni in zip(ladder, naive, importance):
        # plain and controlled runs draw disjoint trajectory indices
        p_n = se_n = p_i = se_i = np.nan
        hits = 0
        if nn:
            plain = run_ensemble(bundle.spec, bundle.op, bundle.noise, bundle.x0, eps, dt, nn,
                                 seed, T=bundle.T, workers=workers)
            inside = target.contains(plain.x_T)
            hits = int(np.sum(inside))
            p_n, se_n = _mean_se(inside.astype(float))
        if ni and np.isfinite(res.cost):
            p_i, se_i = importance_estimate(bundle, g_star, eps, dt, ni, seed,
                                            lambda x: target.contains(x).astype(float),
                                            start=nn, workers=workers)
        if ni and np.isfinite(p_i) and p_i > 0:
            est, source = p_i, "importance"
        else:
            est, source = p_n, "naive"
        if nn and hits == 0:
            flags.append(f"eps={eps!r}: no plain Monte Carlo hits; importance sampling only")
        if hits >= 10 and np.isfinite(p_i):
            consistent &= abs(p_n - p_i) <= 3 * np.hypot(se_n, se_i)
        exponent = -eps * np.log(est) if est > 0 else np.inf
        rows.append({"eps": eps, "seed": seed, "first_index": 0, "n_naive": nn, "hits": hits,
                     "p_naive": p_n, "se_naive": se_n, "is_first_index": nn, "n_is": ni,
                     "p_is": p_i, "se_is": se_i,
                     "estimate": est, "exponent": exponent, "source": source})
    ex = np.array([r["exponent"] for r in rows])
    ok = np.isfinite(ex)
    if ok.sum() >= 2:
        intercept = np.polyfit(np.asarray(ladder)[ok], ex[ok], 1)[1]
    else:
        intercept = np.nan
    return LdpTable(LDP_COLUMNS, rows, res.cost, interior.cost, closure.cost, float(intercept),
                    margin, g_star, bool(consistent), flags)


def skeleton_components(bundle, g, grid):
    """Skeleton path with its integrated drift Y and control drift Z."""
    quad = StepQuadrature.for_control(bundle.noise, g)
    gbar = step_controls(g, grid)[0]
    x = bundle.x0[None].copy()
    y = np.zeros_like(x)
    z = np.zeros_like(x)
    for n in range(grid.size - 1):
        x, dy, dz, _ = continuous_step(bundle.op, bundle.noise, quad, np.array([grid[n]]), x,
                                       np.array([grid[n + 1] - grid[n]]), gbar[n][None], False)
        y += dy
        z += dz
    return y[0], z[0]


def experiment_convergence(cfg, workers=1):
    """E sup_t |X^eps - X^0|^2 and E sup_t |M^eps|^2 along the ladder."""
    bundle = build_model(cfg)
    g = config_control(cfg, bundle)
    ladder = cfg["run"]["eps_ladder"]
    counts = cfg.counts_for(("run", "trajectories"), ladder)
    dt, seed = cfg["run"]["dt"], cfg["run"]["seed"]
    grid = time_grid(bundle.T, dt)
    quad = StepQuadrature.for_control(bundle.noise, g)
    ref = integrate_skeleton(bundle.op, bundle.noise, quad, bundle.x0, grid, step_controls(g, grid))[0]
    y0, z0 = skeleton_components(bundle, g, grid)
    rows = []
    for eps, n in zip(ladder, counts):
        res = run_ensemble(bundle.spec, bundle.op, bundle.noise, bundle.x0, eps, dt, n, seed,
                           T=bundle.T, g=g, reference=ref, workers=workers, log_weights=False)
        gap, gap_se = _mean_se(res.sup_gap2)
        m2, m2_se = _mean_se(res.sup_m2)
        rows.append({"eps": eps, "seed": seed, "n": n, "sup_gap2": gap, "sup_gap2_se": gap_se,
                     "sup_m2": m2, "sup_m2_se": m2_se,
                     "z_gap2": float(np.mean(np.sum((res.z_T - z0) ** 2, axis=1))),
                     "y_gap2": float(np.mean(np.sum((res.y_T - y0) ** 2, axis=1))),
                     "blowups": int(np.sum(res.blown_up))})
    gaps = [r["sup_gap2"] for r in rows]
    m2s = [r["sup_m2"] for r in rows]
    strict = all(b < a for a, b in zip(gaps, gaps[1:]))
    verdict = strict and gaps[-1] <= cfg["convergence"]["tolerance"]
    cols = ["eps", "seed", "n", "sup_gap2", "sup_gap2_se", "sup_m2", "sup_m2_se", "z_gap2",
            "y_gap2", "blowups"]
    return ConvergenceTable(cols, rows, bool(verdict), extra={
        "gap_reduction": gaps[0] / gaps[-1] if gaps[-1] > 0 else np.inf,
        "m2_reduction": m2s[0] / m2s[-1] if m2s[-1] > 0 else np.inf,
        "m2_decreasing": decreasing_trend(m2s)})


def control_family(cfg, bundle):
    """A sequence g_n -> g: 'strong' is 1 + (c - 1)/n -> 1; 'oscillating'
    alternates c +- (c - 1)/2 on 2^n cells with fixed averages c."""
    c, members = cfg["continuity"]["c"], cfg["continuity"]["members"]
    marks, T = bundle.noise.marks, bundle.T
    if cfg["continuity"]["family"] == "strong":
        seq = [Control.constant(marks, T, 1.0 + (c - 1.0) / n) for n in range(1, members + 1)]
        return seq, Control.constant(marks, T, 1.0)
    limit = Control.constant(marks, T, c)
    amp = 0.5 * abs(c - 1.0) if c != 1 else 0.5
    seq = []
    for n in range(1, members + 1):
        cells = 2 ** n
        signs = np.where(np.arange(cells) % 2 == 0, 1.0, -1.0)
        vals = np.repeat((c + amp * signs)[:, None], limit.shape[1], axis=1)
        seq.append(Control(np.linspace(0.0, T, cells + 1), vals, limit.atom_cell, limit.z_edges))
    return seq, limit


def experiment_skeleton_continuity(cfg):
    bundle = build_model(cfg)
    seq, limit = control_family(cfg, bundle)
    return continuity_in_control(bundle.spec, bundle.op, bundle.noise, bundle.x0, seq, limit,
                                 cfg["run"]["dt"])


@dataclass
class MomentTable:
    rows: list
    variation: dict
    growing: dict
    columns: list = field(default_factory=lambda: ["eps", "seed", "n", "p", "sup_moment",
                                                   "sup_moment_se", "energy_moment"])


def moment_powers(cfg, bundle):
    ps = cfg["run"]["moments"]
    return list(ps) if ps else sorted({2.0, float(bundle.op.beta) + 2.0})


def experiment_moments(cfg, workers=1, ladder=None):
    """Sup-moments along the ladder; ``variation`` is (max - min)/min per power."""
    bundle = build_model(cfg)
    ladder = cfg["run"]["eps_ladder"] if ladder is None else ladder
    counts = cfg.counts_for(("run", "trajectories"), ladder)
    ps = moment_powers(cfg, bundle)
    per_p = {p: {} for p in ps}
    rows = []
    for eps, n in zip(ladder, counts):
        res = run_ensemble(bundle.spec, bundle.op, bundle.noise, bundle.x0, eps, cfg["run"]["dt"],
                           n, cfg["run"]["seed"], T=bundle.T, ps=ps, workers=workers)
        if np.any(res.blown_up):
            from ..spde import NumericalFailure
            raise NumericalFailure(f"blow-up at eps = {eps!r}")
        for p in ps:
            rep = monitor_moments(res, p)
            per_p[p][eps] = rep
            rows.append({"eps": eps, "seed": cfg["run"]["seed"], "n": n, "p": p,
                         "sup_moment": rep.sup_moment, "sup_moment_se": rep.sup_moment_se,
                         "energy_moment": rep.energy_moment})
    stab = {p: ladder_stability(per_p[p]) for p in ps}
    return MomentTable(rows, {p: s.variation for p, s in stab.items()},
                       {p: s.growing for p, s in stab.items()})
