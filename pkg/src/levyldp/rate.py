"""
Entropy cost of controls and the rate function as a minimum-cost control
problem.

For a nonnegative control g the cost is

    L_T(g) = int l(g(t, z)) nu(dz) dt,   l(r) = r log r - r + 1,

and the rate of a target (a terminal set or a full path) is the smallest
cost among controls whose skeleton solution reaches it; it is +inf when
none does. On a piecewise-constant grid the cost is an exact cell sum.

The minimization is a penalty continuation over the cell values. The
penalty is the squared target gap, differentiated through the discrete
skeleton scheme by a reverse (adjoint) sweep.
"""
import csv
import re
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import minimize
from scipy.special import lambertw, xlogy

from .prm import Control
from .skeleton import integrate_skeleton, step_controls
from .spde import StepQuadrature, time_grid
from .triple import as_hvector


def ell(r):
    """r log r - r + 1 on [0, inf), with l(0) = 1."""
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise ValueError("ell is defined on [0, inf) only")
    out = xlogy(r, r) - r + 1.0
    return float(out) if out.ndim == 0 else out


def cost_lt(g, marks, T=None):
    """Exact cell sum of l(g) nu_T(cell)."""
    if T is not None and abs(T - g.T) > 1e-12 * max(1.0, T):
        raise ValueError("control horizon differs from T")
    return float(np.sum(ell(g.values) * g.cell_weights(marks)))


def check_sn_membership(g, N, marks, T=None):
    return cost_lt(g, marks, T) <= N


def level_set_interval(level, cell_weight):
    """All r >= 0 with l(r) * cell_weight <= level, as (lo, hi)."""
    if cell_weight <= 0:
        return 0.0, np.inf
    y = level / cell_weight
    if y < 0:
        raise ValueError("level must be >= 0")
    if y == 0:
        return 1.0, 1.0   # lambertw is nan at the branch point -1/e
    hi = float(np.exp(1.0 + lambertw((y - 1.0) / np.e, 0).real))
    lo = 0.0 if y >= 1 else float(np.exp(1.0 + lambertw((y - 1.0) / np.e, -1).real))
    return lo, hi


def level_set_bounds(g, marks, level):
    """Per-cell intervals containing every control on g's grid with cost <= level."""
    w = g.cell_weights(marks)
    lo, hi = np.zeros_like(w), np.zeros_like(w)
    for idx in np.ndindex(w.shape):
        lo[idx], hi[idx] = level_set_interval(level, w[idx])
    return lo, hi


_TARGET_RE = re.compile(
    r"^\s*(?P<lhs>\|XT\||XT(?:\[(?P<k>\d+)\])?)\s*(?P<op>>=|<=)\s*(?P<b>[-+0-9.eE]+)\s*$")


@dataclass(frozen=True)
class TerminalTarget:
    """Terminal set {phi(X_T) >= b} or {phi(X_T) <= b}.

    ``phi`` is a coordinate (``coord`` = k) or the H-norm (``coord`` = None).
    """
    threshold: float
    sense: str = ">="
    coord: Optional[int] = 0

    def __post_init__(self):
        if self.sense not in (">=", "<="):
            raise ValueError("sense must be '>=' or '<='")

    @classmethod
    def parse(cls, text):
        """Accepts 'XT>=b', 'XT[k]<=b' or '|XT|>=b'."""
        m = _TARGET_RE.match(text)
        if not m:
            raise ValueError(f"cannot parse target {text!r}")
        coord = None if m["lhs"] == "|XT|" else int(m["k"] or 0)
        return cls(float(m["b"]), m["op"], coord)

    def __str__(self):
        lhs = "|XT|" if self.coord is None else f"XT[{self.coord}]"
        return f"{lhs}{self.sense}{self.threshold!r}"

    def functional(self, x):
        x = np.asarray(x, dtype=float)
        return np.linalg.norm(x, axis=-1) if self.coord is None else x[..., self.coord]

    def functional_grad(self, x):
        x = np.asarray(x, dtype=float)
        if self.coord is None:
            n = np.linalg.norm(x)
            return x / n if n > 0 else np.zeros_like(x)
        e = np.zeros_like(x)
        e[self.coord] = 1.0
        return e

    def gap(self, x):
        v = self.functional(x)
        d = self.threshold - v if self.sense == ">=" else v - self.threshold
        return np.maximum(d, 0.0)

    def contains(self, x):
        return self.gap(x) <= 0.0

    def shifted(self, margin):
        """Shrink (margin > 0, interior surrogate) or inflate (margin < 0, closure)."""
        b = self.threshold + margin if self.sense == ">=" else self.threshold - margin
        return TerminalTarget(b, self.sense, self.coord)

    def penalty(self, path):
        x = path[-1]
        gap = float(self.gap(x))
        grad = np.zeros_like(path)
        if gap > 0:
            sign = -1.0 if self.sense == ">=" else 1.0
            grad[-1] = 2.0 * gap * sign * self.functional_grad(x)
        return gap * gap, gap, grad


@dataclass(frozen=True, eq=False)
class PathTarget:
    """A full target path on the solver grid; gap is the sup-norm distance."""
    values: np.ndarray

    def penalty(self, path, grid):
        diff = path - self.values
        w = np.gradient(grid) if grid.size > 1 else np.ones(1)
        w = np.full(grid.size, grid[1] - grid[0]) if grid.size > 1 else w
        w[0] *= 0.5
        w[-1] *= 0.5
        pen = float(np.sum(w[:, None] * diff * diff))
        gap = float(np.max(np.linalg.norm(diff, axis=-1)))
        return pen, gap, 2.0 * w[:, None] * diff


@dataclass(eq=False)
class RateProblem:
    """Model, target and control grid for a rate computation.

    Parameters
    ----------
    spec, op, model, x0, T
        The skeleton equation.
    target : TerminalTarget or PathTarget
    n_t : int
        Number of uniform time cells of the control.
    atom_cell, z_edges
        Mark partition; defaults to the mark space's natural cells.
    N_cap : float
        Costs above this level are reported as outside S^N.
    dt : float
        Step of the skeleton scheme.
    g_hi : float
        Upper bound on cell values.
    """
    spec: object
    op: object
    model: object
    x0: np.ndarray
    T: float
    target: object
    n_t: int = 1
    atom_cell: Optional[np.ndarray] = None
    z_edges: Optional[np.ndarray] = None
    N_cap: float = np.inf
    dt: float = 1e-2
    g_hi: float = 10.0

    def __post_init__(self):
        self.x0 = as_hvector(self.spec, self.x0)
        marks = self.model.marks
        self.template = Control.constant(marks, self.T, 1.0, self.n_t,
                                         self.atom_cell, self.z_edges)
        self.grid = time_grid(self.T, self.dt)
        self.quad = StepQuadrature.for_control(self.model, self.template)
        self.averaging = self.template.averaging_matrix(self.grid)
        self.weights = self.template.cell_weights(marks)
        if isinstance(self.target, PathTarget) and self.target.values.shape != (
                self.grid.size, self.spec.dim):
            raise ValueError("target path must live on the solver grid")

    @property
    def shape(self):
        return self.template.shape

    @property
    def n_cells(self):
        return int(np.prod(self.shape))

    def control(self, values):
        return self.template.with_values(values)

    def cost(self, values):
        return np.sum(ell(np.asarray(values)) * self.weights, axis=(-2, -1))

    def paths(self, values):
        """Skeleton paths for a batch of value matrices: (batch, steps+1, d)."""
        gbar = step_controls(self.template, self.grid, values)
        return integrate_skeleton(self.op, self.model, self.quad, self.x0, self.grid, gbar)

    def target_gap(self, path):
        if isinstance(self.target, PathTarget):
            return self.target.penalty(path, self.grid)
        return self.target.penalty(path)

    def batch_gaps(self, values):
        paths = self.paths(values)
        if isinstance(self.target, PathTarget):
            return np.max(np.linalg.norm(paths - self.target.values, axis=-1), axis=-1)
        return self.target.gap(paths[:, -1])


def _adjoint(problem, values, path, dpath):
    """Gradient of a path functional with sensitivity ``dpath`` w.r.t. cell values."""
    op, model, quad, grid = problem.op, problem.model, problem.quad, problem.grid
    gbar = step_controls(problem.template, grid, values)[0]
    t, X = grid[:-1], path[:-1]
    h = np.diff(grid)
    stiff = np.zeros(X.shape[1]) if op.stiff is None else op.stiff
    fv = model.at_nodes(t, X, quad.nodes)
    jf = model.jac_at_nodes(t, X, quad.nodes)
    jA = op.jac(t, X) - np.diag(stiff)
    gnode = gbar[:, quad.node_cell]
    n_cells = gbar.shape[1]
    lam = dpath[-1].copy()
    dg = np.zeros_like(gbar)
    for n in range(grid.size - 2, -1, -1):
        s = lam / (1.0 - h[n] * stiff)
        per_node = quad.weights * (fv[n] @ s)
        dg[n] = h[n] * np.bincount(quad.node_cell, weights=per_node, minlength=n_cells)
        wj = quad.weights * (gnode[n] - 1.0)
        lam = s + h[n] * (jA[n].T @ s + np.einsum("j,jkd,k->d", wj, jf[n], s)) + dpath[n]
    return problem.averaging.T @ dg


def penalized_objective(problem, values, mu):
    """L_T + mu * gap penalty and its gradient with respect to the cell values."""
    values = np.reshape(values, problem.shape)
    path = problem.paths(values)[0]
    pen, gap, dpath = problem.target_gap(path)
    J = float(problem.cost(values)) + mu * pen
    with np.errstate(divide="ignore"):
        grad = np.log(values) * problem.weights
    grad = grad + mu * _adjoint(problem, values, path, dpath)
    return J, grad, gap


def gradient_check(problem, values, mu, directions=20, seed=0, step=1e-6):
    """Largest relative error of adjoint directional derivatives against central differences."""
    values = np.reshape(np.asarray(values, dtype=float), problem.shape)
    _, grad, _ = penalized_objective(problem, values, mu)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(directions):
        u = rng.standard_normal(problem.shape)
        u /= np.linalg.norm(u)
        hstep = step * max(1.0, float(np.max(values)))
        jp = penalized_objective(problem, values + hstep * u, mu)[0]
        jm = penalized_objective(problem, values - hstep * u, mu)[0]
        fd = (jp - jm) / (2 * hstep)
        ad = float(np.sum(grad * u))
        worst = max(worst, abs(ad - fd) / max(abs(fd), abs(ad), 1e-300))
    return worst


@dataclass
class OptimizerOptions:
    mu_schedule: tuple = tuple(10.0 ** k for k in range(9))
    max_iter: int = 500
    gap_tol: float = 1e-6
    grad_tol: float = 1e-4
    floor: float = 1e-8
    init: Optional[np.ndarray] = None
    check_gradient: bool = True


@dataclass(eq=False)
class RateResult:
    """Outcome of a rate computation.

    ``cost`` is +inf when no feasible control was found; ``best_cost`` then
    keeps the cost of the closest iterate.
    """
    control: Control
    cost: float
    best_cost: float
    gap: float
    feasible: bool
    converged: bool
    method: str
    endpoint: np.ndarray
    trace: list = field(default_factory=list)
    grid_step_cost: Optional[float] = None
    in_sn: Optional[bool] = None

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["cost", "best_cost", "gap", "feasible", "converged", "method"]
                       + [f"xT{k}" for k in range(self.endpoint.size)])
            w.writerow([repr(float(self.cost)), repr(float(self.best_cost)), repr(float(self.gap)),
                        int(self.feasible), int(self.converged), self.method]
                       + [repr(float(v)) for v in self.endpoint])

    def trace_to_csv(self, path):
        cols = ["mu", "iterations", "objective", "cost", "gap", "grad_norm"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            for row in self.trace:
                w.writerow([repr(float(row[c])) if isinstance(row[c], float) else row[c] for c in cols])


def _projected_grad_norm(x, grad, lo, hi):
    pg = grad.copy()
    pg[(x <= lo) & (pg > 0)] = 0.0
    pg[(x >= hi) & (pg < 0)] = 0.0
    return float(np.linalg.norm(pg))


def minimize_rate(problem, opts=None):
    """Smallest cost of a control whose skeleton path reaches the target."""
    opts = OptimizerOptions() if opts is None else opts
    lo, hi = opts.floor, problem.g_hi
    x = np.full(problem.n_cells, 1.0) if opts.init is None else np.clip(
        np.asarray(opts.init, dtype=float).reshape(-1), lo, hi)
    method = "L-BFGS-B"
    if opts.check_gradient:
        probe = np.clip(x * np.exp(0.1 * np.random.default_rng(0).standard_normal(x.size)), lo, hi)
        if gradient_check(problem, probe, opts.mu_schedule[0], directions=1) > 1e-4:
            method = "Nelder-Mead"
    trace = []
    gap = np.inf
    for mu in opts.mu_schedule:
        def fun(v, mu=mu):
            J, gr, _ = penalized_objective(problem, v, mu)
            return J, gr.reshape(-1)
        if method == "L-BFGS-B":
            res = minimize(fun, x, jac=True, method="L-BFGS-B", bounds=[(lo, hi)] * x.size,
                           options={"maxiter": opts.max_iter, "ftol": 1e-15, "gtol": 1e-12})
        else:
            res = minimize(lambda v: fun(v)[0], x, method="Nelder-Mead",
                           bounds=[(lo, hi)] * x.size,
                           options={"maxiter": opts.max_iter * 10, "xatol": 1e-10, "fatol": 1e-14})
        x = np.clip(res.x, lo, hi)
        J, grad, gap = penalized_objective(problem, x, mu)
        trace.append({"mu": float(mu), "iterations": int(res.nit), "objective": float(J),
                      "cost": float(problem.cost(x.reshape(problem.shape))), "gap": float(gap),
                      "grad_norm": _projected_grad_norm(x, grad.reshape(-1), lo, hi)})
        if gap <= opts.gap_tol:
            break
    values = x.reshape(problem.shape)
    cost = float(problem.cost(values))
    feasible = bool(gap <= opts.gap_tol)
    stationary = trace[-1]["grad_norm"] <= opts.grad_tol * max(1.0, trace[-1]["objective"])
    endpoint = problem.paths(values)[0][-1]
    return RateResult(problem.control(values), cost if feasible else np.inf, cost, float(gap),
                      feasible, feasible and stationary, method, endpoint, trace,
                      in_sn=feasible and cost <= problem.N_cap)


def brute_force_rate(problem, grid_points=1000, g_lo=1e-3, chunk=20000):
    """Exhaustive search over a tensor grid of cell values (at most three cells).

    Every axis is ``grid_points`` values evenly spread over [g_lo, g_hi] plus
    the value 1. ``grid_step_cost`` is the largest cost change to a
    neighbouring grid point of the minimizer, the oracle's resolution.
    """
    if problem.n_cells > 3:
        raise ValueError(f"brute force over {problem.n_cells} cells refused (at most 3)")
    axis = np.union1d(np.linspace(g_lo, problem.g_hi, grid_points), [1.0])
    mesh = np.stack(np.meshgrid(*([axis] * problem.n_cells), indexing="ij"), axis=-1)
    cand = mesh.reshape(-1, problem.n_cells)
    costs = problem.cost(cand.reshape((-1,) + problem.shape))
    order = np.argsort(costs, kind="stable")
    best = None
    # scan candidates cheapest first, in chunks, and stop at the first feasible one
    for lo in range(0, order.size, chunk):
        sel = order[lo:lo + chunk]
        gaps = problem.batch_gaps(cand[sel].reshape((-1,) + problem.shape))
        ok = np.flatnonzero(gaps <= 0.0)
        if ok.size:
            best = sel[ok[0]]
            break
    if best is None:
        values = np.ones(problem.shape)
        endpoint = problem.paths(values)[0][-1]
        return RateResult(problem.control(values), np.inf, np.inf, float("nan"), False, True,
                          "brute-force", endpoint, grid_step_cost=None, in_sn=False)
    idx = np.unravel_index(best, (axis.size,) * problem.n_cells)
    step = 0.0
    for c in range(problem.n_cells):
        for s in (-1, 1):
            j = list(idx)
            j[c] += s
            if 0 <= j[c] < axis.size:
                nb = axis[np.array(j)]
                step = max(step, abs(float(problem.cost(nb.reshape(problem.shape))) - costs[best]))
    values = cand[best].reshape(problem.shape)
    endpoint = problem.paths(values)[0][-1]
    return RateResult(problem.control(values), float(costs[best]), float(costs[best]), 0.0, True,
                      True, "brute-force", endpoint, grid_step_cost=step,
                      in_sn=float(costs[best]) <= problem.N_cap)
