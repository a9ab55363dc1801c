"""
Time stepping for the small-noise jump SPDE and its controlled variant.

Both equations share one continuous step. Between grid points and jump
times the state is advanced by a semi-implicit Euler step: the diagonal
stiff part of the drift is implicit, everything else explicit::

    x_new = (x + h R(t, x) + c) / (1 - h stiff)

where ``R`` is the non-stiff remainder of the drift and ``c`` the
noise-induced drift over the step. Jumps are applied atomically at their
exact times, ``x <- x + eps f(t, x-, z)``.

For the controlled equation the continuous drift splits as

    int f (g - 1) nu dt   (control drift, part of Z)
  - int f g nu dt         (compensator, part of M)

and with ``g = 1`` this is the plain compensated equation. The pieces are
accumulated separately so that ``X = x0 + Y + Z + M`` holds by construction,
with ``Y`` the integrated drift, ``Z`` the control drift and ``M`` the
compensated jump martingale.

Ensembles are advanced in lockstep: each iteration moves every live
trajectory to its next grid time or jump time, whichever is first, so the
iteration count is the number of grid steps plus the largest jump count.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .prm import (Control, DEFAULT_EVENT_CAP, girsanov_log_density, sample_controlled_prm,
                  sample_prm, trajectory_rng)
from .triple import as_hvector, norm_v


class NumericalFailure(ArithmeticError):
    """Nonfinite state; ``time`` is the first time it was observed."""

    def __init__(self, message, time=None):
        super().__init__(message)
        self.time = time


def time_grid(T, dt):
    """Uniform grid on [0, T] with step at most ``dt``."""
    if not (T > 0 and dt > 0):
        raise ValueError("T and dt must be > 0")
    if dt > T:
        raise ValueError("dt must not exceed T")
    n = int(round(T / dt))
    if abs(n * dt - T) > 1e-9 * T:
        n = int(np.ceil(T / dt))
    return np.linspace(0.0, T, n + 1)


@dataclass(frozen=True)
class StepQuadrature:
    """Mark quadrature aligned with the mark cells of a control."""
    nodes: np.ndarray
    weights: np.ndarray
    node_cell: np.ndarray

    @classmethod
    def for_control(cls, model, g):
        return cls(*g.quadrature(model.marks))


def continuous_step(op, model, quad, t, x, h, gbar, compensate):
    """One semi-implicit Euler step from ``t`` over ``h``.

    ``gbar`` holds the control averaged over the step per mark cell, shape
    (n, cells). Returns ``(x_new, dy, dz, dm)``; ``dm`` is None unless
    ``compensate`` (the stochastic equation) is set.
    """
    h = np.asarray(h, dtype=float)[..., None]
    gnode = gbar[..., quad.node_cell]
    fv = model.at_nodes(t, x, quad.nodes)
    dz = h * np.einsum("...j,...jd->...d", quad.weights * (gnode - 1.0), fv)
    if compensate:
        dm = -(h * np.einsum("...j,...jd->...d", quad.weights * gnode, fv))
        drift = dz + dm
    else:
        dm = None
        drift = dz
    stiff = 0.0 if op.stiff is None else op.stiff
    x_new = (x + h * op.remainder(t, x) + drift) / (1.0 - h * stiff)
    with np.errstate(invalid="ignore"):   # blow-up is detected by the caller
        dy = x_new - x - drift
    return x_new, dy, dz, dm


@dataclass(frozen=True, eq=False)
class CadlagPath:
    """Right-continuous record of a trajectory at grid and jump times.

    ``values[i]`` is the state at ``times[i]``; ``left_values[i]`` the left
    limit there, which differs from ``values[i]`` only at jumps.
    """
    times: np.ndarray
    values: np.ndarray
    left_values: np.ndarray
    is_jump: np.ndarray
    is_grid: np.ndarray

    def __call__(self, t):
        i = np.searchsorted(self.times, np.asarray(t, dtype=float), side="right") - 1
        return self.values[np.clip(i, 0, self.times.size - 1)]

    @property
    def grid_times(self):
        return self.times[self.is_grid]

    @property
    def grid_values(self):
        return self.values[self.is_grid]

    def to_csv(self, path, spec=None):
        import csv
        d = self.values.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "jump"] + [f"x{k}" for k in range(d)] + ["norm_h"]
                       + (["norm_v"] if spec is not None else []))
            nh = np.linalg.norm(self.values, axis=1)
            nv = norm_v(spec, self.values) if spec is not None else None
            for i, t in enumerate(self.times):
                row = [repr(float(t)), int(self.is_jump[i])]
                row += [repr(float(c)) for c in self.values[i]] + [repr(float(nh[i]))]
                if nv is not None:
                    row.append(repr(float(nv[i])))
                w.writerow(row)


@dataclass(eq=False)
class SolveReport:
    """One trajectory with its monitors and the X = x0 + Y + Z + M split."""
    path: CadlagPath
    x0: np.ndarray
    sup_h_norm: float
    energy_integral: float
    v_integral: float
    p: float
    m_path: np.ndarray
    z_path: np.ndarray
    y_path: np.ndarray
    n_jumps: int
    log_weight: Optional[float] = None
    stream: object = None

    def reconstruction_error(self):
        rebuilt = self.x0 + self.y_path + self.z_path + self.m_path
        return float(np.max(np.linalg.norm(self.path.values - rebuilt, axis=1)))


@dataclass(eq=False)
class EnsembleResult:
    """Per-trajectory monitors of an ensemble, indexed by trajectory."""
    eps: float
    seed: int
    indices: np.ndarray
    x_T: np.ndarray
    sup_h: np.ndarray
    v_integral: np.ndarray
    energy: dict
    sup_m2: np.ndarray
    sup_gap2: Optional[np.ndarray]
    m_T: np.ndarray
    z_T: np.ndarray
    y_T: np.ndarray
    n_jumps: np.ndarray
    log_weight: Optional[np.ndarray]
    blowup_time: np.ndarray

    def __len__(self):
        return self.indices.size

    @property
    def blown_up(self):
        return np.isfinite(self.blowup_time)

    @staticmethod
    def concatenate(parts):
        first = parts[0]
        cat = lambda name: np.concatenate([getattr(p, name) for p in parts])  # noqa: E731
        opt = lambda name: None if getattr(first, name) is None else cat(name)  # noqa: E731
        return EnsembleResult(
            first.eps, first.seed, cat("indices"), cat("x_T"), cat("sup_h"), cat("v_integral"),
            {p: np.concatenate([r.energy[p] for r in parts]) for p in first.energy},
            cat("sup_m2"), opt("sup_gap2"), cat("m_T"), cat("z_T"), cat("y_T"), cat("n_jumps"),
            opt("log_weight"), cat("blowup_time"))


def _sample_streams(model, eps, g, T, seed, indices, controlled, cap, want_weight):
    streams, logw = [], []
    for i in indices:
        rng = trajectory_rng(seed, i)
        if controlled:
            s = sample_controlled_prm(model.marks, eps, g, T, rng, cap=cap)
            if want_weight:
                logw.append(girsanov_log_density(s, g, eps, model.marks))
        else:
            s = sample_prm(model.marks, eps, T, rng, cap=cap)
        streams.append(s)
    return streams, (np.array(logw) if want_weight else None)


def _run_chunk(spec, op, model, x0, eps, grid, g, controlled, streams, ps, reference, record):
    n, d = len(streams), spec.dim
    N = grid.size - 1
    quad = StepQuadrature.for_control(model, g)
    counts = np.array([len(s) for s in streams], dtype=int)
    offsets = np.concatenate([[0], np.cumsum(counts)])
    ev_t = np.concatenate([s.times for s in streams] + [[np.inf]])
    ev_z = np.concatenate([s.marks for s in streams] + [[0.0]])
    sentinel = ev_t.size - 1
    ptr, end = offsets[:-1].copy(), offsets[1:]

    t = np.zeros(n)
    x = np.tile(np.asarray(x0, dtype=float), (n, 1))
    y, z, m = np.zeros((n, d)), np.zeros((n, d)), np.zeros((n, d))
    k = np.ones(n, dtype=int)
    alpha = op.alpha
    h0 = np.linalg.norm(x0)
    sup_h = np.full(n, h0)
    sup_m2 = np.zeros(n)
    sup_gap2 = None
    if reference is not None:
        sup_gap2 = np.full(n, float(np.sum((np.asarray(x0) - reference[0]) ** 2)))
    v_int = np.zeros(n)
    energy = {p: np.zeros(n) for p in ps}
    blowup = np.full(n, np.inf)
    rec = None
    if record:
        rec = {"t": [0.0], "x": [x[0].copy()], "xl": [x[0].copy()], "y": [y[0].copy()],
               "z": [z[0].copy()], "m": [m[0].copy()], "jump": [False], "grid": [True]}

    active = np.arange(n)
    while active.size:
        ia = active
        has_ev = ptr[ia] < end[ia]
        te = ev_t[np.where(has_ev, ptr[ia], sentinel)]
        tg = grid[k[ia]]
        tgt = np.minimum(te, tg)
        h = tgt - t[ia]
        gbar = g.time_average(t[ia], tgt)
        xa = x[ia]
        x_new, dy, dz, dm = continuous_step(op, model, quad, t[ia], xa, h, gbar, controlled)
        y[ia] += dy
        z[ia] += dz
        m[ia] += dm
        nh = np.linalg.norm(x_new, axis=1)
        nv = norm_v(spec, x_new)
        v_int[ia] += h * nv ** alpha
        for p in ps:
            energy[p][ia] += h * nh ** (p - 2) * nv ** alpha
        x_left = x_new
        jump = te <= tg
        if np.any(jump):
            ij = np.flatnonzero(jump)
            jump_rows = ptr[ia[ij]]
            x_new = x_new.copy()
            kick = eps * np.asarray(model.f(te[ij], x_new[ij], ev_z[jump_rows]), dtype=float)
            x_new[ij] += kick
            m[ia[ij]] += kick
            ptr[ia[ij]] += 1
        x[ia] = x_new
        t[ia] = tgt
        nh_post = np.linalg.norm(x_new, axis=1)
        sup_h[ia] = np.maximum(sup_h[ia], np.maximum(nh, nh_post))
        sup_m2[ia] = np.maximum(sup_m2[ia], np.sum(m[ia] ** 2, axis=1))

        nxt = ev_t[np.where(ptr[ia] < end[ia], ptr[ia], sentinel)]
        at_grid = (tgt == tg) & (nxt > tg)
        if sup_gap2 is not None and np.any(at_grid):
            ig = ia[at_grid]
            gap = np.sum((x[ig] - reference[k[ig]]) ** 2, axis=1)
            sup_gap2[ig] = np.maximum(sup_gap2[ig], gap)
        if record:
            rec["t"].append(float(tgt[0]))
            rec["xl"].append(x_left[0].copy())
            rec["x"].append(x_new[0].copy())
            rec["y"].append(y[0].copy())
            rec["z"].append(z[0].copy())
            rec["m"].append(m[0].copy())
            rec["jump"].append(bool(jump[0]))
            rec["grid"].append(bool(at_grid[0]))
        k[ia] += at_grid

        bad = ~np.all(np.isfinite(x_new), axis=1)
        if np.any(bad):
            blowup[ia[bad]] = tgt[bad]
            if record:
                raise NumericalFailure(f"nonfinite state at t = {tgt[0]!r}", float(tgt[0]))
        active = ia[(k[ia] <= N) & ~bad]

    return (x, y, z, m, sup_h, sup_m2, sup_gap2, v_int, energy, counts, blowup), rec


def run_ensemble(spec, op, model, x0, eps, dt, n, seed, T=1.0, g=None, reference=None,
                 ps=(2.0,), start=0, workers=1, chunk=20000, cap=DEFAULT_EVENT_CAP,
                 log_weights=None):
    """Simulate ``n`` trajectories (indices ``start .. start+n-1``).

    With ``g`` given, the controlled equation is solved with jumps from the
    thinned controlled measure and the importance log-weights are returned.
    ``reference`` is a path on the same grid (shape (steps+1, d)) against
    which sup_t |X_t - reference_t|^2 is monitored at grid times.

    Chunks may run on worker threads; results are assembled in index order,
    so the output does not depend on ``workers``.
    """
    x0 = as_hvector(spec, x0)
    grid = time_grid(T, dt)
    controlled = g is not None
    gg = g if controlled else Control.constant(model.marks, T, 1.0)
    if abs(gg.T - T) > 1e-12 * T:
        raise ValueError("control horizon differs from T")
    if reference is not None:
        reference = np.asarray(reference, dtype=float)
        if reference.shape != (grid.size, spec.dim):
            raise ValueError("reference path must live on the solver grid")
    want_w = controlled if log_weights is None else bool(log_weights)
    ps = tuple(float(p) for p in ps)
    idx = np.arange(start, start + n)
    bounds = list(range(0, n, chunk)) + [n]

    def work(lo_hi):
        lo, hi = lo_hi
        streams, logw = _sample_streams(model, eps, gg, T, seed, idx[lo:hi], controlled, cap, want_w)
        (x, y, z, m, sup_h, sup_m2, sup_gap2, v_int, energy, counts, blow), _ = _run_chunk(
            spec, op, model, x0, eps, grid, gg, True, streams, ps, reference, False)
        return EnsembleResult(eps, seed, idx[lo:hi], x, sup_h, v_int, energy, sup_m2, sup_gap2,
                              m, z, y, counts, logw, blow)

    spans = list(zip(bounds[:-1], bounds[1:]))
    if workers > 1 and len(spans) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(work, spans))
    else:
        parts = [work(s) for s in spans]
    return EnsembleResult.concatenate(parts)


def _single(spec, op, model, x0, eps, dt, seed, T, g, p, cap):
    x0 = as_hvector(spec, x0)
    grid = time_grid(T, dt)
    controlled = g is not None
    gg = g if controlled else Control.constant(model.marks, T, 1.0)
    rng = trajectory_rng(seed)
    if controlled:
        stream = sample_controlled_prm(model.marks, eps, gg, T, rng, cap=cap)
        logw = girsanov_log_density(stream, gg, eps, model.marks)
    else:
        stream = sample_prm(model.marks, eps, T, rng, cap=cap)
        logw = None
    out, rec = _run_chunk(spec, op, model, x0, eps, grid, gg, True, [stream], (float(p),),
                          None, True)
    _, _, _, _, sup_h, _, _, v_int, energy, counts, _ = out
    path = CadlagPath(np.array(rec["t"]), np.array(rec["x"]), np.array(rec["xl"]),
                      np.array(rec["jump"]), np.array(rec["grid"]))
    return SolveReport(path, x0.copy(), float(sup_h[0]), float(energy[float(p)][0]),
                       float(v_int[0]), float(p), np.array(rec["m"]), np.array(rec["z"]),
                       np.array(rec["y"]), int(counts[0]), logw, stream)


def solve_spde(spec, op, model, x0, eps, dt, seed, T=1.0, p=2.0, cap=DEFAULT_EVENT_CAP):
    """Single trajectory of the plain equation; raises NumericalFailure on blow-up."""
    return _single(spec, op, model, x0, eps, dt, seed, T, None, p, cap)


def solve_controlled_spde(spec, op, model, x0, eps, g, dt, seed, T=None, p=2.0,
                          cap=DEFAULT_EVENT_CAP):
    """Single trajectory of the controlled equation; ``log_weight`` is set."""
    T = g.T if T is None else T
    return _single(spec, op, model, x0, eps, dt, seed, T, g, p, cap)


@dataclass
class MomentReport:
    """Ensemble moments of one run.

    ``sup_moment`` estimates E sup_t |X_t|_H^p, ``energy_moment`` estimates
    E int |X|_H^(p-2) |X|_V^alpha dt and ``v_moment`` estimates
    E (int |X|_V^alpha dt)^q for the requested power ``q``.
    """
    p: float
    n: int
    sup_moment: float
    sup_moment_se: float
    energy_moment: Optional[float]
    v_moment: Optional[float]
    v_power: Optional[float] = None
    extra: dict = field(default_factory=dict)


def _mean_se(a):
    a = np.asarray(a, dtype=float)
    se = float(np.std(a, ddof=1) / np.sqrt(a.size)) if a.size > 1 else 0.0
    return float(np.mean(a)), se


def monitor_moments(runs, p, v_power=None):
    """Moments of an ensemble (EnsembleResult or a list of SolveReport)."""
    p = float(p)
    if isinstance(runs, EnsembleResult):
        if len(runs) == 0:
            raise ValueError("empty ensemble")
        ok = ~runs.blown_up
        sup_h, v_int = runs.sup_h[ok], runs.v_integral[ok]
        energy = runs.energy.get(p)
        energy = None if energy is None else energy[ok]
    else:
        runs = list(runs)
        if not runs:
            raise ValueError("empty ensemble")
        sup_h = np.array([r.sup_h_norm for r in runs])
        v_int = np.array([r.v_integral for r in runs])
        energy = np.array([r.energy_integral for r in runs]) if all(r.p == p for r in runs) else None
    mean, se = _mean_se(sup_h ** p)
    return MomentReport(
        p, int(sup_h.size), mean, se,
        None if energy is None else float(np.mean(energy)),
        None if v_power is None else float(np.mean(v_int ** v_power)), v_power)


@dataclass
class LadderStability:
    eps: list
    moments: list
    variation: float
    growing: bool

    @property
    def stable(self):
        return not self.growing


def ladder_stability(reports_by_eps):
    """Relative spread (max - min) / min of sup-moments over an eps ladder.

    ``growing`` flags moments that increase strictly as eps decreases, the
    signature of a bound that is not uniform in eps.
    """
    eps = sorted(reports_by_eps, reverse=True)
    vals = [reports_by_eps[e].sup_moment for e in eps]
    lo, hi = min(vals), max(vals)
    variation = (hi - lo) / lo if lo > 0 else np.inf
    growing = len(vals) > 2 and bool(np.all(np.diff(vals) > 0))
    return LadderStability(eps, vals, float(variation), growing)
