"""
Mark spaces, intensity measures and jump coefficients.

The intensity nu is restricted to finite total mass. Two kinds of mark space
are supported: finitely many weighted atoms, or a density on a bounded
interval. Every integral over marks goes through one quadrature rule: exact
atom sums in the discrete case and composite Simpson with 2**10 panels per
cell in the density case.

Jump coefficients ``f(t, v, z)`` must broadcast: ``v`` has shape (..., d),
``z`` is broadcast against the leading axes of ``v`` and ``t`` likewise.
"""
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .operators import ConditionReport, ConditionResult, random_vectors
from .triple import norm_h, norm_v

SIMPSON_PANELS = 1024
DEFAULT_DELTA_GRID = (1e-3, 1e-2, 1e-1, 1.0)


def simpson_rule(lo, hi, panels=SIMPSON_PANELS):
    """Nodes and weights of composite Simpson on [lo, hi]."""
    if panels % 2:
        raise ValueError("Simpson needs an even number of panels")
    x = np.linspace(lo, hi, panels + 1)
    w = np.ones(panels + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return x, w * (hi - lo) / (3.0 * panels)


@dataclass(frozen=True, eq=False)
class MarkSpace:
    """Finite intensity measure nu on a mark space.

    Use :meth:`discrete` or :meth:`from_density` rather than the constructor.
    """
    kind: str
    positions: Optional[np.ndarray] = None
    masses: Optional[np.ndarray] = None
    density: Optional[Callable] = None
    interval: Optional[tuple] = None
    panels: int = SIMPSON_PANELS

    def __post_init__(self):
        if self.kind == "finite_discrete":
            pos = np.asarray(self.positions, dtype=float).reshape(-1)
            mass = np.asarray(self.masses, dtype=float).reshape(-1)
            if pos.size == 0 or pos.shape != mass.shape:
                raise ValueError("atoms need matching positions and masses")
            if np.any(~np.isfinite(mass)) or np.any(mass <= 0):
                raise ValueError("atom masses must be finite and > 0")
            if np.unique(pos).size != pos.size:
                raise ValueError("atom positions must be distinct")
            object.__setattr__(self, "positions", pos)
            object.__setattr__(self, "masses", mass)
        elif self.kind == "interval_density":
            lo, hi = map(float, self.interval)
            if not hi > lo:
                raise ValueError("empty mark interval")
            object.__setattr__(self, "interval", (lo, hi))
            x, w = simpson_rule(lo, hi, self.panels)
            dens = np.asarray(self.density(x), dtype=float) * np.ones_like(x)
            if np.any(dens < 0) or not np.all(np.isfinite(dens)):
                raise ValueError("density must be finite and nonnegative")
            object.__setattr__(self, "_grid", (x, dens))
        else:
            raise ValueError(f"unknown mark space kind {self.kind!r}")
        if not self.total() > 0:
            raise ValueError("intensity has zero total mass")

    @classmethod
    def discrete(cls, positions, masses):
        return cls("finite_discrete", positions=positions, masses=masses)

    @classmethod
    def from_density(cls, density, lo, hi, panels=SIMPSON_PANELS):
        return cls("interval_density", density=density, interval=(lo, hi), panels=panels)

    @property
    def is_discrete(self):
        return self.kind == "finite_discrete"

    def total(self):
        if self.is_discrete:
            return float(np.sum(self.masses))
        x, dens = self._grid
        _, w = simpson_rule(*self.interval, self.panels)
        return float(np.dot(w, dens))

    def default_cells(self):
        """One cell per atom, or the whole interval as a single cell."""
        if self.is_discrete:
            return np.arange(self.positions.size), None
        return None, np.array(self.interval)

    def quadrature(self, atom_cell=None, z_edges=None):
        """Quadrature ``(nodes, weights, node_cell)`` aligned with a cell partition."""
        if self.is_discrete:
            cell = np.arange(self.positions.size) if atom_cell is None else np.asarray(atom_cell)
            return self.positions, self.masses, cell
        edges = np.array(self.interval) if z_edges is None else np.asarray(z_edges, dtype=float)
        nodes, weights, cells = [], [], []
        for c in range(edges.size - 1):
            x, w = simpson_rule(edges[c], edges[c + 1], self.panels)
            nodes.append(x)
            weights.append(w * np.asarray(self.density(x), dtype=float))
            cells.append(np.full(x.size, c))
        return np.concatenate(nodes), np.concatenate(weights), np.concatenate(cells)

    def cell_masses(self, atom_cell=None, z_edges=None):
        _, w, cell = self.quadrature(atom_cell, z_edges)
        return np.bincount(cell, weights=w)

    def atom_index(self, z):
        """Index of the atom located at each mark value in ``z``."""
        order = np.argsort(self.positions)
        srt = self.positions[order]
        z = np.asarray(z, dtype=float)
        i = np.clip(np.searchsorted(srt, z), 0, srt.size - 1)
        if np.any(srt[i] != z):
            raise ValueError("mark value is not an atom of this mark space")
        return order[i]

    def sample(self, rng, n):
        """Draw ``n`` marks from nu / nu(X); returns ``(values, atom_indices)``.

        Atom indices are -1 for density marks, which are drawn by inverting
        the piecewise-linear CDF of the tabulated density.
        """
        if self.is_discrete:
            p = self.masses / self.masses.sum()
            idx = rng.choice(self.positions.size, size=n, p=p)
            return self.positions[idx], idx
        x, dens = self._grid
        cdf = np.concatenate([[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(x))])
        u = rng.uniform(0.0, cdf[-1], size=n)
        return np.interp(u, cdf, x), np.full(n, -1)


def nu_total(marks):
    return marks.total()


def _lookup(marks, values):
    """Turn per-atom values into a function of the mark value."""
    values = np.asarray(values, dtype=float)
    if not marks.is_discrete:
        raise ValueError("per-atom values need a discrete mark space")
    if values.shape[0] != marks.positions.size:
        raise ValueError("need one value per atom")

    def fn(z):
        return values[marks.atom_index(z)]
    return fn


@dataclass(frozen=True, eq=False)
class NoiseModel:
    """Jump coefficient f with majorants.

    Parameters
    ----------
    marks : MarkSpace
    f : callable
        ``f(t, v, z)`` -> H coordinates, broadcasting as described above.
    L_f, G_f : callable
        ``(t, z)`` -> nonnegative growth and Lipschitz majorants.
    eta0 : float
        Positive slack entering the exponent threshold ``upsilon``.
    p_exponent : float, optional
        Integrability exponent for L_f; defaults to ``upsilon`` of the triple.
    f_jac : callable, optional
        ``(t, v, z)`` -> d f / d v of shape (..., d, d).
    """
    marks: MarkSpace
    f: Callable
    L_f: Callable
    G_f: Callable
    eta0: float = 0.1
    p_exponent: Optional[float] = None
    f_jac: Optional[Callable] = None
    name: str = "custom"

    def __post_init__(self):
        if not self.eta0 > 0:
            raise ValueError("eta0 must be > 0")

    def nodes(self, atom_cell=None, z_edges=None):
        return self.marks.quadrature(atom_cell, z_edges)

    def at_nodes(self, t, v, nodes):
        """f evaluated at every quadrature node: shape (..., J, d)."""
        v = np.asarray(v, dtype=float)
        t = np.asarray(t, dtype=float)
        tt = t[..., None] if t.ndim else t
        return self.f(tt, v[..., None, :], nodes)

    def integrate(self, t, v, multiplier=None, quad=None):
        """Sum_j w_j m_j f(t, v, z_j); ``multiplier`` has shape (..., J)."""
        nodes, weights, _ = self.nodes() if quad is None else quad
        fv = self.at_nodes(t, v, nodes)
        w = weights if multiplier is None else weights * multiplier
        return np.einsum("...j,...jd->...d", np.broadcast_to(w, fv.shape[:-1]), fv)

    def lipschitz_integral(self, t, v1, v2):
        nodes, weights, _ = self.nodes()
        diff = self.at_nodes(t, v1, nodes) - self.at_nodes(t, v2, nodes)
        return np.sum(weights * np.sum(diff * diff, axis=-1), axis=-1)

    def jac_at_nodes(self, t, v, nodes, h=1e-6):
        """d f / d v at every node: shape (..., J, d, d)."""
        v = np.asarray(v, dtype=float)
        t = np.asarray(t, dtype=float)
        tt = t[..., None] if t.ndim else t
        vv = v[..., None, :]
        if self.f_jac is not None:
            out = self.f_jac(tt, vv, nodes)
            return np.broadcast_to(out, vv.shape[:-2] + (np.size(nodes),) + (v.shape[-1],) * 2)
        d = v.shape[-1]
        cols = []
        for k in range(d):
            e = np.zeros(d)
            e[k] = h * max(1.0, float(np.max(np.abs(v))))
            cols.append((self.f(tt, vv + e, nodes) - self.f(tt, vv - e, nodes)) / (2 * e[k]))
        return np.stack(cols, axis=-1)


def multiplicative(marks, sigma, eta0=0.1, p_exponent=None):
    """f(t, v, z) = sigma(z) v; majorants L_f = G_f = |sigma(z)|.

    ``sigma`` is a scalar, one value per atom, or a callable of the mark.
    """
    if callable(sigma):
        sig = sigma
    elif np.ndim(sigma) == 0:
        s0 = float(sigma)

        def sig(z):
            return np.full(np.shape(z), s0)
    else:
        sig = _lookup(marks, sigma)

    def f(t, v, z):
        return np.asarray(sig(z))[..., None] * v

    def f_jac(t, v, z):
        s = np.asarray(sig(z), dtype=float)
        return s[..., None, None] * np.eye(np.shape(v)[-1])

    def majorant(t, z):
        return np.abs(sig(z)) * np.ones(np.broadcast(np.asarray(t), np.asarray(z)).shape)

    return NoiseModel(marks, f, majorant, majorant, eta0=eta0, p_exponent=p_exponent,
                      f_jac=f_jac, name="multiplicative")


def additive(marks, vectors, eta0=0.1, p_exponent=None):
    """f(t, v, z) = c(z), independent of the state; L_f = |c(z)|_H, G_f = 0.

    ``vectors`` is one vector for all marks, one row per atom, or a callable.
    """
    vectors_arr = None if callable(vectors) else np.asarray(vectors, dtype=float)
    if callable(vectors):
        cfun = vectors
    elif vectors_arr.ndim == 1:
        def cfun(z):
            return np.broadcast_to(vectors_arr, np.shape(z) + vectors_arr.shape)
    else:
        cfun = _lookup(marks, vectors_arr)

    def f(t, v, z):
        v = np.asarray(v)
        c = np.asarray(cfun(z), dtype=float)
        return np.broadcast_to(c, np.broadcast_shapes(c.shape, v.shape)).copy()

    def f_jac(t, v, z):
        d = np.shape(v)[-1]
        return np.zeros(np.broadcast(np.asarray(z)[..., None], np.asarray(v)).shape + (d,))

    def L_f(t, z):
        c = np.asarray(cfun(z), dtype=float)
        return np.linalg.norm(c, axis=-1) * np.ones(np.broadcast(np.asarray(t), np.asarray(z)).shape)

    def G_f(t, z):
        return np.zeros(np.broadcast(np.asarray(t), np.asarray(z)).shape)

    return NoiseModel(marks, f, L_f, G_f, eta0=eta0, p_exponent=p_exponent,
                      f_jac=f_jac, name="additive")


def upsilon(alpha, beta, eta0):
    """Smallest admissible integrability exponent for the growth majorant."""
    return max(2 * beta * (alpha - 1) * (alpha + eta0) / alpha,
               4 * (alpha - 1) * (alpha + eta0) / alpha, 4.0, beta + 2)


def noise_integral_l2(model, spec, t, v):
    """int |f(t, v, z)|_H^2 nu(dz)."""
    nodes, weights, _ = model.nodes()
    fv = model.at_nodes(t, np.asarray(v, dtype=float), nodes)
    out = np.sum(weights * np.sum(fv * fv, axis=-1), axis=-1)
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("nonfinite jump coefficient")
    return out


def _space_time_integral(h, marks, T, transform):
    """int_0^T int transform(h(t, z)) nu(dz) dt by Simpson in t and the mark rule."""
    tn, tw = simpson_rule(0.0, T)
    nodes, weights, _ = marks.quadrature()
    with np.errstate(all="ignore"):
        vals = transform(np.asarray(h(tn[:, None], nodes[None, :]), dtype=float))
        return float(np.sum(tw[:, None] * weights[None, :] * vals))


@dataclass
class HpResult:
    passed: bool
    largest_delta: Optional[float]
    per_delta: dict

    def __bool__(self):
        return self.passed


def check_class_hp(h, marks, p, delta_grid=DEFAULT_DELTA_GRID, T=1.0):
    """Exponential integrability int_0^T int exp(delta h^p) nu(dz) dt < inf.

    Tested on the whole (finite-mass) space for each delta in ``delta_grid``.
    Overflow of the quadrature counts as divergence at that delta.
    """
    if not p > 0:
        raise ValueError("p must be > 0")
    per = {}
    for delta in delta_grid:
        val = _space_time_integral(h, marks, T, lambda x: np.exp(delta * x ** p))
        per[float(delta)] = bool(np.isfinite(val))
    ok = [d for d, good in per.items() if good]
    return HpResult(bool(ok), max(ok) if ok else None, per)


def check_h5_h6(model, spec, samples=1000, seed=0, gamma=None, F=None, G=None,
                T=1.0, delta_grid=DEFAULT_DELTA_GRID, tol=1e-9):
    """Sample and quadrature checks of the jump-coefficient hypotheses.

    Rows: ``jump_growth`` (|f| <= L_f (1+|v|)), ``jump_lipschitz``
    (|f(v1)-f(v2)| <= G_f |v1-v2|), ``p_exponent`` (p >= upsilon), L_q(nu_T)
    memberships of L_f and G_f, exponential-class memberships, and, when
    ``gamma``/``F`` and ``G`` are given, the second-moment and (beta+2)-moment
    bounds on the jump integral plus the margin of gamma below theta/(2 beta).
    """
    rng = np.random.default_rng(seed)
    n, d = int(samples), spec.dim
    marks = model.marks
    alpha, beta, theta = spec.alpha, spec.beta, spec.theta
    ups = upsilon(alpha, beta, model.eta0)
    p = ups if model.p_exponent is None else model.p_exponent
    t = rng.uniform(0.0, T, size=n)
    z, _ = marks.sample(rng, n)
    v1 = random_vectors(rng, n, d, (-1.0, 2.0))
    v2 = random_vectors(rng, n, d, (-1.0, 2.0))
    results = []

    def verdict(name, lhs, rhs, wit):
        lhs = np.asarray(lhs, dtype=float)
        rhs = np.broadcast_to(np.asarray(rhs, dtype=float), lhs.shape)
        bad = ~(np.isfinite(lhs) & np.isfinite(rhs))
        if np.any(bad):
            i = int(np.flatnonzero(bad)[0])
            return ConditionResult(name, False, -np.inf, float(np.linalg.norm(wit[i])),
                                   wit[i].copy(), hard_failure=True)
        scale = np.abs(lhs) + np.abs(rhs)
        slack = rhs - lhs
        margin = np.where(scale > 0, slack / np.where(scale > 0, scale, 1.0), 0.0)
        i = int(np.argmin(margin))
        return ConditionResult(name, bool(np.all(slack >= -tol * scale)), float(margin[i]),
                               float(np.linalg.norm(wit[i])), wit[i].copy())

    def flag(name, ok, margin):
        return ConditionResult(name, bool(ok), float(margin), 0.0)

    with np.errstate(all="ignore"):
        f1 = model.f(t, v1, z)
        f2 = model.f(t, v2, z)
        results.append(verdict("jump_growth", norm_h(spec, f1),
                               model.L_f(t, z) * (1 + norm_h(spec, v1)), v1))
        results.append(verdict("jump_lipschitz", norm_h(spec, f1 - f2),
                               model.G_f(t, z) * norm_h(spec, v1 - v2), v1))

    results.append(flag("p_exponent", p >= ups, (p - ups) / max(p, ups)))
    for q in sorted({2.0, 4.0, beta + 2, ups, ups / 2}):
        val = _space_time_integral(model.L_f, marks, T, lambda x: x ** q)
        results.append(flag(f"L_f_in_L{q:g}", np.isfinite(val), 1.0 if np.isfinite(val) else -np.inf))
    val = _space_time_integral(model.G_f, marks, T, lambda x: x ** 2)
    results.append(flag("G_f_in_L2", np.isfinite(val), 1.0 if np.isfinite(val) else -np.inf))
    hp = check_class_hp(model.L_f, marks, p, delta_grid, T)
    results.append(flag(f"L_f_in_exp_class_p{p:g}", hp.passed, hp.largest_delta or -np.inf))
    hp2 = check_class_hp(model.G_f, marks, 2.0, delta_grid, T)
    results.append(flag("G_f_in_exp_class_p2", hp2.passed, hp2.largest_delta or -np.inf))

    if gamma is not None and F is not None:
        with np.errstate(all="ignore"):
            lhs = noise_integral_l2(model, spec, t, v1)
            rhs = F(t) * (1 + norm_h(spec, v1) ** 2) + gamma * norm_v(spec, v1) ** alpha
        results.append(verdict("second_moment_bound", lhs, rhs, v1))
        bound = np.inf if beta == 0 else theta / (2 * beta)
        margin = 1.0 if np.isinf(bound) else (bound - gamma) / bound
        results.append(flag("gamma_below_theta_over_2beta", gamma < bound, margin))
    if G is not None:
        nodes, weights, _ = model.nodes()
        with np.errstate(all="ignore"):
            fv = model.at_nodes(t, v1, nodes)
            lhs = np.sum(weights * np.linalg.norm(fv, axis=-1) ** (beta + 2), axis=-1)
            rhs = G(t) * (1 + norm_h(spec, v1) ** (beta + 2))
        results.append(verdict("higher_moment_bound", lhs, rhs, v1))
    return ConditionReport(results, n, seed)
