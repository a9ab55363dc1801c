"""
Locally monotone drift operators A(t, v): V -> V* on a Galerkin triple.

A :class:`DriftOperator` bundles the map itself with the constants of the
hemicontinuity / local monotonicity / coercivity / growth conditions::

    monotone  2<A(v1)-A(v2), v1-v2> + int |f(v1,z)-f(v2,z)|_H^2 nu(dz)
                  <= (K_t + rho(v2)) |v1-v2|_H^2
    coercive  2<A(v), v> + theta |v|_V^alpha <= F_t (1 + |v|_H^2)
    growth    |A(v)|_V*^(alpha/(alpha-1)) <= (F_t + C |v|_V^alpha)(1 + |v|_H^beta)

plus the bound rho(v) <= C (1 + |v|_V^alpha)(1 + |v|_H^beta).

:func:`check_conditions` falsifies these by random sampling. A passing report
means no violation was found in the drawn samples, nothing more.
"""
import csv
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.integrate import trapezoid

from .triple import as_hvector, norm_h, norm_v, norm_vstar, pairing


def _const(value):
    def fn(t):
        return np.full(np.shape(t), float(value)) if np.ndim(t) else float(value)
    fn.value = float(value)
    return fn


def _zero_rho(v):
    v = np.asarray(v)
    return np.zeros(v.shape[:-1]) if v.ndim > 1 else 0.0


@dataclass(frozen=True, eq=False)
class DriftOperator:
    """Drift A(t, v) with its condition constants.

    ``apply(t, v)`` maps coordinates of shape (..., d) to (..., d); ``t`` is a
    scalar or an array broadcastable against the leading axes of ``v``.

    ``stiff`` is the diagonal of a linear part already contained in ``apply``
    which time steppers treat implicitly. ``jacobian(t, v)`` returns
    d apply / d v with shape (..., d, d); when omitted, central differences
    are used.
    """
    apply: Callable
    theta: float
    alpha: float
    beta: float
    C: float
    K: Callable = field(default_factory=lambda: _const(0.0))
    F: Callable = field(default_factory=lambda: _const(1.0))
    rho: Callable = _zero_rho
    stiff: Optional[np.ndarray] = None
    jacobian: Optional[Callable] = None
    name: str = "custom"

    def __post_init__(self):
        if not self.theta > 0:
            raise ValueError("theta must be > 0")
        if not self.alpha > 1:
            raise ValueError("alpha must be > 1")
        if not self.beta >= 0:
            raise ValueError("beta must be >= 0")
        if not self.C > 0:
            raise ValueError("C must be > 0")
        object.__setattr__(self, "_integrals", {})

    def __call__(self, t, v):
        return self.apply(t, v)

    def remainder(self, t, v):
        """The explicitly treated part: apply minus the stiff diagonal."""
        out = self.apply(t, v)
        if self.stiff is not None:
            out = out - self.stiff * v
        return out

    def jac(self, t, v, h=1e-6):
        if self.jacobian is not None:
            return self.jacobian(t, v)
        v = np.asarray(v, dtype=float)
        d = v.shape[-1]
        cols = []
        for k in range(d):
            e = np.zeros(d)
            e[k] = h * max(1.0, np.max(np.abs(v)))
            cols.append((self.apply(t, v + e) - self.apply(t, v - e)) / (2 * e[k]))
        return np.stack(cols, axis=-1)

    def _integral(self, which, T):
        key = (which, float(T))
        if key not in self._integrals:
            fn = self.K if which == "K" else self.F
            t = np.linspace(0.0, T, 1025)
            vals = np.array([fn(s) for s in t], dtype=float)
            self._integrals[key] = float(trapezoid(vals, t))
        return self._integrals[key]

    def integral_K(self, T):
        return self._integral("K", T)

    def integral_F(self, T):
        return self._integral("F", T)


def builtin_linear(spec, a, K=0.0, F=1.0):
    """A(t, v) = -a Lambda v with Lambda = diag(mu).

    Coercive with theta = 2a, alpha = 2, beta = 0; growth constant C = a^2.
    """
    if not a > 0:
        raise ValueError("a must be > 0")
    stiff = -a * spec.v_weights

    def apply(t, v):
        return stiff * as_hvector(spec, v)

    def jacobian(t, v):
        v = np.asarray(v)
        return np.broadcast_to(np.diag(stiff), v.shape + (spec.dim,)).copy()

    return DriftOperator(apply, theta=2 * a, alpha=2.0, beta=0.0, C=a * a,
                         K=_const(K), F=_const(F), stiff=stiff,
                         jacobian=jacobian, name="linear")


def builtin_reaction_diffusion(spec, a, c, odd_power=3, K=0.0, F=1.0):
    """A(t, v) = -a Lambda v - c v**p with a coordinatewise odd power p.

    Monotone for c >= 0, so rho = 0. Growth holds with beta = 2p - 2 and
    C = 2a^2 + 2c^2 / min(mu)^2. With a = 0 the diffusion carries no
    coercivity and theta = 1 is paid for by enlarging F.
    """
    p = int(odd_power)
    if p != odd_power or p < 3 or p % 2 == 0:
        raise ValueError("odd_power must be an odd integer >= 3")
    if c < 0:
        raise ValueError("c must be >= 0 (dissipative sign)")
    if a < 0:
        raise ValueError("a must be >= 0")
    mu = spec.v_weights
    if a > 0:
        theta = 2 * a
    else:
        if c == 0:
            raise ValueError("a = 0 and c = 0 leave no coercivity")
        theta = 1.0
        # sup_v (mu v^2 - 2c v^(p+1)) per mode, attained at v^(p-1) = mu/(c(p+1))
        vstar2 = (mu / (c * (p + 1))) ** (2.0 / (p - 1))
        F = F + float(np.sum(mu * vstar2 * (p - 1) / (p + 1)))
    stiff = -a * mu

    def apply(t, v):
        v = as_hvector(spec, v)
        return stiff * v - c * v ** p

    def jacobian(t, v):
        v = np.asarray(v, dtype=float)
        diag = stiff - c * p * v ** (p - 1)
        return diag[..., :, None] * np.eye(spec.dim)

    C = 2 * a * a + 2 * c * c / float(np.min(mu)) ** 2
    return DriftOperator(apply, theta=theta, alpha=2.0, beta=2.0 * p - 2,
                         C=max(C, 1e-12), K=_const(K), F=_const(F), stiff=stiff,
                         jacobian=jacobian, name="reaction-diffusion")


def convection_tensor(dim):
    """Galerkin coefficients T[k, i, j] = <e_i d/dx e_j, e_k> on (0, pi).

    Basis e_k = sqrt(2/pi) sin(kx), k = 1..dim. Integer orthogonality gives
    the closed form (j / sqrt(2 pi)) [d(i-k-j) + d(i-k+j) - d(i+k-j)].
    """
    k = np.arange(1, dim + 1)[:, None, None]
    i = np.arange(1, dim + 1)[None, :, None]
    j = np.arange(1, dim + 1)[None, None, :]
    delta = ((i - k - j) == 0).astype(float) + ((i - k + j) == 0) - ((i + k - j) == 0)
    return j * delta / np.sqrt(2 * np.pi)


def builtin_burgers(spec, a, tensor=None, K=0.0, F=1.0):
    """Galerkin viscous Burgers drift A(v) = -a Lambda v - B(v, v).

    B(u, w) projects u * w_x; <B(v, v), v> = 0 exactly. Local monotonicity
    holds with rho(v) = sqrt(2d/pi) |v|_V, from |u_x|_inf <= sqrt(2/pi) sum k|v_k|.
    Requires the sine basis (weights k^2).
    """
    if not a > 0:
        raise ValueError("a must be > 0")
    d = spec.dim
    if not np.allclose(spec.v_weights, np.arange(1, d + 1) ** 2):
        raise ValueError("burgers needs the sine basis weights mu_k = k^2")
    if tensor is None:
        tensor = convection_tensor(d)
    tensor = np.asarray(tensor, dtype=float)
    if tensor.shape != (d, d, d):
        raise ValueError(f"convection tensor shape {tensor.shape} != {(d, d, d)}")
    flat = tensor.transpose(1, 0, 2).reshape(d, d * d)   # [i, (k, j)]
    sym = tensor + tensor.transpose(0, 2, 1)
    stiff = -a * spec.v_weights
    c_b = np.sqrt(2 * d / np.pi)

    def convection(v):
        v = np.asarray(v, dtype=float)
        w = (v.reshape(-1, d) @ flat).reshape(-1, d, d)
        return np.einsum("nkj,nj->nk", w, v.reshape(-1, d)).reshape(v.shape)

    def apply(t, v):
        v = as_hvector(spec, v)
        return stiff * v - convection(v)

    def jacobian(t, v):
        v = np.asarray(v, dtype=float)
        return np.diag(stiff) - np.einsum("kmj,...j->...km", sym, v)

    def rho(v):
        return c_b * norm_v(spec, v)

    C = max(2 * a * a, 4 * d / np.pi, c_b)
    op = DriftOperator(apply, theta=2 * a, alpha=2.0, beta=2.0, C=C,
                       K=_const(K), F=_const(F), rho=rho, stiff=stiff,
                       jacobian=jacobian, name="burgers")
    object.__setattr__(op, "convection", convection)
    return op


@dataclass
class ConditionResult:
    condition: str
    passed: bool
    margin: float
    witness_norm: float
    witness: Optional[np.ndarray] = None
    hard_failure: bool = False


@dataclass
class ConditionReport:
    """Per-condition verdicts; margins are normalized slacks in [-1, 1]."""
    results: list
    samples: int
    seed: int

    @property
    def passed(self):
        return all(r.passed for r in self.results)

    def __getitem__(self, name):
        for r in self.results:
            if r.condition == name:
                return r
        raise KeyError(name)

    def rows(self):
        return [(r.condition, r.passed, r.margin, r.witness_norm) for r in self.results]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["condition", "pass", "margin", "witness_norm"])
            for cond, ok, margin, wn in self.rows():
                w.writerow([cond, int(ok), repr(float(margin)), repr(float(wn))])


def random_vectors(rng, n, dim, log10_range=(-1.0, 1.0)):
    """Isotropic directions with log-uniform radii."""
    d = rng.standard_normal((n, dim))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    r = 10.0 ** rng.uniform(*log10_range, size=(n, 1))
    return d * r


def _verdict(name, lhs, rhs, witnesses, tol):
    lhs = np.asarray(lhs, dtype=float)
    rhs = np.asarray(rhs, dtype=float)
    bad = ~(np.isfinite(lhs) & np.isfinite(rhs))
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        return ConditionResult(name, False, -np.inf, float(np.linalg.norm(witnesses[i])),
                               witnesses[i].copy(), hard_failure=True)
    scale = np.abs(lhs) + np.abs(rhs)
    slack = rhs - lhs
    margin = np.where(scale > 0, slack / np.where(scale > 0, scale, 1.0), 0.0)
    i = int(np.argmin(margin))
    ok = bool(np.all(slack >= -tol * scale))
    return ConditionResult(name, ok, float(margin[i]),
                           float(np.linalg.norm(witnesses[i])), witnesses[i].copy())


def check_conditions(op, spec, samples=1000, seed=0, tol=1e-6, noise=None, T=1.0):
    """Sample-based check of hemicontinuity, local monotonicity, coercivity,
    growth, and the rho growth bound.

    Parameters
    ----------
    op : DriftOperator
    spec : TripleSpec
    samples : int
        Number of random (t, v) draws per condition.
    seed : int
    tol : float
        Relative jump threshold for hemicontinuity and relative roundoff
        allowance for the inequalities.
    noise : NoiseModel, optional
        Supplies the jump term of local monotonicity; zero when omitted.
    T : float
        Time horizon from which t is drawn.

    Returns
    -------
    ConditionReport
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    rng = np.random.default_rng(seed)
    n, d = int(samples), spec.dim
    t = rng.uniform(0.0, T, size=n)
    v1 = random_vectors(rng, n, d)
    v2 = random_vectors(rng, n, d)
    v = random_vectors(rng, n, d)
    alpha, beta = op.alpha, op.beta
    results = []

    with np.errstate(all="ignore"):
        # hemicontinuity: s -> <A(t, v1 + s v2), v> probed at 9 points from both sides
        h = 1e-3 * tol
        worst = np.zeros(n)
        ref = np.zeros(n)
        finite = np.ones(n, dtype=bool)
        for s in np.linspace(-1.0, 1.0, 9):
            mid = pairing(spec, op(t, v1 + s * v2), v)
            lo = pairing(spec, op(t, v1 + (s - h) * v2), v)
            hi = pairing(spec, op(t, v1 + (s + h) * v2), v)
            finite &= np.isfinite(mid) & np.isfinite(lo) & np.isfinite(hi)
            worst = np.maximum(worst, np.maximum(np.abs(hi - mid), np.abs(lo - mid)))
            ref = np.maximum(ref, np.abs(mid))
        if not np.all(finite):
            i = int(np.flatnonzero(~finite)[0])
            results.append(ConditionResult("hemicontinuity", False, -np.inf, float(norm_h(spec, v1[i])),
                                           v1[i].copy(), hard_failure=True))
        else:
            jump = worst / (1.0 + ref)
            i = int(np.argmax(jump))
            results.append(ConditionResult("hemicontinuity", bool(jump[i] <= tol), float(1.0 - jump[i] / tol),
                                           float(norm_h(spec, v1[i])), v1[i].copy()))

        # local monotonicity
        w = v1 - v2
        lhs = 2 * pairing(spec, op(t, v1) - op(t, v2), w)
        if noise is not None:
            lhs = lhs + noise.lipschitz_integral(t, v1, v2)
        rhs = (op.K(t) + op.rho(v2)) * norm_h(spec, w) ** 2
        results.append(_verdict("local_monotonicity", lhs, rhs, v1, tol))

        # coercivity
        nh, nv = norm_h(spec, v), norm_v(spec, v)
        lhs = 2 * pairing(spec, op(t, v), v) + op.theta * nv ** alpha
        rhs = op.F(t) * (1 + nh ** 2)
        results.append(_verdict("coercivity", lhs, rhs, v, tol))

        # growth
        lhs = norm_vstar(spec, op(t, v)) ** (alpha / (alpha - 1))
        rhs = (op.F(t) + op.C * nv ** alpha) * (1 + nh ** beta)
        results.append(_verdict("growth", lhs, rhs, v, tol))

        # rho(v) <= C (1 + |v|_V^alpha)(1 + |v|_H^beta)
        lhs = np.broadcast_to(op.rho(v), (n,))
        rhs = op.C * (1 + nv ** alpha) * (1 + nh ** beta)
        results.append(_verdict("rho_bound", lhs, rhs, v, tol))

    return ConditionReport(results, n, seed)
