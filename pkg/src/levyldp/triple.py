"""
Finite-dimensional Galerkin model of a Gelfand triple V ⊂ H ⊂ V*.

Elements of all three spaces are stored as coordinate vectors in one shared
orthonormal basis of H. The spaces differ only in their norms, which are
diagonal quadratic forms in the spectral weights ``mu``::

    |v|_H^2  = sum v_k^2
    |v|_V^2  = sum mu_k v_k^2
    |v|_V*^2 = sum v_k^2 / mu_k

With ``mu_k = k**2`` this is the sine basis of the Dirichlet Laplacian on
(0, pi), where |v|_V is the H^1_0 seminorm.

All functions accept arrays with arbitrary leading (batch) axes; the last
axis is the Galerkin coordinate.
"""
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class TripleSpec:
    """Galerkin triple of dimension ``dim``.

    Parameters
    ----------
    dim : int
        Number of Galerkin modes.
    v_weights : array_like
        Strictly positive spectral weights, one per mode.
    alpha : float
        Coercivity exponent (> 1).
    beta : float
        Growth exponent (>= 0).
    theta : float
        Coercivity constant (> 0).
    """
    dim: int
    v_weights: np.ndarray = field(repr=False)
    alpha: float = 2.0
    beta: float = 0.0
    theta: float = 1.0

    def __post_init__(self):
        w = np.array(self.v_weights, dtype=float).reshape(-1)
        if int(self.dim) != self.dim or self.dim < 1:
            raise ValueError("dim must be a positive integer")
        if w.shape != (self.dim,):
            raise ValueError(f"expected {self.dim} weights, got {w.size}")
        if not np.all(np.isfinite(w)) or np.any(w <= 0):
            raise ValueError("v_weights must be finite and strictly positive")
        if not self.alpha > 1:
            raise ValueError("alpha must be > 1")
        if not self.beta >= 0:
            raise ValueError("beta must be >= 0")
        if not self.theta > 0:
            raise ValueError("theta must be > 0")
        w.setflags(write=False)
        object.__setattr__(self, "dim", int(self.dim))
        object.__setattr__(self, "v_weights", w)

    @classmethod
    def dirichlet(cls, dim, **kwargs):
        """Sine basis on (0, pi): weights mu_k = k^2, k = 1..dim."""
        return cls(dim, np.arange(1, dim + 1, dtype=float) ** 2, **kwargs)

    @property
    def mu(self):
        return self.v_weights

    def zeros(self):
        return np.zeros(self.dim)


def as_hvector(spec, v):
    """Validate coordinates against ``spec`` and return a float array."""
    v = np.asarray(v, dtype=float)
    if v.ndim == 0 or v.shape[-1] != spec.dim:
        raise ValueError(f"dimension mismatch: expected last axis {spec.dim}, "
                         f"got shape {v.shape}")
    return v


def _weighted_norm(v, w):
    # rescale by the largest entry so tiny or huge vectors neither underflow nor overflow
    scale = np.max(np.abs(v), axis=-1, keepdims=True)
    safe = np.where(scale > 0, scale, 1.0)
    u = v / safe
    return safe[..., 0] * np.sqrt(np.sum(w * u * u, axis=-1))


def norm_h(spec, v):
    return _weighted_norm(as_hvector(spec, v), 1.0)


def norm_v(spec, v):
    return _weighted_norm(as_hvector(spec, v), spec.v_weights)


def norm_vstar(spec, v):
    return _weighted_norm(as_hvector(spec, v), 1.0 / spec.v_weights)


def pairing(spec, u, v):
    """Duality pairing <u, v>_{V*,V}; coincides with the H inner product."""
    u = as_hvector(spec, u)
    v = as_hvector(spec, v)
    return np.sum(u * v, axis=-1)
