"""Model presets and their construction from a configuration."""
from dataclasses import dataclass

import numpy as np

from ..noise import MarkSpace, additive, multiplicative
from ..operators import builtin_burgers, builtin_linear, builtin_reaction_diffusion
from ..triple import TripleSpec

PRESETS = {
    "scalar-linear": dict(dim=1, a=1.0, x0=[1.0], noise="multiplicative", sigma=[1.0]),
    "scalar-additive": dict(dim=1, a=1.0, x0=[0.0], noise="additive", sigma=[0.5]),
    "linear": dict(dim=8, a=1.0, x0=[1.0], noise="multiplicative", sigma=[0.5]),
    "reaction-diffusion": dict(dim=16, a=1.0, c=1.0, x0=[1.0], noise="additive", sigma=[0.5]),
    "burgers": dict(dim=32, a=0.5, x0=[1.0], noise="additive", sigma=[0.25]),
}


@dataclass(eq=False)
class ModelBundle:
    name: str
    spec: TripleSpec
    op: object
    noise: object
    x0: np.ndarray
    T: float


def _marks(nv):
    if nv["density"] != "none":
        lo, hi, mass = nv["lo"], nv["hi"], nv["mass"]
        if not hi > lo:
            raise ValueError("density interval needs hi > lo")
        if nv["density"] == "uniform":
            return MarkSpace.from_density(lambda z: np.full(np.shape(z), mass / (hi - lo)), lo, hi)
        if nv["density"] == "exponential":
            rate = nv["rate"]
            norm = mass * rate / (1.0 - np.exp(-rate * (hi - lo)))
            return MarkSpace.from_density(lambda z: norm * np.exp(-rate * (z - lo)), lo, hi)
        raise ValueError(f"unknown density {nv['density']!r}")
    atoms = nv["atoms"] or "0:1"
    pos, mass = [], []
    for item in atoms.split(","):
        p, _, m = item.partition(":")
        pos.append(float(p))
        mass.append(float(m) if m else 1.0)
    return MarkSpace.discrete(pos, mass)


def build_model(cfg):
    mv, nv = cfg["model"], cfg["noise"]
    kind = mv["kind"]
    if kind not in PRESETS:
        raise ValueError(f"unknown model {kind!r}; choose from {sorted(PRESETS)}")
    pre = PRESETS[kind]
    dim = mv["dim"] if mv["dim"] is not None else pre["dim"]
    a = mv["a"] if mv["a"] is not None else pre["a"]
    def make(spec):
        if kind in ("scalar-linear", "scalar-additive", "linear"):
            return builtin_linear(spec, a)
        if kind == "reaction-diffusion":
            return builtin_reaction_diffusion(spec, a, mv["c"] if mv["c"] is not None else pre["c"],
                                              mv["odd_power"])
        return builtin_burgers(spec, a)

    # the triple carries the drift's exponents so the noise checks see them too
    op = make(TripleSpec.dirichlet(dim))
    spec = TripleSpec.dirichlet(dim, alpha=op.alpha, beta=op.beta, theta=op.theta)
    op = make(spec)
    x0 = np.zeros(dim)
    given = mv["x0"] if mv["x0"] is not None else pre["x0"]
    if len(given) > dim:
        raise ValueError("x0 has more entries than the dimension")
    x0[: len(given)] = given
    marks = _marks(nv)
    sigma = nv["sigma"] if nv["sigma"] is not None else pre["sigma"]
    sig = sigma[0] if len(sigma) == 1 else np.asarray(sigma)
    if not marks.is_discrete and len(sigma) != 1:
        raise ValueError("per-atom sigma needs atoms")
    if marks.is_discrete and len(sigma) not in (1, marks.positions.size):
        raise ValueError("sigma needs 1 entry or one per atom")
    noise_kind = nv["kind"] or pre["noise"]
    if noise_kind == "multiplicative":
        noise = multiplicative(marks, sig, eta0=nv["eta0"])
    elif noise_kind == "additive":
        direction = np.zeros(dim)
        given_dir = nv["direction"] or [1.0]
        if len(given_dir) > dim:
            raise ValueError("direction has more entries than the dimension")
        direction[: len(given_dir)] = given_dir
        if np.ndim(sig):
            noise = additive(marks, np.asarray(sig)[:, None] * direction[None, :], eta0=nv["eta0"])
        else:
            noise = additive(marks, sig * direction, eta0=nv["eta0"])
    elif noise_kind == "none":
        noise = additive(marks, np.zeros(dim), eta0=nv["eta0"])
    else:
        raise ValueError(f"unknown noise kind {noise_kind!r}")
    return ModelBundle(kind, spec, op, noise, x0, mv["T"])
