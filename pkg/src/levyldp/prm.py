"""
Poisson random measures, controlled random measures by thinning, and the
likelihood ratio between them.

A plain stream has intensity eps^-1 dt nu(dz) on [0, T] x X. A controlled
stream with a piecewise-constant control g has intensity eps^-1 g(t, z) dt
nu(dz); it is obtained from a dominating stream of intensity
eps^-1 g_max dt nu(dz) in which every point carries an auxiliary coordinate
r ~ U[0, g_max) and is kept iff r <= g(t, z).

Random numbers come from Philox, a counter-based generator. Trajectory ``i``
of a run seeded with ``s`` uses the key ``s + i * 2**64``, so trajectory 0
reproduces a standalone call with the same seed.
"""
import csv
import json
from collections import namedtuple
from dataclasses import dataclass
from typing import Optional

import numpy as np

DEFAULT_EVENT_CAP = 1e8

JumpEvent = namedtuple("JumpEvent", "time mark aux_r")


def trajectory_rng(seed, index=0):
    """Independent Philox stream for trajectory ``index`` of run ``seed``."""
    if isinstance(seed, np.random.Generator):
        return seed
    seed, index = int(seed), int(index)
    if seed < 0 or index < 0:
        raise ValueError("seeds and trajectory indices must be nonnegative")
    return np.random.Generator(np.random.Philox(key=seed + (index << 64)))


@dataclass(frozen=True, eq=False)
class Control:
    """Piecewise-constant nonnegative control g(t, z).

    ``values[k, c]`` holds g on the time cell (t_knots[k], t_knots[k+1]]
    and mark cell ``c``. Mark cells are groups of atoms (``atom_cell`` maps
    each atom to its cell) or subintervals (``z_edges``).
    """
    t_knots: np.ndarray
    values: np.ndarray
    atom_cell: Optional[np.ndarray] = None
    z_edges: Optional[np.ndarray] = None

    def __post_init__(self):
        knots = np.asarray(self.t_knots, dtype=float).reshape(-1)
        vals = np.array(self.values, dtype=float, ndmin=2)
        if knots.size < 2 or knots[0] != 0.0 or np.any(np.diff(knots) <= 0):
            raise ValueError("time knots must start at 0 and increase strictly")
        if vals.shape[0] != knots.size - 1:
            raise ValueError("need one row of control values per time cell")
        if not np.all(np.isfinite(vals)):
            raise ValueError("control values must be finite")
        if np.any(vals < 0):
            raise ValueError("control values must be nonnegative")
        if self.atom_cell is not None:
            ac = np.asarray(self.atom_cell, dtype=int)
            if ac.min() < 0 or ac.max() >= vals.shape[1]:
                raise ValueError("atom_cell refers to a missing mark cell")
            object.__setattr__(self, "atom_cell", ac)
        if self.z_edges is not None:
            ze = np.asarray(self.z_edges, dtype=float)
            if ze.size - 1 != vals.shape[1] or np.any(np.diff(ze) <= 0):
                raise ValueError("z_edges must be increasing with one cell per column")
            object.__setattr__(self, "z_edges", ze)
        vals.setflags(write=False)
        object.__setattr__(self, "t_knots", knots)
        object.__setattr__(self, "values", vals)
        cum = np.vstack([np.zeros(vals.shape[1]), np.cumsum(vals * np.diff(knots)[:, None], axis=0)])
        object.__setattr__(self, "_cumulative", cum)

    @classmethod
    def constant(cls, marks, T, value=1.0, n_t=1, atom_cell=None, z_edges=None):
        if atom_cell is None and z_edges is None:
            atom_cell, z_edges = marks.default_cells()
        n_z = (int(np.max(atom_cell)) + 1) if atom_cell is not None else len(z_edges) - 1
        return cls(np.linspace(0.0, T, n_t + 1), np.full((n_t, n_z), float(value)),
                   atom_cell=atom_cell, z_edges=z_edges)

    def with_values(self, values):
        return Control(self.t_knots, np.reshape(values, self.values.shape),
                       self.atom_cell, self.z_edges)

    @property
    def T(self):
        return float(self.t_knots[-1])

    @property
    def shape(self):
        return self.values.shape

    @property
    def gmax(self):
        return float(self.values.max())

    @property
    def durations(self):
        return np.diff(self.t_knots)

    def quadrature(self, marks):
        return marks.quadrature(self.atom_cell, self.z_edges)

    def cell_masses(self, marks):
        return marks.cell_masses(self.atom_cell, self.z_edges)

    def cell_weights(self, marks):
        """nu_T of every (time, mark) cell."""
        return self.durations[:, None] * self.cell_masses(marks)[None, :]

    def time_cell(self, t):
        k = np.searchsorted(self.t_knots, np.asarray(t, dtype=float), side="left") - 1
        return np.clip(k, 0, self.values.shape[0] - 1)

    def mark_cell(self, z, atom_index=None):
        if self.atom_cell is not None:
            if atom_index is None:
                raise ValueError("atom indices needed for a discrete partition")
            return self.atom_cell[np.asarray(atom_index, dtype=int)]
        c = np.searchsorted(self.z_edges, np.asarray(z, dtype=float), side="right") - 1
        return np.clip(c, 0, self.values.shape[1] - 1)

    def __call__(self, t, z=None, atom_index=None):
        return self.values[self.time_cell(t), self.mark_cell(z, atom_index)]

    def cumulative(self, t):
        """int_0^t g(s, c) ds for every mark cell c: shape (..., cells)."""
        knots, cum = self.t_knots, self._cumulative
        return np.stack([np.interp(t, knots, cum[:, c]) for c in range(cum.shape[1])], axis=-1)

    def time_average(self, t0, t1):
        """Mean of g over [t0, t1] per mark cell; point value where t1 == t0."""
        t0 = np.asarray(t0, dtype=float)
        t1 = np.asarray(t1, dtype=float)
        out_shape = np.broadcast(t0, t1).shape + (self.values.shape[1],)
        g0, g1 = self.cumulative(t0), self.cumulative(t1)
        h = (t1 - t0)[..., None]
        k0 = self.time_cell(np.nextafter(t0, np.inf))
        point = self.values[k0]
        # steps inside one cell see the cell value exactly, not a rounded ratio
        same = (k0 == self.time_cell(t1))[..., None] | (h <= 0)
        with np.errstate(invalid="ignore", divide="ignore"):
            avg = np.where(same, point, (g1 - g0) / np.where(h > 0, h, 1.0))
        return np.broadcast_to(avg, out_shape)

    def averaging_matrix(self, grid):
        """A[n, k] = |step n  intersect  time cell k| / |step n| for a time grid."""
        grid = np.asarray(grid, dtype=float)
        lo = np.maximum(grid[:-1, None], self.t_knots[None, :-1])
        hi = np.minimum(grid[1:, None], self.t_knots[None, 1:])
        return np.clip(hi - lo, 0.0, None) / np.diff(grid)[:, None]

    def to_file(self, path):
        data = {"t_knots": self.t_knots.tolist(), "values": self.values.tolist(),
                "atom_cell": None if self.atom_cell is None else self.atom_cell.tolist(),
                "z_edges": None if self.z_edges is None else self.z_edges.tolist()}
        with open(path, "w") as fh:
            json.dump(data, fh, indent=1)
            fh.write("\n")

    @classmethod
    def from_file(cls, path):
        with open(path) as fh:
            data = json.load(fh)
        return cls(data["t_knots"], data["values"], data.get("atom_cell"), data.get("z_edges"))


@dataclass(frozen=True, eq=False)
class JumpStream:
    """Time-ordered jump events on (0, T].

    Ties in time are broken by atom index, then by the auxiliary coordinate.
    """
    times: np.ndarray
    marks: np.ndarray
    atom_index: np.ndarray
    aux_r: np.ndarray
    intensity_scale: float
    horizon: float

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        order = np.lexsort((self.aux_r, self.atom_index, times))
        for name in ("times", "marks", "atom_index", "aux_r"):
            arr = np.asarray(getattr(self, name))[order]
            if name == "atom_index":
                arr = arr.astype(int)
            object.__setattr__(self, name, arr)
        if times.size and (self.times[0] <= 0 or self.times[-1] > self.horizon):
            raise ValueError("jump times must lie in (0, T]")

    def __len__(self):
        return self.times.size

    @property
    def events(self):
        return [JumpEvent(*e) for e in zip(self.times, self.marks, self.aux_r)]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["time", "mark", "atom_index", "aux_r"])
            for row in zip(self.times, self.marks, self.atom_index, self.aux_r):
                w.writerow([repr(float(row[0])), repr(float(row[1])), int(row[2]), repr(float(row[3]))])

    @classmethod
    def from_csv(cls, path, intensity_scale, horizon):
        rows = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        if rows.size == 0:
            rows = np.zeros((0, 4))
        return cls(rows[:, 0], rows[:, 1], rows[:, 2].astype(int), rows[:, 3],
                   intensity_scale, horizon)


def _dominating(rng, marks, eps, T, scale, cap):
    if not eps > 0:
        raise ValueError("eps must be > 0")
    lam = scale * T * marks.total() / eps
    if lam > cap:
        raise ValueError(f"expected {lam:.3g} jumps exceeds the cap {cap:.3g}; "
                         "raise eps or the cap")
    n = rng.poisson(lam)
    times = T - rng.uniform(0.0, T, size=n)
    z, idx = marks.sample(rng, n)
    aux = rng.uniform(0.0, scale, size=n)
    return times, z, idx, aux


def sample_prm(marks, eps, T, seed, cap=DEFAULT_EVENT_CAP):
    """Poisson random measure with mean measure eps^-1 dt nu(dz) on (0, T]."""
    rng = trajectory_rng(seed)
    times, z, idx, aux = _dominating(rng, marks, eps, T, 1.0, cap)
    return JumpStream(times, z, idx, aux, 1.0 / eps, T)


def sample_controlled_prm(marks, eps, g, T, seed, cap=DEFAULT_EVENT_CAP, return_rejected=False):
    """Controlled random measure with intensity eps^-1 g(t, z) dt nu(dz), by thinning."""
    if not np.isfinite(g.gmax):
        raise ValueError("control must be bounded")
    rng = trajectory_rng(seed)
    scale = g.gmax
    if scale > 0:
        times, z, idx, aux = _dominating(rng, marks, eps, T, scale, cap)
        keep = aux <= g(times, z, idx)
    else:
        times = z = aux = np.zeros(0)
        idx = np.zeros(0, dtype=int)
        keep = np.zeros(0, dtype=bool)
    kept = JumpStream(times[keep], z[keep], idx[keep], aux[keep], scale / eps, T)
    if not return_rejected:
        return kept
    rej = JumpStream(times[~keep], z[~keep], idx[~keep], aux[~keep], scale / eps, T)
    return kept, rej


def compensator_term(g, eps, marks, t):
    """eps^-1 int_0^t int (g - 1) nu(dz) ds, exact on the control's cells."""
    overlap = np.clip(np.minimum(g.t_knots[1:], t) - g.t_knots[:-1], 0.0, None)
    return float(np.sum(overlap[:, None] * (g.values - 1.0) * g.cell_masses(marks)[None, :])) / eps


def girsanov_log_density(stream, g, eps, marks, t=None):
    """Log likelihood ratio of the plain measure against the controlled one.

    sum_{s_i <= t} log(1/g(s_i, z_i)) + eps^-1 int_0^t int (g - 1) nu(dz) ds.
    Exponentiated and evaluated on a controlled stream it is the importance
    weight that restores the law of the plain stream.
    """
    t = stream.horizon if t is None else float(t)
    sel = stream.times <= t
    gv = g(stream.times[sel], stream.marks[sel], stream.atom_index[sel])
    if np.any(gv <= 0):
        raise ValueError("jump in a cell where the control vanishes: density undefined")
    return float(-np.sum(np.log(gv))) + compensator_term(g, eps, marks, t)


def restrict_to_admissible(g, n, compact=None):
    """Clamp values into [1/n, n]; mark cells outside ``compact`` are set to 1."""
    if n < 1:
        raise ValueError("n must be >= 1")
    vals = np.clip(g.values, 1.0 / n, float(n))
    if compact is not None:
        compact = np.asarray(compact, dtype=bool)
        vals = np.where(compact[None, :], vals, 1.0)
    return g.with_values(vals)
