"""Time grids, sampled paths, and path norms (p-variation, Holder, uniform).

All norms are computed over the observation grid: the p-variation is the
exact supremum over sub-partitions of the grid points, which coincides with
the continuous-time value for the piecewise-linear interpolant when p >= 1.
That grid-supremum convention is used everywhere in this package.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "TimeGrid",
    "SamplePath",
    "ControlValue",
    "p_variation",
    "p_variation_brute_force",
    "holder_norm",
    "uniform_norm",
    "control_from_pvar",
    "product_control",
]

_ALIGN_RTOL = 1e-10


@dataclass(frozen=True)
class TimeGrid:
    """Strictly increasing grid 0 = t_0 < t_1 < ... < t_{n-1} = T."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 1 or pts.size < 2:
            raise ValueError("grid needs at least 2 points")
        if not np.all(np.diff(pts) > 0):
            raise ValueError("grid points must be strictly increasing")
        if abs(pts[0]) > 0:
            raise ValueError("grid must start at 0")
        if not np.all(np.isfinite(pts)):
            raise ValueError("grid points must be finite")
        pts = pts.copy()
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)

    @classmethod
    def uniform(cls, horizon: float, n_steps: int) -> "TimeGrid":
        if horizon <= 0 or n_steps < 1:
            raise ValueError("need horizon > 0 and n_steps >= 1")
        return cls(np.linspace(0.0, horizon, n_steps + 1))

    @property
    def horizon(self) -> float:
        return float(self.points[-1])

    @property
    def n(self) -> int:
        return self.points.size

    @property
    def dt(self) -> np.ndarray:
        return np.diff(self.points)

    @property
    def mesh(self) -> float:
        return float(np.max(self.dt))

    def index_of(self, t: float) -> int:
        """Index of the grid point equal to t, error if t is off-grid."""
        i = int(np.searchsorted(self.points, t))
        tol = _ALIGN_RTOL * max(1.0, self.horizon)
        for j in (i - 1, i, i + 1):
            if 0 <= j < self.n and abs(self.points[j] - t) <= tol:
                return j
        raise ValueError("misaligned interval")

    def refine(self, levels: int) -> "TimeGrid":
        """Split every cell into 2**levels equal parts."""
        if levels < 0:
            raise ValueError("levels must be >= 0")
        if levels == 0:
            return self
        k = 2**levels
        a = self.points[:-1]
        step = self.dt / k
        fine = (a[:, None] + step[:, None] * np.arange(k)[None, :]).ravel()
        return TimeGrid(np.append(fine, self.points[-1]))


@dataclass(frozen=True)
class SamplePath:
    """Values of a d-vector path observed on a shared time grid.

    ``values`` has shape (n,) for scalar paths or (n, d); rows follow the
    grid points.
    """

    grid: TimeGrid
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape[0] != self.grid.n:
            raise ValueError("values length must equal grid length")
        if vals.ndim not in (1, 2):
            raise ValueError("values must be 1-D or 2-D")
        if not np.all(np.isfinite(vals)):
            raise ValueError("path values must be finite")
        vals = vals.copy()
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    @property
    def dim(self) -> int:
        return 1 if self.values.ndim == 1 else self.values.shape[1]

    def as_matrix(self) -> np.ndarray:
        v = self.values
        return v[:, None] if v.ndim == 1 else v

    def interp(self, times: np.ndarray) -> np.ndarray:
        """Piecewise-linear interpolation at arbitrary times in [0, T]."""
        t = np.asarray(times, dtype=float)
        v = self.as_matrix()
        out = np.empty(t.shape + (v.shape[1],))
        for j in range(v.shape[1]):
            out[..., j] = np.interp(t, self.grid.points, v[:, j])
        if self.values.ndim == 1:
            return out[..., 0]
        return out


def _slice_indices(grid: TimeGrid, interval) -> tuple[int, int]:
    if interval is None:
        return 0, grid.n - 1
    a, b = interval
    ia, ib = grid.index_of(a), grid.index_of(b)
    if ia > ib:
        raise ValueError("interval must satisfy a <= b")
    return ia, ib


def _increment_matrix_row(v: np.ndarray, j: int) -> np.ndarray:
    # |v_j - v_i| for i < j, Euclidean norm across columns
    d = v[j] - v[:j]
    if d.ndim == 1:
        return np.abs(d)
    return np.sqrt(np.sum(d * d, axis=1))


def p_variation(path: SamplePath, p: float, interval=None) -> float:
    """Exact grid p-variation, sup over all sub-partitions of the grid.

    Dynamic programme V(j) = max_{i<j} V(i) + |g_j - g_i|^p, O(n^2).
    For p = 1 this is the total variation over the grid.
    """
    if p < 1:
        raise ValueError("invalid exponent")
    ia, ib = _slice_indices(path.grid, interval)
    v = path.values[ia : ib + 1]
    n = v.shape[0]
    if n < 2:
        return 0.0
    best = np.zeros(n)
    for j in range(1, n):
        best[j] = np.max(best[:j] + _increment_matrix_row(v, j) ** p)
    return float(best[-1] ** (1.0 / p))


def p_variation_brute_force(path: SamplePath, p: float, interval=None) -> float:
    """Direct enumeration of all sub-partitions; oracle for small grids."""
    if p < 1:
        raise ValueError("invalid exponent")
    ia, ib = _slice_indices(path.grid, interval)
    v = path.values[ia : ib + 1]
    n = v.shape[0]
    if n < 2:
        return 0.0
    if n > 22:
        raise ValueError("brute force limited to 22 points")
    interior = n - 2
    best = 0.0
    for mask in range(2**interior):
        idx = [0]
        for k in range(interior):
            if mask >> k & 1:
                idx.append(k + 1)
        idx.append(n - 1)
        d = np.diff(v[idx], axis=0)
        if d.ndim == 1:
            s = np.sum(np.abs(d) ** p)
        else:
            s = np.sum(np.sqrt(np.sum(d * d, axis=1)) ** p)
        best = max(best, float(s))
    return best ** (1.0 / p)


def holder_norm(path: SamplePath, gamma: float, interval=None) -> float:
    """Max over grid pairs of |g_b - g_a| / |b - a|**gamma."""
    if not 0 < gamma <= 1:
        raise ValueError("invalid exponent")
    ia, ib = _slice_indices(path.grid, interval)
    v = path.values[ia : ib + 1]
    t = path.grid.points[ia : ib + 1]
    n = v.shape[0]
    if n < 2:
        return 0.0
    out = 0.0
    for j in range(1, n):
        num = _increment_matrix_row(v, j)
        out = max(out, float(np.max(num / (t[j] - t[:j]) ** gamma)))
    return out


def uniform_norm(path: SamplePath, interval=None) -> float:
    ia, ib = _slice_indices(path.grid, interval)
    v = path.values[ia : ib + 1]
    if v.ndim == 1:
        return float(np.max(np.abs(v)))
    return float(np.max(np.sqrt(np.sum(v * v, axis=1))))


@dataclass(frozen=True)
class ControlValue:
    """Superadditive two-parameter function w(s, t) >= 0 with w(s, s) = 0."""

    evaluator: callable
    label: str = field(default="control")

    def __call__(self, s: float, t: float) -> float:
        if t < s:
            raise ValueError("need s <= t")
        return float(self.evaluator(s, t))

    def superadditivity_defect(self, grid: TimeGrid, max_triples: int = 2000, seed: int = 0) -> float:
        """Largest w(s,u) + w(u,t) - w(s,t) over sampled grid triples.

        Nonpositive (up to rounding) for a genuine control.
        """
        pts = grid.points
        n = pts.size
        triples = [(i, k, j) for i in range(n) for k in range(i, n) for j in range(k, n)]
        if len(triples) > max_triples:
            rng = np.random.default_rng(seed)
            sel = rng.choice(len(triples), size=max_triples, replace=False)
            triples = [triples[i] for i in sel]
        worst = -np.inf
        for i, k, j in triples:
            s, u, t = pts[i], pts[k], pts[j]
            worst = max(worst, self(s, u) + self(u, t) - self(s, t))
        return float(worst)


def control_from_pvar(path: SamplePath, p: float) -> ControlValue:
    """The control w(s, t) = ||path||_{p-var;[s,t]}^p."""
    if p < 1:
        raise ValueError("invalid exponent")

    def w(s, t):
        if t <= s:
            return 0.0
        return p_variation(path, p, (s, t)) ** p

    return ControlValue(w, label=f"pvar^{p}")


def product_control(w1: ControlValue, w2: ControlValue, a1: float, a2: float) -> ControlValue:
    """w1^a1 * w2^a2; a control whenever a1 + a2 >= 1 (and a1, a2 > 0)."""
    if a1 <= 0 or a2 <= 0 or a1 + a2 < 1:
        raise ValueError("exponents must be positive with a1 + a2 >= 1")

    def w(s, t):
        return w1(s, t) ** a1 * w2(s, t) ** a2

    return ControlValue(w, label=f"({w1.label})^{a1}*({w2.label})^{a2}")
