"""Space-time driver fields eta(t, x) and their empirical regularity.

Fields are normalized so that eta(0, x) = 0 (the t = 0 slice is subtracted
at construction). Concrete kinds: closed-form analytic fields, grid-sampled
fractional Brownian sheets with multilinear interpolation, time-mollified
wrappers with a quadrature time derivative, and shifted restrictions used
when a problem starts at an interior time.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .paths import TimeGrid

__all__ = [
    "RegularityParams",
    "HurstParams",
    "DriverField",
    "AnalyticField",
    "FbsGridField",
    "MollifiedField",
    "ShiftedField",
    "fbs_generate",
    "mollify",
    "shift_field",
    "seminorm_estimate",
    "assumption_check",
    "AssumptionReport",
    "save_fbs",
    "load_fbs",
]

MAX_FBS_AXIS = 2048
_CHOL_JITTER = 1e-10


@dataclass(frozen=True)
class RegularityParams:
    """Declared Holder/variation exponents of a driver and its paths.

    tau, lam are the time/space Holder exponents, beta the spatial weight
    exponent, p the path variation exponent; eps and k are the optional
    interpolation exponent and moment index.
    """

    tau: float
    lam: float
    beta: float = 0.0
    p: float = 2.5
    eps: float | None = None
    k: float | None = None

    def __post_init__(self):
        if not 0 < self.tau <= 1:
            raise ValueError("tau must lie in (0, 1]")
        if not 0 < self.lam <= 1:
            raise ValueError("lam must lie in (0, 1]")
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        if self.p <= 2:
            raise ValueError("p must be > 2")
        if self.eps is not None and not 0 < self.eps < 1:
            raise ValueError("eps must lie in (0, 1)")
        if self.k is not None and self.k <= 1:
            raise ValueError("k must be > 1")


@dataclass(frozen=True)
class HurstParams:
    """Hurst indices of a fractional Brownian sheet: H0 in time, common H in space."""

    h0: float
    h: float
    d: int = 1

    def __post_init__(self):
        if not 0 < self.h0 < 1 or not 0 < self.h < 1:
            raise ValueError("Hurst indices must lie in (0, 1)")
        if self.d < 1:
            raise ValueError("d must be >= 1")

    def regularity(self, theta: float = 0.05, p: float = 2.5) -> RegularityParams:
        """Holder exponents of a realization: tau = H0 - theta, lam = H - theta,
        beta = 2 theta + (d - 1) H.  theta > 0 is free and exposed."""
        if not 0 < theta < min(self.h0, self.h):
            raise ValueError("theta must lie in (0, min(H0, H))")
        return RegularityParams(
            tau=self.h0 - theta,
            lam=self.h - theta,
            beta=2 * theta + (self.d - 1) * self.h,
            p=p,
        )


class DriverField:
    """Base class: deterministic field (t, x) -> R^M with eta(0, x) = 0."""

    kind = "abstract"

    def __init__(self, params: RegularityParams, channels: int, dim: int, horizon: float):
        self.params = params
        self.channels = channels
        self.dim = dim
        self.horizon = float(horizon)

    def evaluate(self, t, x) -> np.ndarray:
        """Evaluate at times t (scalar or (k,)) and points x ((d,) or (k, d)).

        Returns shape (M,) for scalar input, else (k, M).
        """
        t_arr = np.atleast_1d(np.asarray(t, dtype=float))
        x_arr = np.asarray(x, dtype=float)
        scalar = np.isscalar(t) or np.asarray(t).ndim == 0
        if x_arr.ndim == 0:
            x_arr = x_arr[None]
        if x_arr.ndim == 1:
            if x_arr.size == self.dim and scalar:
                x_arr = x_arr[None, :]
            else:
                x_arr = x_arr[:, None]
        if t_arr.size == 1 and x_arr.shape[0] > 1:
            t_arr = np.full(x_arr.shape[0], t_arr[0])
        if x_arr.shape[0] == 1 and t_arr.size > 1:
            x_arr = np.repeat(x_arr, t_arr.size, axis=0)
        out = self._evaluate(t_arr, x_arr)
        if scalar and out.shape[0] == 1:
            return out[0]
        return out

    def _evaluate(self, t: np.ndarray, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def time_derivative(self, t, x) -> np.ndarray:
        raise NotImplementedError(f"{self.kind} field has no time derivative")

    @property
    def has_time_derivative(self) -> bool:
        try:
            self.time_derivative(self.horizon / 2, np.zeros(self.dim))
            return True
        except NotImplementedError:
            return False


class AnalyticField(DriverField):
    """Closed-form field. ``fn(t, x)`` is vectorized: t (k,), x (k, d) -> (k,)
    or (k, M).  The t = 0 slice is subtracted automatically."""

    kind = "analytic"

    def __init__(self, fn, params, dim=1, channels=1, horizon=1.0, dt_fn=None, name="analytic"):
        super().__init__(params, channels, dim, horizon)
        self._fn = fn
        self._dt_fn = dt_fn
        self.name = name

    def _raw(self, t, x):
        out = np.asarray(self._fn(t, x), dtype=float)
        if out.ndim == 1:
            out = out[:, None]
        return out

    def _evaluate(self, t, x):
        return self._raw(t, x) - self._raw(np.zeros_like(t), x)

    def time_derivative(self, t, x):
        if self._dt_fn is None:
            raise NotImplementedError("analytic field built without dt_fn")
        t_arr = np.atleast_1d(np.asarray(t, dtype=float))
        x_arr = np.asarray(x, dtype=float)
        scalar = np.isscalar(t) or np.asarray(t).ndim == 0
        if x_arr.ndim == 1 and x_arr.size == self.dim and scalar:
            x_arr = x_arr[None, :]
        elif x_arr.ndim == 1:
            x_arr = x_arr[:, None]
        if t_arr.size == 1 and x_arr.shape[0] > 1:
            t_arr = np.full(x_arr.shape[0], t_arr[0])
        out = np.asarray(self._dt_fn(t_arr, x_arr), dtype=float)
        if out.ndim == 1:
            out = out[:, None]
        if scalar and out.shape[0] == 1:
            return out[0]
        return out


def _fbm_cov(u: np.ndarray, v: np.ndarray, h: float) -> np.ndarray:
    return 0.5 * (
        np.abs(u) ** (2 * h) + np.abs(v) ** (2 * h) - np.abs(u - v) ** (2 * h)
    )


def _chol_axis(points: np.ndarray, h: float) -> np.ndarray:
    cov = _fbm_cov(points[:, None], points[None, :], h)
    cov[np.diag_indices_from(cov)] += _CHOL_JITTER
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise ValueError("covariance factorization failed") from exc


class FbsGridField(DriverField):
    """One realization of a fractional Brownian sheet on a product grid.

    Values off the nodes come from multilinear interpolation; coordinates
    outside the lattice are clamped to its boundary, so the field stays
    bounded.  Single channel (M = 1).
    """

    kind = "fbs-grid"

    def __init__(self, hurst: HurstParams, time_points, space_axes, values, seed, theta=0.05, p=2.5):
        params = hurst.regularity(theta=theta, p=p)
        d = len(space_axes)
        super().__init__(params, channels=1, dim=d, horizon=float(time_points[-1]))
        self.hurst = hurst
        self.time_points = np.asarray(time_points, dtype=float)
        self.space_axes = [np.asarray(a, dtype=float) for a in space_axes]
        self.values = np.asarray(values, dtype=float)
        self.seed = int(seed)

    def _evaluate(self, t, x):
        # multilinear blend over the 2^(1+d) cell corners, coordinates
        # clamped into the lattice box
        axes = [self.time_points, *self.space_axes]
        coords = [np.clip(t, axes[0][0], axes[0][-1])]
        for j, axis in enumerate(self.space_axes):
            coords.append(np.clip(x[:, j], axis[0], axis[-1]))
        los, fracs = [], []
        for axis, c in zip(axes, coords):
            hi = np.clip(np.searchsorted(axis, c), 1, axis.size - 1)
            lo = hi - 1
            los.append(lo)
            fracs.append((c - axis[lo]) / (axis[hi] - axis[lo]))
        out = np.zeros(coords[0].shape[0])
        n_ax = len(axes)
        for mask in range(2**n_ax):
            idx = []
            w = 1.0
            for a in range(n_ax):
                if mask >> a & 1:
                    idx.append(los[a] + 1)
                    w = w * fracs[a]
                else:
                    idx.append(los[a])
                    w = w * (1.0 - fracs[a])
            out += w * self.values[tuple(idx)]
        return out[:, None]


def fbs_generate(hurst: HurstParams, time_grid, space_grid, seed: int, theta: float = 0.05, p: float = 2.5) -> FbsGridField:
    """Sample a fractional Brownian sheet on time_grid x space_grid.

    The covariance is an exact product of per-axis fractional-Brownian
    covariances, so each axis is factorized separately (Cholesky with a
    small diagonal jitter) and combined by tensor contraction with i.i.d.
    standard normals.  The 0-slices are exactly zero.
    """
    t_pts = time_grid.points if isinstance(time_grid, TimeGrid) else np.asarray(time_grid, dtype=float)
    if isinstance(space_grid, np.ndarray) and space_grid.ndim == 1 or (
        not isinstance(space_grid, (list, tuple))
    ):
        axes = [np.asarray(space_grid, dtype=float)]
    else:
        axes = [np.asarray(a, dtype=float) for a in space_grid]
    if len(axes) != hurst.d:
        raise ValueError("space_grid axis count must match hurst.d")

    full_axes = []
    nz_idx = []
    for a in [t_pts, *axes]:
        if a.ndim != 1 or not np.all(np.diff(a) > 0):
            raise ValueError("grid axes must be strictly increasing 1-D arrays")
        if not np.any(np.isclose(a, 0.0)):
            a = np.sort(np.append(a, 0.0))
        if a.size > MAX_FBS_AXIS:
            raise ValueError(f"axis too large for dense factorization (> {MAX_FBS_AXIS})")
        full_axes.append(a)
        nz_idx.append(~np.isclose(a, 0.0))

    hs = [hurst.h0] + [hurst.h] * hurst.d
    chols = [_chol_axis(a[m], h) for a, m, h in zip(full_axes, nz_idx, hs)]

    rng = np.random.default_rng(np.random.Philox(key=seed))
    core_shape = tuple(int(m.sum()) for m in nz_idx)
    core = rng.standard_normal(core_shape)
    for ax, L in enumerate(chols):
        core = np.tensordot(L, core, axes=([1], [ax]))
        core = np.moveaxis(core, 0, ax)

    values = np.zeros(tuple(a.size for a in full_axes))
    values[np.ix_(*[np.nonzero(m)[0] for m in nz_idx])] = core
    return FbsGridField(hurst, full_axes[0], full_axes[1:], values, seed, theta=theta, p=p)


def _bump_nodes(n_nodes: int = 64):
    # compactly supported bump on [-1/2, 1/2], midpoint rule; weights
    # normalized so the discrete mass is exactly 1
    u = (np.arange(n_nodes) + 0.5) / n_nodes - 0.5
    du = 1.0 / n_nodes
    with np.errstate(divide="ignore", over="ignore"):
        rho = np.where(np.abs(u) < 0.5, np.exp(-1.0 / np.maximum(1 - (2 * u) ** 2, 1e-300)), 0.0)
    mass = np.sum(rho) * du
    rho = rho / mass
    drho = rho * (-8 * u) / np.maximum((1 - (2 * u) ** 2) ** 2, 1e-300)
    # project the derivative weights so the discrete moment identities
    # int rho' = 0 and int u rho'(u) du = -1 hold exactly; this makes the
    # quadrature derivative exact on fields affine in t
    drho = drho - np.mean(drho)
    drho = drho / (-np.sum(u * drho) * du)
    return u, rho, drho, du


class MollifiedField(DriverField):
    """Time mollification of a base field at scale 1/m.

    eta_m(t, x) = int rho_m(t - s) eta(s, x) ds with rho_m(t) = m rho(m t),
    rho the standard bump on [-1/2, 1/2].  Since every field here vanishes
    at t = 0, the base is extended below 0 by odd reflection (and constantly
    above T): with the even kernel this makes eta_m(0, x) = 0 exact with no
    offset, reproduces fields affine in t exactly at interior times, and
    keeps the m^{-tau} sup-distance rate (the reflection at most doubles the
    time-Holder constant).  The time derivative uses the same quadrature
    nodes applied to rho'.
    """

    kind = "mollified"

    N_QUAD = 64

    def __init__(self, base: DriverField, m: int):
        if m <= 0:
            raise ValueError("m must be a positive integer")
        super().__init__(base.params, base.channels, base.dim, base.horizon)
        self.base = base
        self.m = int(m)
        u, rho, drho, du = _bump_nodes(self.N_QUAD)
        self._s_nodes = u / m                    # quadrature offsets
        self._w = rho * du                       # weights for eta_m
        self._wd = drho * du * m                 # weights for d/dt eta_m

    def _convolve(self, t, x, weights):
        # one batched base evaluation across all quadrature nodes; terms are
        # folded over the symmetric node pairs first, so an even weight
        # profile cancels exactly at t = 0 (the kernel is even and the
        # extension odd), keeping eta_m(0, x) = 0 without a second pass
        k = t.shape[0]
        q = self._s_nodes.size
        s = t[None, :] - self._s_nodes[:, None]  # (q, k)
        sign = np.where(s < 0, -1.0, 1.0)
        s_eff = np.minimum(np.abs(s), self.horizon)
        x_rep = np.broadcast_to(x, (q,) + x.shape).reshape(q * k, x.shape[1])
        base = self.base._evaluate(s_eff.reshape(q * k), x_rep).reshape(q, k, -1)
        terms = weights[:, None, None] * sign[:, :, None] * base
        folded = terms[: q // 2] + terms[q // 2 :][::-1]
        return folded.sum(axis=0)

    def _evaluate(self, t, x):
        return self._convolve(t, x, self._w)

    def time_derivative(self, t, x):
        t_arr = np.atleast_1d(np.asarray(t, dtype=float))
        x_arr = np.asarray(x, dtype=float)
        scalar = np.isscalar(t) or np.asarray(t).ndim == 0
        if x_arr.ndim == 1 and x_arr.size == self.dim and scalar:
            x_arr = x_arr[None, :]
        elif x_arr.ndim == 1:
            x_arr = x_arr[:, None]
        if t_arr.size == 1 and x_arr.shape[0] > 1:
            t_arr = np.full(x_arr.shape[0], t_arr[0])
        out = self._convolve(t_arr, x_arr, self._wd)
        if scalar and out.shape[0] == 1:
            return out[0]
        return out

    @staticmethod
    def mollifier_mass(n_nodes: int = 64) -> float:
        u, rho, _, du = _bump_nodes(n_nodes)
        return float(np.sum(rho) * du)


def mollify(field: DriverField, m: int) -> MollifiedField:
    return MollifiedField(field, m)


class ShiftedField(DriverField):
    """Restriction of a field to [t0, T], re-based so time starts at 0.

    eta'(t, x) = eta(t0 + t, x) - eta(t0, x); used when a problem is posed
    from an interior start time.
    """

    kind = "shifted"

    def __init__(self, base: DriverField, t0: float):
        if not 0 <= t0 <= base.horizon:
            raise ValueError("t0 must lie in [0, horizon]")
        super().__init__(base.params, base.channels, base.dim, base.horizon - t0)
        self.base = base
        self.t0 = float(t0)

    def _evaluate(self, t, x):
        return self.base._evaluate(t + self.t0, x) - self.base._evaluate(
            np.full_like(t, self.t0), x
        )

    def time_derivative(self, t, x):
        return self.base.time_derivative(np.asarray(t) + self.t0, x)


def shift_field(field: DriverField, t0: float) -> DriverField:
    if t0 == 0.0:
        return field
    return ShiftedField(field, t0)


def seminorm_estimate(field: DriverField, params: RegularityParams, time_points, space_points, weighted: bool = False) -> float:
    """Grid estimate of the driver seminorm: the largest of the three
    quotient terms (mixed increment, time increment, space increment) over
    all pairs drawn from the evaluation grid.

    This is a lower bound of the true seminorm; enlarging the grid never
    decreases it.
    """
    ts = np.asarray(time_points, dtype=float)
    xs = np.asarray(space_points, dtype=float)
    if xs.ndim == 1:
        xs = xs[:, None]
    nt, nx = ts.size, xs.shape[0]
    if nt < 2 or nx < 2:
        raise ValueError("need at least 2 points per axis")

    vals = np.empty((nt, nx, field.channels))
    for i, t in enumerate(ts):
        vals[i] = field.evaluate(np.full(nx, t), xs)
    mag = np.linalg.norm(vals, axis=2) if field.channels > 1 else vals[..., 0]

    xnorm = np.linalg.norm(xs, axis=1)
    dx = np.linalg.norm(xs[:, None, :] - xs[None, :, :], axis=2)
    dt = np.abs(ts[:, None] - ts[None, :])
    i_t, j_t = np.triu_indices(nt, k=1)
    pair_x, pair_y = np.triu_indices(nx, k=1)

    w_xy = 1.0 + xnorm[pair_x] ** params.beta + xnorm[pair_y] ** params.beta if weighted else 1.0
    w_x = 1.0 + xnorm ** (params.beta + params.lam) if weighted else np.ones(nx)

    best = 0.0
    # time term: |eta(s,x) - eta(t,x)| / (|t-s|^tau * w)
    for a, b in zip(i_t, j_t):
        num = np.abs(mag[b] - mag[a])
        best = max(best, float(np.max(num / (dt[a, b] ** params.tau * w_x))))
    # space term: |eta(t,y) - eta(t,x)| / (|x-y|^lam * w)
    denom_x = dx[pair_x, pair_y] ** params.lam * w_xy
    for a in range(nt):
        num = np.abs(mag[a, pair_y] - mag[a, pair_x])
        best = max(best, float(np.max(num / denom_x)))
    # mixed term: double increment / (|t-s|^tau |x-y|^lam * w)
    for a, b in zip(i_t, j_t):
        num = np.abs(mag[a, pair_x] - mag[b, pair_x] - mag[a, pair_y] + mag[b, pair_y])
        best = max(best, float(np.max(num / (dt[a, b] ** params.tau * denom_x))))
    return best


_EPS_SEARCH = np.round(np.arange(0.01, 1.0, 0.01), 2)


@dataclass(frozen=True)
class AssumptionReport:
    h0: bool
    h0_weak: bool
    h2_1: bool
    h2_eps: float | None
    hurst_region: bool | None

    def lines(self):
        out = [
            f"(H0) tau+lam/p>1 with p>2, tau in (1/2,1]: {'PASS' if self.h0 else 'FAIL'}",
            f"(H0') tau+lam/2>1: {'PASS' if self.h0_weak else 'FAIL'}",
        ]
        if self.h2_1:
            out.append(f"(H2)(1) interpolation window: PASS (eps = {self.h2_eps})")
        else:
            out.append("(H2)(1) interpolation window: FAIL")
        if self.hurst_region is not None:
            out.append(f"hurst-region H0+H/2>1 and dH<2H0-1: {'PASS' if self.hurst_region else 'FAIL'}")
        return out


def assumption_check(params: RegularityParams, hurst: HurstParams | None = None) -> AssumptionReport:
    """Check which of the standing parameter regimes hold for the tuple.

    (H2)(1) requires a witnessing eps in (0, 1) with tau + (1-eps)/p > 1 and
    lam + beta < 2 eps tau / (1 + eps); eps is searched over the grid
    {0.01, ..., 0.99} and reported.
    """
    tau, lam, beta, p = params.tau, params.lam, params.beta, params.p
    h0 = p > 2 and 0.5 < tau <= 1 and 0 < lam <= 1 and tau + lam / p > 1
    h0_weak = 0.5 < tau <= 1 and 0 < lam <= 1 and tau + lam / 2 > 1
    h2_eps = None
    for eps in _EPS_SEARCH:
        if tau + (1 - eps) / p > 1 and lam + beta < 2 * eps / (1 + eps) * tau:
            h2_eps = float(eps)
            break
    region = None
    if hurst is not None:
        region = bool(
            hurst.h0 + hurst.h / 2 > 1 and hurst.d * hurst.h < 2 * hurst.h0 - 1
        )
    return AssumptionReport(
        h0=bool(h0),
        h0_weak=bool(h0_weak),
        h2_1=h2_eps is not None,
        h2_eps=h2_eps,
        hurst_region=region,
    )


def save_fbs(field: FbsGridField, prefix: str | Path) -> None:
    """Write a realization as a flat binary tensor plus a JSON sidecar.

    ``<prefix>.bin`` holds the C-ordered little-endian float64 values with
    shape ``sidecar["shape"]`` = (time points, space points per axis...).
    Sidecar fields: ``hurst`` {h0, h, d}, ``time_points`` (grid, seconds),
    ``space_axes`` (one list per axis), ``seed`` (generation seed),
    ``shape``, ``dtype`` ("<f8"), ``order`` ("C").
    """
    prefix = Path(prefix)
    data = np.ascontiguousarray(field.values, dtype="<f8")
    prefix.with_suffix(".bin").write_bytes(data.tobytes())
    sidecar = {
        "hurst": {"h0": field.hurst.h0, "h": field.hurst.h, "d": field.hurst.d},
        "time_points": field.time_points.tolist(),
        "space_axes": [a.tolist() for a in field.space_axes],
        "seed": field.seed,
        "shape": list(data.shape),
        "dtype": "<f8",
        "order": "C",
    }
    prefix.with_suffix(".json").write_text(json.dumps(sidecar, indent=2))


def load_fbs(prefix: str | Path) -> FbsGridField:
    prefix = Path(prefix)
    sidecar = json.loads(prefix.with_suffix(".json").read_text())
    raw = np.frombuffer(prefix.with_suffix(".bin").read_bytes(), dtype="<f8")
    values = raw.reshape(sidecar["shape"])
    hurst = HurstParams(**sidecar["hurst"])
    return FbsGridField(
        hurst,
        np.asarray(sidecar["time_points"]),
        [np.asarray(a) for a in sidecar["space_axes"]],
        values,
        sidecar["seed"],
    )
