"""Least-squares Monte Carlo solver for BSDEs with a Young-type driver.

Backward induction over the grid with one global polynomial regression per
time step standing in for the conditional expectation (Longstaff-Schwartz
style).  At step i the per-path target is

    T_i = Y_{i+1} + f(t_i, X_i, Y, Z_i) dt + g(Y_{i+1}) . (eta(t_{i+1}, X_i) - eta(t_i, X_i)),

with Z_i from the martingale-increment regression of Y_{i+1} dW^T / dt, and
an inner Picard loop updating only the Y argument of f.  If the loop fails
to contract the step is halved once (Brownian-bridge midpoint) and retried.

Linear problems admit the flow/Girsanov closed form used as an oracle:
Y_0 = E[((G_T^0)^T xi + int (G_s^0)^T f_s ds) M_T] with M the exponential
martingale of the Girsanov integrand.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .driver import DriverField
from .forward import PathEnsemble, SdeSpec, exit_indices, step_normals

__all__ = [
    "RegressionBasis",
    "RegressionError",
    "NoContractionError",
    "PicardParams",
    "Terminal",
    "terminal_h_of_xt",
    "terminal_running_max",
    "terminal_h_of_marginals",
    "BsdeSpec",
    "BsdeSolution",
    "backward_solve",
    "ClosedFormResult",
    "linear_closed_form",
    "localized_solve",
    "localization_sweep",
    "comparison_experiment",
    "ComparisonReport",
    "diagnostics",
]


class RegressionError(RuntimeError):
    pass


class NoContractionError(RuntimeError):
    pass


@dataclass(frozen=True)
class PicardParams:
    max_iter: int = 8
    tol: float = 1e-9


@dataclass(frozen=True)
class RegressionBasis:
    """Polynomial-in-state features up to total degree, plus optional
    indicator-of-ball features; always includes the constant."""

    degree: int = 3
    ridge: float = 1e-8
    ball_centers: tuple = ()
    ball_radius: float = 1.0

    def _exponents(self, d: int):
        out = []

        def rec(prefix, remaining):
            if len(prefix) == d:
                if sum(prefix) >= 1:
                    out.append(tuple(prefix))
                return
            for e in range(remaining + 1):
                rec(prefix + [e], remaining - e)

        rec([], self.degree)
        return out

    def design(self, x: np.ndarray) -> np.ndarray:
        k, d = x.shape
        cols = [np.ones(k)]
        for expo in self._exponents(d):
            col = np.ones(k)
            for j, e in enumerate(expo):
                if e:
                    col = col * x[:, j] ** e
            cols.append(col)
        for c in self.ball_centers:
            c_arr = np.atleast_1d(np.asarray(c, dtype=float))
            dist = np.linalg.norm(x - c_arr[None, :], axis=1)
            cols.append((dist <= self.ball_radius).astype(float))
        return np.column_stack(cols)


class _Fit:
    """Ridge fit with unpenalized intercept and per-batch standardization.

    Keeping the intercept penalty-free makes the cross-path mean of the
    fitted values equal the target mean exactly (first normal equation).
    """

    def __init__(self, basis: RegressionBasis, x: np.ndarray):
        raw = basis.design(x)
        mean = raw.mean(axis=0)
        std = raw.std(axis=0)
        keep = np.concatenate([[True], std[1:] > 1e-12])
        self._keep = keep
        self._mean = mean
        self._std = np.where(std > 1e-12, std, 1.0)
        a = raw[:, keep].copy()
        a[:, 1:] = (a[:, 1:] - mean[keep][1:]) / self._std[keep][1:]
        self._a = a
        self._basis = basis
        f = a.shape[1]
        pen = np.eye(f) * basis.ridge
        pen[0, 0] = 0.0
        gram = a.T @ a + pen
        try:
            self._solve = np.linalg.inv(gram)
        except np.linalg.LinAlgError as exc:
            raise RegressionError("regression normal equations singular") from exc
        self._beta = None

    def fit(self, targets: np.ndarray) -> np.ndarray:
        t = targets if targets.ndim == 2 else targets[:, None]
        beta = self._solve @ (self._a.T @ t)
        if not np.all(np.isfinite(beta)):
            raise RegressionError("regression normal equations singular")
        fitted = self._a @ beta
        return fitted if targets.ndim == 2 else fitted[:, 0]


@dataclass(frozen=True)
class Terminal:
    """Terminal data xi = Xi_T together with its running version Xi_t.

    ``value_at(ensemble, idx)`` evaluates Xi at a per-path grid index; the
    plain terminal is value_at at the last index.
    """

    value_at: callable
    name: str = "terminal"

    def terminal(self, ensemble: PathEnsemble) -> np.ndarray:
        idx = np.full(ensemble.n_paths, ensemble.grid.n - 1)
        return self.value_at(ensemble, idx)


def terminal_h_of_xt(h, name="h(X_T)") -> Terminal:
    """Xi_t = h(X_t); h maps (k, d) -> (k,) or (k, N)."""

    def value_at(ensemble, idx):
        x = ensemble.x[np.arange(ensemble.n_paths), idx]
        out = np.asarray(h(x), dtype=float)
        return out[:, None] if out.ndim == 1 else out

    return Terminal(value_at, name=name)


def terminal_running_max(coord: int = 0, name="sup X") -> Terminal:
    """Xi_t = max_{s <= t} X^coord_s."""

    def value_at(ensemble, idx):
        run = np.maximum.accumulate(ensemble.x[:, :, coord], axis=1)
        return run[np.arange(ensemble.n_paths), idx][:, None]

    return Terminal(value_at, name=name)


def terminal_h_of_marginals(h, times, name="h(marginals)") -> Terminal:
    """Xi_t = h(X_{t_1 ^ t}, ..., X_{t_m ^ t}) for fixed observation times."""

    def value_at(ensemble, idx):
        cols = []
        t_idx = [ensemble.grid.index_of(t) for t in times]
        for j in t_idx:
            jj = np.minimum(np.asarray(idx), j)
            cols.append(ensemble.x[np.arange(ensemble.n_paths), jj])
        out = np.asarray(h(*cols), dtype=float)
        return out[:, None] if out.ndim == 1 else out

    return Terminal(value_at, name=name)


@dataclass
class BsdeSpec:
    """Problem data: forward SDE, driver field, generator f, coupling g,
    terminal functional, and recorded constants."""

    forward: SdeSpec
    fieldv: DriverField
    generator: callable  # f(t, x (k,d), y (k,N), z (k,N,d)) -> (k,N)
    coupling: callable  # g(y (k,N)) -> (k,N,M)
    terminal: Terminal
    n_dim: int = 1
    lip_const: float = 1.0
    bound_const: float = 1.0
    name: str = "bsde"

    def content_hash(self) -> str:
        parts = [
            self.name,
            self.forward.content_hash(),
            getattr(self.generator, "__name__", repr(self.generator)),
            getattr(self.coupling, "__name__", repr(self.coupling)),
            self.terminal.name,
            str(self.n_dim),
            self.fieldv.kind,
        ]
        return hashlib.sha256("|".join(parts).encode()).hexdigest()[:16]


def zero_generator(t, x, y, z):
    return np.zeros_like(y)


def zero_coupling(y):
    return np.zeros(y.shape + (1,))


def scalar_coupling(fn, name=None) -> callable:
    """Wrap a scalar function g so it maps (k, 1) -> (k, 1, 1)."""

    def g(y):
        return np.asarray(fn(y[:, 0]), dtype=float)[:, None, None]

    if name:
        g.__name__ = name
    return g


@dataclass
class BsdeSolution:
    """Backward-induction output: y (k, n, N), z (k, n-1, N, d)."""

    grid_points: np.ndarray
    y: np.ndarray
    z: np.ndarray
    picard_residuals: list
    halvings: list
    spec_hash: str = ""

    @property
    def y0(self) -> np.ndarray:
        return self.y[:, 0].mean(axis=0)

    @property
    def y0_se(self) -> np.ndarray:
        # every regression preserves its target mean exactly, so mean(Y_0)
        # equals the mean of the per-path realized values
        # xi + sum_i (target_i - Y_{i+1}); their spread is the honest
        # standard error of the Y_0 estimate
        return self.realized.std(axis=0, ddof=1) / np.sqrt(self.y.shape[0])

    realized: np.ndarray = field(default=None, repr=False)


def _eta_increments(fieldv: DriverField, ensemble: PathEnsemble, i: int) -> np.ndarray:
    t0, t1 = ensemble.grid.points[i], ensemble.grid.points[i + 1]
    xi = ensemble.x[:, i]
    k = xi.shape[0]
    return fieldv.evaluate(np.full(k, t1), xi) - fieldv.evaluate(np.full(k, t0), xi)


def _picard_sweep(fit: _Fit, make_target, y_start, picard: PicardParams):
    """Iterate y -> fit(make_target(y)).

    Returns (y, residuals, contracted, final_target) where final_target is
    the target whose fit produced y, so the fitted mean equals its mean.
    """
    target = make_target(y_start)
    y_cur = fit.fit(target)
    residuals = []
    bad_run = 0
    for _ in range(picard.max_iter):
        target = make_target(y_cur)
        y_new = fit.fit(target)
        r = float(np.max(np.abs(y_new - y_cur)))
        residuals.append(r)
        y_cur = y_new
        if r < picard.tol:
            return y_cur, residuals, True, target
        if len(residuals) >= 2 and residuals[-1] >= residuals[-2] - 1e-16:
            bad_run += 1
            if bad_run >= 3:
                return y_cur, residuals, False, target
        else:
            bad_run = 0
    # ran out of iterations: accept if the trace kept shrinking
    ok = len(residuals) < 3 or residuals[-1] < residuals[0]
    return y_cur, residuals, ok, target


def _z_regression(fit: _Fit, y_next: np.ndarray, dw: np.ndarray, dt: float) -> np.ndarray:
    """Martingale-increment regression Z = E[(Y - E[Y|X]) dW^T | X] / dt.

    Centering Y by its own fit leaves the conditional expectation unchanged
    (dW is mean-zero given X) and removes the finite-sample noise entirely
    when Y is X-measurable; a constant Y gives Z = 0 exactly.
    """
    k, nn = y_next.shape
    d = dw.shape[1]
    centered = y_next - fit.fit(y_next)
    return fit.fit(
        np.einsum("kn,kd->knd", centered, dw).reshape(k, nn * d)
    ).reshape(k, nn, d) / dt


def _solve_step(spec, fit, x_i, t_i, dt, y_next, z_i, d_eta, picard):
    g_next = spec.coupling(y_next)
    young = np.einsum("knm,km->kn", g_next, d_eta)

    def make_target(y_for_f):
        return y_next + spec.generator(t_i, x_i, y_for_f, z_i) * dt + young

    return _picard_sweep(fit, make_target, y_next, picard)


def backward_solve(
    spec: BsdeSpec,
    ensemble: PathEnsemble,
    basis: RegressionBasis | None = None,
    picard: PicardParams | None = None,
) -> BsdeSolution:
    """Full-horizon backward induction; terminal values are set per path
    bit-exactly, and a failed Picard step triggers one local mesh halving
    before giving up with "no contraction"."""
    basis = basis or RegressionBasis()
    picard = picard or PicardParams()
    grid = ensemble.grid
    k, n, d = ensemble.x.shape
    nn = spec.n_dim
    y = np.empty((k, n, nn))
    z = np.zeros((k, n - 1, nn, d))
    y[:, -1] = spec.terminal.terminal(ensemble)
    residual_log = [None] * (n - 1)
    halvings = []
    realized = y[:, -1].copy()

    for i in range(n - 2, -1, -1):
        t_i = grid.points[i]
        dt = grid.dt[i]
        x_i = ensemble.x[:, i]
        fit = _Fit(basis, x_i)
        z_i = _z_regression(fit, y[:, i + 1], ensemble.dw[:, i], dt)
        d_eta = _eta_increments(spec.fieldv, ensemble, i)
        y_i, residuals, ok, target = _solve_step(
            spec, fit, x_i, t_i, dt, y[:, i + 1], z_i, d_eta, picard
        )
        if not ok:
            y_i, z_half, target = _halved_step(spec, ensemble, basis, picard, i, y[:, i + 1])
            halvings.append(i)
            z_i = z_half
            residual_log[i] = residuals + ["halved"]
        else:
            residual_log[i] = residuals
        realized += target - y[:, i + 1]
        y[:, i] = y_i
        z[:, i] = z_i
    return BsdeSolution(
        grid_points=grid.points,
        y=y,
        z=z,
        picard_residuals=residual_log,
        halvings=halvings,
        spec_hash=spec.content_hash(),
        realized=realized,
    )


def _halved_step(spec, ensemble, basis, picard, i, y_next):
    """Retry one backward step on a half mesh: insert a Brownian-bridge
    midpoint, solve [mid, t_{i+1}] then [t_i, mid]; raise if either half
    still fails to contract."""
    grid = ensemble.grid
    k, _, d = ensemble.x.shape
    nn = spec.n_dim
    t_i = grid.points[i]
    dt = grid.dt[i]
    dw = ensemble.dw[:, i]
    xi_ = ensemble.x[:, i]
    z_bridge = step_normals(ensemble.seed, 2**32 + i, k, d)
    dw1 = dw / 2 + np.sqrt(dt) / 2 * z_bridge
    dw2 = dw - dw1
    b = spec.forward.b(t_i, xi_)
    s = spec.forward.sigma(t_i, xi_)
    x_mid = xi_ + b * dt / 2 + np.einsum("kab,kb->ka", s, dw1)
    t_mid = t_i + dt / 2

    def half(t_left, x_left, dw_half, y_right, d_eta):
        fit = _Fit(basis, x_left)
        z_half = _z_regression(fit, y_right, dw_half, dt / 2)
        y_left, _, ok, target = _solve_step(
            spec, fit, x_left, t_left, dt / 2, y_right, z_half, d_eta, picard
        )
        if not ok:
            raise NoContractionError("no contraction")
        return y_left, z_half, target

    t_ip1 = grid.points[i + 1]
    eta = spec.fieldv
    d_eta_hi = eta.evaluate(np.full(k, t_ip1), x_mid) - eta.evaluate(np.full(k, t_mid), x_mid)
    y_mid, _, target_hi = half(t_mid, x_mid, dw2, y_next, d_eta_hi)
    d_eta_lo = eta.evaluate(np.full(k, t_mid), xi_) - eta.evaluate(np.full(k, t_i), xi_)
    y_i, z_i, target_lo = half(t_i, xi_, dw1, y_mid, d_eta_lo)
    # pseudo-target whose increment over y_next matches the two half-steps
    pseudo = y_next + (target_hi - y_next) + (target_lo - y_mid)
    return y_i, z_i, pseudo


def _path_functional(value, ensemble: PathEnsemble, suffix: tuple) -> np.ndarray:
    """Normalize scalars / arrays / callables(t, x) to (n_paths, n) + suffix."""
    k, n, d = ensemble.x.shape
    shape = (k, n) + suffix
    if value is None:
        return np.zeros(shape)
    if callable(value):
        out = np.empty(shape)
        for j in range(n):
            val = np.asarray(value(ensemble.grid.points[j], ensemble.x[:, j]), dtype=float)
            out[:, j] = val.reshape((k,) + suffix)
        return out
    arr = np.asarray(value, dtype=float)
    return np.broadcast_to(arr, shape).copy()


@dataclass
class ClosedFormResult:
    y0: np.ndarray
    se: np.ndarray
    weights: np.ndarray
    y_path: np.ndarray | None = None


def linear_closed_form(
    ensemble: PathEnsemble,
    fieldv: DriverField,
    terminal: Terminal,
    alpha=None,
    drift=None,
    girsanov=None,
    n_dim: int = 1,
    basis: RegressionBasis | None = None,
    return_path: bool = False,
) -> ClosedFormResult:
    """Monte Carlo evaluation of the linear flow/Girsanov representation.

    Per path: w = (G_T^0)^T xi M_T + sum_j (G_{t_j}^0)^T f_j dt M_T, with the
    flow from the left-point Euler products and M the discrete exponential
    martingale of the Girsanov integrand (default 0).  Y_0 is the sample
    mean; later Y_t (optional) regresses w_t = inv(G_t^0)^T [...] M_T / M_t
    on basis(X_t).
    """
    k, n, d = ensemble.x.shape
    nn = n_dim
    m = fieldv.channels
    grid = ensemble.grid
    if alpha is None:
        a = np.broadcast_to(np.eye(nn), (k, n, m, nn, nn)).copy()
    elif callable(alpha):
        a = _path_functional(alpha, ensemble, (m, nn, nn))
    else:
        arr = np.asarray(alpha, dtype=float)
        if arr.ndim == 0:
            a = np.broadcast_to(float(arr) * np.eye(nn), (k, n, m, nn, nn)).copy()
        else:
            a = np.broadcast_to(arr, (k, n, m, nn, nn)).copy()
    f = _path_functional(drift, ensemble, (nn,))
    g = _path_functional(girsanov, ensemble, (d,))

    # flows Gamma_{t_j}^0 per path: products of (I + sum_ch alpha^T d_eta)
    gammas = np.empty((k, n, nn, nn))
    gammas[:, 0] = np.eye(nn)
    cur = gammas[:, 0].copy()
    for j in range(n - 1):
        d_eta = _eta_increments(fieldv, ensemble, j)  # (k, m)
        incr = np.einsum("kcij,kc->kji", a[:, j], d_eta)
        cur = np.einsum("kab,kbc->kac", np.eye(nn)[None] + incr, cur)
        gammas[:, j + 1] = cur

    dts = grid.dt
    log_m = np.concatenate(
        [
            np.zeros((k, 1)),
            np.cumsum(
                np.einsum("kjd,kjd->kj", g[:, :-1], ensemble.dw)
                - 0.5 * np.einsum("kjd,kjd->kj", g[:, :-1], g[:, :-1]) * dts[None, :],
                axis=1,
            ),
        ],
        axis=1,
    )
    m_t = np.exp(log_m)
    xi = terminal.terminal(ensemble)  # (k, nn)
    gt_xi = np.einsum("kba,kb->ka", gammas[:, -1], xi)  # (G_T^0)^T xi
    drift_term = np.einsum("kjba,kjb,j->ka", gammas[:, :-1], f[:, :-1], dts)
    weights = (gt_xi + drift_term) * m_t[:, -1:]
    y0 = weights.mean(axis=0)
    se = weights.std(axis=0, ddof=1) / np.sqrt(k)

    y_path = None
    if return_path:
        basis = basis or RegressionBasis()
        y_path = np.empty((k, n, nn))
        suffix_sum = np.zeros((k, nn))
        # suffix drift integrals sum_{j>=t} (G_j^0)^T f_j dt, built backwards
        suffix = np.empty((k, n, nn))
        suffix[:, -1] = 0.0
        for j in range(n - 2, -1, -1):
            suffix[:, j] = suffix[:, j + 1] + np.einsum(
                "kba,kb->ka", gammas[:, j], f[:, j]
            ) * dts[j]
        for j in range(n):
            inv_g = np.linalg.inv(gammas[:, j])
            v = np.einsum("kab,kb->ka", np.transpose(inv_g, (0, 2, 1)), gt_xi + suffix[:, j])
            v = v * (m_t[:, -1] / m_t[:, j])[:, None]
            if j == 0:
                y_path[:, 0] = v.mean(axis=0)
            else:
                fit = _Fit(basis, ensemble.x[:, j])
                y_path[:, j] = fit.fit(v)
    return ClosedFormResult(y0=y0, se=se, weights=weights, y_path=y_path)


def localized_solve(
    spec: BsdeSpec,
    ensemble: PathEnsemble,
    radius: float,
    basis: RegressionBasis | None = None,
    picard: PicardParams | None = None,
) -> BsdeSolution:
    """Backward induction stopped at each path's first exit above |X| = radius.

    The terminal value on an exited path is the running functional Xi at its
    exit index; after the exit Y stays frozen and Z = 0.  Regressions at
    step i use the still-active paths only.
    """
    basis = basis or RegressionBasis()
    picard = picard or PicardParams()
    grid = ensemble.grid
    k, n, d = ensemble.x.shape
    nn = spec.n_dim
    k_exit = (
        exit_indices(ensemble, radius) if np.isfinite(radius) else np.full(k, n - 1)
    )
    xi_exit = spec.terminal.value_at(ensemble, k_exit)  # (k, nn)

    y = np.empty((k, n, nn))
    z = np.zeros((k, n - 1, nn, d))
    # frozen values from each path's exit onward (covers the terminal row)
    for j in range(n):
        frozen = k_exit <= j
        y[frozen, j] = xi_exit[frozen]

    residual_log = [None] * (n - 1)
    halvings = []
    realized = xi_exit.copy()
    for i in range(n - 2, -1, -1):
        active = k_exit > i
        n_active = int(active.sum())
        if n_active == 0:
            continue
        t_i = grid.points[i]
        dt = grid.dt[i]
        x_i = ensemble.x[active, i]
        fit = _Fit(basis, x_i)
        y_next = y[active, i + 1]
        dw_i = ensemble.dw[active, i]
        z_i = _z_regression(fit, y_next, dw_i, dt)
        t0, t1 = grid.points[i], grid.points[i + 1]
        d_eta = spec.fieldv.evaluate(np.full(n_active, t1), x_i) - spec.fieldv.evaluate(
            np.full(n_active, t0), x_i
        )
        y_i, residuals, ok, target = _solve_step(
            spec, fit, x_i, t_i, dt, y_next, z_i, d_eta, picard
        )
        if not ok:
            raise NoContractionError("no contraction")
        residual_log[i] = residuals
        realized[active] += target - y_next
        y[active, i] = y_i
        z[active, i] = z_i
    return BsdeSolution(
        grid_points=grid.points,
        y=y,
        z=z,
        picard_residuals=residual_log,
        halvings=halvings,
        spec_hash=spec.content_hash(),
        realized=realized,
    )


def localization_sweep(
    spec: BsdeSpec,
    ensemble: PathEnsemble,
    radii,
    basis: RegressionBasis | None = None,
    picard: PicardParams | None = None,
):
    """Solve the stopped problem for each radius; rows hold (radius, Y0,
    |Y0 - previous Y0|, exit probability P{T_n < T})."""
    rows = []
    prev = None
    n_last = ensemble.grid.n - 1
    for r in radii:
        sol = localized_solve(spec, ensemble, r, basis=basis, picard=picard)
        y0 = float(sol.y0[0]) if spec.n_dim == 1 else sol.y0
        p_exit = float(np.mean(exit_indices(ensemble, r) < n_last))
        diff = np.nan if prev is None else float(np.max(np.abs(np.atleast_1d(y0 - prev))))
        rows.append({"radius": float(r), "y0": y0, "diff_prev": diff, "p_exit": p_exit, "solution": sol})
        prev = y0
    return rows


@dataclass
class ComparisonReport:
    fraction_ordered: float
    y0_gap: float
    y0_gap_se: float
    solution_a: BsdeSolution
    solution_b: BsdeSolution


def comparison_experiment(
    spec_a: BsdeSpec,
    spec_b: BsdeSpec,
    ensemble: PathEnsemble,
    basis: RegressionBasis | None = None,
    picard: PicardParams | None = None,
    eps_reg: float = 1e-2,
) -> ComparisonReport:
    """Solve two ordered problems (xi_a >= xi_b, f_a >= f_b, same g) on one
    ensemble and report how often the discrete solutions stay ordered."""
    if spec_a.n_dim != 1 or spec_b.n_dim != 1:
        raise ValueError("comparison requires N = 1")
    xi_a = spec_a.terminal.terminal(ensemble)
    xi_b = spec_b.terminal.terminal(ensemble)
    if np.any(xi_a < xi_b - 1e-12):
        raise ValueError("inputs not ordered")
    k, n, d = ensemble.x.shape
    probe_y = np.zeros((k, 1))
    probe_z = np.zeros((k, 1, d))
    for j in range(0, n - 1, max(1, (n - 1) // 8)):
        fa = spec_a.generator(ensemble.grid.points[j], ensemble.x[:, j], probe_y, probe_z)
        fb = spec_b.generator(ensemble.grid.points[j], ensemble.x[:, j], probe_y, probe_z)
        if np.any(fa < fb - 1e-12):
            raise ValueError("inputs not ordered")
    sol_a = backward_solve(spec_a, ensemble, basis=basis, picard=picard)
    sol_b = backward_solve(spec_b, ensemble, basis=basis, picard=picard)
    ordered = sol_a.y >= sol_b.y - eps_reg
    gap_targets = sol_a.realized - sol_b.realized
    return ComparisonReport(
        fraction_ordered=float(np.mean(ordered)),
        y0_gap=float(sol_a.y0[0] - sol_b.y0[0]),
        y0_gap_se=float(gap_targets.std(ddof=1) / np.sqrt(k)),
        solution_a=sol_a,
        solution_b=sol_b,
    )


def save_solution(
    solution: BsdeSolution,
    prefix,
    basis: RegressionBasis | None = None,
    picard: PicardParams | None = None,
    seed: int | None = None,
    max_paths: int | None = None,
) -> None:
    """CSV export (path, t, Y_1..Y_N, Z_11..Z_Nd) plus a JSON run manifest
    carrying the spec hash, seed, basis, tolerances, and residual trace."""
    import csv as _csv
    import json as _json
    from pathlib import Path as _Path

    prefix = _Path(prefix)
    k, n, nn = solution.y.shape
    d = solution.z.shape[-1]
    k_out = k if max_paths is None else min(k, max_paths)
    with open(prefix.with_suffix(".csv"), "w", newline="") as fh:
        writer = _csv.writer(fh, lineterminator="\r\n")
        header = ["path", "t"] + [f"Y{a+1}" for a in range(nn)] + [
            f"Z{a+1}{b+1}" for a in range(nn) for b in range(d)
        ]
        writer.writerow(header)
        for p_idx in range(k_out):
            for j, t in enumerate(solution.grid_points):
                row = [p_idx, f"{t:.17g}"]
                row += [f"{solution.y[p_idx, j, a]:.17g}" for a in range(nn)]
                if j < n - 1:
                    row += [
                        f"{solution.z[p_idx, j, a, b]:.17g}"
                        for a in range(nn)
                        for b in range(d)
                    ]
                else:
                    row += [""] * (nn * d)
                writer.writerow(row)
    manifest = {
        "spec_hash": solution.spec_hash,
        "seed": seed,
        "basis": None
        if basis is None
        else {"degree": basis.degree, "ridge": basis.ridge},
        "tolerances": None
        if picard is None
        else {"max_iter": picard.max_iter, "tol": picard.tol},
        "residual_trace": [
            [r if isinstance(r, str) else float(r) for r in (trace or [])]
            for trace in solution.picard_residuals
        ],
        "halvings": [int(i) for i in solution.halvings],
    }
    prefix.with_suffix(".json").write_text(_json.dumps(manifest, indent=2))


def _pvar_suffix(values: np.ndarray, p: float) -> np.ndarray:
    """Vectorized over paths: p-variation of values[:, j:] for fixed j."""
    k, n = values.shape
    best = np.zeros((k, n))
    for j in range(1, n):
        cand = best[:, :j] + np.abs(values[:, j : j + 1] - values[:, :j]) ** p
        best[:, j] = cand.max(axis=1)
    return best[:, -1] ** (1.0 / p)


def diagnostics(
    solution: BsdeSolution,
    ensemble: PathEnsemble,
    p: float = 2.5,
    k_mom: float = 2.0,
    times=None,
    basis: RegressionBasis | None = None,
    max_paths: int = 4000,
) -> dict:
    """Empirical surrogates for the solution seminorms.

    Conditional expectations are regression fits on basis(X_u), the outer
    essential sup a max over (path, u) of the fitted values; labeled
    estimates, not certified bounds.
    """
    basis = basis or RegressionBasis()
    pts = solution.grid_points
    n = pts.size
    if times is None:
        times = pts[:: max(1, (n - 1) // 4)][:4]
    sel = slice(0, min(solution.y.shape[0], max_paths))
    y = solution.y[sel, :, 0]
    z = solution.z[sel]
    x = ensemble.x[sel]
    dts = np.diff(pts)

    m_pk = 0.0
    bmo = 0.0
    for u in times:
        j = int(np.argmin(np.abs(pts - u)))
        pv = _pvar_suffix(y[:, j:], p) ** k_mom
        fit = _Fit(basis, x[:, j])
        m_pk = max(m_pk, float(np.max(fit.fit(pv))) ** (1.0 / k_mom) if np.max(pv) > 0 else 0.0)
        zsq = np.einsum("kjnd,kjnd->kj", z[:, j:], z[:, j:]) * dts[j:][None, :]
        tail = zsq.sum(axis=1) ** (k_mom / 2.0)
        bmo = max(bmo, float(np.max(fit.fit(tail))) ** (1.0 / k_mom) if np.max(tail) > 0 else 0.0)
    return {
        "m_pk": m_pk,
        "z_bmo": bmo,
        "sup_y": float(np.max(np.abs(solution.y))),
        "p": p,
        "k": k_mom,
        "times": list(np.asarray(times, dtype=float)),
    }
