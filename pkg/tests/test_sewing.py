import numpy as np
import pytest

from youngbsde.driver import AnalyticField, RegularityParams
from youngbsde.paths import ControlValue, SamplePath, TimeGrid, p_variation, uniform_norm
from youngbsde.sewing import (
    Germ,
    SewingError,
    nonlinear_young_integral,
    remainder_certificate,
    sew,
    young_integral_against_path,
)


def brownian_path(n_cells, seed, horizon=1.0):
    rng = np.random.default_rng(seed)
    grid = TimeGrid.uniform(horizon, n_cells)
    dw = rng.standard_normal(n_cells) * np.sqrt(horizon / n_cells)
    return SamplePath(grid, np.concatenate([[0.0], np.cumsum(dw)]))


def sin_t_field(power=1.0):
    return AnalyticField(
        lambda t, x: np.sin(x[:, 0]) * t**power,
        RegularityParams(tau=min(power, 1.0), lam=1.0, p=2.5),
        dt_fn=(lambda t, x: np.sin(x[:, 0])) if power == 1.0 else None,
    )


class TestSew:
    def test_additive_germ_exact_every_level(self):
        c = 2.3
        grid = TimeGrid.uniform(1.0, 4)
        res = sew(Germ(lambda s, t: c * (t - s)), grid, levels=6, tol=0.0)
        np.testing.assert_allclose(res.level_totals, c, rtol=1e-14)

    def test_square_germ_level_totals(self):
        # A(s,t) = (t-s)^2 on base {0,1}: level-l total is 2^-l
        grid = TimeGrid(np.array([0.0, 1.0]))
        res = sew(Germ(lambda s, t: (t - s) ** 2), grid, levels=8, tol=0.0)
        np.testing.assert_allclose(res.level_totals, 0.5 ** np.arange(9), rtol=1e-13)

    def test_early_stop_on_tolerance(self):
        grid = TimeGrid.uniform(1.0, 4)
        res = sew(Germ(lambda s, t: t - s), grid, levels=10, tol=1e-9)
        assert res.levels_used == 1 and res.converged

    def test_non_finite_germ_reported(self):
        grid = TimeGrid.uniform(1.0, 2)
        with pytest.raises(SewingError, match="non-finite germ"):
            sew(Germ(lambda s, t: np.where(s > 0.4, np.nan, 1.0)), grid, levels=2)

    def test_segment_additivity_exact(self):
        rng = np.random.default_rng(0)
        grid = TimeGrid.uniform(1.0, 8)
        vals = rng.standard_normal(9)
        y = SamplePath(grid, vals)
        res = nonlinear_young_integral(y, brownian_path(8, 1), sin_t_field(), levels=4)
        lhs = res.segment(0.0, 1.0)
        rhs = res.segment(0.0, 0.5) + res.segment(0.5, 1.0)
        assert lhs == pytest.approx(rhs, abs=1e-15)


class TestNonlinearYoung:
    def test_space_free_field_constant_y(self):
        field = AnalyticField(lambda t, x: t, RegularityParams(tau=1.0, lam=1.0, p=2.5))
        grid = TimeGrid.uniform(1.0, 16)
        y = SamplePath(grid, np.full(17, 3.0))
        x = SamplePath(grid, np.zeros(17))
        res = nonlinear_young_integral(y, x, field, levels=3)
        assert res.value == pytest.approx(3.0, abs=1e-13)

    def test_bilinear_field_constant_path(self):
        field = AnalyticField(lambda t, x: t * x[:, 0], RegularityParams(tau=1.0, lam=1.0, p=2.5))
        grid = TimeGrid.uniform(1.0, 16)
        y = SamplePath(grid, np.ones(17))
        x0 = -1.7
        x = SamplePath(grid, np.full(17, x0))
        res = nonlinear_young_integral(y, x, field, levels=3)
        assert res.value == pytest.approx(x0, abs=1e-13)

    def test_riemann_reduction_identity_path(self):
        # eta = t*x, x_r = r, y = 1 on [0,1] -> int_0^1 r dr = 1/2
        field = AnalyticField(lambda t, x: t * x[:, 0], RegularityParams(tau=1.0, lam=1.0, p=2.5))
        grid = TimeGrid(np.array([0.0, 1.0]))
        y = SamplePath(grid, np.ones(2))
        x = SamplePath(grid, np.array([0.0, 1.0]))
        res = nonlinear_young_integral(y, x, field, levels=14, tol=0.0)
        assert res.value == pytest.approx(0.5, abs=1e-4)

    def test_warning_when_exponents_insufficient(self):
        field = AnalyticField(
            lambda t, x: np.sin(x[:, 0]) * t**0.6,
            RegularityParams(tau=0.6, lam=0.5, p=2.5),
        )
        grid = TimeGrid.uniform(1.0, 8)
        y = SamplePath(grid, np.ones(9))
        with pytest.warns(UserWarning, match="tau \\+ lam/p"):
            nonlinear_young_integral(y, brownian_path(8, 2), field, levels=2)

    def test_channels_summed(self):
        # two channels t and 2t with weights (1, 3) -> 1 + 6 = 7
        field = AnalyticField(
            lambda t, x: np.stack([t, 2 * t], axis=-1),
            RegularityParams(tau=1.0, lam=1.0, p=2.5),
            channels=2,
        )
        grid = TimeGrid.uniform(1.0, 8)
        y = SamplePath(grid, np.column_stack([np.ones(9), 3 * np.ones(9)]))
        x = SamplePath(grid, np.zeros(9))
        res = nonlinear_young_integral(y, x, field, levels=2)
        assert res.value == pytest.approx(7.0, abs=1e-12)

    def test_cauchy_increments_decay_rough_case(self):
        x = brownian_path(2**10, 123)
        field = sin_t_field(power=0.8)
        base = TimeGrid(np.array([0.0, 1.0]))
        y = SamplePath(base, np.ones(2))
        x_full = SamplePath(base, np.array([x.values[0], x.values[-1]]))
        # keep the Brownian path's full resolution: integrate on its grid
        y_fine = SamplePath(x.grid, np.ones(x.grid.n))
        res = nonlinear_young_integral(y_fine, x, field, levels=0)
        # dyadic coarsenings of the fine sum emulate refinement levels
        totals = []
        for lev in range(6):
            step = 2**lev
            pts = x.grid.points[::step]
            xs = x.values[::step]
            d_eta = field.evaluate(pts[1:], xs[:-1, None]) - field.evaluate(pts[:-1], xs[:-1, None])
            totals.append(np.sum(d_eta))
        diffs = np.abs(np.diff(totals[::-1]))
        assert diffs[-1] < diffs[0]

    def test_smooth_time_reduction(self):
        # for a field affine in t the Young sums equal the left-point
        # quadrature of y * dt_eta exactly
        field = sin_t_field(power=1.0)
        x = brownian_path(2**8, 5)
        y = SamplePath(x.grid, np.cos(x.grid.points))
        res = nonlinear_young_integral(y, x, field, levels=4, tol=0.0)
        fine = x.grid.refine(4)
        ys = y.interp(fine.points[:-1])
        xs = x.interp(fine.points[:-1])[:, None]
        dts = np.diff(fine.points)
        quad = np.sum(ys * field.time_derivative(fine.points[:-1], xs)[:, 0] * dts)
        assert res.value == pytest.approx(quad, abs=1e-12)


class TestYoungAgainstPath:
    def test_constant_y_telescopes(self):
        grid = TimeGrid.uniform(1.0, 8)
        m = SamplePath(grid, np.sin(3 * grid.points))
        y = SamplePath(grid, np.ones(9))
        res = sew(
            Germ(lambda s, t: np.interp(t, grid.points, m.values) - np.interp(s, grid.points, m.values)),
            grid, levels=0,
        )
        got = young_integral_against_path(y, m, levels=3)
        want = m.values[-1] - m.values[0]
        np.testing.assert_allclose(got.level_totals, want, atol=1e-14)
        assert res.value == pytest.approx(want)

    def test_squared_path_self_integral(self):
        # int_0^1 M dM = M(1)^2 / 2 for M_t = t^2
        grid = TimeGrid.uniform(1.0, 64)
        m = SamplePath(grid, grid.points**2)
        res = young_integral_against_path(m, m, levels=14, tol=0.0)
        assert res.value == pytest.approx(0.5, abs=1e-6)

    def test_coincidence_with_nonlinear_integral(self):
        # the two Riemann schemes agree on a matched partition, and the
        # mismatch from integrating against a coarsened M shrinks on refinement
        field = sin_t_field(power=0.8)
        x = brownian_path(2**12, 9)
        y = SamplePath(x.grid, np.cos(2 * x.grid.points))
        direct = nonlinear_young_integral(y, x, field, levels=0)
        ones = SamplePath(x.grid, np.ones(x.grid.n))
        m_path = SamplePath(x.grid, nonlinear_young_integral(ones, x, field, levels=0).cumulative)
        via_m = young_integral_against_path(y, m_path, levels=0)
        assert via_m.value == pytest.approx(direct.value, abs=1e-6)

        gaps = []
        for cells in (2**8, 2**10, 2**12):
            step = 2**12 // cells
            sub_grid = TimeGrid(x.grid.points[::step])
            xs = SamplePath(sub_grid, x.values[::step])
            ys = SamplePath(sub_grid, np.cos(2 * sub_grid.points))
            ones_s = SamplePath(sub_grid, np.ones(sub_grid.n))
            m_s = SamplePath(sub_grid, nonlinear_young_integral(ones_s, xs, field, levels=0).cumulative)
            a = young_integral_against_path(ys, m_s, levels=0).value
            gaps.append(abs(a - direct.value))
        assert gaps[2] < gaps[0]


class TestRemainderCertificate:
    def test_exact_additive_germ(self):
        grid = TimeGrid.uniform(1.0, 4)
        res = sew(Germ(lambda s, t: 1.5 * (t - s)), grid, levels=5, tol=0.0)
        w = ControlValue(lambda s, t: t - s)
        ok = remainder_certificate(res, [(w, 2.0)])
        assert ok.all()
        assert np.all(res.remainder_bound >= 0)

    def test_square_germ_bound(self):
        grid = TimeGrid.uniform(1.0, 4)
        res = sew(Germ(lambda s, t: (t - s) ** 2), grid, levels=10, tol=0.0)
        w = ControlValue(lambda s, t: t - s)
        assert remainder_certificate(res, [(w, 2.0)]).all()

    def test_rough_case_certificate(self):
        # controls built from an analytic seminorm bound and measured p-variation
        field = sin_t_field(power=0.8)
        x = brownian_path(2**8, 77)
        y = SamplePath(x.grid, np.ones(x.grid.n))
        base = TimeGrid(x.grid.points[::32])  # 8 base cells
        yb = SamplePath(base, np.ones(base.n))
        xb = SamplePath(base, x.values[::32])
        res = nonlinear_young_integral(yb, xb, field, levels=5, tol=0.0)
        tau, lam, p = 0.8, 1.0, 2.5
        delta = tau + lam / p - 1
        eta_bound = 3.0  # sum of the three seminorm terms, each at most 1

        def w1(s, t):
            if t <= s:
                return 0.0
            return (
                eta_bound * (t - s) ** tau * p_variation(xb, p, (s, t)) ** lam
            ) ** (1.0 / (1.0 + delta))

        ok = remainder_certificate(res, [(ControlValue(w1), 1.0 + delta)])
        assert ok.all()

    def test_exponent_guard(self):
        grid = TimeGrid.uniform(1.0, 2)
        res = sew(Germ(lambda s, t: t - s), grid, levels=2)
        with pytest.raises(ValueError):
            remainder_certificate(res, [(ControlValue(lambda s, t: t - s), 1.0)])


class TestEstimates:
    """The a priori bounds with their explicit implementation constants."""

    def _battery(self, seed, n_cells=2**8):
        x = brownian_path(n_cells, seed)
        rng = np.random.default_rng(seed + 1)
        y_incr = rng.standard_normal(n_cells) * np.sqrt(1.0 / n_cells)
        y = SamplePath(x.grid, 1.0 + 0.3 * np.cumsum(np.concatenate([[0.0], y_incr])))
        return x, y

    def test_pvar_bound_unweighted(self):
        # ||int y d_eta||_{1/tau-var;[s,t]} against the sewing constant and an
        # analytic seminorm bound (each defining quotient of sin(x) t^0.8 is
        # at most 1, so 3 bounds the sum)
        tau, lam, p1, p2 = 0.8, 1.0, 2.5, 2.5
        delta = min(tau + 1.0 / p2 - 1, tau + lam / p1 - 1)
        const = 2**delta / (1 - 2**-delta)
        eta_bound = 3.0
        field = sin_t_field(power=0.8)
        for seed in (3, 17):
            x, y = self._battery(seed)
            res = nonlinear_young_integral(y, x, field, levels=3, tol=0.0)
            integral_path = SamplePath(x.grid, res.cumulative)
            for (s, t) in [(0.0, 1.0), (0.0, 0.5), (0.25, 0.75)]:
                lhs = p_variation(integral_path, 1.0 / tau, (s, t))
                y_inf = max(abs(y.values[x.grid.index_of(s): x.grid.index_of(t) + 1]).max(), 0.0)
                rhs = (
                    const * eta_bound * (t - s) ** tau
                    * ((1 + p_variation(x, p1, (s, t)) ** lam) * y_inf
                       + p_variation(y, p2, (s, t)))
                )
                assert lhs <= rhs

    def test_interpolation_bound_with_implementation_constant(self):
        # bounded-y variant: ||y||_pvar enters at power 1 - eps; constant
        # doubled to absorb the 2^eps factor and the germ term
        tau, lam, p, eps = 0.8, 1.0, 2.5, 0.3
        delta = min(tau + (1 - eps) / p - 1, tau + lam / p - 1)
        const = 2 * 2**delta / (1 - 2**-delta)
        eta_bound = 3.0
        field = sin_t_field(power=0.8)
        for seed in (5, 23):
            x, y = self._battery(seed)
            res = nonlinear_young_integral(y, x, field, levels=3, tol=0.0)
            integral_path = SamplePath(x.grid, res.cumulative)
            for (s, t) in [(0.0, 1.0), (0.5, 1.0)]:
                lhs = p_variation(integral_path, 1.0 / tau, (s, t))
                ia, ib = x.grid.index_of(s), x.grid.index_of(t)
                y_inf = abs(y.values[ia: ib + 1]).max()
                y_pv = p_variation(y, p, (s, t))
                rhs = (
                    const * eta_bound * (t - s) ** tau
                    * (p_variation(x, p, (s, t)) ** lam * y_inf
                       + (y_inf + y_inf**eps * y_pv ** (1 - eps)))
                )
                assert lhs <= rhs

    def test_delta_g_bound_constant_four(self):
        # ||g(x) - g(y)||_pvar <= 4(|grad g| ||x-y||_pvar
        #                           + |hess g| (||x||_pvar + ||y||_pvar) ||x-y||_inf)
        rng = np.random.default_rng(31)
        grid = TimeGrid.uniform(1.0, 64)

        def g(v):  # C^2_b map R^2 -> R with unit derivative bounds
            return np.sin(v[:, 0]) + 0.5 * np.cos(2 * v[:, 1]) / 2

        for _ in range(5):
            a = SamplePath(grid, np.cumsum(rng.standard_normal((65, 2)) * 0.1, axis=0))
            b = SamplePath(grid, a.values + rng.standard_normal((65, 2)) * 0.05)
            ga = SamplePath(grid, g(a.values))
            gb = SamplePath(grid, g(b.values))
            diff = SamplePath(grid, ga.values - gb.values)
            ab = SamplePath(grid, a.values - b.values)
            p = 2.5
            lhs = p_variation(diff, p)
            rhs = 4.0 * (
                1.0 * p_variation(ab, p)
                + 1.0 * (p_variation(a, p) + p_variation(b, p)) * uniform_norm(ab)
            )
            assert lhs <= rhs

    def test_product_rule_residual_shrinks(self):
        # two semimartingale-plus-Young processes with known decompositions:
        # the discrete product-identity residual drops by >= 1.5x per level
        # while the systematic Young/drift correction terms dominate (the
        # martingale part is kept small so quadratic-variation noise does
        # not mask the decay)
        rng = np.random.default_rng(41)
        fine = 2**12
        grid_f = np.linspace(0.0, 1.0, fine + 1)
        dw = rng.standard_normal(fine) * np.sqrt(1.0 / fine)
        w = np.concatenate([[0.0], np.cumsum(dw)])
        field = sin_t_field(power=0.9)

        def build(level):
            step = 2 ** (12 - level)
            t = grid_f[::step]
            wi = w[::step]
            xi = w[::step]
            d_eta = field.evaluate(t[1:], xi[:-1, None])[:, 0] - field.evaluate(
                t[:-1], xi[:-1, None]
            )[:, 0]
            dt = np.diff(t)
            dwi = np.diff(wi)
            f1, g1, z1 = np.cos(t), np.sin(t) + 1.2, 0.1 * np.ones_like(t)
            f2, g2, z2 = np.sin(2 * t), np.cos(t) + 0.8, 0.1 * t
            y1 = 1.0 + np.concatenate(
                [[0.0], np.cumsum(-f1[:-1] * dt - g1[:-1] * d_eta + z1[:-1] * dwi)]
            )
            y2 = -0.5 + np.concatenate(
                [[0.0], np.cumsum(-f2[:-1] * dt - g2[:-1] * d_eta + z2[:-1] * dwi)]
            )
            rhs = y1[0] * y2[0] + np.sum(
                -(y1[:-1] * f2[:-1] + y2[:-1] * f1[:-1]) * dt
                - (y1[:-1] * g2[:-1] + y2[:-1] * g1[:-1]) * d_eta
                + (y1[:-1] * z2[:-1] + y2[:-1] * z1[:-1]) * dwi
                + z1[:-1] * z2[:-1] * dt
            )
            return abs(y1[-1] * y2[-1] - rhs)

        residuals = [build(lev) for lev in (4, 5, 6, 7)]
        for lo, hi in zip(residuals[1:], residuals[:-1]):
            assert lo <= hi / 1.5
