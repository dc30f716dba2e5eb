import numpy as np
import pytest
from oracles import heat_solution_gaussian_bump, reflected_bm_expectation

from youngbsde.driver import AnalyticField, HurstParams, RegularityParams, fbs_generate
from youngbsde.pde import (
    CflError,
    PdeSpec,
    fd_dirichlet_solve,
    feynman_kac_cross_check,
    localization_error_experiment,
    neumann_fk_estimate,
    young_pde_table,
)


def smooth_field(scale=1.0):
    return AnalyticField(
        lambda t, x: scale * t * np.ones(t.shape),
        RegularityParams(tau=1.0, lam=1.0, p=2.5),
        dt_fn=lambda t, x: scale * np.ones(t.shape),
        name="time",
    )


def zero_f(t, x, u, w):
    return np.zeros_like(u)


def zero_g(u):
    return np.zeros((u.shape[0], 1))


def gaussian_bump(x):
    return np.exp(-np.sum(x**2, axis=1) / (2 * 0.15**2))


def heat_spec(halfwidth=3.0, sigma=np.sqrt(2.0), g=zero_g, f=zero_f, field=None, dim=1):
    return PdeSpec(
        halfwidth=halfwidth,
        dim=dim,
        horizon=0.25,
        terminal=gaussian_bump,
        sigma=sigma,
        drift=0.0,
        generator=f,
        coupling=g,
        fieldv=field or smooth_field(),
        name="heat",
    )


class TestFdSolve:
    def test_constant_terminal_preserved(self):
        spec = PdeSpec(
            halfwidth=1.0, dim=1, horizon=0.5,
            terminal=lambda x: np.full(x.shape[0], 2.0),
            sigma=1.0, drift=0.0, generator=zero_f, coupling=zero_g,
            fieldv=smooth_field(), name="const",
        )
        sol = fd_dirichlet_solve(spec, 32, 40)
        np.testing.assert_allclose(sol.u, 2.0, atol=1e-12)

    def test_heat_kernel_oracle(self):
        spec = heat_spec()
        sol = fd_dirichlet_solve(spec, 128, 384)
        want = heat_solution_gaussian_bump(0.0, spec.horizon)
        assert abs(sol.value_at(0.0, 0.0) - want) <= 1e-3

    def test_terminal_and_boundary_exact(self):
        spec = heat_spec(halfwidth=1.5)
        sol = fd_dirichlet_solve(spec, 16, 32)
        xs = sol.axes[0]
        np.testing.assert_array_equal(sol.u[-1], gaussian_bump(xs[:, None]))
        np.testing.assert_array_equal(sol.u[:, 0], np.full(17, gaussian_bump(xs[:1, None])[0]))
        np.testing.assert_array_equal(sol.u[:, -1], np.full(17, gaussian_bump(xs[-1:, None])[0]))

    def test_discrete_maximum_principle(self):
        spec = heat_spec(halfwidth=2.0)
        sol = fd_dirichlet_solve(spec, 64, 128)
        assert sol.u.min() >= -1e-12
        assert sol.u.max() <= 1.0 + 1e-12

    def test_integrating_factor_oracle(self):
        # g(u) = u with dt_eta = 1, small sigma: u = e^{T-t} * heat solution
        spec = heat_spec(
            sigma=0.2,
            g=lambda u: u[:, None],
            field=smooth_field(),
            halfwidth=2.0,
        )
        sol = fd_dirichlet_solve(spec, 256, 256)
        a = 0.5 * 0.2**2
        want = np.exp(spec.horizon) * heat_solution_gaussian_bump(0.3, spec.horizon, a=a)
        assert abs(sol.value_at(0.0, 0.3) - want) <= 5e-3

    def test_mesh_convergence(self):
        spec = heat_spec()
        vals = []
        for k in (1, 2, 4):
            sol = fd_dirichlet_solve(spec, 32 * k, 64 * k)
            vals.append(sol.value_at(0.0, 0.2))
        d1, d2 = abs(vals[1] - vals[0]), abs(vals[2] - vals[1])
        assert d2 <= 0.6 * d1

    def test_cfl_guard_explicit(self):
        spec = heat_spec()
        with pytest.raises(CflError, match="suggested|need dt"):
            fd_dirichlet_solve(spec, 4, 200, theta=0.0)

    def test_driver_without_derivative_rejected(self):
        rough = fbs_generate(
            HurstParams(h0=0.8, h=0.6), np.linspace(0, 0.25, 65),
            np.linspace(-3, 3, 33), seed=1,
        )
        with pytest.raises(ValueError, match="mollified or analytic-smooth"):
            heat_spec(field=rough)

    def test_ellipticity_floor(self):
        with pytest.raises(ValueError, match="ellipticity"):
            PdeSpec(
                halfwidth=1.0, dim=1, horizon=0.5, terminal=gaussian_bump,
                sigma=0.0, drift=0.0, generator=zero_f, coupling=zero_g,
                fieldv=smooth_field(), ellipticity=1e-4,
            )

    def test_continuity_in_driver(self):
        base = heat_spec(g=lambda u: u[:, None], sigma=1.0)
        u0 = fd_dirichlet_solve(base, 64, 128).value_at(0.0, 0.0)
        gaps = []
        for delta in (1e-2, 1e-3):
            pert = heat_spec(g=lambda u: u[:, None], sigma=1.0, field=smooth_field(1.0 + delta))
            gaps.append(abs(fd_dirichlet_solve(pert, 64, 128).value_at(0.0, 0.0) - u0))
        ratio = gaps[0] / gaps[1]
        assert 5 <= ratio <= 20  # O(delta) response

    def test_2d_heat_against_product_oracle(self):
        spec = heat_spec(halfwidth=2.0, dim=2)
        sol = fd_dirichlet_solve(spec, 48, 72)
        # product of two 1-D Gaussian convolutions
        want = heat_solution_gaussian_bump(0.0, spec.horizon) ** 2
        assert abs(sol.value_at(0.0, (0.0, 0.0)) - want) <= 5e-3


class TestYoungPdeTable:
    def test_smooth_driver_table_constant(self):
        spec = heat_spec(g=lambda u: u[:, None], sigma=0.5, halfwidth=3.0)
        table = young_pde_table(
            spec, smooth_field(), n_list=[3.0, 4.0], m_list=[4, 8],
            points=[(0.0, 0.0)], time_steps=48, cells_per_unit=16,
        )
        assert np.max(np.abs(table.values - table.values[0, 0, 0])) <= 1e-3
        assert table.converged

    def test_rough_driver_cauchy_in_m(self):
        base = fbs_generate(
            HurstParams(h0=0.9, h=0.6), np.linspace(0, 0.25, 129),
            np.linspace(-5, 5, 65), seed=7, p=2.05,
        )
        spec = heat_spec(g=lambda u: u[:, None], sigma=1.0, halfwidth=3.0, field=smooth_field())
        table = young_pde_table(
            spec, base, n_list=[3.0], m_list=[4, 8, 16],
            points=[(0.0, 0.0), (0.1, 0.4)], time_steps=64, cells_per_unit=16,
        )
        assert table.cauchy_m[1] < table.cauchy_m[0]


class TestCrossCheck:
    def test_zero_generator_both_sides_heat(self):
        spec = heat_spec(halfwidth=3.0, sigma=1.0)
        report = feynman_kac_cross_check(
            spec, points=[(0.0, 0.0), (0.05, 0.3)], n_paths=20_000, seed=3,
            time_steps=64, space_steps=192, mc_time_steps=64,
        )
        for row in report:
            assert row["pass"], row

    def test_spec_hash_mismatch(self):
        spec = heat_spec()
        with pytest.raises(ValueError, match="mismatched spec hash"):
            feynman_kac_cross_check(
                spec, points=[(0.0, 0.0)],
                mc_values={"spec_hash": "bogus", "values": [0.0], "se": [1.0]},
            )


class TestLocalizationError:
    def test_sqrt_generator_decay(self):
        def gen(t, x, u, w):
            return np.sqrt(np.abs(x[:, 0])) * np.sin(u)

        spec = PdeSpec(
            halfwidth=2.0, dim=1, horizon=0.25,
            terminal=lambda x: np.cos(x[:, 0]),
            sigma=1.0, drift=0.0, generator=gen, coupling=zero_g,
            fieldv=smooth_field(), name="sqrt-gen",
        )
        out = localization_error_experiment(
            spec, n_list=[2.0, 3.0], points=[(0.0, 0.0), (0.1, 0.5)],
            n_max=4.5, time_steps=48, cells_per_unit=16,
        )
        rows = out["rows"]
        assert rows[1]["max_diff"] < rows[0]["max_diff"]
        assert out["slope"] < 0


class TestNeumann:
    def test_unit_terminal_zero_driver(self):
        field = AnalyticField(
            lambda t, x: np.zeros(t.shape), RegularityParams(tau=1.0, lam=1.0, p=2.5),
            dt_fn=lambda t, x: np.zeros(t.shape), name="zero",
        )
        est, se = neumann_fk_estimate(
            lambda x: np.ones_like(x), field, (0.0, 1.0), (0.0, 0.5),
            n_paths=500, seed=1, n_steps=64,
        )
        assert est == pytest.approx(1.0, abs=1e-12)
        assert se == pytest.approx(0.0, abs=1e-12)

    def test_space_free_smooth_driver(self):
        # B(t, x) = t: the integral is T - t0 exactly
        field = smooth_field()
        field.horizon = 1.0
        est, _ = neumann_fk_estimate(
            lambda x: np.ones_like(x), field, (0.0, 1.0), (0.25, 0.5),
            n_paths=400, seed=2, n_steps=64,
        )
        assert est == pytest.approx(np.exp(0.75), rel=1e-10)

    def test_zero_driver_matches_occupation_quadrature(self):
        field = AnalyticField(
            lambda t, x: np.zeros(t.shape), RegularityParams(tau=1.0, lam=1.0, p=2.5),
            dt_fn=lambda t, x: np.zeros(t.shape), name="zero",
        )
        field.horizon = 1.0
        h = lambda x: np.cos(np.pi * x)
        est, se = neumann_fk_estimate(h, field, (0.0, 1.0), (0.0, 0.3), n_paths=40_000, seed=3, n_steps=512)
        want = reflected_bm_expectation(h, 0.3, 1.0, 0.0, 1.0)
        assert abs(est - want) <= 3 * se + 2e-3


class TestExport:
    def test_save_solution_csv(self, tmp_path):
        from youngbsde.pde import save_solution

        spec = heat_spec(halfwidth=1.0)
        sol = fd_dirichlet_solve(spec, 4, 8)
        save_solution(sol, tmp_path / "u", spec=spec)
        lines = (tmp_path / "u.csv").read_text().splitlines()
        assert lines[0] == "t,x1,u"
        assert len(lines) == 1 + 5 * 9
