import math

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.stats import norm

from conftest import field_from_spectra, two_region_gap_model
from latticerd.bounds import (
    BoundConfig,
    TiltedDensityModel,
    achievability_bound,
    allocate_codebooks,
    ball_probability,
    bound_curve,
    converse_bound,
    tilted_density_sample,
    tilted_density_samples,
)
from latticerd.errors import BudgetError, ConfigError
from latticerd.waterfill import solve_water_level

LN2 = math.log(2.0)


class _StubRng:
    def __init__(self, values):
        self.values = np.asarray(values, dtype=float)

    def standard_normal(self, size):
        return self.values[:size]


class TestTiltedDensity:
    def test_no_active_modes_constant(self):
        f = field_from_spectra([[1.0, 1.0]])
        sol = solve_water_level(f, 0.9)  # theta above... below 1? 0.9 < 1
        # all modes active here; build the degenerate case by hand instead
        model = TiltedDensityModel(theta_star=1.0, active_modes=(), constant_part=0.0)
        s = tilted_density_samples(model, 50, seed=0)
        assert np.all(s == 0.0)
        assert sol.rate_pw > 0

    def test_single_mode_one_sigma_draw(self):
        # lam=4, theta=1, Y=2 (z=1): fluctuation cancels, draw = log(4)/2
        model = TiltedDensityModel(
            theta_star=1.0, active_modes=((1, 0, 4.0),), constant_part=0.5 * math.log(4.0)
        )
        val = tilted_density_sample(model, _StubRng([1.0]))
        assert val == pytest.approx(0.5 * math.log(4.0), rel=1e-15)

    def test_mean_and_variance_match_solution(self):
        f = field_from_spectra([[1.0, 4.0], [2.0, 0.3, 0.1]])
        D = 0.5
        sol = solve_water_level(f, D)
        model = TiltedDensityModel.from_field(f, sol)
        n = f.lattice.n
        s = tilted_density_samples(model, 100_000, seed=7)
        se_mean = s.std() / math.sqrt(s.size)
        assert abs(s.mean() - n * sol.rate_pw) <= 3 * se_mean
        v = s.var()
        centered = (s - s.mean()) ** 2
        se_var = centered.std() / math.sqrt(s.size)
        assert abs(v - sol.dispersion) <= 3 * se_var

    def test_active_set_matches_solution(self):
        f = field_from_spectra([[1.0, 4.0], [2.0, 0.3, 0.1]])
        sol = solve_water_level(f, 0.5)
        model = TiltedDensityModel.from_field(f, sol)
        assert model.n_active == sum(a.active_count for a in sol.per_region)
        assert model.constant_part == pytest.approx(
            sum(
                0.5 * math.log(lam / sol.theta_star)
                for _, _, lam in model.active_modes
            )
        )


class TestConverse:
    def test_degenerate_density_hand_value(self):
        f = field_from_spectra([[1.0, 1.0]])
        samples = np.zeros(20_000)  # j identically zero
        pts = converse_bound(
            f,
            0.5,
            log_M_grid=[-1.0],
            gamma_policy=[0.5],
            samples=samples,
        )
        assert pts[0].bound == pytest.approx(1.0 - math.exp(-0.5), rel=1e-12)

    def test_clamps_to_zero_beyond_sample_range(self):
        f = field_from_spectra([[1.0, 4.0]])
        sol = solve_water_level(f, 0.5)
        model = TiltedDensityModel.from_field(f, sol)
        samples = tilted_density_samples(model, 20_000, seed=3)
        big = samples.max() + 10.0
        pts = converse_bound(f, 0.5, log_M_grid=[big], solution=sol, samples=samples)
        assert pts[0].bound == 0.0

    def test_monotone_in_M_fixed_gamma(self):
        f = field_from_spectra([[1.0, 4.0]])
        sol = solve_water_level(f, 0.5)
        model = TiltedDensityModel.from_field(f, sol)
        samples = tilted_density_samples(model, 20_000, seed=3)
        grid = np.linspace(-2.0, 4.0, 13)
        pts = converse_bound(
            f, 0.5, log_M_grid=grid, gamma_policy=[1.0], solution=sol, samples=samples
        )
        bounds = [p.bound for p in pts]
        assert all(b0 >= b1 - 1e-12 for b0, b1 in zip(bounds, bounds[1:]))
        assert all(0.0 <= b <= 1.0 for b in bounds)

    def test_requires_minimum_budget(self):
        f = field_from_spectra([[1.0, 4.0]])
        with pytest.raises(ConfigError):
            converse_bound(f, 0.5, M_grid=[4], mc_samples=100)


class TestBallProbability:
    def test_chi_square_oracle(self):
        # lam=1, theta=0.5, y=0, D_r=0.5: Pr{chi2_1 <= 1} by quadrature
        oracle, _ = quad(
            lambda u: math.exp(-u * u / 2.0) / math.sqrt(2 * math.pi), -1.0, 1.0
        )
        p, se = ball_probability(
            np.array([0.0]), np.array([1.0]), 0.5, 0.5, 200_000, seed=5
        )
        assert abs(p - oracle) <= 3 * se

    def test_degenerate_reproduction(self):
        # theta >= all lam: deterministic codeword 0
        y = np.array([0.3, -0.4])
        spec = np.array([0.5, 0.5])
        p1, _ = ball_probability(y, spec, 0.9, 1.0, 1000, seed=0)
        assert p1 == 1.0  # (0.09 + 0.16)/2 = 0.125 <= 1.0
        p0, _ = ball_probability(y, spec, 0.9, 0.05, 1000, seed=0)
        assert p0 == 0.0

    def test_zero_distortion_ball(self):
        p, _ = ball_probability(np.array([0.0]), np.array([1.0]), 0.5, 0.0, 1000, seed=0)
        assert p == 0.0

    def test_inner_sample_floor(self):
        with pytest.raises(ConfigError):
            ball_probability(np.array([0.0]), np.array([1.0]), 0.5, 0.5, 99, seed=0)


class TestAchievability:
    def test_budget_guard(self):
        f = field_from_spectra([[1.0, 4.0]])
        with pytest.raises(BudgetError):
            achievability_bound(f, 0.5, [2.0], [4], mc_samples=1000)

    def test_single_region_M1_is_failure_term(self):
        f = field_from_spectra([[1.0, 4.0]])
        sol = solve_water_level(f, 0.5)
        est = achievability_bound(
            f, 0.5, [sol.per_region[0].D_r], [1], mc_samples=40_000, seed=2, solution=sol
        )
        assert est.p_e == est.per_region[0].q
        assert est.per_region[0].regime == "exact"

    def test_monotone_in_codebook_size(self):
        f = field_from_spectra([[1.0, 4.0]])
        sol = solve_water_level(f, 0.5)
        d_alloc = [sol.per_region[0].D_r]
        vals = [
            achievability_bound(
                f, 0.5, d_alloc, [m], mc_samples=40_000, seed=2, solution=sol
            ).p_e
            for m in (1, 4, 16, 64)
        ]
        se = 3 * math.sqrt(0.25 / 40_000)
        assert all(a >= b - 3 * se for a, b in zip(vals, vals[1:]))
        assert all(0.0 <= v <= 1.0 for v in vals)

    def test_scalar_quadrature_oracle(self):
        # K=1, n=1, lam=1, theta=D=0.25, M=4: exact double integral
        f = field_from_spectra([[1.0]])
        sol = solve_water_level(f, 0.25)
        assert sol.theta_star == pytest.approx(0.25, rel=1e-9)
        sd = math.sqrt(0.75)

        def p_ball(x):
            return norm.cdf((x + 0.5) / sd) - norm.cdf((x - 0.5) / sd)

        oracle, _ = quad(lambda x: norm.pdf(x) * (1.0 - p_ball(x)) ** 4, -9, 9)
        est = achievability_bound(
            f, 0.25, [0.25], [4], mc_samples=200_000, seed=9, solution=sol
        )
        assert abs(est.p_e - oracle) <= 3 * est.se

    def test_plugin_regime_matches_exact(self):
        f = field_from_spectra([[1.0]])
        sol = solve_water_level(f, 0.25)
        exact = achievability_bound(
            f, 0.25, [0.25], [4], mc_samples=30_000, seed=9, solution=sol
        )
        plug = achievability_bound(
            f,
            0.25,
            [0.25],
            [4],
            mc_samples=30_000,
            inner_samples=600,
            seed=9,
            solution=sol,
            exact_cap=1,
        )
        assert plug.per_region[0].regime == "plugin"
        assert abs(plug.p_e - exact.p_e) <= 4 * (plug.se + exact.se) + 0.01

    def test_plugin_requires_inner_budget(self):
        f = field_from_spectra([[1.0]])
        sol = solve_water_level(f, 0.25)
        with pytest.raises(ConfigError):
            achievability_bound(
                f, 0.25, [0.25], [400], mc_samples=1000, inner_samples=100,
                seed=0, solution=sol, exact_cap=10,
            )

    def test_reproducible_given_seed(self):
        f = field_from_spectra([[1.0, 4.0], [2.0, 0.3]])
        sol = solve_water_level(f, 0.5)
        d_alloc = [a.D_r for a in sol.per_region]
        a = achievability_bound(f, 0.5, d_alloc, [4, 4], mc_samples=20_000, seed=5, solution=sol)
        b = achievability_bound(f, 0.5, d_alloc, [4, 4], mc_samples=20_000, seed=5, solution=sol)
        assert a.p_e == b.p_e and a.se == b.se


class TestAllocateCodebooks:
    def test_proportional_split(self):
        f = field_from_spectra([[4.0, 4.0], [4.0, 4.0]])
        sol = solve_water_level(f, 1.0)
        ms = allocate_codebooks(f, sol, 8.0)
        assert ms[0] == ms[1] == int(math.ceil(math.exp(4.0) - 1e-12))

    def test_zero_rate_regions_get_unit_codebooks(self):
        # region 2 sits entirely below the water level: no codebook share
        f = field_from_spectra([[4.0, 4.0], [0.1, 0.1]])
        sol = solve_water_level(f, 1.0)
        assert sol.per_region[1].R_r == 0.0
        ms = allocate_codebooks(f, sol, 6.0)
        assert ms[1] == 1 and ms[0] == int(math.ceil(math.exp(6.0) - 1e-12))


class TestBoundCurve:
    def test_white_sandwich_and_determinism(self):
        f = field_from_spectra([np.ones(4)])
        cfg = BoundConfig(mc_samples=20_000, seed=5, rate_tol_bits=0.01)
        pts = bound_curve([f], 0.25, 0.05, cfg)
        p = pts[0]
        assert p.rate_conv <= p.rate_approx <= p.rate_ach
        pts2 = bound_curve([f], 0.25, 0.05, cfg)
        assert pts2[0] == p

    def test_two_region_gap_model_structure(self):
        fields = [two_region_gap_model(8), two_region_gap_model(16)]
        cfg = BoundConfig(mc_samples=30_000, seed=11, rate_tol_bits=0.002)
        pts = bound_curve(fields, 0.28, 0.05, cfg)
        for p in pts:
            assert p.rate_conv <= p.rate_approx <= p.rate_ach
        # per-site envelope narrows with n
        assert pts[1].rate_ach - pts[1].rate_conv < pts[0].rate_ach - pts[0].rate_conv

    def test_approx_identity(self):
        # rate_approx is exactly R_pw + sqrt(V) Qinv(eps) / n per site
        from latticerd.waterfill import q_inverse

        f = two_region_gap_model(8)
        sol = solve_water_level(f, 0.28)
        cfg = BoundConfig(mc_samples=20_000, seed=1, rate_tol_bits=0.01)
        pts = bound_curve([f], 0.28, 0.05, cfg)
        n = f.lattice.n
        expected = (n * sol.rate_pw + math.sqrt(sol.dispersion) * q_inverse(0.05)) / n / LN2
        assert pts[0].rate_approx == pytest.approx(expected, rel=1e-12)
