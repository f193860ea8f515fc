import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import latticerd as lrd
from latticerd.diagnostics import (
    ProbeSet,
    aic_bic,
    apply_probes,
    benjamini_hochberg,
    empirical_second_order,
    gaussianity_decision,
    model_selection,
    random_probes,
    shapiro_wilk,
)
from latticerd.errors import ConfigError, DegenerateSample, DomainError, SizeError
from latticerd.field_model import CovarianceKernel
from latticerd.sampler import sample_field


def white_batch(T, side=16, var=1.0, mean=0.0, seed=0):
    f = lrd.build_field(
        (side, side), np.ones(side * side, int), [(mean, CovarianceKernel("white", var))]
    )
    return sample_field(f, T, seed=seed)


def chi_square_batch(T, side=16, seed=0):
    base = white_batch(T, side=side, seed=seed)
    fields = tuple(
        type(fa)(lattice=fa.lattice, values=fa.values**2) for fa in base.fields
    )
    return type(base)(fields=fields, seed=base.seed, model=base.model)


class TestProbes:
    def test_single_site_probe_reads_site(self):
        batch = white_batch(5, side=4, seed=1)
        probes = ProbeSet(supports=np.array([[7]]), weights=np.array([[1.0]]))
        y = apply_probes(probes, batch)
        expected = np.array([fa.values[7] for fa in batch.fields])
        assert np.array_equal(y[:, 0], expected)

    def test_probe_determinism(self):
        batch = white_batch(4, seed=2)
        p1, y1 = random_probes(batch, 10, probe_support_size=8, seed=5)
        p2, y2 = random_probes(batch, 10, probe_support_size=8, seed=5)
        assert np.array_equal(p1.supports, p2.supports)
        assert np.array_equal(p1.weights, p2.weights)
        assert np.array_equal(y1, y2)

    def test_support_exceeds_lattice(self):
        batch = white_batch(4, side=4)
        with pytest.raises(ConfigError):
            random_probes(batch, 3, probe_support_size=17, seed=0)

    def test_gaussian_null_rejection_rate(self):
        # probe responses of a Gaussian batch are exactly Gaussian; raw
        # SW rejections at alpha should sit near alpha
        batch = white_batch(200, side=16, seed=7)
        _, responses = random_probes(batch, 200, probe_support_size=16, seed=3)
        rejections = 0
        for j in range(responses.shape[1]):
            _, p = shapiro_wilk(responses[:, j])
            rejections += p <= 0.05
        rate = rejections / responses.shape[1]
        # binomial 4.5-sigma band around 0.05 with J=200
        assert rate <= 0.05 + 4.5 * math.sqrt(0.05 * 0.95 / 200)


class TestShapiroWilk:
    def test_theoretical_quantiles_high_W(self):
        from scipy.stats import norm

        q = norm.ppf((np.arange(1, 51) - 0.375) / (50 + 0.25))
        W, p = shapiro_wilk(q)
        assert W >= 0.99

    def test_null_calibration(self):
        rng = np.random.default_rng(42)
        rejections = sum(
            shapiro_wilk(rng.standard_normal(100))[1] <= 0.05 for _ in range(2000)
        )
        rate = rejections / 2000
        se = math.sqrt(0.05 * 0.95 / 2000)
        assert abs(rate - 0.05) <= 3 * se

    def test_power_against_uniform(self):
        rng = np.random.default_rng(43)
        rejections = sum(
            shapiro_wilk(rng.uniform(size=200))[1] <= 0.05 for _ in range(1000)
        )
        assert rejections / 1000 >= 0.95

    def test_errors(self):
        with pytest.raises(SizeError):
            shapiro_wilk([1.0, 2.0])
        with pytest.raises(SizeError):
            shapiro_wilk(np.zeros(5001))
        with pytest.raises(DegenerateSample):
            shapiro_wilk([1.0, 1.0, 1.0, 1.0])


class TestBenjaminiHochberg:
    def test_hand_example(self):
        adj, rej = benjamini_hochberg([0.01, 0.02, 0.04], 0.05)
        assert np.allclose(adj, [0.03, 0.03, 0.04])
        assert rej.all()

    def test_all_ones_none_rejected(self):
        adj, rej = benjamini_hochberg(np.ones(10), 0.05)
        assert not rej.any()
        assert np.all(adj == 1.0)

    def test_single_p_identity(self):
        adj, _ = benjamini_hochberg([0.3], 0.05)
        assert adj[0] == 0.3

    def test_domain_guard(self):
        with pytest.raises(DomainError):
            benjamini_hochberg([0.5, 1.2], 0.05)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(min_value=0.0, max_value=1.0), min_size=1, max_size=40))
    def test_adjusted_dominates_raw_and_is_monotone(self, ps):
        adj, _ = benjamini_hochberg(ps, 0.05)
        p = np.asarray(ps)
        assert (adj >= p - 1e-15).all()
        order = np.argsort(p, kind="stable")
        assert (np.diff(adj[order]) >= -1e-15).all()


class TestGaussianityDecision:
    def test_gaussian_batch_consistent(self):
        batch = white_batch(100, side=16, seed=11)
        report = gaussianity_decision(batch, J=200, probe_support_size=8, seed=4)
        assert report.decision == "gaussian_consistent"
        assert report.pi_hat == len([p for p in report.p_bh if p <= report.alpha]) / report.J

    def test_chi_square_batch_rejected(self):
        batch = chi_square_batch(100, side=16, seed=12)
        report = gaussianity_decision(batch, J=200, probe_support_size=8, seed=4)
        assert report.decision == "gaussian_rejected"

    def test_tiny_probe_count(self):
        batch = white_batch(50, side=8, seed=1)
        report = gaussianity_decision(batch, J=1, probe_support_size=4, seed=0)
        assert report.pi_hat in (0.0, 1.0)

    def test_needs_three_realizations(self):
        batch = white_batch(2, side=8)
        with pytest.raises(SizeError):
            gaussianity_decision(batch, J=4, seed=0)


class TestSecondOrder:
    def test_constant_batch(self):
        f = lrd.build_field((6, 6), np.ones(36, int), [(3.0, CovarianceKernel("white", 0.0))])
        batch = sample_field(f, 4, seed=0)
        rep = empirical_second_order(batch)
        assert np.allclose(rep.mean_field.values, 3.0)
        assert np.allclose(rep.autocov, 0.0)

    def test_white_moments_and_radial_delta(self):
        batch = white_batch(500, side=16, seed=9)
        rep = empirical_second_order(batch)
        c = rep.autocov
        se0 = math.sqrt(2.0 / (500 * 256))
        assert abs(c[0, 0] - 1.0) <= 4 * se0
        off = c.copy()
        off[0, 0] = 0.0
        assert np.abs(off).max() <= 4 / math.sqrt(500 * 256) + 0.01
        l0 = rep.radial_profile[0]
        assert l0[0] == 0 and abs(l0[1] - 1.0) <= 4 * se0

    def test_lag0_equals_average_site_variance(self):
        batch = white_batch(50, side=8, seed=3)
        rep = empirical_second_order(batch)
        data = batch.stack()
        per_site_var = ((data - data.mean(axis=0)) ** 2).mean(axis=0)
        assert rep.autocov.ravel()[0] == pytest.approx(per_site_var.mean(), rel=1e-9)

    def test_wiener_khinchin_against_brute_force(self):
        batch = white_batch(8, side=16, seed=21)
        rep = empirical_second_order(batch)
        data = batch.stack().reshape(8, 16, 16)
        mu = data.mean(axis=0)
        xt = data - mu[None]
        direct = np.zeros((16, 16))
        for h0 in range(16):
            for h1 in range(16):
                direct[h0, h1] = np.mean(
                    [x * np.roll(np.roll(x, -h0, 0), -h1, 1) for x in xt]
                )
        assert np.abs(direct - rep.autocov).max() <= 1e-8 * max(1.0, rep.autocov[0, 0])

    def test_isotropic_decay(self):
        k = CovarianceKernel("exponential", 1.0, length_scale=2.0)
        f = lrd.build_field((24, 24), np.ones(576, int), [(0.0, k)], spectrum_method="bccb")
        batch = sample_field(f, 300, seed=5)
        rep = empirical_second_order(batch)
        vals = [rep.radial_profile[l][1] for l in range(4)]
        assert all(a > b for a, b in zip(vals, vals[1:]))
        assert rep.isotropy_flag

    def test_needs_two_realizations(self):
        batch = white_batch(1, side=8)
        with pytest.raises(SizeError):
            empirical_second_order(batch)

    def test_nonstationary_mean_flagged(self):
        side = 16
        labels = np.ones((side, side), int)
        labels[:, 8:] = 2
        f = lrd.build_field(
            (side, side),
            labels.ravel(),
            [(0.0, CovarianceKernel("white", 0.01)), (10.0, CovarianceKernel("white", 0.01))],
        )
        batch = sample_field(f, 30, seed=2)
        rep = empirical_second_order(batch)
        assert not rep.stationarity_flag


class TestModelSelection:
    def test_aic_bic_identity(self):
        aic, bic = aic_bic(-100.0, 2, 10)
        assert aic == 204.0
        assert bic == pytest.approx(200 + 2 * math.log(10), abs=1e-9)

    @settings(max_examples=40, deadline=None)
    @given(
        st.floats(min_value=-1e6, max_value=1e6),
        st.integers(min_value=0, max_value=500),
        st.integers(min_value=1, max_value=10_000),
    )
    def test_aic_bic_identity_property(self, ll, q, n_eff):
        aic, bic = aic_bic(ll, q, n_eff)
        assert aic == pytest.approx(-2 * ll + 2 * q, rel=1e-12, abs=1e-9)
        assert bic == pytest.approx(-2 * ll + q * math.log(n_eff), rel=1e-12, abs=1e-9)

    def test_two_region_data_prefers_piecewise(self):
        side = 32
        labels = np.ones((side, side), int)
        labels[:, 16:] = 2
        f = lrd.build_field(
            (side, side),
            labels.ravel(),
            [(0.0, CovarianceKernel("white", 1.0)), (4.0, CovarianceKernel("exponential", 9.0, length_scale=2.0))],
            spectrum_method="bccb",
        )
        batch = sample_field(f, 8, seed=13)
        res = model_selection(batch, tile_size=8, K_range=(1, 2, 3), seed=0)
        pw = res.score("piecewise")
        glob = res.score("global_gaussian_field")
        assert pw.aic <= glob.aic
        assert pw.bic <= glob.bic

    def test_k1_data_global_equals_piecewise(self):
        batch = white_batch(10, side=16, seed=19)
        res = model_selection(batch, tile_size=8, K_range=(1, 2), seed=0)
        pw = res.score("piecewise")
        glob = res.score("global_gaussian_field")
        assert pw.extras["K"] == 1
        assert abs(pw.log_L - glob.log_L) <= 1e-6 * abs(glob.log_L)

    def test_nested_fit_never_loses_likelihood(self):
        from latticerd.tiling import pooled_tile_loglik, tile_partition

        batch = white_batch(6, side=16, seed=23)
        grid = tile_partition(batch.fields[0].lattice, 8)
        ones = np.ones(grid.N_tau, dtype=np.int64)
        split = ones.copy()
        split[: grid.N_tau // 2] = 2
        ll1, _, _ = pooled_tile_loglik(batch, grid, ones)
        ll2, _, _ = pooled_tile_loglik(batch, grid, split)
        assert ll2 >= ll1 - 1e-9 * abs(ll1)

    def test_poisson_excluded_on_continuous_data(self):
        batch = white_batch(5, side=8, seed=3)
        res = model_selection(batch, tile_size=4, K_range=(1,), seed=0)
        assert any(m == "poisson_iid" for m, _ in res.excluded)

    def test_poisson_scored_on_count_data(self, rng):
        f = lrd.build_field((8, 8), np.ones(64, int), [(0.0, CovarianceKernel("white", 1.0))])
        fields = []
        from latticerd.distortion import FieldArray

        for t in range(5):
            counts = rng.poisson(3.0, size=64).astype(float)
            fields.append(FieldArray(lattice=f.lattice, values=counts))
        from latticerd.sampler import SampleBatch

        batch = SampleBatch(fields=tuple(fields), seed=0, model=f)
        res = model_selection(batch, tile_size=4, K_range=(1,), seed=0)
        score = res.score("poisson_iid")
        assert score.q == 1
