"""Tests for smixs.model."""
import math

import numpy as np
from numpy.testing import assert_allclose, assert_array_equal
import pytest

import oracles
from helpers import em_instance, fit_with_retries
from smixs import band
from smixs.errors import (
    DegenerateWeight,
    DimensionMismatch,
    EmptyCluster,
    NonPositiveVariance,
)
from smixs.initialization import kmeans_init
from smixs.model import (
    SIGMA2_FLOOR,
    Dataset,
    FitConfig,
    MixtureParams,
    e_step,
    fit_em,
    log_density,
    m_step_mu,
    m_step_pi,
    m_step_sigma2,
    observed_loglik,
    penalized_expectation,
)


def _params(pi, mu, sigma2, alpha=None):
    mu = np.atleast_2d(np.asarray(mu, dtype=float))
    c = mu.shape[0]
    return MixtureParams(
        pi=np.asarray(pi, dtype=float),
        mu=mu,
        sigma2=np.asarray(sigma2, dtype=float),
        alpha=np.zeros(c) if alpha is None else np.asarray(alpha, dtype=float),
    )


GMM = FitConfig(mode="gmm", alpha_mode="fixed", alpha_fixed=0.0)


class TestDataset:
    def test_shapes(self):
        d = Dataset(y=np.zeros((4, 3)), t=[0.0, 1.0, 2.0])
        assert (d.n, d.p) == (4, 3)

    def test_time_mismatch(self):
        with pytest.raises(DimensionMismatch):
            Dataset(y=np.zeros((4, 3)), t=[0.0, 1.0])

    def test_non_finite(self):
        y = np.zeros((2, 3))
        y[1, 1] = np.nan
        with pytest.raises(ValueError):
            Dataset(y=y, t=[0.0, 1.0, 2.0])

    def test_labels_length(self):
        with pytest.raises(DimensionMismatch):
            Dataset(y=np.zeros((2, 3)), t=[0.0, 1.0, 2.0], labels=[0])


@pytest.mark.parametrize(
    "resid, expected",
    ((0.0, -0.5 * math.log(2 * math.pi)), (1.0, -0.5 * math.log(2 * math.pi) - 0.5)),
)
def test_log_density_fixtures(resid, expected):
    assert log_density([resid], [0.0], 1.0) == pytest.approx(expected, rel=1e-15)
    assert log_density([0.0], [0.0], 1.0) == pytest.approx(-0.918939, abs=1e-6)


@pytest.mark.parametrize("sigma2", (0.0, -1.0, np.nan))
def test_log_density_rejects_bad_variance(sigma2):
    with pytest.raises(NonPositiveVariance):
        log_density([0.0], [0.0], sigma2)


class TestEStep:
    def test_single_cluster(self):
        d = Dataset(y=np.random.default_rng(0).normal(size=(6, 4)), t=np.arange(4.0))
        assert_array_equal(e_step(d, _params([1.0], np.zeros(4), [1.0])), np.ones((6, 1)))

    def test_equidistant_point(self):
        d = Dataset(y=np.zeros((1, 3)), t=np.arange(3.0))
        resp = e_step(d, _params([0.5, 0.5], [np.ones(3), -np.ones(3)], [1.0, 1.0]))
        assert_allclose(resp, [[0.5, 0.5]], rtol=1e-15)

    def test_far_closer_to_first_mean(self):
        # distance ratio: 0 vs 10 sigma along one axis
        d = Dataset(y=np.zeros((1, 3)), t=np.arange(3.0))
        resp = e_step(d, _params([0.5, 0.5], [np.zeros(3), [10.0, 0.0, 0.0]], [1.0, 1.0]))
        assert resp[0, 0] > 0.999
        assert resp[0, 0] == pytest.approx(1.0 / (1.0 + math.exp(-50.0)), rel=1e-15)

    def test_no_overflow_for_long_curves(self):
        rng = np.random.default_rng(1)
        d = Dataset(y=rng.normal(size=(5, 5000)) * 100.0, t=np.arange(5000.0))
        resp = e_step(d, _params([0.3, 0.7], [np.zeros(5000), np.ones(5000)], [1e-3, 2e-3]))
        assert np.all(np.isfinite(resp))
        assert_allclose(resp.sum(axis=1), 1.0, rtol=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_rows_sum_to_one(self, seed):
        d, c, init, _ = em_instance(seed)
        resp = e_step(d, init)
        assert np.all(resp >= 0)
        assert_allclose(resp.sum(axis=1), 1.0, atol=1e-10)


@pytest.mark.parametrize(
    "resp, expected",
    (
        ([[1, 0], [0, 1], [1, 0]], [2 / 3, 1 / 3]),
        ([[0.5, 0.5]] * 4, [0.5, 0.5]),
        ([[1.0]] * 3, [1.0]),
    ),
)
def test_m_step_pi(resp, expected):
    assert_allclose(m_step_pi(np.array(resp, dtype=float)), expected, rtol=1e-15)


class TestMStepMu:
    def test_alpha_zero_is_weighted_mean(self):
        rng = np.random.default_rng(2)
        d = Dataset(y=rng.normal(size=(8, 6)), t=np.arange(6.0))
        z = rng.uniform(size=8)
        bp = band.band_pair_from_times(d.t)
        assert_allclose(m_step_mu(d, z, 0.0, bp).mu, z @ d.y / z.sum(), rtol=1e-15)

    def test_single_sample_is_smoothing_spline(self):
        rng = np.random.default_rng(3)
        t = np.cumsum(rng.uniform(0.5, 1.5, 12))
        y = rng.normal(size=(1, 12))
        d = Dataset(y=y, t=t)
        bp = band.band_pair_from_times(t)
        ref = oracles.spline_fit(t, 1.0, 4.0, y[0])
        assert_allclose(m_step_mu(d, [1.0], 4.0, bp).mu, ref.astype(float), rtol=1e-10)

    def test_random_instance_matches_dense(self):
        rng = np.random.default_rng(4)
        d = Dataset(y=rng.normal(size=(10, 20)), t=np.arange(20.0))
        z = rng.uniform(size=10)
        bp = band.band_pair_from_times(d.t)
        ref = oracles.spline_fit(d.t, z.sum(), 30.0, z @ d.y)
        assert oracles.rel_err(m_step_mu(d, z, 30.0, bp).mu, ref) <= 1e-8

    def test_dense_path_matches(self):
        rng = np.random.default_rng(5)
        d = Dataset(y=rng.normal(size=(10, 20)), t=np.arange(20.0))
        z = rng.uniform(size=10)
        bp = band.band_pair_from_times(d.t)
        gmat = band.dense_roughness_matrix(bp)
        assert_allclose(m_step_mu(d, z, 30.0, bp, gmat).mu, m_step_mu(d, z, 30.0, bp).mu,
                        rtol=1e-8, atol=1e-12)

    def test_degenerate_weight(self):
        d = Dataset(y=np.ones((3, 4)), t=np.arange(4.0))
        with pytest.raises(DegenerateWeight):
            m_step_mu(d, np.zeros(3), 1.0, band.band_pair_from_times(d.t))


class TestMStepSigma2:
    def test_two_points_about_given_mean(self):
        d = Dataset(y=np.array([[0.0, 0.0, 0.0], [2.0, 2.0, 2.0]]), t=np.arange(3.0))
        bp = band.band_pair_from_times(d.t)
        assert m_step_sigma2(d, [1.0, 1.0], np.ones(3), 0.0, bp) == pytest.approx(1.0)

    def test_alpha_zero_corrected_equals_uncorrected(self):
        rng = np.random.default_rng(6)
        d = Dataset(y=rng.normal(size=(5, 7)), t=np.arange(7.0))
        bp = band.band_pair_from_times(d.t)
        z = rng.uniform(size=5)
        mu = rng.normal(size=7)
        assert (m_step_sigma2(d, z, mu, 0.0, bp, corrected=True)
                == m_step_sigma2(d, z, mu, 0.0, bp, corrected=False))

    def test_penalty_correction_fixture(self):
        mu = np.array([0.0, 1.0, 0.0])
        d = Dataset(y=mu[None, :], t=np.arange(3.0))
        bp = band.band_pair_from_times(d.t)
        assert m_step_sigma2(d, [1.0], mu, 1.0, bp, corrected=True) == pytest.approx(2.0, rel=1e-14)
        assert m_step_sigma2(d, [1.0], mu, 1.0, bp, corrected=False) == SIGMA2_FLOOR


class TestPenalizedExpectation:
    def test_single_point(self):
        d = Dataset(y=np.zeros((1, 3)), t=np.arange(3.0))
        params = _params([1.0], np.zeros(3), [1.0])
        value = penalized_expectation(d, params, np.ones((1, 1)), band.band_pair_from_times(d.t))
        assert value == pytest.approx(-1.5 * math.log(2 * math.pi), rel=1e-15)

    def test_affine_mean_has_no_penalty(self):
        rng = np.random.default_rng(7)
        d = Dataset(y=rng.normal(size=(4, 6)), t=np.arange(6.0))
        bp = band.band_pair_from_times(d.t)
        params = _params([1.0], 0.5 * d.t - 1.0, [0.7], alpha=[1e4])
        resp = np.ones((4, 1))
        unpenalized = penalized_expectation(d, _params([1.0], 0.5 * d.t - 1.0, [0.7]), resp, bp)
        assert penalized_expectation(d, params, resp, bp) == pytest.approx(unpenalized, rel=1e-10)

    @pytest.mark.parametrize("seed", range(3))
    def test_matches_naive_summation(self, seed):
        rng = np.random.default_rng(seed)
        n, p, c = 6, 5, 3
        d = Dataset(y=rng.normal(size=(n, p)), t=np.cumsum(rng.uniform(0.5, 1.5, p)))
        resp = rng.dirichlet(np.ones(c), size=n)
        params = _params(rng.dirichlet(np.ones(c)), rng.normal(size=(c, p)),
                         rng.uniform(0.5, 2, c), alpha=rng.uniform(1, 10, c))
        gmat = oracles.roughness_matrix(d.t).astype(float)
        ref = oracles.naive_penalized_expectation(d.y, params.pi, params.mu, params.sigma2,
                                                  params.alpha, resp, gmat)
        value = penalized_expectation(d, params, resp, band.band_pair_from_times(d.t))
        assert value == pytest.approx(ref, rel=1e-10)


class TestFitEm:
    def test_two_flat_clusters(self):
        rng = np.random.default_rng(8)
        y = np.vstack([rng.normal(0.0, 0.1, (10, 5)), rng.normal(5.0, 0.1, (10, 5))])
        d = Dataset(y=y, t=np.arange(5.0))
        init = kmeans_init(d, 2, 0)
        fit = fit_em(d, 2, GMM, init)
        order = np.argsort(fit.params.mu[:, 0])
        assert_allclose(fit.params.mu[order], [y[:10].mean(0), y[10:].mean(0)], rtol=1e-12)
        assert np.all(np.abs(fit.resp - np.round(fit.resp)) < 1e-6)
        assert fit.converged

    def test_single_cluster_one_step(self):
        rng = np.random.default_rng(9)
        d = Dataset(y=rng.normal(size=(12, 6)), t=np.arange(6.0))
        fit = fit_em(d, 1, GMM, kmeans_init(d, 1, 0))
        assert_allclose(fit.params.mu[0], d.y.mean(axis=0), rtol=1e-14)
        assert fit.params.sigma2[0] == pytest.approx(np.mean((d.y - d.y.mean(0)) ** 2), rel=1e-14)
        assert fit.iterations == 2
        assert fit.objective_trace[0] == fit.objective_trace[1]

    @pytest.mark.parametrize("seed", range(10))
    def test_gmm_equals_smixs_with_zero_alpha(self, seed):
        d, c, init, _ = em_instance(seed)
        a = fit_em(d, c, GMM, init)
        b = fit_em(d, c, FitConfig(alpha_mode="fixed", alpha_fixed=0.0), init)
        assert_allclose(a.objective_trace, b.objective_trace, rtol=1e-12)
        assert_allclose(a.params.mu, b.params.mu, rtol=1e-12)
        assert_allclose(a.resp, b.resp, rtol=1e-12, atol=1e-12)
        assert a.iterations == b.iterations

    @pytest.mark.parametrize("seed", range(10))
    def test_objective_is_monotone_with_corrected_variance(self, seed):
        d, c, init, rng = em_instance(seed)
        alpha = float(10 ** rng.uniform(0, 4))
        fit, _ = fit_with_retries(d, c, FitConfig(alpha_mode="fixed", alpha_fixed=alpha), seed)
        tr = fit.objective_trace
        assert np.all(np.diff(tr) >= -1e-9 * (1 + np.abs(tr[:-1])))

    def test_trace_bookkeeping(self):
        d, c, init, _ = em_instance(3)
        fit = fit_em(d, c, FitConfig(max_iter=15), init)
        assert len(fit.objective_trace) == fit.iterations
        assert len(fit.expectation_trace) == fit.iterations
        assert fit.alpha_trace.shape == (fit.iterations, c)
        assert np.all((fit.alpha_trace >= 1.0) & (fit.alpha_trace <= 1e6))
        assert_allclose(fit.params.pi.sum(), 1.0, atol=1e-10)
        if fit.converged:
            tr = fit.objective_trace
            assert abs(tr[-1] - tr[-2]) < 1e-8 * (1 + abs(tr[-1]))

    def test_loglik_matches_final_params(self):
        d, c, init, _ = em_instance(4)
        fit = fit_em(d, c, FitConfig(max_iter=20), init)
        assert fit.loglik == pytest.approx(observed_loglik(d, fit.params), rel=1e-13)

    def test_permuting_init_permutes_result(self):
        d, c, init, _ = em_instance(5, c_max=4)
        while c < 2:
            d, c, init, _ = em_instance(int(d.n) + 1000, c_max=4)
        order = np.arange(c)[::-1]
        cfg = FitConfig(alpha_mode="fixed", alpha_fixed=10.0, max_iter=50)
        a = fit_em(d, c, cfg, init)
        b = fit_em(d, c, cfg, init.permute(order))
        assert_allclose(b.params.mu, a.params.mu[order], rtol=1e-10, atol=1e-12)
        assert_allclose(b.resp, a.resp[:, order], atol=1e-10)

    def test_dense_solver_matches_reinsch(self):
        d, c, init, _ = em_instance(6)
        cfg = FitConfig(alpha_mode="fixed", alpha_fixed=5.0, max_iter=30)
        a = fit_em(d, c, cfg, init)
        b = fit_em(d, c, cfg.with_(solver="dense"), init)
        assert_allclose(a.params.mu, b.params.mu, rtol=1e-6, atol=1e-8)

    def test_empty_cluster_is_reported(self):
        y = np.zeros((4, 3))
        y[2:] = 100.0
        d = Dataset(y=y, t=np.arange(3.0))
        init = _params([0.4, 0.3, 0.3], [np.zeros(3), np.full(3, 100.0), np.full(3, 1e6)],
                       [1.0, 1.0, 1.0])
        with pytest.raises(EmptyCluster) as info:
            fit_em(d, 3, GMM, init)
        assert info.value.k == 2

    def test_init_cluster_count_mismatch(self):
        d, c, init, _ = em_instance(0)
        with pytest.raises(DimensionMismatch):
            fit_em(d, c + 1, GMM, init)


@pytest.mark.parametrize(
    "kwargs",
    ({"mode": "x"}, {"alpha_mode": "cv"}, {"variance": "v"}, {"max_iter": 0}, {"alpha_fixed": -1.0}),
)
def test_fit_config_validation(kwargs):
    with pytest.raises(ValueError):
        FitConfig(**kwargs)
