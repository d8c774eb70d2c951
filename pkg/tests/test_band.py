"""Tests for smixs.band."""
import timeit

import numpy as np
from numpy.testing import assert_allclose, assert_array_equal
import pytest

import oracles
from smixs import band
from smixs.errors import (
    DegenerateWeight,
    DimensionMismatch,
    NonIncreasingKnots,
    NotPositiveDefinite,
    TooFewKnots,
)


def _random_knots(rng, p):
    return np.cumsum(rng.uniform(0.2, 2.0, size=p))


@pytest.mark.parametrize("t", ([0.0, 1.0], [1.0], []))
def test_too_few_knots(t):
    with pytest.raises(TooFewKnots):
        band.knot_geometry(t)


@pytest.mark.parametrize("t", ([0.0, 1.0, 1.0, 2.0], [0.0, 2.0, 1.0]))
def test_non_increasing_knots(t):
    with pytest.raises(NonIncreasingKnots):
        band.knot_geometry(t)


@pytest.mark.parametrize("seed", range(5))
def test_band_pair_matches_dense_construction(seed):
    rng = np.random.default_rng(seed)
    t = _random_knots(rng, int(rng.integers(3, 30)))
    bp = band.band_pair_from_times(t)
    q, r = oracles.dense_q_r(t)
    assert_allclose(bp.dense_q(), q.astype(float), rtol=1e-14)
    assert_allclose(bp.dense_r(), r.astype(float), rtol=1e-14)


@pytest.mark.parametrize("seed", range(5))
def test_roughness_is_curvature_integral(seed):
    rng = np.random.default_rng(seed)
    p = int(rng.integers(3, 40))
    t = _random_knots(rng, p)
    mu = rng.standard_normal(p)
    bp = band.band_pair_from_times(t)
    assert_allclose(band.roughness_form(bp, mu), oracles.curvature_integral(t, mu), rtol=1e-10)


def test_roughness_of_affine_is_zero():
    t = np.array([0.0, 0.5, 2.0, 2.5, 4.0])
    bp = band.band_pair_from_times(t)
    assert band.roughness_form(bp, 3.0 - 2.0 * t) == pytest.approx(0.0, abs=1e-12)


def test_roughness_three_knot_fixture():
    bp = band.band_pair_from_times([0.0, 1.0, 2.0])
    assert band.roughness_form(bp, np.array([0.0, 1.0, 0.0])) == pytest.approx(6.0, rel=1e-14)


@pytest.mark.parametrize("m", (1, 2, 3, 10, 50))
def test_pentadiagonal_ldl_reconstructs(m):
    rng = np.random.default_rng(m)
    a = rng.standard_normal((m, m))
    a = np.triu(np.tril(a @ a.T + m * np.eye(m), 2), -2)
    bnd = np.zeros((3, m))
    for d in range(3):
        bnd[d, : m - d] = np.diag(a, d)
    chol = band.pentadiagonal_ldl(bnd)
    assert_allclose(chol.reconstruct(), a, atol=1e-12 * np.abs(a).max())
    assert np.all(chol.d > 0)


def test_pentadiagonal_ldl_rejects_indefinite():
    bnd = np.array([[1.0, -1.0, 1.0], [0.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
    with pytest.raises(NotPositiveDefinite):
        band.pentadiagonal_ldl(bnd)


def test_pentadiagonal_ldl_bad_shape():
    with pytest.raises(DimensionMismatch):
        band.pentadiagonal_ldl(np.ones((2, 4)))


@pytest.mark.parametrize("w", (0.01, 1.0, 37.5))
def test_reinsch_alpha_zero_is_weighted_mean(w):
    rng = np.random.default_rng(0)
    bp = band.band_pair_from_times(np.arange(12.0))
    ytilde = rng.standard_normal(12)
    assert_array_equal(band.reinsch_solve(bp, w, 0.0, ytilde).mu, ytilde / w)


def test_reinsch_three_knot_fixture():
    bp = band.band_pair_from_times([0.0, 1.0, 2.0])
    sol = band.reinsch_solve(bp, 1.0, 1.0, np.array([0.0, 1.0, 0.0]))
    assert_allclose(sol.mu, [0.3, 0.4, 0.3], rtol=1e-14)
    ref = oracles.spline_fit([0.0, 1.0, 2.0], 1.0, 1.0, [0.0, 1.0, 0.0])
    assert_allclose(sol.mu, ref.astype(float), rtol=1e-14)


def test_reinsch_large_alpha_approaches_regression_line():
    rng = np.random.default_rng(3)
    t = np.arange(30.0)
    w = 2.5
    ytilde = w * (0.4 * t - 3.0 + rng.standard_normal(30))
    mu = band.reinsch_solve(band.band_pair_from_times(t), w, 1e6, ytilde).mu
    coef = np.polyfit(t, ytilde / w, 1)
    line = np.polyval(coef, t)
    assert_allclose(mu, line, rtol=1e-3, atol=1e-3 * np.abs(line).max())


@pytest.mark.parametrize("seed", range(40))
def test_reinsch_matches_extended_precision_oracle(seed):
    t, w, alpha, ytilde = oracles.random_instance(np.random.default_rng(seed), p_hi=80)
    bp = band.band_pair_from_times(t)
    sol = band.reinsch_solve(bp, w, alpha, ytilde)
    mu_ref, diag_ref = oracles.reference_fit(t, w, alpha, ytilde)
    assert oracles.rel_err(sol.mu, mu_ref) <= 1e-8
    diag = band.smoother_diagonal(bp, sol.chol, w, alpha)
    assert oracles.rel_err(diag, diag_ref) <= 1e-8


@pytest.mark.parametrize("seed", range(10))
def test_second_derivative_identity(seed):
    t, w, alpha, ytilde = oracles.random_instance(np.random.default_rng(100 + seed))
    bp = band.band_pair_from_times(t)
    sol = band.reinsch_solve(bp, w, alpha, ytilde)
    lhs = bp.dense_q().T @ sol.mu
    rhs = bp.dense_r() @ sol.gamma
    assert np.max(np.abs(lhs - rhs)) <= 1e-8 * (1.0 + np.max(np.abs(sol.mu)))


def test_roughness_non_increasing_in_alpha():
    rng = np.random.default_rng(7)
    t = np.arange(40.0)
    bp = band.band_pair_from_times(t)
    ytilde = 3.0 * (np.sin(t / 4.0) + 0.5 * rng.standard_normal(40))
    rough = [band.roughness_form(bp, band.reinsch_solve(bp, 3.0, a, ytilde).mu)
             for a in np.logspace(-2, 6, 25)]
    assert np.all(np.diff(rough) <= 1e-12 * rough[0])


def test_reinsch_weight_floor():
    bp = band.band_pair_from_times(np.arange(5.0))
    with pytest.raises(DegenerateWeight):
        band.reinsch_solve(bp, 1e-12, 1.0, np.zeros(5), floor=1e-10)
    with pytest.raises(DimensionMismatch):
        band.reinsch_solve(bp, 1.0, 1.0, np.zeros(4))
    with pytest.raises(ValueError):
        band.reinsch_solve(bp, 1.0, -1.0, np.zeros(5))


def test_smoother_diagonal_alpha_zero():
    bp = band.band_pair_from_times(np.arange(6.0))
    sol = band.reinsch_solve(bp, 2.0, 0.0, np.zeros(6))
    assert_array_equal(band.smoother_diagonal(bp, sol.chol, 2.0, 0.0), np.full(6, 0.5))


def test_smoother_diagonal_three_knot_fixture():
    t = [0.0, 1.0, 2.0]
    bp = band.band_pair_from_times(t)
    sol = band.reinsch_solve(bp, 1.0, 1.0, np.zeros(3))
    ref = np.diag(np.linalg.inv(np.eye(3) + 1.5 * np.outer([1, -2, 1], [1, -2, 1])))
    assert_allclose(band.smoother_diagonal(bp, sol.chol, 1.0, 1.0), ref, rtol=1e-8)


@pytest.mark.parametrize("compensated", (True, False))
@pytest.mark.parametrize("seed", range(20))
def test_smoother_diagonal_bounds(seed, compensated):
    t, w, alpha, ytilde = oracles.random_instance(np.random.default_rng(200 + seed))
    bp = band.band_pair_from_times(t)
    sol = band.reinsch_solve(bp, w, alpha, ytilde)
    s = band.smoother_diagonal(bp, sol.chol, w, alpha, compensated=compensated)
    assert np.all(s > 0)
    assert np.all(s <= 1.0 / w + 1e-12)


@pytest.mark.parametrize("alpha", (0.5, 10.0, 300.0))
def test_compensated_and_plain_diagonals_agree_when_well_conditioned(alpha):
    bp = band.band_pair_from_times(np.arange(50.0))
    sol = band.reinsch_solve(bp, 4.0, alpha, np.zeros(50))
    assert_allclose(
        band.smoother_diagonal(bp, sol.chol, 4.0, alpha),
        band.smoother_diagonal(bp, sol.chol, 4.0, alpha, compensated=False),
        rtol=1e-11,
    )


def test_smoother_diagonal_checks_factor_order():
    bp = band.band_pair_from_times(np.arange(6.0))
    other = band.reinsch_solve(band.band_pair_from_times(np.arange(7.0)), 1.0, 1.0, np.zeros(7))
    with pytest.raises(DimensionMismatch):
        band.smoother_diagonal(bp, other.chol, 1.0, 1.0)


def test_dense_solve_agrees_with_reinsch():
    rng = np.random.default_rng(11)
    t = np.arange(25.0)
    bp = band.band_pair_from_times(t)
    ytilde = rng.standard_normal(25)
    gmat = band.dense_roughness_matrix(bp)
    assert_allclose(band.dense_solve(gmat, 2.0, 5.0, ytilde),
                    band.reinsch_solve(bp, 2.0, 5.0, ytilde).mu, rtol=1e-9, atol=1e-12)


def test_reinsch_scales_linearly():
    sizes = (100, 1000, 10000)
    times = []
    for p in sizes:
        bp = band.band_pair_from_times(np.arange(float(p)))
        y = np.sin(np.arange(float(p)))
        band.reinsch_solve(bp, 2.0, 10.0, y)
        number = max(1, 200000 // p)
        times.append(min(timeit.repeat(lambda: band.reinsch_solve(bp, 2.0, 10.0, y),
                                       number=number, repeat=5)) / number)
    slope = np.polyfit(np.log(sizes), np.log(times), 1)[0]
    assert slope <= 1.3
