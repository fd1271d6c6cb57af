import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from simbi.distributions import (
    Categorical,
    DistributionError,
    GaussianDiag,
    GaussianFull,
    IndependentProduct,
    MixtureOfGaussians,
    UniformBox,
    from_dict,
    linear_gaussian_posterior,
)

from _oracles import conjugate_posterior


def test_uniform_box_samples_stay_in_support():
    draws = UniformBox([0, 0], [1, 1]).sample(100, np.random.default_rng(0))
    assert draws.shape == (100, 2)
    assert np.all((draws >= 0) & (draws <= 1))


def test_degenerate_categorical_always_returns_first_category():
    draws = Categorical([1.0, 0.0, 0.0]).sample(500, np.random.default_rng(1))
    assert np.all(draws == 0)


@pytest.mark.parametrize("seed", range(5))
def test_standard_normal_sample_mean_within_clt_band(seed):
    draws = GaussianDiag([0.0, 0.0], [1.0, 1.0]).sample(100_000, np.random.default_rng(seed))
    assert np.all(np.abs(draws.mean(axis=0)) < 0.02)


def test_gaussian_log_prob_at_mean():
    assert GaussianDiag([0, 0], [1, 1]).log_prob([0.0, 0.0]) == pytest.approx(-np.log(2 * np.pi), abs=1e-12)
    assert GaussianDiag([0, 0], [1, 1]).log_prob([0.0, 0.0]) == pytest.approx(-1.837877, abs=1e-6)


def test_uniform_log_prob_outside_support_is_minus_inf():
    assert UniformBox([0, 0], [1, 1]).log_prob([2.0, 0.5]) == -np.inf


def test_mixture_matches_explicit_weighted_sum():
    rng = np.random.default_rng(2)
    w = np.array([0.2, 0.5, 0.3])
    comps = []
    for _ in range(3):
        a = rng.normal(size=(2, 2))
        comps.append(GaussianFull(rng.normal(size=2), covariance=a @ a.T + 0.5 * np.eye(2)))
    mix = MixtureOfGaussians(w, comps)
    pts = rng.normal(size=(50, 2)) * 2
    brute = np.log(sum(wk * stats.multivariate_normal(c.mean, c.covariance).pdf(pts) for wk, c in zip(w, comps)))
    np.testing.assert_allclose(mix.log_prob(pts), brute, rtol=0, atol=1e-12)


def test_full_and_diag_gaussians_agree_with_scipy():
    rng = np.random.default_rng(3)
    a = rng.normal(size=(3, 3))
    cov = a @ a.T + np.eye(3)
    g = GaussianFull([1.0, -1.0, 0.5], covariance=cov)
    pts = rng.normal(size=(20, 3))
    np.testing.assert_allclose(g.log_prob(pts), stats.multivariate_normal(g.mean, cov).logpdf(pts), atol=1e-10)
    d = GaussianDiag([0.5, 1.0], [0.3, 2.0])
    np.testing.assert_allclose(
        d.log_prob(pts[:, :2]), stats.multivariate_normal([0.5, 1.0], np.diag([0.3, 2.0])).logpdf(pts[:, :2]), atol=1e-12
    )


def test_product_of_continuous_and_discrete_blocks():
    prod = IndependentProduct([GaussianDiag([0.0], [1.0]), Categorical([0.25, 0.75])])
    assert prod.dim == 2
    lp = prod.log_prob([0.0, 1.0])
    assert lp == pytest.approx(stats.norm.logpdf(0.0) + np.log(0.75), abs=1e-12)
    draws = prod.sample(1000, np.random.default_rng(4))
    assert set(np.unique(draws[:, 1])) <= {0.0, 1.0}


def test_conjugate_update_symmetric_case():
    post = linear_gaussian_posterior(GaussianDiag([0, 0], [1, 1]), 0.1 * np.eye(2), [0.0, 0.0])
    np.testing.assert_allclose(post.mean, [0, 0], atol=1e-14)
    np.testing.assert_allclose(post.covariance, np.eye(2) / 11, atol=1e-14)


def test_conjugate_update_equal_precision():
    post = linear_gaussian_posterior(GaussianDiag([0, 0], [1, 1]), np.eye(2), [2.0, 0.0])
    np.testing.assert_allclose(post.mean, [1, 0], atol=1e-14)
    np.testing.assert_allclose(post.covariance, 0.5 * np.eye(2), atol=1e-14)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31), n_obs=st.integers(1, 4), dim=st.integers(1, 4))
def test_conjugate_update_matches_dense_solve(seed, n_obs, dim):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(dim, dim)), rng.normal(size=(dim, dim))
    prior_cov, lik_cov = a @ a.T + 0.5 * np.eye(dim), b @ b.T + 0.5 * np.eye(dim)
    mean = rng.normal(size=dim)
    xs = rng.normal(size=(n_obs, dim))
    post = linear_gaussian_posterior(GaussianFull(mean, covariance=prior_cov), lik_cov, xs)
    m_ref, c_ref = conjugate_posterior(mean, prior_cov, lik_cov, xs)
    np.testing.assert_allclose(post.mean, m_ref, atol=1e-10)
    np.testing.assert_allclose(post.covariance, c_ref, atol=1e-10)


@pytest.mark.parametrize(
    "dist",
    [
        UniformBox([0, -1], [1, 2]),
        GaussianDiag([0, 1], [2, 3]),
        GaussianFull([0, 0], covariance=[[2, 0.5], [0.5, 1]]),
        Categorical([0.1, 0.9]),
        MixtureOfGaussians([0.4, 0.6], [GaussianDiag([0], [1]), GaussianDiag([3], [0.5])]),
        IndependentProduct([GaussianDiag([0], [1]), UniformBox([0], [1])]),
    ],
)
def test_dict_round_trip_preserves_density(dist):
    again = from_dict(dist.to_dict())
    pts = dist.sample(20, np.random.default_rng(5))
    np.testing.assert_array_equal(again.log_prob(pts), dist.log_prob(pts))


@pytest.mark.parametrize(
    "make",
    [
        lambda: UniformBox([1, 0], [0, 1]),
        lambda: GaussianDiag([0], [-1]),
        lambda: GaussianFull([0, 0], covariance=[[1, 2], [2, 1]]),
        lambda: Categorical([0.5, 0.6]),
        lambda: from_dict({"kind": "nope"}),
    ],
)
def test_invalid_parameters_raise(make):
    with pytest.raises(DistributionError):
        make()


def test_sample_count_must_be_positive():
    with pytest.raises(DistributionError):
        GaussianDiag([0], [1]).sample(0, np.random.default_rng(0))
