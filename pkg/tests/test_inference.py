import numpy as np
import pytest

from simbi.distributions import GaussianDiag, GaussianFull, UniformBox
from simbi.inference import (
    EstimatorConfig,
    InferenceError,
    InferenceMethod,
    build_posterior,
    importance_correct,
    run_sequential,
    train_amortized,
)
from simbi.neural import TrainConfig
from simbi.samplers import McmcConfig
from simbi.simgym import SimulationBatch, Simulator, simulate_for_sbi

from conftest import LG_PRIOR, LG_SIM, lg_oracle

FAST = TrainConfig(max_epochs=30)
SMALL = EstimatorConfig(n_components=2, hidden=(16,))
X_O = np.array([1.0, 1.0])


@pytest.fixture(scope="module")
def small_batch():
    return simulate_for_sbi(LG_PRIOR, LG_SIM, 1000, rng=5)


def test_npe_posterior_mean_matches_analytic(trained):
    est, m, _ = trained("NPE")
    draws = build_posterior(m, est, X_O).sample(5000, np.random.default_rng(0))
    np.testing.assert_allclose(lg_oracle(X_O).mean, [10 / 11, 10 / 11], atol=1e-14)
    assert np.linalg.norm(draws.mean(axis=0) - 10 / 11) <= 0.1


def test_nle_mcmc_posterior_mean_matches_analytic(trained):
    est, m, _ = trained("NLE")
    draws = build_posterior(m, est, X_O).sample(5000, np.random.default_rng(1))
    assert np.linalg.norm(draws.mean(axis=0) - 10 / 11) <= 0.1


def test_identical_rows_train_without_nan():
    batch = SimulationBatch(np.tile([[0.5, -0.5]], (100, 1)), np.tile([[0.4, -0.6]], (100, 1)))
    for kind in ("NPE", "NLE", "NRE"):
        est = train_amortized(InferenceMethod(kind, LG_PRIOR, SMALL, TrainConfig(max_epochs=5)), batch)
        assert np.all(np.isfinite(est.train_result.val_losses))


def test_nre_potential_is_logit_plus_log_prior(small_batch):
    m = InferenceMethod("NRE", LG_PRIOR, SMALL, FAST)
    est = train_amortized(m, small_batch)
    post = build_posterior(m, est, X_O)
    th = np.random.default_rng(2).normal(size=(7, 2))
    np.testing.assert_array_equal(post.potential(th), est.logit(th, X_O) + LG_PRIOR.log_prob(th))


def test_nle_two_identical_observations_double_the_likelihood(small_batch):
    m = InferenceMethod("NLE", LG_PRIOR, SMALL, FAST)
    est = train_amortized(m, small_batch)
    th = np.random.default_rng(3).normal(size=(7, 2))
    single = est.log_prob(np.repeat(X_O[None], 7, axis=0), th)
    post = build_posterior(m, est, np.stack([X_O, X_O]))
    np.testing.assert_allclose(post.potential(th), 2 * single + LG_PRIOR.log_prob(th), rtol=0, atol=1e-12)


def test_npe_with_uniform_prior_returns_samples_inside_box():
    prior = UniformBox([-1.0, -1.0], [1.0, 1.0])
    sim = Simulator(lambda th, s: th + 0.3 * np.random.default_rng(s).normal(size=th.shape), 2, 2)
    m = InferenceMethod("NPE", prior, SMALL, FAST)
    est = train_amortized(m, simulate_for_sbi(prior, sim, 1000, rng=4))
    post = build_posterior(m, est, [0.95, -0.95])
    draws = post.sample(2000, np.random.default_rng(5))
    assert np.all((draws >= -1) & (draws < 1))
    assert post.diagnostics["acceptance_rate"] < 1.0
    assert post.log_prob([1.5, 0.0]) == -np.inf


@pytest.mark.parametrize("strategy", ["mcmc", "slice", "rejection", "importance"])
def test_every_strategy_samples_near_oracle(small_batch, strategy):
    m = InferenceMethod("NPE", LG_PRIOR, SMALL, TrainConfig(max_epochs=100))
    est = train_amortized(m, small_batch)
    cfg = McmcConfig(chains=4, warmup=100, thin=2)
    draws = build_posterior(m, est, X_O, strategy, cfg).sample(1000, np.random.default_rng(6))
    assert draws.shape == (1000, 2)
    assert np.linalg.norm(draws.mean(axis=0) - lg_oracle(X_O).mean) < 0.25


def test_npe_set_observations_need_set_embedding(small_batch):
    m = InferenceMethod("NPE", LG_PRIOR, SMALL, FAST)
    est = train_amortized(m, small_batch)
    with pytest.raises(InferenceError, match="permutation-invariant"):
        build_posterior(m, est, np.stack([X_O, X_O]))


def test_npe_with_mean_pool_embedding_accepts_sets():
    prior = LG_PRIOR

    def three_obs(th, seed):
        rng = np.random.default_rng(seed)
        return np.concatenate([th + np.sqrt(0.1) * rng.normal(size=th.shape) for _ in range(3)], axis=1)

    sim = Simulator(three_obs, 2, 6)
    cfg = EstimatorConfig(n_components=2, hidden=(16,), embedding={"kind": "mean-pool", "element_dim": 2, "hidden": [16], "output_dim": 4})
    m = InferenceMethod("NPE", prior, cfg, FAST)
    est = train_amortized(m, simulate_for_sbi(prior, sim, 500, rng=7))
    xs = np.array([[1.0, 1.0], [0.8, 1.2], [1.1, 0.9]])
    a = build_posterior(m, est, xs).log_prob(np.zeros((3, 2)))
    b = build_posterior(m, est, xs[::-1]).log_prob(np.zeros((3, 2)))
    np.testing.assert_array_equal(a, b)


def test_nle_posterior_has_no_normalized_log_prob(small_batch):
    m = InferenceMethod("NLE", LG_PRIOR, SMALL, FAST)
    est = train_amortized(m, small_batch)
    with pytest.raises(InferenceError):
        build_posterior(m, est, X_O).log_prob([0.0, 0.0])
    with pytest.raises(InferenceError):
        build_posterior(m, est, X_O, strategy="direct")


def test_method_validation():
    with pytest.raises(ValueError):
        InferenceMethod("ABC", LG_PRIOR)
    with pytest.raises(ValueError):
        InferenceMethod("NPE", LG_PRIOR, EstimatorConfig(kind="ratio-classifier"))
    assert InferenceMethod("nre", LG_PRIOR).estimator.kind == "ratio-classifier"


def test_too_few_valid_simulations():
    batch = SimulationBatch(np.zeros((5, 2)), np.zeros((5, 2)))
    with pytest.raises(ValueError):
        train_amortized(InferenceMethod("NPE", LG_PRIOR), batch)


# sequential --------------------------------------------------------------------------------------

def test_one_round_equals_amortized_pipeline():
    m = InferenceMethod("NLE", LG_PRIOR, SMALL, FAST)
    res = run_sequential(m, LG_SIM, X_O, 1, 300, rng=8)
    batch = simulate_for_sbi(LG_PRIOR, LG_SIM, 300, rng=8)
    est = train_amortized(m, batch)
    assert res.batches[0].equals(batch)
    np.testing.assert_array_equal(res.estimator.get_flat(), est.get_flat())
    cfg = McmcConfig(chains=4, warmup=20)
    a = run_sequential(m, LG_SIM, X_O, 1, 300, rng=8, mcmc=cfg).posterior.sample(100, np.random.default_rng(0))
    b = build_posterior(m, est, X_O, mcmc=cfg).sample(100, np.random.default_rng(0))
    np.testing.assert_array_equal(a, b)


@pytest.mark.parametrize("kind", ["NLE", "NPE"])
def test_all_rounds_are_accumulated(kind):
    m = InferenceMethod(kind, LG_PRIOR, SMALL, FAST)
    res = run_sequential(m, LG_SIM, X_O, 3, 200, rng=9, mcmc=McmcConfig(chains=4, warmup=50))
    assert [len(b) for b in res.batches] == [200, 200, 200] and res.n_simulations == 600
    sizes = [r.n_train + r.n_val for r in res.train_results]
    assert sizes == [200, 400, 600]
    assert len({s["sim"] for s in res.seeds}) == 3


# importance correction ---------------------------------------------------------------------------

def _lg_loglik(x_o):
    lik = GaussianFull(np.zeros(2), covariance=0.1 * np.eye(2))
    return lambda th: lik.log_prob(x_o - th)


def test_exact_proposal_gives_uniform_weights():
    res = importance_correct(lg_oracle(X_O), _lg_loglik(X_O), 1000, np.random.default_rng(0), prior=LG_PRIOR)
    np.testing.assert_allclose(res.weights, 1e-3, rtol=1e-9)
    assert res.ess == pytest.approx(1000, rel=1e-9)
    assert res.weights.sum() == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_widened_proposal_is_corrected(seed):
    post = lg_oracle(X_O)
    wide = GaussianFull(post.mean + 0.0, covariance=4 * post.covariance)
    res = importance_correct(wide, _lg_loglik(X_O), 20_000, np.random.default_rng(seed), prior=LG_PRIOR)
    assert np.linalg.norm(res.mean() - post.mean) < 0.05
    assert res.ess < 20_000


def test_importance_correction_rejects_unnormalized_posterior(small_batch):
    m = InferenceMethod("NLE", LG_PRIOR, SMALL, FAST)
    post = build_posterior(m, train_amortized(m, small_batch), X_O)
    with pytest.raises(InferenceError):
        importance_correct(post, _lg_loglik(X_O), 10, np.random.default_rng(0))


def test_continued_training_reuses_estimator_and_standardizers(small_batch):
    m = InferenceMethod("NLE", LG_PRIOR, SMALL, TrainConfig(max_epochs=3))
    est = train_amortized(m, small_batch)
    std_before = est.target_std.to_dict()
    shifted = SimulationBatch(small_batch.theta + 1.0, small_batch.x + 1.0)
    again = train_amortized(m, shifted, est)
    assert again is est
    assert est.target_std.to_dict() == std_before
