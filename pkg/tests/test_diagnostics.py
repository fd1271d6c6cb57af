import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from simbi.cli.registry import make_simulator
from simbi.diagnostics import (
    DiagnosticError,
    c2st,
    c2st_report,
    coverage_report,
    discrete_uniform_ks,
    expected_coverage_rank,
    run_sbc,
    run_tarp,
    sbc_ranks,
    sbc_report,
)
from simbi.distributions import GaussianDiag, GaussianFull, linear_gaussian_posterior

PRIOR = GaussianDiag([0.0, 0.0], [1.0, 1.0])
SIM = make_simulator({"name": "linear-gaussian"}, PRIOR)


def oracle(x, inflate=1.0):
    post = linear_gaussian_posterior(PRIOR, 0.1 * np.eye(2), x)
    return GaussianFull(post.mean, covariance=post.covariance * inflate)


def oracle_fn(inflate=1.0):
    return lambda x, n, rng: oracle(x, inflate).sample(n, rng)


def coverage_cases(n, m, seed, inflate=1.0):
    rng = np.random.default_rng(seed)
    theta = PRIOR.sample(n, rng)
    xs = theta + np.sqrt(0.1) * rng.standard_normal(theta.shape)
    samples = np.stack([oracle(x, inflate).sample(m, rng) for x in xs])
    return theta, xs, samples


# SBC -----------------------------------------------------------------------------------------

def test_rank_bounds():
    samples = np.linspace(0, 1, 11)[:, None]
    assert sbc_ranks(np.array([-1.0]), samples)[0] == 0
    assert sbc_ranks(np.array([2.0]), samples)[0] == 11


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), levels=st.integers(2, 30))
def test_discrete_ks_statistic_matches_support_point_oracle(seed, levels):
    ranks = np.random.default_rng(seed).integers(0, levels, size=100)
    d, p = discrete_uniform_ks(ranks, levels)
    grid = np.arange(levels)
    brute = max(abs(np.mean(ranks <= k) - (k + 1) / levels) for k in grid)
    assert d == pytest.approx(brute, abs=1e-15)
    assert 0.0 <= p <= 1.0


def test_sbc_passes_on_exact_posterior():
    res = run_sbc(PRIOR, SIM, oracle_fn(), 200, 100, rng=0)
    assert res.passed(0.01), res.pvalues
    assert res.ranks.shape == (200, 2)


def test_sbc_pathological_posterior_has_zero_ranks():
    res = run_sbc(PRIOR, SIM, lambda x, n, rng: np.full((n, 2), 100.0) + rng.random((n, 2)), 100, 50, rng=1)
    assert np.all(res.ranks == 0)
    assert np.all(res.pvalues < 1e-10)


@pytest.mark.parametrize("inflate", [9.0, 1 / 9])
def test_sbc_flags_miscalibrated_posterior(inflate):
    res = run_sbc(PRIOR, SIM, oracle_fn(inflate), 200, 100, rng=2)
    assert np.any(res.pvalues < 0.01)


def test_sbc_skips_failing_trials_and_errors_when_too_many_fail():
    calls = {"n": 0}

    def sometimes(x, n, rng):
        calls["n"] += 1
        if calls["n"] % 10 == 0:
            raise RuntimeError("sampler failure")
        return oracle(x).sample(n, rng)

    res = run_sbc(PRIOR, SIM, sometimes, 100, 20, rng=3)
    assert res.n_skipped == 10 and res.n_trials == 100
    with pytest.raises(DiagnosticError):
        run_sbc(PRIOR, SIM, lambda x, n, rng: np.zeros((n + 1, 2)), 100, 20, rng=3)


# coverage --------------------------------------------------------------------------------------

def test_tarp_on_exact_posterior_is_calibrated():
    theta, _, samples = coverage_cases(500, 500, 0)
    curve = run_tarp(theta, samples, np.random.default_rng(1))
    assert curve.max_deviation <= 0.05
    assert curve.ecp[0] == 0.0 and curve.ecp[-1] == 1.0


def test_tarp_overdispersed_curve_lies_above_diagonal():
    theta, _, samples = coverage_cases(500, 500, 1, inflate=9.0)
    curve = run_tarp(theta, samples, np.random.default_rng(2))
    # the curve is S-shaped; around alpha = 0.5 it must sit clearly above the diagonal
    assert np.all(curve.deviation_at((0.4, 0.6)) > 0)


def test_tarp_zero_width_posterior_is_an_error():
    theta = np.zeros((5, 2))
    with pytest.raises(DiagnosticError):
        run_tarp(theta, np.repeat(theta[:, None, :], 10, axis=1), np.random.default_rng(0))


def test_density_rank_on_exact_posterior_is_calibrated():
    theta, xs, samples = coverage_cases(500, 500, 2)
    curve = expected_coverage_rank(theta, lambda th, x: oracle(x).log_prob(th), samples, xs)
    assert curve.max_deviation <= 0.05
    assert curve.ecp[-1] == 1.0


def test_density_rank_mode_has_zero_credibility():
    x = np.array([[0.3, -0.2]])
    post = oracle(x[0])
    samples = post.sample(300, np.random.default_rng(3))[None]
    curve = expected_coverage_rank(post.mean[None], lambda th, xx: oracle(xx).log_prob(th), samples, x)
    assert curve.credibility[0] == 0.0


@pytest.mark.parametrize("inflate", [9.0, 1 / 9])
def test_both_coverage_estimators_flag_miscalibration(inflate):
    theta, xs, samples = coverage_cases(300, 300, 4, inflate)
    tarp = run_tarp(theta, samples, np.random.default_rng(5))
    rank = expected_coverage_rank(theta, lambda th, x: oracle(x, inflate).log_prob(th), samples, xs)
    assert tarp.max_deviation > 0.1 and rank.max_deviation > 0.1


# C2ST --------------------------------------------------------------------------------------------

def test_c2st_identical_distributions_near_chance():
    rng = np.random.default_rng(0)
    g = GaussianDiag([0.0, 0.0], [1.0, 1.0])
    res = c2st(g.sample(1000, rng), g.sample(1000, rng), rng=1)
    assert 0.44 <= res.accuracy <= 0.56


def test_c2st_permuted_copy_near_chance():
    rng = np.random.default_rng(1)
    p = rng.normal(size=(1000, 2))
    res = c2st(p, p[rng.permutation(1000)], rng=2)
    assert 0.44 <= res.accuracy <= 0.56


def test_c2st_disjoint_boxes_are_separable():
    rng = np.random.default_rng(2)
    res = c2st(rng.uniform(0, 1, (500, 1)), rng.uniform(10, 11, (500, 1)), rng=3)
    assert res.accuracy >= 0.99


def test_c2st_rejects_unequal_or_tiny_inputs():
    with pytest.raises(ValueError):
        c2st(np.zeros((300, 2)), np.zeros((250, 2)))
    with pytest.raises(ValueError):
        c2st(np.zeros((50, 2)), np.zeros((50, 2)))


# reports -----------------------------------------------------------------------------------------

def test_reports_write_json_and_csv(tmp_path):
    theta, _, samples = coverage_cases(100, 100, 6)
    rep = coverage_report(run_tarp(theta, samples, np.random.default_rng(0)), 0.2)
    jpath, cpath = rep.save(tmp_path)
    body = json.loads(jpath.read_text())
    assert body["verdict"] == "pass" and len(body["ecp"]) == 21
    assert cpath.read_text().splitlines()[0] == "level,ecp"

    sbc = sbc_report(run_sbc(PRIOR, SIM, oracle_fn(), 60, 20, rng=4))
    assert sbc.method == "sbc" and len(sbc.rows) == 60
    from simbi.diagnostics import C2stResult

    assert c2st_report(C2stResult(0.7, [0.7] * 5, 5, 300, 300)).verdict == "fail"
