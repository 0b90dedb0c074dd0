import math

import numpy as np
import pytest
from scipy import special, stats

from resilient_forecast import likelihood as lk
from resilient_forecast.likelihood import DistributionParams, Likelihood


def gauss_oracle(mu, sigma, y):
    return -math.log(math.exp(-((y - mu) ** 2) / (2 * sigma * sigma)) / (math.sqrt(2 * math.pi) * sigma))


def beta_oracle(a, b, y):
    density = math.gamma(a + b) / (math.gamma(a) * math.gamma(b)) * y ** (a - 1) * (1 - y) ** (b - 1)
    return -math.log(density)


def test_link_examples():
    g = lk.link(Likelihood.GAUSSIAN, np.array([0.5, 0.0]))
    assert g.a == 0.5 and abs(g.b - (math.log(2) + 1e-6)) < 1e-15
    b = lk.link(Likelihood.BETA, np.array([0.0, 0.0]))
    assert abs(b.a - (math.log(2) + 1e-6)) < 1e-15 and b.a == b.b
    tiny = lk.link(Likelihood.GAUSSIAN, np.array([0.0, -50.0]))
    assert tiny.b > 0 and abs(tiny.b - 1e-6) < 1e-15


def test_softplus_is_overflow_safe():
    x = np.array([-800.0, -30.0, 0.0, 30.0, 800.0])
    with np.errstate(over="raise", invalid="raise"):
        out = lk.softplus(x)
    assert np.all(np.isfinite(out))
    assert out[-1] == 800.0 and out[2] == math.log(2)
    np.testing.assert_allclose(out[1:4], np.log1p(np.exp(x[1:4])), rtol=1e-15)


def test_lgamma_and_digamma_against_scipy():
    x = np.geomspace(1e-6, 1e3, 400)
    np.testing.assert_allclose(lk.lgamma(x), special.gammaln(x), rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(lk.digamma(x), special.digamma(x), rtol=1e-10, atol=1e-10)


def test_nll_examples():
    for y in (1e-3, 0.3, 0.5, 0.97):
        assert lk.nll(DistributionParams(Likelihood.BETA, 1.0, 1.0), y) == 0.0
    sigma = 0.2
    assert lk.nll(DistributionParams(Likelihood.GAUSSIAN, 0.4, sigma), 0.4) == pytest.approx(
        0.5 * math.log(2 * math.pi * sigma**2), abs=1e-15)
    # Beta(2,2) density at 0.5 is 6 * 0.5 * 0.5 = 1.5
    assert lk.nll(DistributionParams(Likelihood.BETA, 2.0, 2.0), 0.5) == pytest.approx(-math.log(1.5), abs=1e-12)


def test_nll_grid_matches_direct_density():
    rng = np.random.default_rng(0)
    ys = np.linspace(0.005, 0.995, 100)
    mus = rng.uniform(0, 1, 100)
    sigmas = rng.uniform(0.05, 2.0, 100)
    alphas = rng.uniform(0.3, 30.0, 100)
    betas = rng.uniform(0.3, 30.0, 100)
    g = lk.nll(DistributionParams(Likelihood.GAUSSIAN, mus, sigmas), ys)
    b = lk.nll(DistributionParams(Likelihood.BETA, alphas, betas), ys)
    for i, y in enumerate(ys):
        assert abs(g[i] - gauss_oracle(mus[i], sigmas[i], y)) <= 1e-10
        assert abs(b[i] - beta_oracle(alphas[i], betas[i], y)) <= 1e-10
    np.testing.assert_allclose(g, -stats.norm.logpdf(ys, mus, sigmas), rtol=0, atol=1e-10)
    np.testing.assert_allclose(b, -stats.beta.logpdf(ys, alphas, betas), rtol=0, atol=1e-10)


def test_beta_nll_finite_at_endpoints_after_clamp():
    raw = np.array([[-3.0, -3.0], [2.0, -1.0], [-1.0, 2.0]])
    for y in (0.0, 1.0):
        loss, grad = lk.nll_and_grad(Likelihood.BETA, raw, np.full(3, y))
        assert np.all(np.isfinite(loss)) and np.all(np.isfinite(grad))
    assert lk.clamp_beta_target(0.0) == 1e-4 and lk.clamp_beta_target(1.0) == 1 - 1e-4


@pytest.mark.parametrize("kind", list(Likelihood))
def test_raw_gradient_matches_finite_differences(kind):
    rng = np.random.default_rng(1)
    raw = rng.normal(0, 1.5, (50, 2))
    y = rng.uniform(0.01, 0.99, 50)
    _, grad = lk.nll_and_grad(kind, raw, y)
    eps = 1e-5
    for j in range(2):
        up, dn = raw.copy(), raw.copy()
        up[:, j] += eps
        dn[:, j] -= eps
        fd = (lk.nll_and_grad(kind, up, y)[0] - lk.nll_and_grad(kind, dn, y)[0]) / (2 * eps)
        assert np.all(np.abs(fd - grad[:, j]) / np.maximum(1.0, np.abs(grad[:, j])) < 1e-4)


def test_gaussian_nll_minimised_at_mean():
    y = 0.6
    below = lk.nll_and_grad(Likelihood.GAUSSIAN, np.array([[y - 1e-3, 0.0]]), np.array([y]))[1][0, 0]
    above = lk.nll_and_grad(Likelihood.GAUSSIAN, np.array([[y + 1e-3, 0.0]]), np.array([y]))[1][0, 0]
    assert below < 0 < above


def test_beta_sample_mean():
    draws = lk.sample(DistributionParams(Likelihood.BETA, np.full(10_000, 5.0), np.full(10_000, 5.0)),
                      np.random.default_rng(7))
    assert abs(draws.mean() - 0.5) < 0.02
    assert np.all((draws > 0) & (draws < 1))


def test_beta_sample_small_shapes_match_distribution():
    a, b = 0.4, 2.5
    draws = lk.sample(DistributionParams(Likelihood.BETA, np.full(20_000, a), np.full(20_000, b)),
                      np.random.default_rng(3))
    assert stats.kstest(draws, stats.beta(a, b).cdf).pvalue > 0.01


def test_gaussian_sample_distribution_and_degenerate_case():
    draws = lk.sample(DistributionParams(Likelihood.GAUSSIAN, np.zeros(20_000), np.ones(20_000)),
                      np.random.default_rng(4))
    assert stats.kstest(draws, "norm").pvalue > 0.01
    tight = lk.sample(DistributionParams(Likelihood.GAUSSIAN, np.full(10_000, 0.3), np.full(10_000, 1e-6)),
                      np.random.default_rng(5))
    assert np.all(np.abs(tight - 0.3) < 1e-4)


@pytest.mark.parametrize("kind", list(Likelihood))
def test_sampling_is_deterministic(kind):
    p = DistributionParams(kind, np.full(5, 2.0), np.full(5, 3.0))
    a = lk.sample(p, np.random.default_rng(9))
    b = lk.sample(p, np.random.default_rng(9))
    assert np.array_equal(a, b)


def test_distribution_means():
    assert DistributionParams(Likelihood.BETA, 2.0, 6.0).mean() == 0.25
    assert DistributionParams(Likelihood.GAUSSIAN, 0.7, 1.0).mean() == 0.7
