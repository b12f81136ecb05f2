"""Tests for prior densities, gradients and samplers"""

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.optimize import approx_fprime

from latent_imh.exceptions import DimensionMismatchError, UnsupportedVariantError
from latent_imh.priors import (
    GaussianMixturePrior,
    GaussianPrior,
    LaplacePrior,
    SmoothedTvPrior,
    StandardNormalPrior,
    grad_log_prior,
    log_prior,
    prior_moments,
)


def assert_gradient_matches(prior, x, rtol=1e-5, atol=1e-6):
    numeric = approx_fprime(x, prior.log_density, 1e-7)
    assert_allclose(prior.grad_log_density(x), numeric, rtol=rtol, atol=atol)


@pytest.fixture
def rng():
    return np.random.default_rng(3)


class TestGradients:
    def test_standard_normal(self, rng):
        assert_gradient_matches(StandardNormalPrior(4), rng.standard_normal(4))

    def test_gaussian(self, rng):
        prior = GaussianPrior.ill_conditioned(4, 50.0, rng)
        assert_gradient_matches(prior, rng.standard_normal(4), rtol=1e-4, atol=1e-4)

    def test_mixture(self, rng):
        prior = GaussianMixturePrior.symmetric(3, spread=2.0)
        assert_gradient_matches(prior, np.array([0.4, -0.3, 1.2]))

    def test_laplace_away_from_kinks(self):
        assert_gradient_matches(LaplacePrior(3), np.array([0.5, -1.5, 2.0]))

    def test_smoothed_tv(self, rng):
        prior = SmoothedTvPrior(lam=2.0, shape=(3, 4), eps=0.1)
        assert_gradient_matches(prior, rng.standard_normal(12), rtol=1e-4, atol=1e-5)


class TestDensities:
    def test_laplace_keeps_its_normalizer(self):
        assert LaplacePrior(3).log_density(np.zeros(3)) == pytest.approx(-3.0 * np.log(2.0))

    def test_tv_of_constant_image(self):
        prior = SmoothedTvPrior(lam=1.0, shape=(3, 3), eps=0.05)
        assert prior.tv(np.full(9, 4.2)) == pytest.approx(9 * 0.05)

    def test_tv_penalizes_edges(self):
        prior = SmoothedTvPrior(lam=1.0, shape=(4, 4), eps=1e-3)
        flat = np.zeros(16)
        edge = np.zeros((4, 4))
        edge[:, 2:] = 1.0
        assert prior.log_density(edge.ravel()) < prior.log_density(flat)

    def test_mixture_symmetric_layout(self):
        prior = GaussianMixturePrior.symmetric(2, spread=3.0, n_components=3)
        assert_allclose(prior.means[:, 0], [-3.0, 0.0, 3.0])
        assert_allclose(prior.means[:, 1], 0.0)
        assert_allclose(prior.weights, 1.0 / 3.0)

    def test_mixture_weights_validated(self):
        with pytest.raises(ValueError):
            GaussianMixturePrior([0.5, 0.4], np.zeros((2, 2)))

    def test_ill_conditioned_covariance(self, rng):
        prior = GaussianPrior.ill_conditioned(6, 1000.0, rng)
        assert np.linalg.cond(prior.cov) == pytest.approx(1000.0, rel=1e-6)

    def test_argument_length_checked(self):
        with pytest.raises(DimensionMismatchError):
            log_prior(StandardNormalPrior(3), np.ones(2))
        with pytest.raises(DimensionMismatchError):
            grad_log_prior(StandardNormalPrior(3), np.ones(4))

    def test_tv_parameters_validated(self):
        with pytest.raises(ValueError):
            SmoothedTvPrior(lam=1.0, shape=(2, 2), eps=0.0)
        with pytest.raises(ValueError):
            SmoothedTvPrior(lam=0.0, shape=(2, 2))


class TestSampling:
    def test_gaussian_sample_covariance(self, rng):
        prior = GaussianPrior([1.0, -1.0], np.array([[2.0, 0.5], [0.5, 1.0]]))
        draws = prior.sample(rng, 200_000)
        assert_allclose(draws.mean(axis=0), [1.0, -1.0], atol=0.02)
        assert_allclose(np.cov(draws.T), prior.cov, atol=0.03)

    def test_mixture_sample_shapes(self, rng):
        prior = GaussianMixturePrior.symmetric(3, spread=1.0)
        assert prior.sample(rng).shape == (3,)
        assert prior.sample(rng, 5).shape == (5, 3)

    def test_tv_has_no_direct_sampler(self, rng):
        with pytest.raises(UnsupportedVariantError):
            SmoothedTvPrior(lam=1.0, shape=(2, 2)).sample(rng)


def extended_precision_mixture(prior, x):
    """Log density and gradient of a mixture by direct summation in long double"""
    x = np.asarray(x, dtype=np.longdouble)
    means = prior.means.astype(np.longdouble)
    diff = x - means
    terms = np.log(prior.weights.astype(np.longdouble)) - 0.5 * np.sum(diff * diff, axis=1)
    mass = np.exp(terms)
    total = mass.sum()
    return np.log(total), (mass / total) @ (means - x)


@pytest.mark.skipif(np.finfo(np.longdouble).minexp > -16000, reason="long double has no extended exponent range here")
class TestMixtureAgainstExtendedPrecision:
    @pytest.fixture
    def prior(self):
        means = np.zeros((3, 3))
        means[:, 0] = [-30.0, 0.0, 30.0]
        return GaussianMixturePrior([0.2, 0.5, 0.3], means)

    @pytest.mark.parametrize("x", [[75.0, 0.5, -0.5], [-70.0, 2.0, 1.0], [15.0, 0.3, 0.0], [0.1, -0.2, 0.4]])
    def test_log_density_and_gradient(self, prior, x):
        x = np.array(x)
        log_density, grad = extended_precision_mixture(prior, x)
        assert prior.log_density(x) == pytest.approx(float(log_density), rel=1e-12)
        assert_allclose(prior.grad_log_density(x), grad.astype(float), rtol=1e-10, atol=1e-12)

    def test_far_point_underflows_naive_double_summation(self, prior):
        x = np.array([75.0, 0.5, -0.5])
        diff = x - prior.means
        with np.errstate(divide="ignore"):
            naive = np.log(np.sum(prior.weights * np.exp(-0.5 * np.sum(diff * diff, axis=1))))
        assert naive == -np.inf
        assert np.isfinite(prior.log_density(x))


def test_prior_moments():
    mean, cov = prior_moments(StandardNormalPrior(2))
    assert_allclose(mean, 0.0)
    assert cov is None
    with pytest.raises(UnsupportedVariantError):
        prior_moments(LaplacePrior(2))
