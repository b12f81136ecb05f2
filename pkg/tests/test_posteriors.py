"""Tests for the inverse problem assembly and the posterior closed forms"""

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.optimize import approx_fprime
from scipy.stats import multivariate_normal

from conftest import make_problem, random_dense_problem
from latent_imh.exceptions import DimensionMismatchError, UnsupportedVariantError
from latent_imh.operators import ComposedMap, DenseMap, DiagonalMap, InverseMap, to_dense
from latent_imh.posteriors import (
    gaussian_posterior,
    latent_prior_grad,
    latent_prior_log_density,
    log_likelihood,
    mixture_posterior,
    posterior_moments,
    sample_gaussian_posterior,
)
from latent_imh.priors import GaussianMixturePrior, GaussianPrior, LaplacePrior


def direct_posterior(A, sigma, y, mean=None, cov=None):
    d = A.shape[1]
    mean = np.zeros(d) if mean is None else mean
    prec_prior = np.eye(d) if cov is None else np.linalg.inv(cov)
    cov_post = np.linalg.inv(prec_prior + A.T @ A / sigma**2)
    return cov_post @ (prec_prior @ mean + A.T @ y / sigma**2), cov_post


class TestInverseProblem:
    def test_dimension_checks(self):
        with pytest.raises(DimensionMismatchError):
            make_problem(DiagonalMap([1.0, 2.0]), DiagonalMap([1.0, 2.0, 3.0]))
        with pytest.raises(DimensionMismatchError):
            make_problem(DiagonalMap([1.0, 2.0]), DiagonalMap([1.0, 2.0]), O=DenseMap(np.ones((1, 3))))
        with pytest.raises(DimensionMismatchError):
            make_problem(DiagonalMap([1.0, 2.0]), DiagonalMap([1.0, 2.0]), prior=LaplacePrior(3))

    def test_counted_and_free_operations(self, two_dim_problem):
        p = two_dim_problem
        x = np.array([1.0, 1.0])
        p.approx_forward(x)
        p.approx_inverse(x)
        assert p.counter.snapshot() == (0, 0)
        p.exact_forward(x)
        p.exact_adjoint(x)
        p.exact_inverse(x)
        assert p.counter.snapshot() == (2, 1)

    def test_with_counter_shares_caches(self, two_dim_problem):
        copy = two_dim_problem.with_counter()
        assert copy.counter is not two_dim_problem.counter
        assert copy.dense_A is two_dim_problem.dense_A
        copy.exact_forward(np.ones(2))
        assert two_dim_problem.counter.total == 0

    def test_log_likelihood_counts_one_forward(self, two_dim_problem, two_dim_y):
        value = log_likelihood(two_dim_problem, np.array([1.0, 1.0]), two_dim_y)
        assert value == pytest.approx(-0.5 * ((3.0 - 2.0) ** 2 + (2.0 - 1.0) ** 2) / 0.25)
        assert two_dim_problem.counter.forward == 1

    def test_observation_length_checked(self, two_dim_problem):
        with pytest.raises(DimensionMismatchError):
            log_likelihood(two_dim_problem, np.ones(2), np.ones(3))

    def test_dense_K(self, two_dim_problem):
        assert_allclose(two_dim_problem.dense_K, np.diag([2.1 / 2.0, 0.95]))

    def test_symmetry_detection(self, two_dim_problem):
        assert two_dim_problem.is_symmetric()
        rng = np.random.default_rng(0)
        assert not random_dense_problem(rng, 4, 2, 0.1).is_symmetric()


class TestGaussianPosterior:
    def test_exact_matches_direct_formula(self, two_dim_problem, two_dim_y):
        post = gaussian_posterior(two_dim_problem, two_dim_y, "exact")
        mean, cov = direct_posterior(np.diag([2.0, 1.0]), 0.5, two_dim_y)
        assert_allclose(post.mean, mean, atol=1e-12)
        assert_allclose(post.covariance, cov, atol=1e-12)

    def test_approx_uses_approximate_operator(self, two_dim_problem, two_dim_y):
        post = gaussian_posterior(two_dim_problem, two_dim_y, "approx")
        mean, cov = direct_posterior(np.diag([2.1, 0.95]), 0.5, two_dim_y)
        assert_allclose(post.mean, mean, atol=1e-12)
        assert_allclose(post.covariance, cov, atol=1e-12)

    def test_latent_is_pushforward_through_K(self, two_dim_problem, two_dim_y):
        approx = gaussian_posterior(two_dim_problem, two_dim_y, "approx")
        latent = gaussian_posterior(two_dim_problem, two_dim_y, "latent")
        K = np.diag([1.05, 0.95])
        assert_allclose(latent.mean, K @ approx.mean, atol=1e-12)
        assert_allclose(latent.covariance, K @ approx.covariance @ K, atol=1e-12)

    def test_exact_copy_makes_all_variants_agree(self, exact_copy_problem):
        y = np.array([0.3, -1.2])
        exact = gaussian_posterior(exact_copy_problem, y, "exact")
        for variant in ("approx", "latent"):
            other = gaussian_posterior(exact_copy_problem, y, variant)
            assert_allclose(other.mean, exact.mean, atol=1e-10)
            assert_allclose(other.covariance, exact.covariance, atol=1e-10)

    def test_general_gaussian_prior(self):
        rng = np.random.default_rng(5)
        cov = np.array([[2.0, 0.3, 0.0], [0.3, 1.0, 0.2], [0.0, 0.2, 0.5]])
        prior = GaussianPrior([0.5, -0.2, 1.0], cov)
        F = rng.standard_normal((3, 3)) + 3.0 * np.eye(3)
        O = rng.standard_normal((2, 3))
        problem = make_problem(DenseMap(F), DenseMap(F), DenseMap(O), sigma=0.2, prior=prior)
        y = np.array([1.0, -0.5])
        post = gaussian_posterior(problem, y, "exact")
        mean, cov_post = direct_posterior(O @ F, 0.2, y, prior.mean, cov)
        assert_allclose(post.mean, mean, atol=1e-10)
        assert_allclose(post.covariance, cov_post, atol=1e-10)
        assert_allclose(post.pseudo_inverse @ y + post.offset, post.mean, atol=1e-10)

    def test_non_gaussian_prior_rejected(self, two_dim_y):
        problem = make_problem(DiagonalMap([2.0, 1.0]), DiagonalMap([2.0, 1.0]), prior=LaplacePrior(2))
        with pytest.raises(UnsupportedVariantError):
            gaussian_posterior(problem, two_dim_y, "exact")

    def test_pseudo_inverse_formula(self):
        A = np.array([[1.0, 2.0, 0.0], [0.0, 1.0, 1.0]])
        post = posterior_moments(A, 0.1, np.zeros(2))
        expected = A.T @ np.linalg.inv(A @ A.T + 0.01 * np.eye(2))
        assert_allclose(post.pseudo_inverse, expected, atol=1e-12)
        assert_allclose(post.covariance, np.eye(3) - expected @ A, atol=1e-12)

    @pytest.mark.parametrize("variant", ["exact", "approx", "latent"])
    def test_conditioning_sampler_moments(self, two_dim_problem, two_dim_y, variant):
        rng = np.random.default_rng(11)
        post = gaussian_posterior(two_dim_problem, two_dim_y, variant)
        draws = sample_gaussian_posterior(two_dim_problem, two_dim_y, variant, rng, 200_000)
        assert draws.shape == (200_000, 2)
        se = np.sqrt(np.diag(post.covariance) / draws.shape[0])
        assert np.all(np.abs(draws.mean(axis=0) - post.mean) < 4 * se)
        assert_allclose(np.cov(draws.T), post.covariance, rtol=0.03, atol=1e-3)

    def test_sample_second_moment(self, two_dim_problem, two_dim_y):
        post = gaussian_posterior(two_dim_problem, two_dim_y, "exact")
        assert_allclose(post.second_moment, np.diag(post.covariance) + post.mean**2)


class TestMixturePosterior:
    @pytest.fixture
    def mixture_problem(self):
        prior = GaussianMixturePrior([0.3, 0.7], np.array([[-2.0, 0.0], [2.0, 1.0]]))
        return make_problem(DiagonalMap([1.5, 1.0]), DiagonalMap([1.6, 0.9]), sigma=0.8, prior=prior)

    def test_weights_match_marginal_likelihoods(self, mixture_problem):
        y = np.array([1.0, 0.5])
        mix = mixture_posterior(mixture_problem, y, "exact")
        A = np.diag([1.5, 1.0])
        marginal = A @ A.T + 0.64 * np.eye(2)
        raw = np.array([
            w * multivariate_normal.pdf(y, A @ mu, marginal)
            for w, mu in zip(mixture_problem.prior.weights, mixture_problem.prior.means)
        ])
        assert_allclose(mix.weights, raw / raw.sum(), rtol=1e-10)

    def test_components_are_shifted_gaussian_posteriors(self, mixture_problem):
        y = np.array([1.0, 0.5])
        mix = mixture_posterior(mixture_problem, y, "approximate")
        A = np.diag([1.6, 0.9])
        for comp, mu in zip(mix.components, mixture_problem.prior.means):
            mean, cov = direct_posterior(A, 0.8, y, mu, np.eye(2))
            assert_allclose(comp.mean, mean, atol=1e-12)
            assert_allclose(comp.covariance, cov, atol=1e-12)

    def test_mixture_moments_and_sampling(self, mixture_problem):
        y = np.array([1.0, 0.5])
        mix = mixture_posterior(mixture_problem, y, "exact")
        draws = mix.sample(np.random.default_rng(2), 200_000)
        assert_allclose(draws.mean(axis=0), mix.mean, atol=0.02)
        assert_allclose(np.mean(draws**2, axis=0), mix.second_moment, rtol=0.02)

    def test_requires_mixture_prior(self, two_dim_problem, two_dim_y):
        with pytest.raises(UnsupportedVariantError):
            mixture_posterior(two_dim_problem, two_dim_y, "exact")


class TestLatentPrior:
    def test_change_of_variables_density(self, two_dim_problem):
        u = np.array([0.7, -0.4])
        Ft = np.diag([2.1, 0.95])
        cov = Ft @ Ft.T
        expected = -0.5 * u @ np.linalg.solve(cov, u) - np.log(abs(np.linalg.det(Ft)))
        assert latent_prior_log_density(two_dim_problem, u) == pytest.approx(expected, rel=1e-12)

    def test_latent_prior_gradient(self):
        rng = np.random.default_rng(8)
        problem = random_dense_problem(rng, 3, 2, 0.2)
        u = rng.standard_normal(3)
        numeric = approx_fprime(u, lambda v: latent_prior_log_density(problem, v), 1e-7)
        assert_allclose(latent_prior_grad(problem, u), numeric, rtol=1e-5, atol=1e-6)

    def test_latent_prior_is_never_counted(self, two_dim_problem):
        latent_prior_log_density(two_dim_problem, np.ones(2))
        latent_prior_grad(two_dim_problem, np.ones(2))
        assert two_dim_problem.counter.total == 0


def test_latent_covariance_two_ways():
    rng = np.random.default_rng(13)
    problem = random_dense_problem(rng, 60, 12, 0.2)
    approx = gaussian_posterior(problem, np.zeros(12), "approx")
    latent = gaussian_posterior(problem, np.zeros(12), "latent")
    K = to_dense(ComposedMap(InverseMap(problem.F), problem.F_tilde))
    composed = K @ approx.covariance @ K.T
    F_inv = np.linalg.inv(problem.dense_F)
    explicit = F_inv @ problem.dense_F_tilde @ approx.covariance @ problem.dense_F_tilde.T @ F_inv.T
    assert_allclose(composed, explicit, atol=1e-9)
    assert_allclose(latent.covariance, explicit, atol=1e-9)
