"""Tests for expected KL closed forms, KL bounds and the mixing-time evaluators"""

import numpy as np
import pytest
from numpy.testing import assert_allclose
from pydantic import ValidationError

from conftest import make_problem, random_dense_problem
from latent_imh.analytics import (
    DiagonalSpec,
    expected_kl_closed_form,
    expected_kl_diagonal,
    expected_kl_prior,
    kl_gaussians,
    kl_general_bounds,
    lipschitz_admissible,
    mixing_bound,
    mixing_radius,
    mixing_scaling_diagonal,
    radius_constant,
)
from latent_imh.exceptions import UnsupportedVariantError
from latent_imh.models import KlReport, MixingBoundInputs
from latent_imh.operators import DenseMap, DiagonalMap
from latent_imh.posteriors import gaussian_posterior
from latent_imh.priors import LaplacePrior
from latent_imh.problems import make_diagonal_synthetic


def random_spec(rng: np.random.Generator) -> DiagonalSpec:
    d = int(rng.integers(2, 41))
    d_y = int(rng.integers(1, d + 1))
    s = np.sort(rng.uniform(0.05, 2.0, d))[::-1]
    alpha = rng.uniform(0.6, 1.4, d)
    return DiagonalSpec(d=d, d_y=d_y, s=s, alpha=alpha, sigma=float(rng.uniform(0.05, 1.0)))


def problem_from_spec(spec: DiagonalSpec):
    O = np.eye(spec.d)[: spec.d_y]
    return make_problem(DiagonalMap(spec.s), DiagonalMap(spec.alpha * spec.s), DenseMap(O), spec.sigma)


class TestKlGaussians:
    def test_identical_is_zero(self):
        cov = np.array([[2.0, 0.3], [0.3, 1.0]])
        assert kl_gaussians((np.ones(2), cov), (np.ones(2), cov)) == pytest.approx(0.0, abs=1e-14)

    def test_one_dimensional_closed_form(self):
        value = kl_gaussians((np.zeros(1), np.eye(1)), (np.ones(1), 4.0 * np.eye(1)))
        assert value == pytest.approx(np.log(2.0) + 2.0 / 8.0 - 0.5, rel=1e-12)


class TestExpectedKl:
    def test_diagonal_formula_matches_closed_form(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            spec = random_spec(rng)
            general = expected_kl_closed_form(problem_from_spec(spec))
            diagonal = expected_kl_diagonal(spec)
            assert abs(general.D_a - diagonal.D_a) <= 1e-10 * (1 + abs(diagonal.D_a))
            assert abs(general.D_l - diagonal.D_l) <= 1e-10 * (1 + abs(diagonal.D_l))

    def test_exact_copy_gives_zero(self, exact_copy_problem):
        report = expected_kl_closed_form(exact_copy_problem)
        assert report.D_a == pytest.approx(0.0, abs=1e-8)
        assert report.D_l == pytest.approx(0.0, abs=1e-8)

    def test_diagonal_with_unit_alpha_is_zero(self):
        spec = DiagonalSpec(d=5, d_y=2, s=np.ones(5), alpha=np.ones(5), sigma=0.3)
        report = expected_kl_diagonal(spec)
        assert report.D_a == pytest.approx(0.0, abs=1e-12)
        assert report.D_l == pytest.approx(0.0, abs=1e-12)

    def test_latent_only_pays_for_unobserved_mismatch_in_diagonal_case(self):
        alpha = np.array([1.0, 1.0, 1.3])
        spec = DiagonalSpec(d=3, d_y=2, s=np.ones(3), alpha=alpha, sigma=0.5)
        report = expected_kl_diagonal(spec)
        assert report.D_a == pytest.approx(0.0, abs=1e-12)
        assert report.D_l == pytest.approx(1.3**2 - np.log(1.3**2) - 1.0, rel=1e-12)

    def test_monte_carlo_oracle(self):
        rng = np.random.default_rng(4)
        problem = random_dense_problem(rng, 6, 3, 0.3, sigma=0.4)
        A = problem.dense_A
        marginal = A @ A.T + problem.sigma**2 * np.eye(3)
        ys = rng.multivariate_normal(np.zeros(3), marginal, size=4000)
        kl_a, kl_l = [], []
        for y in ys:
            exact = gaussian_posterior(problem, y, "exact")
            approx = gaussian_posterior(problem, y, "approx")
            latent = gaussian_posterior(problem, y, "latent")
            target = (exact.mean, exact.covariance)
            kl_a.append(2.0 * kl_gaussians((approx.mean, approx.covariance), target))
            kl_l.append(2.0 * kl_gaussians((latent.mean, latent.covariance), target))
        report = expected_kl_closed_form(problem)
        for samples, value in ((kl_a, report.D_a), (kl_l, report.D_l)):
            samples = np.asarray(samples)
            se = samples.std(ddof=1) / np.sqrt(samples.size)
            assert abs(samples.mean() - value) <= 4 * se + 1e-12

    def test_prior_kl_for_diagonal_problem(self):
        spec = DiagonalSpec(d=4, d_y=2, s=np.array([2.0, 1.0, 0.5, 0.1]), alpha=np.ones(4), sigma=0.5)
        expected = np.sum(np.log(1.0 + spec.s[:2] ** 2 / 0.25))
        assert expected_kl_prior(problem_from_spec(spec)) == pytest.approx(expected, rel=1e-12)

    def test_non_gaussian_prior_rejected(self):
        problem = make_problem(DiagonalMap([1.0, 2.0]), DiagonalMap([1.0, 2.0]), prior=LaplacePrior(2))
        with pytest.raises(UnsupportedVariantError):
            expected_kl_closed_form(problem)

    def test_negative_report_rejected(self):
        with pytest.raises(ValidationError):
            KlReport(D_a=-1e-3, D_l=0.0)
        assert KlReport(D_a=-1e-9, D_l=0.0).D_a < 0

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            DiagonalSpec(d=3, d_y=4, s=np.ones(3), alpha=np.ones(3), sigma=1.0)
        with pytest.raises(ValueError):
            DiagonalSpec(d=2, d_y=1, s=np.ones(2), alpha=np.array([1.0, 0.0]), sigma=1.0)


class TestBounds:
    @pytest.mark.parametrize("seed", range(50))
    def test_bounds_dominate_expected_kl(self, seed):
        rng = np.random.default_rng(seed)
        instance = make_diagonal_synthetic(
            d=int(rng.integers(6, 16)),
            d_y=int(rng.integers(1, 5)),
            spectral_error_target=float(rng.uniform(0.01, 0.2)),
            seed=seed,
            log10_snr=float(rng.uniform(0.5, 3.0)),
        )
        bounds = kl_general_bounds(instance.problem)
        kl = expected_kl_closed_form(instance.problem)
        assert bounds.bound_D_a >= kl.D_a
        assert bounds.bound_D_l >= kl.D_l

    def test_exact_copy_has_unit_condition_numbers(self):
        instance = make_diagonal_synthetic(d=8, d_y=3, spectral_error_target=0.0, seed=1)
        bounds = kl_general_bounds(instance.problem)
        assert bounds.kappa_plus == pytest.approx(1.0, abs=1e-10)
        assert bounds.kappa_minus == pytest.approx(1.0, abs=1e-10)
        assert bounds.tau == pytest.approx(0.0, abs=1e-10)
        assert bounds.matching_valid

    def test_left_vector_mismatch_invalidates_matching(self):
        # first rows of F and F_tilde point in opposite directions: right vectors match after a sign flip, left ones do not
        F = np.array([[2.0, 1.0], [1.0, 3.0]])
        F_tilde = np.array([[-2.0, -1.0], [-1.0, 3.0]])
        problem = make_problem(DenseMap(F), DenseMap(F_tilde), DenseMap([[1.0, 0.0]]), sigma=0.5)
        bounds = kl_general_bounds(problem)
        assert not bounds.matching_valid
        assert bounds.min_overlap == pytest.approx(-1.0)

    def test_non_symmetric_problem_rejected(self):
        problem = random_dense_problem(np.random.default_rng(2), 4, 2, 0.1)
        with pytest.raises(UnsupportedVariantError):
            kl_general_bounds(problem)


class TestMixing:
    def test_mixing_bound_without_lipschitz_term(self):
        inputs = MixingBoundInputs(m=1.0, beta=2.0, eps_tv=0.1, lipschitz_C=0.0)
        assert mixing_bound(inputs) == pytest.approx(128.0 * np.log(40.0))

    def test_mixing_bound_grows_with_lipschitz_constant(self):
        small = mixing_bound(MixingBoundInputs(m=1.0, beta=1.0, eps_tv=0.1, lipschitz_C=0.01))
        large = mixing_bound(MixingBoundInputs(m=1.0, beta=1.0, eps_tv=0.1, lipschitz_C=1.0))
        assert large > small

    def test_admissibility_threshold(self):
        edge = np.log(2.0) * 2.0 / 32.0
        assert lipschitz_admissible(edge, 4.0)
        assert not lipschitz_admissible(edge * 1.01, 4.0)

    def test_radius_constant(self):
        d = 16
        s = 0.01
        t = -np.log(s)
        assert radius_constant(s, d) == pytest.approx(2.0 + 2.0 * max((t / d) ** 0.25, (t / d) ** 0.5))
        with pytest.raises(ValueError):
            radius_constant(0.5, d)

    def test_latent_radius_scales_with_smallest_singular_value(self):
        base = mixing_radius(10, 1.0, 0.1, 1.0, mode_gap=0.0)
        scaled = mixing_radius(10, 1.0, 0.1, 1.0, mode_gap=0.0, sigma_min=0.5)
        assert scaled > base

    def test_diagonal_scaling_vanishes_for_exact_copy(self):
        spec = DiagonalSpec(d=4, d_y=2, s=np.ones(4), alpha=np.ones(4), sigma=0.1)
        assert_allclose(mixing_scaling_diagonal(spec, 1.0), (0.0, 0.0))

    def test_diagonal_scaling_approx_grows_as_noise_shrinks(self):
        alpha = np.array([1.05, 0.95, 1.0])
        loud = mixing_scaling_diagonal(DiagonalSpec(d=3, d_y=2, s=np.ones(3), alpha=alpha, sigma=1.0), 1.0)
        quiet = mixing_scaling_diagonal(DiagonalSpec(d=3, d_y=2, s=np.ones(3), alpha=alpha, sigma=0.1), 1.0)
        assert quiet[0] > loud[0]
        assert quiet[1] == pytest.approx(loud[1])


@pytest.mark.slow
def test_approx_kl_grows_with_snr_on_sensitivity_grid():
    values = []
    for log10_snr in np.arange(0.5, 4.01, 0.5):
        instance = make_diagonal_synthetic(d=500, d_y=100, spectral_error_target=0.06, seed=0, log10_snr=log10_snr)
        values.append(expected_kl_diagonal(instance.diagonal).D_a)
    assert all(b > a for a, b in zip(values[:-1], values[1:]))
