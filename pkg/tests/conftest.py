"""Shared fixtures: small hand-built inverse problems"""

from typing import Optional

import numpy as np
import pytest

from latent_imh.operators import DenseMap, DiagonalMap, LinearMap
from latent_imh.posteriors import InverseProblem, NoiseModel
from latent_imh.priors import Prior, StandardNormalPrior


def make_problem(
    F: LinearMap,
    F_tilde: LinearMap,
    O: Optional[LinearMap] = None,
    sigma: float = 0.5,
    prior: Optional[Prior] = None,
) -> InverseProblem:
    d = F.cols
    return InverseProblem(
        F=F,
        F_tilde=F_tilde,
        O=O if O is not None else DenseMap(np.eye(d)),
        prior=prior if prior is not None else StandardNormalPrior(d),
        noise=NoiseModel(sigma),
    )


def random_dense_problem(rng: np.random.Generator, d: int, d_y: int, perturbation: float, sigma: float = 0.3) -> InverseProblem:
    F = rng.standard_normal((d, d)) / np.sqrt(d) + 2.0 * np.eye(d)
    F_tilde = F + perturbation * rng.standard_normal((d, d)) / np.sqrt(d)
    O = rng.standard_normal((d_y, d)) / np.sqrt(d)
    return make_problem(DenseMap(F), DenseMap(F_tilde), DenseMap(O), sigma)


@pytest.fixture
def two_dim_problem() -> InverseProblem:
    """F = diag(2, 1), F_tilde = diag(2.1, 0.95), O = I, sigma = 0.5"""
    return make_problem(DiagonalMap([2.0, 1.0]), DiagonalMap([2.1, 0.95]), sigma=0.5)


@pytest.fixture
def two_dim_y() -> np.ndarray:
    return np.array([3.0, 2.0])


@pytest.fixture
def exact_copy_problem() -> InverseProblem:
    """F_tilde identical to F"""
    rng = np.random.default_rng(21)
    F = rng.standard_normal((4, 4)) + 3.0 * np.eye(4)
    O = rng.standard_normal((2, 4))
    return make_problem(DenseMap(F), DenseMap(F.copy()), DenseMap(O), sigma=0.4)
