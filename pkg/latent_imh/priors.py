"""Prior densities over the parameter x"""

import logging
from abc import ABC, abstractmethod
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy import linalg as sla
from scipy.special import logsumexp, softmax

from latent_imh.constants import DEFAULT_TV_EPS
from latent_imh.exceptions import DimensionMismatchError, UnsupportedVariantError

logger = logging.getLogger(__name__)


class Prior(ABC):
    """
    Unnormalized log prior with gradient.

    Normalization: Gaussian kinds and the mixture drop (2 pi)^{-d/2} and their
    determinant factor, laplace keeps -d log 2, smoothed-tv drops its normalizer.
    """

    kind: str = "abstract"

    def __init__(self, dim: int):
        if dim < 1:
            raise ValueError(f"Prior dimension must be positive, got {dim}")
        self.dim = int(dim)

    @property
    def is_gaussian(self) -> bool:
        return False

    @abstractmethod
    def log_density(self, x: np.ndarray) -> float:
        ...

    @abstractmethod
    def grad_log_density(self, x: np.ndarray) -> np.ndarray:
        ...

    def value_and_grad(self, x: np.ndarray) -> Tuple[float, np.ndarray]:
        return self.log_density(x), self.grad_log_density(x)

    def sample(self, rng: np.random.Generator, n: Optional[int] = None) -> np.ndarray:
        raise UnsupportedVariantError(f"Direct sampling is not available for the {self.kind} prior")

    def __repr__(self) -> str:
        return f"{type(self).__name__}(dim={self.dim})"


class StandardNormalPrior(Prior):
    kind = "standard-normal"

    @property
    def is_gaussian(self):
        return True

    @property
    def mean(self) -> np.ndarray:
        return np.zeros(self.dim)

    def log_density(self, x):
        return float(-0.5 * (x @ x))

    def grad_log_density(self, x):
        return -np.asarray(x, dtype=float)

    def sample(self, rng, n=None):
        return rng.standard_normal(self.dim if n is None else (n, self.dim))


class GaussianPrior(Prior):
    """N(mean, cov) with dense covariance"""

    kind = "gaussian"

    def __init__(self, mean: Sequence[float], cov: np.ndarray):
        mean = np.array(mean, dtype=float).ravel()
        super().__init__(mean.size)
        cov = np.array(cov, dtype=float)
        if cov.shape != (self.dim, self.dim):
            raise DimensionMismatchError("Gaussian prior covariance", self.dim, cov.shape[0])
        self.mean = mean
        self.cov = 0.5 * (cov + cov.T)
        self.chol = np.linalg.cholesky(self.cov)
        self._cho = sla.cho_factor(self.cov, lower=True)

    @property
    def is_gaussian(self):
        return True

    def log_density(self, x):
        z = sla.solve_triangular(self.chol, x - self.mean, lower=True)
        return float(-0.5 * (z @ z))

    def grad_log_density(self, x):
        return -sla.cho_solve(self._cho, x - self.mean)

    def sample(self, rng, n=None):
        z = rng.standard_normal(self.dim if n is None else (n, self.dim))
        return self.mean + z @ self.chol.T

    @classmethod
    def ill_conditioned(cls, dim: int, condition_number: float, rng: np.random.Generator) -> "GaussianPrior":
        """Zero-mean prior whose covariance has the given condition number in a random basis"""
        Q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
        spectrum = np.logspace(0.0, -np.log10(condition_number), dim)
        return cls(np.zeros(dim), (Q * spectrum) @ Q.T)


class GaussianMixturePrior(Prior):
    """sum_k w_k N(mu_k, I)"""

    kind = "mixture"

    def __init__(self, weights: Sequence[float], means: np.ndarray):
        weights = np.array(weights, dtype=float).ravel()
        means = np.atleast_2d(np.array(means, dtype=float))
        if means.shape[0] != weights.size:
            raise DimensionMismatchError("Mixture means", weights.size, means.shape[0])
        if np.any(weights <= 0) or abs(weights.sum() - 1.0) > 1e-12:
            raise ValueError(f"Mixture weights must be positive and sum to 1, got {weights.tolist()}")
        super().__init__(means.shape[1])
        self.weights = weights
        self.means = means
        self.log_weights = np.log(weights)

    @property
    def n_components(self) -> int:
        return self.weights.size

    def _component_logs(self, x):
        diff = x - self.means
        return self.log_weights - 0.5 * np.einsum("kd,kd->k", diff, diff)

    def log_density(self, x):
        return float(logsumexp(self._component_logs(x)))

    def grad_log_density(self, x):
        resp = softmax(self._component_logs(x))
        return resp @ (self.means - x)

    def sample(self, rng, n=None):
        count = 1 if n is None else n
        comps = rng.choice(self.n_components, size=count, p=self.weights)
        draws = self.means[comps] + rng.standard_normal((count, self.dim))
        return draws[0] if n is None else draws

    @classmethod
    def symmetric(cls, dim: int, spread: float, n_components: int = 3) -> "GaussianMixturePrior":
        """Equal-weight modes spaced evenly in [-spread, spread] along the first coordinate"""
        means = np.zeros((n_components, dim))
        if n_components > 1:
            means[:, 0] = np.linspace(-spread, spread, n_components)
        return cls(np.full(n_components, 1.0 / n_components), means)


class LaplacePrior(Prior):
    """iid Laplace(0, 1): 2^{-d} exp(-|x|_1)"""

    kind = "laplace"

    def log_density(self, x):
        return float(-np.abs(x).sum() - self.dim * np.log(2.0))

    def grad_log_density(self, x):
        return -np.sign(x)

    def sample(self, rng, n=None):
        return rng.laplace(size=self.dim if n is None else (n, self.dim))


class SmoothedTvPrior(Prior):
    """exp(-lam * sum sqrt(dx^2 + dy^2 + eps^2)) with forward differences on a grid"""

    kind = "smoothed-tv"

    def __init__(self, lam: float, shape: Tuple[int, int], eps: float = DEFAULT_TV_EPS):
        if eps <= 0:
            raise ValueError(f"Smoothed TV needs eps > 0, got {eps}")
        if lam <= 0:
            raise ValueError(f"Smoothed TV needs lam > 0, got {lam}")
        rows, cols = shape
        super().__init__(rows * cols)
        self.lam = float(lam)
        self.eps = float(eps)
        self.shape = (int(rows), int(cols))

    def _differences(self, x):
        img = np.reshape(x, self.shape)
        dx = np.zeros(self.shape)
        dy = np.zeros(self.shape)
        dx[:-1, :] = img[1:, :] - img[:-1, :]
        dy[:, :-1] = img[:, 1:] - img[:, :-1]
        return dx, dy, np.sqrt(dx**2 + dy**2 + self.eps**2)

    def tv(self, x: np.ndarray) -> float:
        return float(self._differences(x)[2].sum())

    def log_density(self, x):
        return -self.lam * self.tv(x)

    def grad_log_density(self, x):
        dx, dy, mag = self._differences(x)
        a = dx / mag
        b = dy / mag
        grad = -a - b
        grad[1:, :] += a[:-1, :]
        grad[:, 1:] += b[:, :-1]
        return -self.lam * grad.ravel()


def _checked(prior: Prior, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.size != prior.dim:
        raise DimensionMismatchError(f"{prior.kind} prior argument", prior.dim, x.size)
    return x


def log_prior(prior: Prior, x: np.ndarray) -> float:
    """Unnormalized log prior density"""
    return prior.log_density(_checked(prior, x))


def grad_log_prior(prior: Prior, x: np.ndarray) -> np.ndarray:
    """Gradient of the log prior density"""
    return prior.grad_log_density(_checked(prior, x))


def prior_moments(prior: Prior) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    """Mean and covariance (None meaning identity) of a Gaussian prior"""
    if isinstance(prior, StandardNormalPrior):
        return prior.mean, None
    if isinstance(prior, GaussianPrior):
        return prior.mean, prior.cov
    raise UnsupportedVariantError(f"The {prior.kind} prior is not Gaussian")
