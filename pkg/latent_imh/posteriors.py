"""Inverse problem assembly, likelihoods and the Gaussian posterior closed forms"""

import logging
import threading
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Dict, List, Literal, Optional, Tuple

import numpy as np
from scipy import linalg as sla
from scipy.special import logsumexp

from latent_imh.constants import SINGULAR_TOL
from latent_imh.exceptions import DimensionMismatchError, SingularOperatorError, UnsupportedVariantError
from latent_imh.models import PcgSettings
from latent_imh.operators import (
    LinearMap,
    SolveCounter,
    apply,
    apply_transpose,
    solve,
    solve_transpose,
    to_dense,
)
from latent_imh.priors import GaussianMixturePrior, Prior, prior_moments

logger = logging.getLogger(__name__)

OperatorChoice = Literal["exact", "approximate"]
Variant = Literal["exact", "approx", "latent"]


@dataclass(frozen=True)
class NoiseModel:
    """Isotropic Gaussian noise N(0, sigma^2 I)"""
    sigma: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"Noise sigma must be positive, got {self.sigma}")


class _SharedCache:
    """Lazily computed dense quantities shared by every counter view of a problem"""

    def __init__(self):
        self._lock = threading.RLock()
        self._values: Dict[str, Any] = {}

    def get(self, key: str, compute: Callable[[], Any]) -> Any:
        with self._lock:
            if key not in self._values:
                self._values[key] = compute()
            return self._values[key]


@dataclass(frozen=True, eq=False)
class InverseProblem:
    """
    y = O F x + e with exact F (counted) and approximate F_tilde (free).

    Counted operations go through exact_*; everything that samplers may use for
    free goes through approx_*.
    """
    F: LinearMap
    F_tilde: LinearMap
    O: LinearMap
    prior: Prior
    noise: NoiseModel
    counter: SolveCounter = field(default_factory=SolveCounter)
    solver_settings: Optional[PcgSettings] = None
    _cache: _SharedCache = field(default_factory=_SharedCache, repr=False)

    def __post_init__(self):
        if not self.F.is_square:
            raise DimensionMismatchError("Exact operator F must be square; rows", self.F.cols, self.F.rows)
        if self.F_tilde.shape != self.F.shape:
            raise DimensionMismatchError("Approximate operator size", self.F.rows, self.F_tilde.rows)
        if self.O.cols != self.F.rows:
            raise DimensionMismatchError("Observation operator columns", self.F.rows, self.O.cols)
        if self.O.rows > self.F.rows:
            raise DimensionMismatchError("Observation count must not exceed d; d_y", self.F.rows, self.O.rows)
        if self.prior.dim != self.F.cols:
            raise DimensionMismatchError("Prior dimension", self.F.cols, self.prior.dim)

    @property
    def dim(self) -> int:
        return self.F.cols

    @property
    def obs_dim(self) -> int:
        return self.O.rows

    @property
    def sigma(self) -> float:
        return self.noise.sigma

    def with_counter(self, counter: Optional[SolveCounter] = None) -> "InverseProblem":
        """Same problem and shared caches, separate solve counter"""
        return replace(self, counter=counter if counter is not None else SolveCounter())

    # counted exact operations
    def exact_forward(self, x: np.ndarray) -> np.ndarray:
        return apply(self.F, x, self.counter)

    def exact_adjoint(self, v: np.ndarray) -> np.ndarray:
        return apply_transpose(self.F, v, self.counter)

    def exact_inverse(self, u: np.ndarray) -> np.ndarray:
        return solve(self.F, u, self.solver_settings, self.counter)

    # free approximate operations
    def approx_forward(self, x: np.ndarray) -> np.ndarray:
        return apply(self.F_tilde, x)

    def approx_adjoint(self, v: np.ndarray) -> np.ndarray:
        return apply_transpose(self.F_tilde, v)

    def approx_inverse(self, u: np.ndarray) -> np.ndarray:
        return solve(self.F_tilde, u, self.solver_settings)

    def approx_inverse_adjoint(self, v: np.ndarray) -> np.ndarray:
        return solve_transpose(self.F_tilde, v, self.solver_settings)

    def observe(self, u: np.ndarray) -> np.ndarray:
        return apply(self.O, u)

    def observe_adjoint(self, r: np.ndarray) -> np.ndarray:
        return apply_transpose(self.O, r)

    # dense views, never counted
    @property
    def dense_F(self) -> np.ndarray:
        return self._cache.get("F", lambda: to_dense(self.F))

    @property
    def dense_F_tilde(self) -> np.ndarray:
        return self._cache.get("F_tilde", lambda: to_dense(self.F_tilde))

    @property
    def dense_O(self) -> np.ndarray:
        return self._cache.get("O", lambda: to_dense(self.O))

    @property
    def dense_A(self) -> np.ndarray:
        return self._cache.get("A", lambda: self.dense_O @ self.dense_F)

    @property
    def dense_A_tilde(self) -> np.ndarray:
        return self._cache.get("A_tilde", lambda: self.dense_O @ self.dense_F_tilde)

    @property
    def dense_K(self) -> np.ndarray:
        """K = F^{-1} F_tilde"""
        return self._cache.get("K", lambda: sla.solve(self.dense_F, self.dense_F_tilde))

    def dense(self, choice: OperatorChoice) -> np.ndarray:
        return self.dense_A if choice == "exact" else self.dense_A_tilde

    @property
    def logdet_F_tilde_inv(self) -> float:
        """log |det F_tilde^{-1}|, computed once from an LU factorization"""
        return self._cache.get("logdet_F_tilde_inv", self._compute_logdet_F_tilde_inv)

    def _compute_logdet_F_tilde_inv(self) -> float:
        lu, _ = sla.lu_factor(self.dense_F_tilde, check_finite=False)
        pivots = np.abs(np.diag(lu))
        if pivots.min() <= SINGULAR_TOL * pivots.max():
            raise SingularOperatorError(
                f"Approximate operator is numerically singular (smallest pivot {pivots.min():.3e})"
            )
        return float(-np.sum(np.log(pivots)))

    def is_symmetric(self, rtol: float = 1e-10) -> bool:
        F, Ft = self.dense_F, self.dense_F_tilde
        return bool(
            np.linalg.norm(F - F.T) <= rtol * np.linalg.norm(F)
            and np.linalg.norm(Ft - Ft.T) <= rtol * np.linalg.norm(Ft)
        )

    def prepare(self) -> None:
        """Fill the shared caches before the problem is handed to worker threads"""
        _ = self.dense_A, self.dense_A_tilde, self.logdet_F_tilde_inv


def _check_obs(problem: InverseProblem, y: np.ndarray) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if y.ndim != 1 or y.size != problem.obs_dim:
        raise DimensionMismatchError("Observation vector", problem.obs_dim, y.size)
    return y


def log_likelihood(
    problem: InverseProblem, x: np.ndarray, y: np.ndarray, operator_choice: OperatorChoice = "exact"
) -> float:
    """-||y - A x||^2 / (2 sigma^2) with A = O F (counted) or O F_tilde"""
    y = _check_obs(problem, y)
    u = problem.exact_forward(x) if operator_choice == "exact" else problem.approx_forward(x)
    r = y - problem.observe(u)
    return float(-0.5 * (r @ r) / problem.sigma**2)


def latent_prior_log_density(problem: InverseProblem, u: np.ndarray) -> float:
    """log p(F_tilde^{-1} u) + log |det F_tilde^{-1}|"""
    return problem.prior.log_density(problem.approx_inverse(u)) + problem.logdet_F_tilde_inv


def latent_prior_grad(problem: InverseProblem, u: np.ndarray) -> np.ndarray:
    """F_tilde^{-T} grad log p(F_tilde^{-1} u)"""
    return problem.approx_inverse_adjoint(problem.prior.grad_log_density(problem.approx_inverse(u)))


def latent_prior_value_and_grad(problem: InverseProblem, u: np.ndarray) -> Tuple[float, np.ndarray]:
    x = problem.approx_inverse(u)
    value, grad = problem.prior.value_and_grad(x)
    return value + problem.logdet_F_tilde_inv, problem.approx_inverse_adjoint(grad)


@dataclass(frozen=True)
class GaussianPosterior:
    """Posterior N(pseudo_inverse @ y + offset, covariance)"""
    mean: np.ndarray
    covariance: np.ndarray
    pseudo_inverse: np.ndarray
    offset: Optional[np.ndarray] = None

    @property
    def dim(self) -> int:
        return self.mean.size

    @property
    def second_moment(self) -> np.ndarray:
        """Per-coordinate E[x_j^2]"""
        return np.diag(self.covariance) + self.mean**2

    def factor(self) -> np.ndarray:
        """R with R R^T = covariance; tiny negative eigenvalues are clipped"""
        vals, vecs = np.linalg.eigh(self.covariance)
        return vecs * np.sqrt(np.clip(vals, 0.0, None))

    def sample(self, rng: np.random.Generator, n: Optional[int] = None) -> np.ndarray:
        R = self.factor()
        z = rng.standard_normal(self.dim if n is None else (n, self.dim))
        return self.mean + z @ R.T


def posterior_moments(
    A: np.ndarray,
    sigma: float,
    y: np.ndarray,
    prior_mean: Optional[np.ndarray] = None,
    prior_cov: Optional[np.ndarray] = None,
) -> GaussianPosterior:
    """
    Conditional of x ~ N(m, C) given y = A x + N(0, sigma^2 I).

    With C = I this is A^+ = A^T (A A^T + sigma^2 I)^{-1}, Sigma = I - A^+ A.
    """
    d_y, d = A.shape
    CAt = A.T if prior_cov is None else prior_cov @ A.T
    S = A @ CAt + sigma**2 * np.eye(d_y)
    gain = sla.cho_solve(sla.cho_factor(S, lower=True), CAt.T).T
    if prior_cov is None:
        covariance = np.eye(d) - gain @ A
    else:
        covariance = prior_cov - gain @ CAt.T
    covariance = 0.5 * (covariance + covariance.T)
    if prior_mean is None:
        return GaussianPosterior(mean=gain @ y, covariance=covariance, pseudo_inverse=gain)
    offset = prior_mean - gain @ (A @ prior_mean)
    mean = prior_mean + gain @ (y - A @ prior_mean)
    return GaussianPosterior(mean=mean, covariance=covariance, pseudo_inverse=gain, offset=offset)


def gaussian_posterior(problem: InverseProblem, y: np.ndarray, variant: Variant) -> GaussianPosterior:
    """
    Exact, approximate or latent Gaussian posterior.

    The latent posterior is the approximate one pushed through K = F^{-1} F_tilde:
    Sigma_l = K Sigma_a K^T and A_l^+ = K A_tilde^+.
    """
    if not problem.prior.is_gaussian:
        raise UnsupportedVariantError(f"Closed-form posterior needs a Gaussian prior, got {problem.prior.kind}")
    y = _check_obs(problem, y)
    mean, cov = prior_moments(problem.prior)
    prior_mean = None if not np.any(mean) else mean
    if variant == "exact":
        return posterior_moments(problem.dense_A, problem.sigma, y, prior_mean, cov)
    approx = posterior_moments(problem.dense_A_tilde, problem.sigma, y, prior_mean, cov)
    if variant == "approx":
        return approx
    if variant != "latent":
        raise UnsupportedVariantError(f"Unknown posterior variant '{variant}'")
    K = problem.dense_K
    covariance = K @ approx.covariance @ K.T
    return GaussianPosterior(
        mean=K @ approx.mean,
        covariance=0.5 * (covariance + covariance.T),
        pseudo_inverse=K @ approx.pseudo_inverse,
        offset=None if approx.offset is None else K @ approx.offset,
    )


def sample_gaussian_posterior(
    problem: InverseProblem, y: np.ndarray, variant: Variant, rng: np.random.Generator, n: int = 1
) -> np.ndarray:
    """
    Draw n posterior samples by conditioning prior draws (Matheron's rule):
    x = z + G (y - A z - sigma xi) with z from the prior and G the posterior gain.
    Needs no factorization of the posterior covariance.
    """
    y = _check_obs(problem, y)
    post = gaussian_posterior(problem, y, "approx" if variant == "latent" else variant)
    A = problem.dense_A if variant == "exact" else problem.dense_A_tilde
    z = problem.prior.sample(rng, n)
    xi = rng.standard_normal((n, problem.obs_dim))
    innovations = y - z @ A.T - problem.sigma * xi
    draws = z + innovations @ post.pseudo_inverse.T
    if variant == "latent":
        draws = draws @ problem.dense_K.T
    return draws


@dataclass(frozen=True)
class MixturePosterior:
    """Posterior of a Gaussian-mixture prior: reweighted Gaussian components"""
    weights: np.ndarray
    components: List[GaussianPosterior]

    @property
    def mean(self) -> np.ndarray:
        return sum(w * c.mean for w, c in zip(self.weights, self.components))

    @property
    def second_moment(self) -> np.ndarray:
        return sum(w * c.second_moment for w, c in zip(self.weights, self.components))

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        comps = rng.choice(len(self.components), size=n, p=self.weights)
        out = np.empty((n, self.components[0].dim))
        for k, comp in enumerate(self.components):
            rows = np.flatnonzero(comps == k)
            if rows.size:
                out[rows] = comp.sample(rng, rows.size)
        return out


def mixture_posterior(problem: InverseProblem, y: np.ndarray, operator_choice: OperatorChoice) -> MixturePosterior:
    """
    Component k has prior N(mu_k, I); its posterior weight is proportional to
    w_k N(y; A mu_k, A A^T + sigma^2 I).
    """
    prior = problem.prior
    if not isinstance(prior, GaussianMixturePrior):
        raise UnsupportedVariantError(f"Mixture posterior needs a mixture prior, got {prior.kind}")
    y = _check_obs(problem, y)
    A = problem.dense(operator_choice)
    marginal = A @ A.T + problem.sigma**2 * np.eye(A.shape[0])
    chol = np.linalg.cholesky(marginal)
    log_w = np.empty(prior.n_components)
    components = []
    for k in range(prior.n_components):
        r = sla.solve_triangular(chol, y - A @ prior.means[k], lower=True)
        log_w[k] = prior.log_weights[k] - 0.5 * (r @ r)
        components.append(posterior_moments(A, problem.sigma, y, prior_mean=prior.means[k]))
    weights = np.exp(log_w - logsumexp(log_w))
    return MixturePosterior(weights=weights, components=components)
