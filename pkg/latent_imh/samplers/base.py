"""Sample containers, chain bookkeeping and differentiable targets"""

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Any, Dict, Literal, Optional, Tuple

import numpy as np
from scipy import linalg as sla

from latent_imh.exceptions import DimensionMismatchError
from latent_imh.operators import SolveCounter
from latent_imh.posteriors import InverseProblem, latent_prior_value_and_grad

logger = logging.getLogger(__name__)


@dataclass
class SampleBatch:
    """Chain output with per-step acceptance and cumulative counted solves"""
    samples: np.ndarray
    accepted: np.ndarray
    forward_solves: np.ndarray
    inverse_solves: np.ndarray
    truncated: bool = False
    meta: Dict[str, Any] = field(default_factory=dict)

    @property
    def n_steps(self) -> int:
        return self.samples.shape[0]

    @property
    def dim(self) -> int:
        return self.samples.shape[1]

    @property
    def acceptance_rate(self) -> float:
        return float(np.mean(self.accepted)) if self.accepted.size else 0.0

    @property
    def total_solves(self) -> np.ndarray:
        return self.forward_solves + self.inverse_solves


@dataclass
class ChainState:
    """Current point of a chain and the cached terms of its acceptance ratio"""
    x: np.ndarray
    u: Optional[np.ndarray] = None
    log_weight: float = 0.0


class ChainRecorder:
    """Collects rows of a SampleBatch and enforces an optional solve budget"""

    def __init__(
        self,
        n_steps: int,
        dim: int,
        counter: Optional[SolveCounter] = None,
        solve_budget: Optional[int] = None,
    ):
        if n_steps < 1:
            raise ValueError(f"n_steps must be at least 1, got {n_steps}")
        self.n_steps = n_steps
        self.counter = counter
        self.solve_budget = solve_budget
        self._start = counter.snapshot() if counter is not None else (0, 0)
        self._samples = np.empty((n_steps, dim))
        self._accepted = np.zeros(n_steps, dtype=bool)
        self._forward = np.zeros(n_steps, dtype=np.int64)
        self._inverse = np.zeros(n_steps, dtype=np.int64)
        self._size = 0

    @property
    def size(self) -> int:
        return self._size

    def used(self) -> Tuple[int, int]:
        if self.counter is None:
            return 0, 0
        forward, inverse = self.counter.snapshot()
        return forward - self._start[0], inverse - self._start[1]

    def exhausted(self, next_cost: int = 1) -> bool:
        """True when the next step could overrun the solve budget"""
        if self.solve_budget is None:
            return False
        return sum(self.used()) + next_cost > self.solve_budget

    def record(self, x: np.ndarray, accepted: bool) -> None:
        i = self._size
        self._samples[i] = x
        self._accepted[i] = accepted
        self._forward[i], self._inverse[i] = self.used()
        self._size += 1

    def finish(self, **meta: Any) -> SampleBatch:
        n = self._size
        truncated = n < self.n_steps
        if truncated:
            logger.info(f"Solve budget {self.solve_budget} reached after {n} of {self.n_steps} steps")
        return SampleBatch(
            samples=self._samples[:n].copy(),
            accepted=self._accepted[:n].copy(),
            forward_solves=self._forward[:n].copy(),
            inverse_solves=self._inverse[:n].copy(),
            truncated=truncated,
            meta=dict(meta),
        )


def log_uniform(rng: np.random.Generator) -> float:
    """log U with U uniform on (0, 1]"""
    return float(np.log1p(-rng.random()))


def metropolis_accept(log_ratio: float, rng: np.random.Generator) -> bool:
    """Accept with probability min(1, exp(log_ratio)); draws a uniform only when log_ratio < 0"""
    if log_ratio >= 0.0:
        return True
    return log_uniform(rng) < log_ratio


class Target(ABC):
    """Differentiable unnormalized log density; cost is counted solves per value_and_grad"""

    dim: int
    cost: int = 0

    @abstractmethod
    def value_and_grad(self, x: np.ndarray) -> Tuple[float, np.ndarray]:
        ...

    def log_density(self, x: np.ndarray) -> float:
        return self.value_and_grad(x)[0]


class GaussianTarget(Target):
    """N(mean, cov); useful as a reference target"""

    def __init__(self, mean: np.ndarray, cov: np.ndarray):
        self.mean = np.asarray(mean, dtype=float)
        self.dim = self.mean.size
        cov = np.atleast_2d(np.asarray(cov, dtype=float))
        if cov.shape != (self.dim, self.dim):
            raise DimensionMismatchError("GaussianTarget covariance", self.dim, cov.shape[0])
        self.cov = cov
        self._cho = sla.cho_factor(cov, lower=True)

    def value_and_grad(self, x):
        g = -sla.cho_solve(self._cho, x - self.mean)
        return float(0.5 * ((x - self.mean) @ g)), g


class PosteriorTarget(Target):
    """
    log q(y - O F x) + log p(x), or with F_tilde for the approximate posterior.

    With the exact operator, log_density costs one counted forward apply and
    value_and_grad one forward plus one adjoint apply.
    """

    def __init__(self, problem: InverseProblem, y: np.ndarray, operator_choice: Literal["exact", "approximate"] = "exact"):
        self.problem = problem
        self.y = np.asarray(y, dtype=float)
        self.dim = problem.dim
        self.exact = operator_choice == "exact"
        self.cost = 2 if self.exact else 0

    def _forward(self, x):
        return self.problem.exact_forward(x) if self.exact else self.problem.approx_forward(x)

    def _adjoint(self, v):
        return self.problem.exact_adjoint(v) if self.exact else self.problem.approx_adjoint(v)

    def log_density(self, x):
        r = self.y - self.problem.observe(self._forward(x))
        return float(-0.5 * (r @ r) / self.problem.sigma**2 + self.problem.prior.log_density(x))

    def value_and_grad(self, x):
        sigma2 = self.problem.sigma**2
        r = self.y - self.problem.observe(self._forward(x))
        prior_value, prior_grad = self.problem.prior.value_and_grad(x)
        grad = self._adjoint(self.problem.observe_adjoint(r) / sigma2) + prior_grad
        return float(-0.5 * (r @ r) / sigma2 + prior_value), grad


class LatentTarget(Target):
    """Approximate latent posterior log q(y - O u) + log p~(u) in u-space; never counted"""

    def __init__(self, problem: InverseProblem, y: np.ndarray):
        self.problem = problem
        self.y = np.asarray(y, dtype=float)
        self.dim = problem.dim

    def value_and_grad(self, u):
        sigma2 = self.problem.sigma**2
        r = self.y - self.problem.observe(u)
        prior_value, prior_grad = latent_prior_value_and_grad(self.problem, u)
        return float(-0.5 * (r @ r) / sigma2 + prior_value), self.problem.observe_adjoint(r) / sigma2 + prior_grad
