"""Independence Metropolis-Hastings with Approx and Latent proposals"""

import logging
from dataclasses import dataclass, replace
from typing import List, Literal, Optional, Tuple, Union

import numpy as np

from latent_imh.constants import INNER_STEPS, INNER_WARMUP, NUTS_TARGET_ACCEPT
from latent_imh.exceptions import DimensionMismatchError, UnsupportedVariantError
from latent_imh.posteriors import (
    InverseProblem,
    gaussian_posterior,
    latent_prior_log_density,
    mixture_posterior,
)
from latent_imh.priors import GaussianMixturePrior, Prior
from latent_imh.samplers.base import (
    ChainRecorder,
    ChainState,
    LatentTarget,
    PosteriorTarget,
    SampleBatch,
    metropolis_accept,
)
from latent_imh.samplers.nuts import NutsSampler

logger = logging.getLogger(__name__)

ProposalKind = Literal["approx-imh", "latent-imh"]
InnerKind = Literal["exact-gaussian", "exact-mixture", "inner-nuts"]
LatentMode = Literal["linear", "black-box"]


class _ClosedFormSource:
    """Draws from a Gaussian or a finite Gaussian mixture given component means and factors"""

    independent = True

    def __init__(self, weights: np.ndarray, means: List[np.ndarray], factors: List[np.ndarray]):
        self.weights = np.asarray(weights, dtype=float)
        self.means = means
        self.factors = factors

    def draw(self, rng: np.random.Generator) -> np.ndarray:
        k = int(rng.choice(self.weights.size, p=self.weights)) if self.weights.size > 1 else 0
        z = rng.standard_normal(self.factors[k].shape[1])
        return self.means[k] + self.factors[k] @ z


class _InnerNutsSource:
    """Persistent NUTS chain on the cheap posterior; each draw advances it a fixed number of steps"""

    independent = False

    def __init__(self, sampler: NutsSampler, inner_steps: int):
        self.sampler = sampler
        self.inner_steps = inner_steps

    def draw(self, rng: np.random.Generator) -> np.ndarray:
        for _ in range(self.inner_steps):
            self.sampler.transition()
        return self.sampler.x.copy()


ProposalSource = Union[_ClosedFormSource, _InnerNutsSource]


@dataclass(frozen=True)
class ProposalEngine:
    """
    Proposal distribution of an IMH chain.

    approx-imh proposes x from the approximate posterior; latent-imh proposes u
    from the approximate latent posterior and maps it back with x = F^{-1} u.
    Both use only the cheap operator F_tilde; inner=None selects the closed
    form when the prior allows it and NUTS otherwise.
    """
    kind: ProposalKind
    inner: Optional[InnerKind] = None
    latent_mode: LatentMode = "linear"
    inner_steps: int = INNER_STEPS
    inner_warmup: int = INNER_WARMUP
    target_accept: float = NUTS_TARGET_ACCEPT

    def resolved(self, prior: Prior) -> "ProposalEngine":
        """Fill in the inner sampler and check that it fits the prior"""
        inner = self.inner
        if inner is None:
            if prior.is_gaussian:
                inner = "exact-gaussian"
            elif isinstance(prior, GaussianMixturePrior):
                inner = "exact-mixture"
            else:
                inner = "inner-nuts"
        if inner == "exact-gaussian" and not prior.is_gaussian:
            raise UnsupportedVariantError(f"exact-gaussian proposals need a Gaussian prior, got {prior.kind}")
        if inner == "exact-mixture" and not isinstance(prior, GaussianMixturePrior):
            raise UnsupportedVariantError(f"exact-mixture proposals need a mixture prior, got {prior.kind}")
        if self.inner_steps < 1:
            raise ValueError(f"inner_steps must be at least 1, got {self.inner_steps}")
        return replace(self, inner=inner)

    def bind(self, problem: InverseProblem, y: np.ndarray, rng: np.random.Generator) -> ProposalSource:
        """Precompute the proposal for one observation vector (never counted)"""
        engine = self.resolved(problem.prior)
        latent = engine.kind == "latent-imh"
        if engine.inner == "inner-nuts":
            target = LatentTarget(problem, y) if latent else PosteriorTarget(problem, y, "approximate")
            sampler = NutsSampler(target, np.zeros(problem.dim), rng, target_accept=engine.target_accept)
            sampler.warmup(engine.inner_warmup)
            logger.debug(f"Inner NUTS ready for {engine.kind}: step={sampler.step:.4g}")
            return _InnerNutsSource(sampler, engine.inner_steps)

        if engine.inner == "exact-gaussian":
            posts = [gaussian_posterior(problem, y, "approx")]
            weights = np.ones(1)
        else:
            mix = mixture_posterior(problem, y, "approximate")
            posts, weights = mix.components, mix.weights
        means = [p.mean for p in posts]
        factors = [p.factor() for p in posts]
        if latent:
            Ft = problem.dense_F_tilde
            means = [Ft @ m for m in means]
            factors = [Ft @ R for R in factors]
        return _ClosedFormSource(weights, means, factors)


def approx_log_weight(problem: InverseProblem, y: np.ndarray, x: np.ndarray) -> float:
    """log q(y - A x) - log q(y - A_tilde x); one counted forward apply"""
    sigma2 = problem.sigma**2
    r_exact = y - problem.observe(problem.exact_forward(x))
    r_approx = y - problem.observe(problem.approx_forward(x))
    return float(-0.5 * (r_exact @ r_exact) / sigma2 + 0.5 * (r_approx @ r_approx) / sigma2)


def latent_log_weight(problem: InverseProblem, x: np.ndarray, u: np.ndarray, mode: LatentMode = "linear") -> float:
    """
    log p(x) - log p_tilde(u) for x = F^{-1} u; never counted.

    linear mode drops the constant log |det F_tilde^{-1}|, which cancels in the
    acceptance ratio.
    """
    if mode == "linear":
        return problem.prior.log_density(x) - problem.prior.log_density(problem.approx_inverse(u))
    if mode == "black-box":
        return problem.prior.log_density(x) - latent_prior_log_density(problem, u)
    raise UnsupportedVariantError(f"Unknown latent mode '{mode}'")


def accept_log_ratio_approx(problem: InverseProblem, y: np.ndarray, x_prop: np.ndarray, state: ChainState) -> float:
    """Log acceptance ratio of Approx-IMH against the cached weight of the current state"""
    if np.size(x_prop) != problem.dim:
        raise DimensionMismatchError("Proposed x", problem.dim, np.size(x_prop))
    return approx_log_weight(problem, y, x_prop) - state.log_weight


def accept_log_ratio_latent(
    problem: InverseProblem,
    x_prop: np.ndarray,
    u_prop: np.ndarray,
    state: ChainState,
    mode: LatentMode = "linear",
) -> float:
    """Log acceptance ratio of Latent-IMH; the likelihood does not enter"""
    return latent_log_weight(problem, x_prop, u_prop, mode) - state.log_weight


def propose_latent(
    problem: InverseProblem,
    y: np.ndarray,
    engine: ProposalEngine,
    rng: np.random.Generator,
    source: Optional[ProposalSource] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Draw u from the approximate latent posterior and solve x = F^{-1} u.

    Exactly one counted inverse solve. Without a bound source the proposal is
    rebuilt on every call.
    """
    if engine.kind != "latent-imh":
        raise UnsupportedVariantError(f"propose_latent needs a latent-imh engine, got {engine.kind}")
    source = source or engine.bind(problem, y, rng)
    u = source.draw(rng)
    return u, problem.exact_inverse(u)


def run_imh(
    problem: InverseProblem,
    y: np.ndarray,
    engine: ProposalEngine,
    n_steps: int,
    rng: np.random.Generator,
    solve_budget: Optional[int] = None,
) -> SampleBatch:
    """
    Independence Metropolis-Hastings chain.

    The first row is a draw from the proposal. Every row costs one counted solve:
    a forward apply for approx-imh, an inverse solve for latent-imh.
    """
    y = np.asarray(y, dtype=float)
    if y.size != problem.obs_dim:
        raise DimensionMismatchError("Observation vector", problem.obs_dim, y.size)
    engine = engine.resolved(problem.prior)
    latent = engine.kind == "latent-imh"
    recorder = ChainRecorder(n_steps, problem.dim, problem.counter, solve_budget)
    source = engine.bind(problem, y, rng)

    def propose() -> Tuple[np.ndarray, Optional[np.ndarray], float]:
        if latent:
            u, x = propose_latent(problem, y, engine, rng, source)
            return x, u, latent_log_weight(problem, x, u, engine.latent_mode)
        x = source.draw(rng)
        return x, None, approx_log_weight(problem, y, x)

    logger.debug(f"Starting {engine.kind} ({engine.inner}) for {n_steps} steps")
    state: Optional[ChainState] = None
    while recorder.size < n_steps and not recorder.exhausted():
        x, u, log_weight = propose()
        if state is None:
            state = ChainState(x=x, u=u, log_weight=log_weight)
            recorder.record(x, True)
            continue
        accepted = metropolis_accept(log_weight - state.log_weight, rng)
        if accepted:
            state = ChainState(x=x, u=u, log_weight=log_weight)
        recorder.record(state.x, accepted)

    return recorder.finish(
        sampler=engine.kind,
        inner=engine.inner,
        latent_mode=engine.latent_mode if latent else None,
        independent=source.independent,
    )
