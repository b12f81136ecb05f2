"""No-U-Turn sampler with slice acceptance and dual-averaging step adaptation"""

import logging
from typing import NamedTuple, Optional, Tuple

import numpy as np

from latent_imh.constants import (
    DUAL_AVERAGING_GAMMA,
    DUAL_AVERAGING_KAPPA,
    DUAL_AVERAGING_T0,
    NUTS_DIVERGENCE,
    NUTS_MAX_DEPTH,
    NUTS_TARGET_ACCEPT,
)
from latent_imh.operators import SolveCounter
from latent_imh.samplers.base import ChainRecorder, SampleBatch, Target

logger = logging.getLogger(__name__)


def leapfrog(
    target: Target, x: np.ndarray, p: np.ndarray, grad: np.ndarray, step: float
) -> Tuple[np.ndarray, np.ndarray, float, np.ndarray]:
    """One leapfrog step; returns (x, p, log density, gradient) at the new point"""
    p_half = p + 0.5 * step * grad
    x_new = x + step * p_half
    logp_new, grad_new = target.value_and_grad(x_new)
    p_new = p_half + 0.5 * step * grad_new
    return x_new, p_new, logp_new, grad_new


def find_reasonable_step(
    target: Target, x: np.ndarray, logp: float, grad: np.ndarray, rng: np.random.Generator, max_rounds: int = 100
) -> float:
    """Double or halve the step until one leapfrog step crosses acceptance 1/2"""
    step = 1.0
    p = rng.standard_normal(x.size)

    def log_accept(eps):
        _, p_new, logp_new, _ = leapfrog(target, x, p, grad, eps)
        value = logp_new - logp - 0.5 * (p_new @ p_new - p @ p)
        return value if np.isfinite(value) else -np.inf

    log_a = log_accept(step)
    direction = 1.0 if log_a > np.log(0.5) else -1.0
    for _ in range(max_rounds):
        if direction * log_a <= -direction * np.log(2.0):
            break
        step *= 2.0**direction
        log_a = log_accept(step)
    return step


class _Tree(NamedTuple):
    x_minus: np.ndarray
    p_minus: np.ndarray
    grad_minus: np.ndarray
    x_plus: np.ndarray
    p_plus: np.ndarray
    grad_plus: np.ndarray
    x_prop: np.ndarray
    logp_prop: float
    grad_prop: np.ndarray
    n_valid: int
    keep_going: bool
    alpha_sum: float
    n_alpha: int
    divergent: bool


class NutsSampler:
    """
    Persistent NUTS chain.

    warmup() adapts the step size by dual averaging toward target_accept and
    then freezes it; transition() advances the chain by one tree.
    """

    def __init__(
        self,
        target: Target,
        x0: np.ndarray,
        rng: np.random.Generator,
        step: Optional[float] = None,
        target_accept: float = NUTS_TARGET_ACCEPT,
        max_depth: int = NUTS_MAX_DEPTH,
    ):
        self.target = target
        self.rng = rng
        self.target_accept = target_accept
        self.max_depth = max_depth
        self.x = np.array(x0, dtype=float)
        self.logp, self.grad = target.value_and_grad(self.x)
        self.step = step if step is not None else find_reasonable_step(target, self.x, self.logp, self.grad, rng)
        self.divergences = 0
        self.last_accept_stat = 1.0

    def _build_tree(self, x, p, grad, log_slice, direction, depth, joint0) -> _Tree:
        if depth == 0:
            x_new, p_new, logp_new, grad_new = leapfrog(self.target, x, p, grad, direction * self.step)
            joint = logp_new - 0.5 * (p_new @ p_new)
            if not np.isfinite(joint):
                joint = -np.inf
            n_valid = int(log_slice <= joint)
            keep_going = joint > log_slice - NUTS_DIVERGENCE
            alpha = float(np.exp(min(0.0, joint - joint0)))
            return _Tree(x_new, p_new, grad_new, x_new, p_new, grad_new, x_new, logp_new, grad_new,
                         n_valid, keep_going, alpha, 1, not keep_going)

        tree = self._build_tree(x, p, grad, log_slice, direction, depth - 1, joint0)
        if not tree.keep_going:
            return tree
        if direction < 0:
            other = self._build_tree(tree.x_minus, tree.p_minus, tree.grad_minus, log_slice, direction, depth - 1, joint0)
            x_minus, p_minus, grad_minus = other.x_minus, other.p_minus, other.grad_minus
            x_plus, p_plus, grad_plus = tree.x_plus, tree.p_plus, tree.grad_plus
        else:
            other = self._build_tree(tree.x_plus, tree.p_plus, tree.grad_plus, log_slice, direction, depth - 1, joint0)
            x_minus, p_minus, grad_minus = tree.x_minus, tree.p_minus, tree.grad_minus
            x_plus, p_plus, grad_plus = other.x_plus, other.p_plus, other.grad_plus

        x_prop, logp_prop, grad_prop = tree.x_prop, tree.logp_prop, tree.grad_prop
        n_total = tree.n_valid + other.n_valid
        if n_total > 0 and self.rng.random() < other.n_valid / n_total:
            x_prop, logp_prop, grad_prop = other.x_prop, other.logp_prop, other.grad_prop

        span = x_plus - x_minus
        keep_going = other.keep_going and span @ p_minus >= 0 and span @ p_plus >= 0
        return _Tree(x_minus, p_minus, grad_minus, x_plus, p_plus, grad_plus, x_prop, logp_prop, grad_prop,
                     n_total, keep_going, tree.alpha_sum + other.alpha_sum, tree.n_alpha + other.n_alpha,
                     tree.divergent or other.divergent)

    def transition(self) -> bool:
        """One NUTS iteration; returns whether the chain moved"""
        p0 = self.rng.standard_normal(self.x.size)
        joint0 = self.logp - 0.5 * (p0 @ p0)
        log_slice = joint0 + float(np.log1p(-self.rng.random()))

        x_minus = x_plus = self.x
        p_minus = p_plus = p0
        grad_minus = grad_plus = self.grad
        n_valid = 1
        moved = False
        alpha_sum, n_alpha = 0.0, 0
        for depth in range(self.max_depth):
            direction = 1.0 if self.rng.random() < 0.5 else -1.0
            if direction < 0:
                tree = self._build_tree(x_minus, p_minus, grad_minus, log_slice, direction, depth, joint0)
                x_minus, p_minus, grad_minus = tree.x_minus, tree.p_minus, tree.grad_minus
            else:
                tree = self._build_tree(x_plus, p_plus, grad_plus, log_slice, direction, depth, joint0)
                x_plus, p_plus, grad_plus = tree.x_plus, tree.p_plus, tree.grad_plus
            alpha_sum += tree.alpha_sum
            n_alpha += tree.n_alpha
            if tree.divergent:
                self.divergences += 1
            if tree.keep_going and self.rng.random() < min(1.0, tree.n_valid / n_valid):
                self.x, self.logp, self.grad = tree.x_prop, tree.logp_prop, tree.grad_prop
                moved = True
            n_valid += tree.n_valid
            span = x_plus - x_minus
            if not (tree.keep_going and span @ p_minus >= 0 and span @ p_plus >= 0):
                break
        self.last_accept_stat = alpha_sum / max(n_alpha, 1)
        return moved

    def warmup(self, n_warmup: int) -> None:
        """Dual averaging of log(step) toward target_accept, then freeze at the averaged step"""
        if n_warmup <= 0:
            return
        mu = np.log(10.0 * self.step)
        h_bar = 0.0
        log_step_bar = 0.0
        for m in range(1, n_warmup + 1):
            self.transition()
            eta = 1.0 / (m + DUAL_AVERAGING_T0)
            h_bar = (1.0 - eta) * h_bar + eta * (self.target_accept - self.last_accept_stat)
            log_step = mu - np.sqrt(m) / DUAL_AVERAGING_GAMMA * h_bar
            weight = m ** (-DUAL_AVERAGING_KAPPA)
            log_step_bar = weight * log_step + (1.0 - weight) * log_step_bar
            self.step = float(np.exp(log_step))
        self.step = float(np.exp(log_step_bar))
        logger.debug(f"NUTS warm-up finished: step={self.step:.4g}")


def run_nuts(
    target: Target,
    n_warmup: int,
    n_steps: int,
    target_accept: float,
    rng: np.random.Generator,
    x0: Optional[np.ndarray] = None,
    counter: Optional[SolveCounter] = None,
    solve_budget: Optional[int] = None,
) -> SampleBatch:
    """
    Adapt for n_warmup iterations, then record n_steps draws.

    Counted solves spent during warm-up are included in the cumulative counts.
    """
    recorder = ChainRecorder(n_steps, target.dim, counter, solve_budget)
    x0 = np.zeros(target.dim) if x0 is None else x0
    sampler = NutsSampler(target, x0, rng, target_accept=target_accept)
    sampler.warmup(n_warmup)
    accept_stats = []
    while recorder.size < n_steps and not recorder.exhausted():
        moved = sampler.transition()
        accept_stats.append(sampler.last_accept_stat)
        recorder.record(sampler.x, moved)
    return recorder.finish(
        sampler="nuts",
        step=sampler.step,
        divergences=sampler.divergences,
        mean_accept_stat=float(np.mean(accept_stats)) if accept_stats else 0.0,
    )
