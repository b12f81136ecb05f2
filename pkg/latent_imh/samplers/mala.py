"""Metropolis-adjusted Langevin sampler with Robbins-Monro step adaptation"""

import logging
from typing import Optional, Tuple

import numpy as np

from latent_imh.constants import DEFAULT_MALA_STEP, DEFAULT_WARMUP, MALA_TARGET_ACCEPT, ROBBINS_MONRO_EXPONENT
from latent_imh.operators import SolveCounter
from latent_imh.samplers.base import ChainRecorder, SampleBatch, Target, metropolis_accept

logger = logging.getLogger(__name__)


class MalaKernel:
    """
    Langevin proposal x' = x + (h^2 / 2) grad log pi(x) + h xi with a Metropolis
    correction. The current point, its log density and gradient are cached.
    """

    def __init__(self, target: Target, step: float, x0: np.ndarray):
        if not step > 0:
            raise ValueError(f"MALA step must be positive, got {step}")
        self.target = target
        self.step = float(step)
        self.x = np.array(x0, dtype=float)
        self.logp, self.grad = target.value_and_grad(self.x)

    def _log_q(self, to: np.ndarray, frm: np.ndarray, grad_frm: np.ndarray) -> float:
        diff = to - frm - 0.5 * self.step**2 * grad_frm
        return float(-0.5 * (diff @ diff) / self.step**2)

    def propose(self, rng: np.random.Generator) -> Tuple[np.ndarray, float, np.ndarray, float]:
        """Proposal, its log density and gradient, and the log Metropolis-Hastings ratio"""
        xi = rng.standard_normal(self.x.size)
        x_prop = self.x + 0.5 * self.step**2 * self.grad + self.step * xi
        logp_prop, grad_prop = self.target.value_and_grad(x_prop)
        if not np.isfinite(logp_prop) or not np.all(np.isfinite(grad_prop)):
            return x_prop, -np.inf, grad_prop, -np.inf
        log_ratio = (
            logp_prop
            - self.logp
            + self._log_q(self.x, x_prop, grad_prop)
            - self._log_q(x_prop, self.x, self.grad)
        )
        return x_prop, logp_prop, grad_prop, float(log_ratio)

    def move_to(self, x: np.ndarray, logp: float, grad: np.ndarray) -> None:
        self.x, self.logp, self.grad = x, logp, grad

    def transition(self, rng: np.random.Generator) -> Tuple[bool, float]:
        """One MALA step; returns (accepted, acceptance probability)"""
        x_prop, logp_prop, grad_prop, log_ratio = self.propose(rng)
        accepted = metropolis_accept(log_ratio, rng)
        if accepted:
            self.move_to(x_prop, logp_prop, grad_prop)
        return accepted, float(np.exp(min(0.0, log_ratio)))

    def adapt(self, n_warmup: int, rng: np.random.Generator, target_accept: float = MALA_TARGET_ACCEPT) -> float:
        """Robbins-Monro on log(step) toward target_accept; returns warm-up acceptance rate"""
        if n_warmup <= 0:
            return float("nan")
        log_step = np.log(self.step)
        accepted_total = 0
        for t in range(n_warmup):
            accepted, prob = self.transition(rng)
            accepted_total += accepted
            log_step += (t + 1) ** (-ROBBINS_MONRO_EXPONENT) * (prob - target_accept)
            self.step = float(np.exp(log_step))
        logger.debug(f"MALA warm-up finished: step={self.step:.4g}, acceptance={accepted_total / n_warmup:.3f}")
        return accepted_total / n_warmup


def run_mala(
    target: Target,
    n_steps: int,
    rng: np.random.Generator,
    step: float = DEFAULT_MALA_STEP,
    adapt: bool = True,
    n_warmup: int = DEFAULT_WARMUP,
    x0: Optional[np.ndarray] = None,
    target_accept: float = MALA_TARGET_ACCEPT,
    counter: Optional[SolveCounter] = None,
    solve_budget: Optional[int] = None,
) -> SampleBatch:
    """
    MALA chain on target.

    On the exact posterior every step costs one forward and one adjoint apply of
    F; solves spent during warm-up are included in the cumulative counts.
    """
    recorder = ChainRecorder(n_steps, target.dim, counter, solve_budget)
    kernel = MalaKernel(target, step, np.zeros(target.dim) if x0 is None else x0)
    warmup_rate = kernel.adapt(n_warmup, rng, target_accept) if adapt else float("nan")
    while recorder.size < n_steps and not recorder.exhausted(target.cost):
        accepted, _ = kernel.transition(rng)
        recorder.record(kernel.x, accepted)
    return recorder.finish(sampler="mala", step=kernel.step, warmup_acceptance=warmup_rate)
