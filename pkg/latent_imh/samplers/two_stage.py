"""Two-stage delayed-acceptance MALA screened by the approximate posterior"""

import logging
from typing import Literal, Optional

import numpy as np

from latent_imh.constants import DEFAULT_MALA_STEP, DEFAULT_WARMUP, MALA_TARGET_ACCEPT
from latent_imh.exceptions import UnsupportedVariantError
from latent_imh.posteriors import InverseProblem
from latent_imh.samplers.base import (
    ChainRecorder,
    LatentTarget,
    PosteriorTarget,
    SampleBatch,
    metropolis_accept,
)
from latent_imh.samplers.mala import MalaKernel

logger = logging.getLogger(__name__)

FirstStage = Literal["approx-posterior", "latent-posterior"]


def run_two_stage(
    problem: InverseProblem,
    y: np.ndarray,
    first_stage: FirstStage,
    n_steps: int,
    rng: np.random.Generator,
    step: float = DEFAULT_MALA_STEP,
    adapt: bool = True,
    n_warmup: int = DEFAULT_WARMUP,
    target_accept: float = MALA_TARGET_ACCEPT,
    solve_budget: Optional[int] = None,
) -> SampleBatch:
    """
    Delayed acceptance: a MALA move on the cheap posterior pi_hat is accepted or
    rejected first, and only stage-1 acceptances pay for the exact correction
    [pi(x') / pi(x)] [pi_hat(x) / pi_hat(x')].

    approx-posterior runs in x and spends one counted forward apply per stage-2
    test. latent-posterior runs in u = F x on the approximate latent posterior;
    its correction is p(F^{-1} u) / p(F_tilde^{-1} u) and costs one counted
    inverse solve. Warm-up adapts the stage-1 step on the cheap target only.
    Samples are always reported in x.
    """
    y = np.asarray(y, dtype=float)
    if first_stage == "approx-posterior":
        cheap = PosteriorTarget(problem, y, "approximate")
        exact = PosteriorTarget(problem, y, "exact")

        def exact_terms(point):
            return point, exact.log_density(point)

    elif first_stage == "latent-posterior":
        cheap = LatentTarget(problem, y)

        def exact_terms(point):
            x = problem.exact_inverse(point)
            return x, problem.prior.log_density(x) - problem.prior.log_density(problem.approx_inverse(point))

    else:
        raise UnsupportedVariantError(f"Unknown first stage '{first_stage}'")

    recorder = ChainRecorder(n_steps, problem.dim, problem.counter, solve_budget)
    kernel = MalaKernel(cheap, step, np.zeros(problem.dim))
    warmup_rate = kernel.adapt(n_warmup, rng, target_accept) if adapt else float("nan")

    if recorder.exhausted():
        return recorder.finish(sampler=f"two-stage/{first_stage}", step=kernel.step, stage1_accepted=0)
    # approx-posterior caches log pi(x); latent-posterior caches log p(F^{-1}u) - log p(F_tilde^{-1}u)
    x_current, exact_current = exact_terms(kernel.x)
    stage1_accepted = 0

    while recorder.size < n_steps and not recorder.exhausted():
        point, logp_prop, grad_prop, log_ratio = kernel.propose(rng)
        accepted = False
        if metropolis_accept(log_ratio, rng):
            stage1_accepted += 1
            x_prop, exact_prop = exact_terms(point)
            if first_stage == "approx-posterior":
                log_ratio_2 = (exact_prop - exact_current) - (logp_prop - kernel.logp)
            else:
                log_ratio_2 = exact_prop - exact_current
            if metropolis_accept(log_ratio_2, rng):
                kernel.move_to(point, logp_prop, grad_prop)
                x_current, exact_current = x_prop, exact_prop
                accepted = True
        recorder.record(x_current, accepted)

    logger.debug(f"Two-stage {first_stage}: {stage1_accepted} of {recorder.size} proposals reached stage 2")
    return recorder.finish(
        sampler=f"two-stage/{first_stage}",
        step=kernel.step,
        warmup_acceptance=warmup_rate,
        stage1_accepted=stage1_accepted,
    )
