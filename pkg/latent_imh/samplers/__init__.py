"""MCMC samplers with counted exact-operator solves"""

from latent_imh.samplers.base import (
    ChainRecorder,
    ChainState,
    GaussianTarget,
    LatentTarget,
    PosteriorTarget,
    SampleBatch,
    Target,
    metropolis_accept,
)
from latent_imh.samplers.imh import (
    ProposalEngine,
    accept_log_ratio_approx,
    accept_log_ratio_latent,
    approx_log_weight,
    latent_log_weight,
    propose_latent,
    run_imh,
)
from latent_imh.samplers.mala import MalaKernel, run_mala
from latent_imh.samplers.nuts import NutsSampler, find_reasonable_step, leapfrog, run_nuts
from latent_imh.samplers.two_stage import run_two_stage

__all__ = [
    "ChainRecorder",
    "ChainState",
    "GaussianTarget",
    "LatentTarget",
    "MalaKernel",
    "NutsSampler",
    "PosteriorTarget",
    "ProposalEngine",
    "SampleBatch",
    "Target",
    "accept_log_ratio_approx",
    "accept_log_ratio_latent",
    "approx_log_weight",
    "find_reasonable_step",
    "latent_log_weight",
    "leapfrog",
    "metropolis_accept",
    "propose_latent",
    "run_imh",
    "run_mala",
    "run_nuts",
    "run_two_stage",
]
