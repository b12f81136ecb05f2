"""Generated problem instances and prior construction"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, Optional

import numpy as np

from latent_imh.analytics import DiagonalSpec
from latent_imh.config import PriorConfig
from latent_imh.posteriors import InverseProblem
from latent_imh.priors import (
    GaussianMixturePrior,
    GaussianPrior,
    LaplacePrior,
    Prior,
    StandardNormalPrior,
)

logger = logging.getLogger(__name__)


@dataclass
class ProblemInstance:
    """A generated inverse problem with its observation, ground-truth parameter and build info"""
    problem: InverseProblem
    y: np.ndarray
    x_true: np.ndarray
    diagonal: Optional[DiagonalSpec] = None
    info: Dict[str, Any] = field(default_factory=dict)


def build_prior(config: Optional[PriorConfig], dim: int, rng: np.random.Generator) -> Prior:
    """Prior for the synthetic and graph families"""
    config = config or PriorConfig()
    if config.kind == "standard-normal":
        return StandardNormalPrior(dim)
    if config.kind == "gaussian":
        return GaussianPrior.ill_conditioned(dim, config.condition_number, rng)
    if config.kind == "mixture":
        return GaussianMixturePrior.symmetric(dim, config.mixture_spread, config.n_components)
    return LaplacePrior(dim)


def observe_with_noise(A: np.ndarray, x_true: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    return A @ x_true + sigma * rng.standard_normal(A.shape[0])
