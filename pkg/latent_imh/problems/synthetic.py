"""Synthetic diagonal problems: F = V S V^T with a multiplicatively perturbed F_tilde"""

import logging
from typing import Optional, Tuple

import numpy as np
from scipy.optimize import brentq

from latent_imh.analytics import DiagonalSpec
from latent_imh.config import PriorConfig
from latent_imh.exceptions import TargetUnreachableError
from latent_imh.operators import DenseMap, SvdMap
from latent_imh.posteriors import InverseProblem, NoiseModel
from latent_imh.problems.base import ProblemInstance, build_prior, observe_with_noise

logger = logging.getLogger(__name__)

# Largest admissible perturbation half-width; alpha must stay positive
_MAX_DELTA = 1.0 - 1e-9


def _spectral_error(alpha: np.ndarray) -> float:
    """||I - F_tilde^{-1} F||_2 = max |1 - 1/alpha_i| when F and F_tilde share eigenvectors"""
    return float(np.max(np.abs(1.0 - 1.0 / alpha)))


def perturbation_for_target(xi: np.ndarray, target: float) -> Tuple[np.ndarray, float]:
    """
    alpha = 1 + delta * xi with delta bisected so the spectral error equals target.

    Args:
        xi: Fixed draws in (-1, 1)
        target: Desired ||I - F_tilde^{-1} F||_2

    Returns:
        alpha and delta
    """
    if target == 0.0:
        return np.ones_like(xi), 0.0
    reachable = _spectral_error(1.0 + _MAX_DELTA * xi)
    if reachable < target:
        raise TargetUnreachableError(
            f"Spectral error {target} needs a perturbation wider than 1 (reachable: {reachable:.4g})"
        )
    delta = brentq(lambda t: _spectral_error(1.0 + t * xi) - target, 0.0, _MAX_DELTA, xtol=1e-15, rtol=1e-14)
    logger.debug(f"Perturbation width delta={delta:.6g} for spectral error {target}")
    return 1.0 + delta * xi, float(delta)


def noise_sigma_for_snr(s_observed: np.ndarray, log10_snr: float) -> float:
    """sigma with E||y||^2 / E||e||^2 = 10^log10_snr for x from a standard-normal prior"""
    snr = 10.0**log10_snr
    if snr <= 1.0:
        raise ValueError(f"SNR must exceed 1, got 10^{log10_snr}")
    return float(np.sqrt(np.sum(s_observed**2) / (s_observed.size * (snr - 1.0))))


def make_diagonal_synthetic(
    d: int,
    d_y: int,
    spectral_error_target: float,
    seed: int,
    log10_snr: float = 2.5,
    prior: Optional[PriorConfig] = None,
) -> ProblemInstance:
    """
    F = V diag(1/i^2) V^T and F_tilde = V diag(alpha_i / i^2) V^T.

    O = [I 0] V^T observes the d_y leading eigen-directions, so the instance is
    exactly the diagonal case in the eigenbasis and carries its DiagonalSpec.
    """
    if not 1 <= d_y <= d:
        raise ValueError(f"Need 1 <= d_y <= d, got d_y={d_y}, d={d}")
    rng = np.random.default_rng(seed)

    M = rng.standard_normal((d, d))
    _, V = np.linalg.eigh(0.5 * (M + M.T))
    s = 1.0 / np.arange(1, d + 1) ** 2
    xi = rng.uniform(-1.0, 1.0, size=d)
    alpha, delta = perturbation_for_target(xi, spectral_error_target)

    sigma = noise_sigma_for_snr(s[:d_y], log10_snr)
    O = DenseMap(V[:, :d_y].T)
    problem = InverseProblem(
        F=SvdMap(V, s),
        F_tilde=SvdMap(V, alpha * s),
        O=O,
        prior=build_prior(prior, d, rng),
        noise=NoiseModel(sigma),
    )
    x_true = problem.prior.sample(rng)
    A = (V[:, :d_y] * s[:d_y]).T
    y = observe_with_noise(A, x_true, sigma, rng)

    spec = DiagonalSpec(d=d, d_y=d_y, s=s, alpha=alpha, sigma=sigma)
    info = {
        "family": "diagonal",
        "d": d,
        "d_y": d_y,
        "sigma": sigma,
        "log10_snr": log10_snr,
        "delta": delta,
        "spectral_error": _spectral_error(alpha),
    }
    logger.info(f"Built diagonal problem d={d}, d_y={d_y}, sigma={sigma:.4g}, spectral error={info['spectral_error']:.4g}")
    return ProblemInstance(problem=problem, y=y, x_true=x_true, diagonal=spec, info=info)
