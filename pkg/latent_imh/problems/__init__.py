"""Seeded generators for the diagonal, graph-Laplacian and Helmholtz problem families"""

import logging

from latent_imh.config import (
    DiagonalProblemConfig,
    GraphProblemConfig,
    HelmholtzProblemConfig,
    ProblemConfig,
)
from latent_imh.problems.base import ProblemInstance, build_prior
from latent_imh.problems.graph import knn_laplacian, lattice_points, make_graph_laplacian_problem, regularize
from latent_imh.problems.helmholtz import helmholtz_operator, make_helmholtz_problem, prolongation
from latent_imh.problems.synthetic import make_diagonal_synthetic

logger = logging.getLogger(__name__)


def build_problem(config: ProblemConfig, seed: int) -> ProblemInstance:
    """Build the problem a config describes; the same (config, seed) gives the same instance"""
    if isinstance(config, DiagonalProblemConfig):
        return make_diagonal_synthetic(
            config.d, config.d_y, config.spectral_error, seed, log10_snr=config.log10_snr, prior=config.prior
        )
    if isinstance(config, GraphProblemConfig):
        return make_graph_laplacian_problem(
            config.lattice_side,
            config.k_neighbors,
            config.d_x,
            config.d_y,
            config.pcg,
            exact_tol=config.exact_tol,
            seed=seed,
            noise_level=config.noise_level,
            prior=config.prior,
        )
    if isinstance(config, HelmholtzProblemConfig):
        return make_helmholtz_problem(config.grid, (config.tv.lam, config.tv.eps), seed, noise_level=config.noise_level)
    raise ValueError(f"Unknown problem family: {type(config).__name__}")


__all__ = [
    "ProblemInstance",
    "build_prior",
    "build_problem",
    "helmholtz_operator",
    "knn_laplacian",
    "lattice_points",
    "make_diagonal_synthetic",
    "make_graph_laplacian_problem",
    "make_helmholtz_problem",
    "prolongation",
    "regularize",
]
