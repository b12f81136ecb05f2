"""Graph-Laplacian problems on a lattice, solved exactly and approximately by PCG"""

import logging
from typing import Optional, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from latent_imh.config import PriorConfig
from latent_imh.constants import DEFAULT_EXACT_TOL, GRAPH_REGULARIZATION
from latent_imh.exceptions import SingularOperatorError
from latent_imh.models import PcgSettings
from latent_imh.operators import DenseMap, build_reparameterization
from latent_imh.posteriors import InverseProblem, NoiseModel
from latent_imh.problems.base import ProblemInstance, build_prior, observe_with_noise
from latent_imh.solvers import Preconditioner, pcg_solve, randomized_cholesky

logger = logging.getLogger(__name__)


def lattice_points(side: int) -> np.ndarray:
    """side^3 points of a regular lattice in the unit cube"""
    axis = np.linspace(0.0, 1.0, side)
    grid = np.meshgrid(axis, axis, axis, indexing="ij")
    return np.column_stack([g.ravel() for g in grid])


def knn_laplacian(points: np.ndarray, k_neighbors: int) -> sp.csr_matrix:
    """
    Unit-weight Laplacian of the symmetrized k-nearest-neighbour graph.

    Raises SingularOperatorError when the graph is disconnected.
    """
    n = points.shape[0]
    if k_neighbors >= n:
        raise ValueError(f"k_neighbors ({k_neighbors}) must be smaller than the number of points ({n})")
    _, nbrs = cKDTree(points).query(points, k=k_neighbors + 1)
    rows = np.repeat(np.arange(n), k_neighbors)
    cols = nbrs[:, 1:].ravel()
    W = sp.csr_matrix((np.ones(rows.size), (rows, cols)), shape=(n, n))
    W = W.maximum(W.T)
    n_components, _ = connected_components(W, directed=False)
    if n_components > 1:
        raise SingularOperatorError(f"k-NN graph has {n_components} components; its Laplacian is singular")
    degrees = np.asarray(W.sum(axis=1)).ravel()
    return (sp.diags(degrees) - W).tocsr()


def regularize(L: sp.csr_matrix) -> Tuple[sp.csr_matrix, float]:
    """L + mu I with mu = 1e-6 trace(L) / n"""
    mu = GRAPH_REGULARIZATION * L.diagonal().sum() / L.shape[0]
    return (L + mu * sp.identity(L.shape[0], format="csr")).tocsr(), float(mu)


def solve_columns(
    M: sp.csr_matrix, B: np.ndarray, settings: PcgSettings, preconditioner: Optional[Preconditioner]
) -> Tuple[np.ndarray, float]:
    """M^{-1} B column by column; returns the result and the mean PCG iteration count"""
    out = np.empty_like(B)
    iterations = []
    for j in range(B.shape[1]):
        out[:, j], its = pcg_solve(M.dot, B[:, j], preconditioner, settings)
        iterations.append(its)
    return out, float(np.mean(iterations))


def make_graph_laplacian_problem(
    lattice_side: int,
    k_neighbors: int,
    d_x: int,
    d_y: int,
    pcg: PcgSettings,
    exact_tol: float = DEFAULT_EXACT_TOL,
    seed: int = 0,
    noise_level: float = 0.05,
    prior: Optional[PriorConfig] = None,
) -> ProblemInstance:
    """
    y = O L^{-1} B x + e on a k-NN lattice graph.

    Exact solves run PCG to exact_tol and approximate ones to pcg.tolerance,
    both with the same randomized Cholesky preconditioner. Both raw operators
    L^{-1} B are materialized column by column, so F_tilde is a fixed linear map.
    The rectangular model is squared with the SVD reparameterization.
    """
    d_u = lattice_side**3
    if not 1 <= d_y <= d_x <= d_u:
        raise ValueError(f"Need 1 <= d_y <= d_x <= lattice_side^3, got d_y={d_y}, d_x={d_x}, d_u={d_u}")
    rng = np.random.default_rng(seed)

    L = knn_laplacian(lattice_points(lattice_side), k_neighbors)
    M, mu = regularize(L)
    preconditioner = randomized_cholesky(M, seed) if pcg.preconditioner == "factorization" else None

    B = rng.standard_normal((d_u, d_x)) / np.sqrt(d_x)
    O_raw = rng.standard_normal((d_y, d_u)) / np.sqrt(d_u)

    exact_settings = pcg.model_copy(update={"tolerance": exact_tol})
    F_raw, iters_exact = solve_columns(M, B, exact_settings, preconditioner)
    Ft_raw, iters_approx = solve_columns(M, B, pcg, preconditioner)

    reparam = build_reparameterization(DenseMap(O_raw), DenseMap(Ft_raw))
    F = reparam.reduce(F_raw)
    F_tilde = reparam.reduce(Ft_raw)
    A = reparam.Z @ F

    built_prior = build_prior(prior, d_x, rng)
    x_true = built_prior.sample(rng)
    sigma = noise_level * float(np.linalg.norm(A @ x_true)) / np.sqrt(d_y)
    problem = InverseProblem(
        F=DenseMap(F),
        F_tilde=DenseMap(F_tilde),
        O=DenseMap(reparam.Z),
        prior=built_prior,
        noise=NoiseModel(sigma),
    )
    y = observe_with_noise(A, x_true, sigma, rng)
    info = {
        "family": "graph-laplacian",
        "d_u": d_u,
        "d_x": d_x,
        "d_y": d_y,
        "sigma": sigma,
        "regularization": mu,
        "pcg_tolerance": pcg.tolerance,
        "pcg_iterations_exact": iters_exact,
        "pcg_iterations_approx": iters_approx,
        "reparam_residual": reparam.observation_residual(O_raw),
    }
    logger.info(
        f"Built graph problem d_u={d_u}, d_x={d_x}, d_y={d_y}: "
        f"mean PCG iterations {iters_exact:.1f} (exact) / {iters_approx:.1f} (tol {pcg.tolerance:g})"
    )
    return ProblemInstance(problem=problem, y=y, x_true=x_true, info=info)
