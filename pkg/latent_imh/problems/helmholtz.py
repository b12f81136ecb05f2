"""Helmholtz source-inversion problems with a coarse-grid approximate operator"""

import logging
from typing import List, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from latent_imh.constants import HELMHOLTZ_EVENT_SHIFT, HELMHOLTZ_OBSERVATION_RATIO, HELMHOLTZ_RESONANCE_TOL
from latent_imh.exceptions import SingularOperatorError
from latent_imh.models import HelmholtzGrid
from latent_imh.operators import DenseMap, build_reparameterization
from latent_imh.posteriors import InverseProblem, NoiseModel
from latent_imh.priors import SmoothedTvPrior
from latent_imh.problems.base import ProblemInstance, observe_with_noise

logger = logging.getLogger(__name__)


def grid_nodes(n: int) -> np.ndarray:
    """Interior node coordinates of an n-point Dirichlet grid on [0, 1]"""
    return np.arange(1, n + 1) / (n + 1)


def dirichlet_laplacian(n: int) -> sp.csr_matrix:
    """5-point Laplacian on the n x n interior grid, row-major ordering"""
    h = 1.0 / (n + 1)
    T = sp.diags([np.ones(n - 1), -2.0 * np.ones(n), np.ones(n - 1)], [-1, 0, 1]) / h**2
    I = sp.identity(n)
    return (sp.kron(I, T) + sp.kron(T, I)).tocsr()


def helmholtz_operator(n: int, k: float) -> sp.csr_matrix:
    """
    k^2 I + Delta_h with Dirichlet boundaries.

    Raises SingularOperatorError when k^2 is within the resonance tolerance of a
    Laplacian eigenvalue.
    """
    h = 1.0 / (n + 1)
    lam_1d = -(4.0 / h**2) * np.sin(np.arange(1, n + 1) * np.pi * h / 2.0) ** 2
    gap = np.min(np.abs(k**2 + lam_1d[:, None] + lam_1d[None, :]))
    if gap < HELMHOLTZ_RESONANCE_TOL * k**2:
        raise SingularOperatorError(
            f"Wavenumber k={k:g} is resonant on the {n}x{n} grid (gap {gap:.3e}); shift k slightly"
        )
    return (k**2 * sp.identity(n * n) + dirichlet_laplacian(n)).tocsr()


def prolongation_1d(n_coarse: int, n_fine: int) -> sp.csr_matrix:
    """Linear interpolation from coarse to fine interior nodes, zero at the boundary"""
    rows: List[int] = []
    cols: List[int] = []
    vals: List[float] = []
    for j in range(n_fine):
        # coarse coordinate t = (j+1)(n_c+1)/(n_f+1) - 1 in exact integer arithmetic
        num = (j + 1) * (n_coarse + 1) - (n_fine + 1)
        i0, rem = divmod(num, n_fine + 1)
        w = rem / (n_fine + 1)
        if 0 <= i0 < n_coarse:
            rows.append(j)
            cols.append(i0)
            vals.append(1.0 - w)
        if w > 0.0 and 0 <= i0 + 1 < n_coarse:
            rows.append(j)
            cols.append(i0 + 1)
            vals.append(w)
    return sp.csr_matrix((vals, (rows, cols)), shape=(n_fine, n_coarse))


def prolongation(n_coarse: int, n_fine: int) -> sp.csr_matrix:
    """Bilinear prolongation on the 2-D grids"""
    P = prolongation_1d(n_coarse, n_fine)
    return sp.kron(P, P).tocsr()


def source_profiles(n_grid: int, n_x: int, width: float) -> np.ndarray:
    """Gaussian bumps centred on the n_x x n_x source lattice, sampled on an n_grid x n_grid grid"""
    nodes = grid_nodes(n_grid)
    gx, gy = np.meshgrid(nodes, nodes, indexing="ij")
    points = np.column_stack([gx.ravel(), gy.ravel()])
    centres_1d = grid_nodes(n_x)
    cx, cy = np.meshgrid(centres_1d, centres_1d, indexing="ij")
    centres = np.column_stack([cx.ravel(), cy.ravel()])
    sq = np.sum((points[:, None, :] - centres[None, :, :]) ** 2, axis=-1)
    return np.exp(-0.5 * sq / width**2)


def two_blob_field(n_x: int) -> np.ndarray:
    """Smooth reference source: two Gaussian blobs on the source grid"""
    nodes = grid_nodes(n_x)
    gx, gy = np.meshgrid(nodes, nodes, indexing="ij")
    field = np.exp(-((gx - 0.3) ** 2 + (gy - 0.35) ** 2) / (2 * 0.12**2))
    field += 0.6 * np.exp(-((gx - 0.7) ** 2 + (gy - 0.65) ** 2) / (2 * 0.1**2))
    return field.ravel()


def _solve_events(operators: List[sp.csr_matrix], rhs: np.ndarray) -> List[np.ndarray]:
    return [splu(L.tocsc()).solve(rhs) for L in operators]


def _observation_rows(n_fine: int, events: int, d_y: int, rng: np.random.Generator) -> np.ndarray:
    """Selection matrix with random distinct fine-grid locations per event"""
    per_event = [d_y // events + (1 if e < d_y % events else 0) for e in range(events)]
    block = n_fine * n_fine
    O = np.zeros((d_y, events * block))
    row = 0
    for e, count in enumerate(per_event):
        for idx in rng.choice(block, size=count, replace=False):
            O[row, e * block + idx] = 1.0
            row += 1
    return O


def make_helmholtz_problem(grid: HelmholtzGrid, tv: Tuple[float, float], seed: int, noise_level: float = 0.1) -> ProblemInstance:
    """
    Recover a source field x on the n_x grid from sparse fine-grid wavefields.

    Event e uses wavenumber k (1 + 0.15 e). The exact raw operator stacks
    L_e^{-1} B over events; the approximate one stacks P L~_e^{-1} B~ with the
    coarse operators and bilinear prolongation P. The latent dimension is
    events * n_u^2. A smoothed-TV prior is attached.
    """
    lam, eps = tv
    rng = np.random.default_rng(seed)
    n_f, n_c, n_x = grid.n_u, grid.n_u_coarse, grid.n_x
    wavenumbers = [grid.wavenumber * (1.0 + HELMHOLTZ_EVENT_SHIFT * e) for e in range(grid.events)]
    width = 2.0 / (n_f + 1)

    B = source_profiles(n_f, n_x, width)
    B_coarse = source_profiles(n_c, n_x, width)
    P = prolongation(n_c, n_f)

    fine_ops = [helmholtz_operator(n_f, k) for k in wavenumbers]
    coarse_ops = [helmholtz_operator(n_c, k) for k in wavenumbers]
    F_raw = np.vstack(_solve_events(fine_ops, B))
    Ft_raw = np.vstack([P @ u for u in _solve_events(coarse_ops, B_coarse)])

    d_x = n_x * n_x
    d_y = max(1, int(round(HELMHOLTZ_OBSERVATION_RATIO * d_x)))
    O_raw = _observation_rows(n_f, grid.events, d_y, rng)

    reparam = build_reparameterization(DenseMap(O_raw), DenseMap(Ft_raw))
    F = reparam.reduce(F_raw)
    F_tilde = reparam.reduce(Ft_raw)
    A = reparam.Z @ F

    x_true = two_blob_field(n_x)
    sigma = noise_level * float(np.linalg.norm(A @ x_true)) / np.sqrt(d_y)
    problem = InverseProblem(
        F=DenseMap(F),
        F_tilde=DenseMap(F_tilde),
        O=DenseMap(reparam.Z),
        prior=SmoothedTvPrior(lam, (n_x, n_x), eps),
        noise=NoiseModel(sigma),
    )
    y = observe_with_noise(A, x_true, sigma, rng)
    info = {
        "family": "helmholtz",
        "d_u": int(F_raw.shape[0]),
        "d_x": d_x,
        "d_y": d_y,
        "sigma": sigma,
        "wavenumbers": wavenumbers,
        "reparam_residual": reparam.observation_residual(O_raw),
    }
    logger.info(f"Built Helmholtz problem n_u={n_f}, coarse={n_c}, n_x={n_x}, events={grid.events}, d_y={d_y}")
    return ProblemInstance(problem=problem, y=y, x_true=x_true, info=info)
