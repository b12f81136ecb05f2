"""Preconditioned conjugate gradient and a randomized Cholesky preconditioner"""

import logging
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from latent_imh.exceptions import SolverError
from latent_imh.models import PcgSettings

logger = logging.getLogger(__name__)

Preconditioner = Callable[[np.ndarray], np.ndarray]


def pcg_solve(
    apply_A: Callable[[np.ndarray], np.ndarray],
    b: np.ndarray,
    preconditioner: Optional[Preconditioner] = None,
    settings: Optional[PcgSettings] = None,
) -> Tuple[np.ndarray, int]:
    """
    Solve A x = b for symmetric positive definite A.

    Args:
        apply_A: Action of A on a vector
        b: Right-hand side
        preconditioner: Action of M^{-1}; identity when None
        settings: Tolerance on ||b - Ax|| / ||b|| and iteration cap

    Returns:
        The solution and the number of iterations taken
    """
    settings = settings or PcgSettings()
    b = np.asarray(b, dtype=float)
    norm_b = np.linalg.norm(b)
    x = np.zeros_like(b)
    if norm_b == 0.0:
        return x, 0

    r = b.copy()
    z = preconditioner(r) if preconditioner is not None else r.copy()
    p = z.copy()
    rz = r @ z
    residual = 1.0
    for it in range(1, settings.max_iters + 1):
        Ap = apply_A(p)
        curvature = p @ Ap
        if curvature <= 0.0:
            raise SolverError("PCG met a direction of non-positive curvature", residual, it)
        alpha = rz / curvature
        x += alpha * p
        r -= alpha * Ap
        residual = np.linalg.norm(r) / norm_b
        if residual <= settings.tolerance:
            logger.debug(f"PCG converged in {it} iterations (residual {residual:.3e})")
            return x, it
        z = preconditioner(r) if preconditioner is not None else r.copy()
        rz_next = r @ z
        p = z + (rz_next / rz) * p
        rz = rz_next
    raise SolverError(f"PCG did not reach tolerance {settings.tolerance:.1e}", residual, settings.max_iters)


class CholeskyPreconditioner:
    """Applies (G G^T)^{-1} for a lower-triangular factor G in a permuted ordering"""

    def __init__(self, G: sp.csr_matrix, perm: np.ndarray):
        self.G = G.tocsr()
        self.perm = np.asarray(perm)
        # natural ordering without pivoting keeps the factors triangular
        self._lu = splu(G.tocsc(), permc_spec="NATURAL", diag_pivot_thresh=0.0)

    @property
    def nnz(self) -> int:
        return self.G.nnz

    def __call__(self, r: np.ndarray) -> np.ndarray:
        w = self._lu.solve(r[self.perm])
        v = self._lu.solve(w, trans="T")
        z = np.empty_like(v)
        z[self.perm] = v
        return z

    def dense_factor(self) -> np.ndarray:
        """G G^T in the original ordering, for small-scale checks"""
        M = (self.G @ self.G.T).toarray()
        inv = np.empty_like(self.perm)
        inv[self.perm] = np.arange(self.perm.size)
        return M[np.ix_(inv, inv)]


def randomized_cholesky(M: sp.spmatrix, seed: Optional[int] = None) -> CholeskyPreconditioner:
    """
    Approximate Cholesky factor of a symmetric diagonally dominant M-matrix.

    Vertices are eliminated in random order. Each elimination replaces the dense
    Schur-complement clique by one sampled edge per neighbour, weighted so the
    expected Schur complement is exact; the diagonal excess is carried exactly.
    """
    M = sp.csr_matrix(M, dtype=float)
    n = M.shape[0]
    rng = np.random.default_rng(seed)

    diag = M.diagonal().copy()
    adjacency: List[Dict[int, float]] = [dict() for _ in range(n)]
    coo = M.tocoo()
    for i, j, v in zip(coo.row, coo.col, coo.data):
        if i != j and v != 0.0:
            if v > 0.0:
                raise ValueError("randomized_cholesky needs non-positive off-diagonal entries")
            adjacency[i][j] = adjacency[i].get(j, 0.0) - v
    excess = diag - np.array([sum(a.values()) for a in adjacency])
    if np.any(excess < -1e-12 * np.abs(diag).max()):
        raise ValueError("randomized_cholesky needs a diagonally dominant matrix")
    excess = np.maximum(excess, 0.0)

    perm = rng.permutation(n)
    position = np.empty(n, dtype=int)
    position[perm] = np.arange(n)

    rows: List[int] = []
    cols: List[int] = []
    vals: List[float] = []
    for k in perm:
        nbrs = adjacency[k]
        col = position[k]
        if not nbrs:
            rows.append(col)
            cols.append(col)
            vals.append(np.sqrt(excess[k]))
            continue

        idx = np.fromiter(nbrs.keys(), dtype=int, count=len(nbrs))
        w = np.fromiter(nbrs.values(), dtype=float, count=len(nbrs))
        total = w.sum()
        d_k = total + excess[k]
        if d_k <= 0.0:
            raise SolverError("Randomized Cholesky met a zero pivot", 1.0, int(col))
        root = np.sqrt(d_k)

        rows.append(col)
        cols.append(col)
        vals.append(root)
        rows.extend(position[idx].tolist())
        cols.extend([col] * idx.size)
        vals.extend((-w / root).tolist())

        for i in idx:
            del adjacency[i][k]
        adjacency[k] = {}
        excess[idx] += w * (1.0 - total / d_k)

        order = np.argsort(w, kind="stable")
        idx = idx[order]
        w = w[order]
        cum = np.cumsum(w)
        for a in range(idx.size - 1):
            tail = cum[-1] - cum[a]
            if tail <= 0.0:
                continue
            target = cum[a] + rng.random() * tail
            b = int(np.searchsorted(cum, target, side="right"))
            b = min(max(b, a + 1), idx.size - 1)
            weight = w[a] * tail / d_k
            i, j = idx[a], idx[b]
            adjacency[i][j] = adjacency[i].get(j, 0.0) + weight
            adjacency[j][i] = adjacency[j].get(i, 0.0) + weight

    G = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    logger.debug(f"Randomized Cholesky: n={n}, nnz(G)={G.nnz}")
    return CholeskyPreconditioner(G, perm)
