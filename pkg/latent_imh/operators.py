"""Linear operators, solve counting and the SVD reparameterization"""

import logging
import threading
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg as sla
from scipy.sparse.linalg import LinearOperator, gmres

from latent_imh.constants import DEFAULT_SOLVE_TOL, DIRECT_SOLVE_MAX_DIM, SINGULAR_TOL
from latent_imh.exceptions import DimensionMismatchError, SingularOperatorError, SolverError
from latent_imh.models import PcgSettings

logger = logging.getLogger(__name__)


class SolveCounter:
    """Thread-safe tally of counted forward applies and inverse solves"""

    def __init__(self):
        self._lock = threading.Lock()
        self._forward = 0
        self._inverse = 0

    @property
    def forward(self) -> int:
        return self._forward

    @property
    def inverse(self) -> int:
        return self._inverse

    @property
    def total(self) -> int:
        return self._forward + self._inverse

    def count_forward(self, n: int = 1) -> None:
        with self._lock:
            self._forward += n

    def count_inverse(self, n: int = 1) -> None:
        with self._lock:
            self._inverse += n

    def snapshot(self) -> Tuple[int, int]:
        with self._lock:
            return self._forward, self._inverse

    def merge(self, other: "SolveCounter") -> None:
        forward, inverse = other.snapshot()
        with self._lock:
            self._forward += forward
            self._inverse += inverse

    def __repr__(self) -> str:
        return f"SolveCounter(forward={self._forward}, inverse={self._inverse})"


class LinearMap(ABC):
    """Immutable linear operator of shape (rows, cols)"""

    kind: str = "abstract"

    def __init__(self, rows: int, cols: int):
        if rows < 1 or cols < 1:
            raise ValueError(f"Map dimensions must be positive, got {rows}x{cols}")
        self._rows = int(rows)
        self._cols = int(cols)

    @property
    def rows(self) -> int:
        return self._rows

    @property
    def cols(self) -> int:
        return self._cols

    @property
    def shape(self) -> Tuple[int, int]:
        return self._rows, self._cols

    @property
    def is_square(self) -> bool:
        return self._rows == self._cols

    @property
    def transposable(self) -> bool:
        return True

    @property
    def solvable(self) -> bool:
        return self.is_square

    @abstractmethod
    def matvec(self, x: np.ndarray) -> np.ndarray:
        ...

    def rmatvec(self, y: np.ndarray) -> np.ndarray:
        raise NotImplementedError(f"{self.kind} map is not transposable")

    def solve(self, b: np.ndarray, settings: Optional[PcgSettings] = None) -> np.ndarray:
        raise NotImplementedError(f"{self.kind} map is not solvable")

    def rsolve(self, b: np.ndarray, settings: Optional[PcgSettings] = None) -> np.ndarray:
        raise NotImplementedError(f"{self.kind} map has no transpose solve")

    def to_dense(self) -> np.ndarray:
        eye = np.eye(self._cols)
        return np.column_stack([self.matvec(eye[:, j]) for j in range(self._cols)])

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self._rows}x{self._cols})"


class DenseMap(LinearMap):
    """Explicit matrix; solves by a cached LU factorization"""

    kind = "dense"

    def __init__(self, matrix: np.ndarray):
        matrix = np.array(matrix, dtype=float)
        if matrix.ndim != 2:
            raise ValueError(f"Dense map needs a 2-D array, got shape {matrix.shape}")
        super().__init__(*matrix.shape)
        matrix.setflags(write=False)
        self._matrix = matrix
        self._lu = None
        self._lock = threading.Lock()

    @property
    def matrix(self) -> np.ndarray:
        return self._matrix

    def matvec(self, x):
        return self._matrix @ x

    def rmatvec(self, y):
        return self._matrix.T @ y

    def _factor(self):
        if self._lu is None:
            with self._lock:
                if self._lu is None:
                    lu, piv = sla.lu_factor(self._matrix, check_finite=False)
                    pivots = np.abs(np.diag(lu))
                    if pivots.min() <= SINGULAR_TOL * max(pivots.max(), np.finfo(float).tiny):
                        raise SingularOperatorError(
                            f"Dense {self._rows}x{self._cols} map is numerically singular "
                            f"(smallest pivot {pivots.min():.3e})"
                        )
                    self._lu = (lu, piv)
        return self._lu

    def _iterative(self, matrix: np.ndarray, b: np.ndarray, settings: Optional[PcgSettings]) -> np.ndarray:
        tol = settings.tolerance if settings else DEFAULT_SOLVE_TOL
        maxiter = settings.max_iters if settings else None
        op = LinearOperator(matrix.shape, matvec=lambda v: matrix @ v)
        x, info = gmres(op, b, rtol=tol, atol=0.0, maxiter=maxiter)
        if info != 0:
            residual = np.linalg.norm(matrix @ x - b) / max(np.linalg.norm(b), np.finfo(float).tiny)
            raise SolverError("GMRES did not converge", residual, info)
        return x

    def solve(self, b, settings=None):
        if self._rows > DIRECT_SOLVE_MAX_DIM:
            return self._iterative(self._matrix, b, settings)
        return sla.lu_solve(self._factor(), b, check_finite=False)

    def rsolve(self, b, settings=None):
        if self._rows > DIRECT_SOLVE_MAX_DIM:
            return self._iterative(self._matrix.T, b, settings)
        return sla.lu_solve(self._factor(), b, trans=1, check_finite=False)

    def log_abs_det(self) -> float:
        lu, _ = self._factor()
        return float(np.sum(np.log(np.abs(np.diag(lu)))))

    def to_dense(self):
        return self._matrix.copy()


class DiagonalMap(LinearMap):
    """Square diagonal map"""

    kind = "diagonal"

    def __init__(self, diagonal: Sequence[float]):
        diagonal = np.array(diagonal, dtype=float).ravel()
        super().__init__(diagonal.size, diagonal.size)
        diagonal.setflags(write=False)
        self._diag = diagonal

    @property
    def diagonal(self) -> np.ndarray:
        return self._diag

    def matvec(self, x):
        return self._diag * x if np.ndim(x) == 1 else self._diag[:, None] * x

    rmatvec = matvec

    def solve(self, b, settings=None):
        mags = np.abs(self._diag)
        if mags.min() <= SINGULAR_TOL * mags.max():
            raise SingularOperatorError("Diagonal map has a zero entry")
        return b / self._diag if np.ndim(b) == 1 else b / self._diag[:, None]

    rsolve = solve

    def to_dense(self):
        return np.diag(self._diag)


class SvdMap(LinearMap):
    """Symmetric map V diag(s) V^T with orthogonal V"""

    kind = "svd"

    def __init__(self, V: np.ndarray, s: Sequence[float]):
        V = np.array(V, dtype=float)
        s = np.array(s, dtype=float).ravel()
        if V.shape != (s.size, s.size):
            raise DimensionMismatchError("SVD map basis", s.size, V.shape[0])
        super().__init__(s.size, s.size)
        V.setflags(write=False)
        s.setflags(write=False)
        self._V = V
        self._s = s

    @property
    def basis(self) -> np.ndarray:
        return self._V

    @property
    def values(self) -> np.ndarray:
        return self._s

    def _scale(self, x, factors):
        coeffs = self._V.T @ x
        coeffs = factors * coeffs if np.ndim(x) == 1 else factors[:, None] * coeffs
        return self._V @ coeffs

    def matvec(self, x):
        return self._scale(x, self._s)

    rmatvec = matvec

    def solve(self, b, settings=None):
        mags = np.abs(self._s)
        if mags.min() <= SINGULAR_TOL * mags.max():
            raise SingularOperatorError("SVD map has a zero singular value")
        return self._scale(b, 1.0 / self._s)

    rsolve = solve

    def to_dense(self):
        return (self._V * self._s) @ self._V.T


class ComposedMap(LinearMap):
    """Product maps[0] @ maps[1] @ ... applied right to left"""

    kind = "composed"

    def __init__(self, *maps: LinearMap):
        if not maps:
            raise ValueError("Composed map needs at least one factor")
        for left, right in zip(maps[:-1], maps[1:]):
            if left.cols != right.rows:
                raise DimensionMismatchError(f"Composition {left!r} @ {right!r}", left.cols, right.rows)
        super().__init__(maps[0].rows, maps[-1].cols)
        self._maps = tuple(maps)

    @property
    def factors(self) -> Tuple[LinearMap, ...]:
        return self._maps

    @property
    def transposable(self):
        return all(m.transposable for m in self._maps)

    @property
    def solvable(self):
        return all(m.is_square and m.solvable for m in self._maps)

    def matvec(self, x):
        for m in reversed(self._maps):
            x = m.matvec(x)
        return x

    def rmatvec(self, y):
        for m in self._maps:
            y = m.rmatvec(y)
        return y

    def solve(self, b, settings=None):
        for m in self._maps:
            b = m.solve(b, settings)
        return b

    def rsolve(self, b, settings=None):
        for m in reversed(self._maps):
            b = m.rsolve(b, settings)
        return b


class SolverMap(LinearMap):
    """Matrix-free map given by callables; transpose and solves are optional"""

    kind = "solver"

    def __init__(
        self,
        rows: int,
        cols: int,
        matvec: Callable[[np.ndarray], np.ndarray],
        rmatvec: Optional[Callable[[np.ndarray], np.ndarray]] = None,
        solve: Optional[Callable[[np.ndarray, Optional[PcgSettings]], np.ndarray]] = None,
        rsolve: Optional[Callable[[np.ndarray, Optional[PcgSettings]], np.ndarray]] = None,
    ):
        super().__init__(rows, cols)
        self._matvec = matvec
        self._rmatvec = rmatvec
        self._solve = solve
        self._rsolve = rsolve

    @property
    def transposable(self):
        return self._rmatvec is not None

    @property
    def solvable(self):
        return self.is_square and self._solve is not None

    def matvec(self, x):
        return self._matvec(x)

    def rmatvec(self, y):
        if self._rmatvec is None:
            return super().rmatvec(y)
        return self._rmatvec(y)

    def solve(self, b, settings=None):
        if self._solve is None:
            return super().solve(b, settings)
        return self._solve(b, settings)

    def rsolve(self, b, settings=None):
        if self._rsolve is None:
            return super().rsolve(b, settings)
        return self._rsolve(b, settings)


class InverseMap(LinearMap):
    """Action of base^{-1}; applying it is a solve with the wrapped map"""

    kind = "inverse"

    def __init__(self, base: LinearMap, settings: Optional[PcgSettings] = None):
        if not (base.is_square and base.solvable):
            raise ValueError(f"InverseMap needs a square solvable map, got {base!r}")
        super().__init__(base.rows, base.cols)
        self._base = base
        self._settings = settings

    @property
    def base(self) -> LinearMap:
        return self._base

    @property
    def transposable(self):
        return self._base.transposable

    def matvec(self, x):
        return self._base.solve(x, self._settings)

    def rmatvec(self, y):
        return self._base.rsolve(y, self._settings)

    def solve(self, b, settings=None):
        return self._base.matvec(b)

    def rsolve(self, b, settings=None):
        return self._base.rmatvec(b)


def _check_length(what: str, expected: int, v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.ndim != 1 or v.shape[0] != expected:
        raise DimensionMismatchError(what, expected, v.shape[0] if v.ndim else 0)
    return v


def apply(map: LinearMap, x: np.ndarray, counter: Optional[SolveCounter] = None) -> np.ndarray:
    """Return map @ x, counting one forward apply when a counter is given"""
    x = _check_length(f"apply({map!r})", map.cols, x)
    out = map.matvec(x)
    if counter is not None:
        counter.count_forward()
    return out


def apply_transpose(map: LinearMap, y: np.ndarray, counter: Optional[SolveCounter] = None) -> np.ndarray:
    """Return map^T @ y; an adjoint apply costs as much as a forward one"""
    y = _check_length(f"apply_transpose({map!r})", map.rows, y)
    out = map.rmatvec(y)
    if counter is not None:
        counter.count_forward()
    return out


def solve(
    map: LinearMap,
    b: np.ndarray,
    settings: Optional[PcgSettings] = None,
    counter: Optional[SolveCounter] = None,
) -> np.ndarray:
    """Return x with map @ x = b, counting one inverse solve when a counter is given"""
    if not map.is_square:
        raise DimensionMismatchError(f"solve({map!r}) needs a square map; rows", map.cols, map.rows)
    b = _check_length(f"solve({map!r})", map.rows, b)
    out = map.solve(b, settings)
    if counter is not None:
        counter.count_inverse()
    return out


def solve_transpose(
    map: LinearMap,
    b: np.ndarray,
    settings: Optional[PcgSettings] = None,
    counter: Optional[SolveCounter] = None,
) -> np.ndarray:
    """Return x with map^T @ x = b"""
    if not map.is_square:
        raise DimensionMismatchError(f"solve_transpose({map!r}) needs a square map; rows", map.cols, map.rows)
    b = _check_length(f"solve_transpose({map!r})", map.cols, b)
    out = map.rsolve(b, settings)
    if counter is not None:
        counter.count_inverse()
    return out


def to_dense(map: LinearMap) -> np.ndarray:
    """Materialize a map column by column (never counted)"""
    return np.asarray(map.to_dense(), dtype=float)


@dataclass(frozen=True)
class ReparamResult:
    """Orthonormal basis V_x = [V_y, V_+] and reduced observation Z = O V_x"""
    V_x: np.ndarray
    Z: np.ndarray
    V_y: np.ndarray

    @property
    def d_x(self) -> int:
        return self.V_x.shape[1]

    @property
    def d_y(self) -> int:
        return self.V_y.shape[1]

    def reduce(self, F_raw: np.ndarray) -> np.ndarray:
        """Square operator V_x^T F_raw"""
        return self.V_x.T @ F_raw

    def observation_residual(self, O: np.ndarray) -> float:
        """Relative Frobenius error of Z V_x^T against O"""
        return float(np.linalg.norm(self.Z @ self.V_x.T - O) / np.linalg.norm(O))


def build_reparameterization(O: LinearMap, Ftilde_raw: LinearMap) -> ReparamResult:
    """
    Square a rectangular forward model y = O F_raw x.

    V_y spans the row space of O; V_+ holds the dominant left singular vectors of
    the approximate operator projected off V_y, which keeps V_x^T Ftilde_raw well
    conditioned.
    """
    O_dense = to_dense(O)
    F_dense = to_dense(Ftilde_raw)
    d_y, d_u = O_dense.shape
    if F_dense.shape[0] != d_u:
        raise DimensionMismatchError("Ftilde_raw rows", d_u, F_dense.shape[0])
    d_x = F_dense.shape[1]
    if d_y > d_x:
        raise DimensionMismatchError("Observation count must not exceed parameter count; d_y", d_x, d_y)
    if d_x > d_u:
        raise DimensionMismatchError("Parameter count must not exceed latent dimension; d_x", d_u, d_x)

    _, s, Vt = np.linalg.svd(O_dense, full_matrices=False)
    if s[-1] < SINGULAR_TOL * s[0]:
        raise SingularOperatorError(
            f"Observation operator is rank deficient (sigma_min/sigma_max = {s[-1] / s[0]:.3e})"
        )
    V_y = Vt.T

    n_plus = d_x - d_y
    if n_plus > 0:
        projected = F_dense - V_y @ (V_y.T @ F_dense)
        U_p, s_p, _ = np.linalg.svd(projected, full_matrices=False)
        if s_p[n_plus - 1] < SINGULAR_TOL * max(s_p[0], np.finfo(float).tiny):
            raise SingularOperatorError("Projected approximate operator has too small a range to extend V_y")
        V_x = np.hstack([V_y, U_p[:, :n_plus]])
    else:
        V_x = V_y.copy()

    Z = O_dense @ V_x
    logger.debug(f"Reparameterization built: d_u={d_u}, d_x={d_x}, d_y={d_y}")
    return ReparamResult(V_x=V_x, Z=Z, V_y=V_y)


def spectral_error(F: LinearMap, F_tilde: LinearMap) -> float:
    """Spectral norm of I - F_tilde^{-1} F, by dense computation"""
    F_dense = to_dense(F)
    Ft_dense = to_dense(F_tilde)
    if F_dense.shape != Ft_dense.shape:
        raise DimensionMismatchError("spectral_error operands", F_dense.shape[0], Ft_dense.shape[0])
    K_inv = sla.solve(Ft_dense, F_dense)
    return float(np.linalg.norm(np.eye(F_dense.shape[0]) - K_inv, 2))
