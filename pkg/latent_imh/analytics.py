"""Closed-form expected KL, KL upper bounds and mixing-time bound evaluators"""

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy import linalg as sla

from latent_imh.constants import MATCHING_VALID_THRESHOLD
from latent_imh.exceptions import DimensionMismatchError, SingularOperatorError, UnsupportedVariantError
from latent_imh.models import BoundReport, KlReport, MixingBoundInputs
from latent_imh.posteriors import InverseProblem, posterior_moments
from latent_imh.priors import StandardNormalPrior, prior_moments

logger = logging.getLogger(__name__)

Gaussian = Tuple[np.ndarray, np.ndarray]


@dataclass(frozen=True)
class DiagonalSpec:
    """F = diag(s), F_tilde = diag(alpha * s), O = [I 0]"""
    d: int
    d_y: int
    s: np.ndarray
    alpha: np.ndarray
    sigma: float

    def __post_init__(self):
        s = np.asarray(self.s, dtype=float)
        alpha = np.asarray(self.alpha, dtype=float)
        if s.size != self.d:
            raise DimensionMismatchError("DiagonalSpec s", self.d, s.size)
        if alpha.size != self.d:
            raise DimensionMismatchError("DiagonalSpec alpha", self.d, alpha.size)
        if not 1 <= self.d_y <= self.d:
            raise ValueError(f"DiagonalSpec needs 1 <= d_y <= d, got d_y={self.d_y}, d={self.d}")
        if np.any(s <= 0):
            raise ValueError("DiagonalSpec singular values must be positive")
        if np.any(alpha == 0):
            raise ValueError("DiagonalSpec perturbations must be nonzero")
        if not self.sigma > 0:
            raise ValueError(f"DiagonalSpec sigma must be positive, got {self.sigma}")
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "alpha", alpha)


def kl_gaussians(g1: Gaussian, g2: Gaussian) -> float:
    """KL(N(mu1, S1) || N(mu2, S2))"""
    mu1, S1 = np.asarray(g1[0], dtype=float), np.atleast_2d(np.asarray(g1[1], dtype=float))
    mu2, S2 = np.asarray(g2[0], dtype=float), np.atleast_2d(np.asarray(g2[1], dtype=float))
    d = mu1.size
    if mu2.size != d or S1.shape != (d, d) or S2.shape != (d, d):
        raise DimensionMismatchError("kl_gaussians operands", d, mu2.size)
    try:
        cho2 = sla.cho_factor(S2, lower=True)
    except np.linalg.LinAlgError as e:
        raise SingularOperatorError(f"Second covariance is not positive definite: {e}") from e
    sign1, logdet1 = np.linalg.slogdet(S1)
    if sign1 <= 0:
        raise SingularOperatorError("First covariance is singular")
    logdet2 = 2.0 * np.sum(np.log(np.diag(cho2[0])))
    diff = mu2 - mu1
    trace = np.trace(sla.cho_solve(cho2, S1))
    quad = diff @ sla.cho_solve(cho2, diff)
    return float(0.5 * (logdet2 - logdet1 + trace - d + quad))


def _precision(A: np.ndarray, sigma: float):
    """H = I + A^T A / sigma^2 with its Cholesky factor and log-determinant"""
    H = np.eye(A.shape[1]) + (A.T @ A) / sigma**2
    cho = sla.cho_factor(H, lower=True)
    return H, cho, float(2.0 * np.sum(np.log(np.diag(cho[0]))))


def _trace_product(A: np.ndarray, sigma: float, cov: np.ndarray) -> float:
    """tr(H cov) without forming H"""
    return float(np.trace(cov) + np.sum((A @ cov) * A) / sigma**2)


def _mean_terms(A: np.ndarray, sigma: float, delta: np.ndarray) -> float:
    """E_y of the quadratic mean term for y ~ N(0, A A^T + sigma^2 I)"""
    return float(
        np.sum((A @ delta @ A) ** 2) / sigma**2
        + sigma**2 * np.sum(delta**2)
        + np.sum((delta @ A) ** 2)
        + np.sum((A @ delta) ** 2)
    )


def _offset_term(A: np.ndarray, sigma: float, c: np.ndarray) -> float:
    return float(c @ c + np.sum((A @ c) ** 2) / sigma**2)


def _whitened_operators(problem: InverseProblem):
    if not problem.prior.is_gaussian:
        raise UnsupportedVariantError(f"Expected KL needs a Gaussian prior, got {problem.prior.kind}")
    mean, cov = prior_moments(problem.prior)
    A, A_tilde = problem.dense_A, problem.dense_A_tilde
    if cov is None:
        return mean, None, A, A_tilde
    W = np.linalg.cholesky(cov)
    return mean, W, A @ W, A_tilde @ W


def expected_kl_closed_form(problem: InverseProblem) -> KlReport:
    """
    D = 2 E_y[KL(alternative || exact)] for the approximate and latent posteriors.

    For a standard-normal prior this is
    log|S|/|S_alt| + tr(S^{-1} S_alt) - d + ||A D A||^2/s^2 + s^2 ||D||^2 + ||D A||^2 + ||A D||^2
    with D the pseudo-inverse difference. A general Gaussian prior is whitened first;
    a nonzero prior mean adds the constant mean-shift term.
    """
    mean, W, A, A_tilde = _whitened_operators(problem)
    sigma = problem.sigma
    d, d_y = problem.dim, problem.obs_dim
    zeros = np.zeros(d_y)

    G = posterior_moments(A, sigma, zeros).pseudo_inverse
    G_a = posterior_moments(A_tilde, sigma, zeros).pseudo_inverse
    _, _, logdet_H = _precision(A, sigma)
    _, cho_a, logdet_H_a = _precision(A_tilde, sigma)
    Sigma_a = sla.cho_solve(cho_a, np.eye(d))

    K = problem.dense_K
    K_w = K if W is None else sla.solve_triangular(W, K @ W, lower=True)
    _, logabsdet_F = np.linalg.slogdet(problem.dense_F)
    _, logabsdet_Ft = np.linalg.slogdet(problem.dense_F_tilde)
    logabsdet_K = logabsdet_Ft - logabsdet_F

    c_a = np.zeros(d)
    c_l = np.zeros(d)
    if np.any(mean):
        c_a = G_a @ ((problem.dense_A - problem.dense_A_tilde) @ mean)
        c_l = K_w @ c_a + sla.solve_triangular(W, K @ mean - mean, lower=True)

    D_a = (
        -logdet_H
        + logdet_H_a
        + _trace_product(A, sigma, Sigma_a)
        - d
        + _mean_terms(A, sigma, G_a - G)
        + _offset_term(A, sigma, c_a)
    )
    Sigma_l = K_w @ Sigma_a @ K_w.T
    D_l = (
        -logdet_H
        + logdet_H_a
        - 2.0 * logabsdet_K
        + _trace_product(A, sigma, Sigma_l)
        - d
        + _mean_terms(A, sigma, K_w @ G_a - G)
        + _offset_term(A, sigma, c_l)
    )
    logger.debug(f"Expected KL: D_a={D_a:.6g}, D_l={D_l:.6g}")
    return KlReport(D_a=D_a, D_l=D_l)


def expected_kl_prior(problem: InverseProblem) -> float:
    """2 E_y[KL(exact posterior || prior)] = log det(I + A_w^T A_w / sigma^2)"""
    _, _, A, _ = _whitened_operators(problem)
    return _precision(A, problem.sigma)[2]


def expected_kl_diagonal(spec: DiagonalSpec) -> KlReport:
    """Expected KL when F, F_tilde and O are diagonal"""
    s, alpha, sigma2 = spec.s, spec.alpha, spec.sigma**2
    obs = slice(0, spec.d_y)
    s_o, a_o = s[obs], alpha[obs]
    rho = (a_o**2 * s_o**2 + sigma2) / (s_o**2 + sigma2)
    zeta = 1.0 / (a_o**2 * s_o**2 + sigma2) ** 2

    D_a = -spec.d_y + np.sum(np.log(rho) + 1.0 / rho) + np.sum(
        zeta * (a_o - 1.0) ** 2 * (a_o * s_o**2 - sigma2) ** 2 * s_o**2 / sigma2
    )

    a_u = alpha[spec.d_y:]
    D_l = (
        -spec.d
        + np.sum(a_u**2 - np.log(a_u**2))
        + np.sum(np.log(rho / a_o**2) + a_o**2 / rho + zeta * (a_o**2 - 1.0) ** 2 * s_o**2 * sigma2)
    )
    return KlReport(D_a=float(D_a), D_l=float(D_l))


def _match_singular_vectors(V: np.ndarray, V_t: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Greedy matching by largest |v_i^T v~_j|, returning the order and sign flips"""
    overlaps = np.abs(V.T @ V_t)
    n = overlaps.shape[0]
    order = np.empty(n, dtype=int)
    taken = np.zeros(n, dtype=bool)
    for i in range(n):
        candidates = np.where(taken, -np.inf, overlaps[i])
        j = int(np.argmax(candidates))
        order[i] = j
        taken[j] = True
    signs = np.sign(np.einsum("ij,ij->j", V, V_t[:, order]))
    signs[signs == 0] = 1.0
    return order, signs


def kl_general_bounds(problem: InverseProblem) -> BoundReport:
    """Perturbation constants (kappa+-, eps, tau) and the upper bounds on D_a and D_l"""
    if not isinstance(problem.prior, StandardNormalPrior):
        raise UnsupportedVariantError("KL bounds need a standard-normal prior")
    if not problem.is_symmetric():
        raise UnsupportedVariantError("KL bounds need symmetric F and F_tilde")

    sigma = problem.sigma
    sigma2 = sigma**2
    d, d_y = problem.dim, problem.obs_dim

    sv_K = np.linalg.svd(problem.dense_K, compute_uv=False)
    kappa_plus, kappa_minus = float(sv_K[0]), float(sv_K[-1])

    U, s, Vt = np.linalg.svd(problem.dense_A, full_matrices=False)
    U_t, s_t, Vt_t = np.linalg.svd(problem.dense_A_tilde, full_matrices=False)
    V, V_t = Vt.T, Vt_t.T
    order, signs = _match_singular_vectors(V, V_t)
    V_t = V_t[:, order] * signs
    U_t = U_t[:, order] * signs
    s_t = s_t[order]

    v_overlap = np.einsum("ij,ij->j", V, V_t)
    u_overlap = np.einsum("ij,ij->j", U, U_t)
    eps = float(max(np.max(np.abs(1.0 - v_overlap)), np.max(np.abs(1.0 - u_overlap))))
    min_overlap = float(min(np.min(v_overlap), np.min(u_overlap)))
    matching_valid = min_overlap >= MATCHING_VALID_THRESHOLD
    if not matching_valid:
        logger.warning(f"⚠️  Singular vectors matched with overlap {min_overlap:.3f}; the bound may be vacuous")

    S_sigma = s**2 / (s**2 + sigma2)
    S_sigma_t = s_t**2 / (s_t**2 + sigma2)
    tau = float(max(
        np.sum(((V * S_sigma) @ V.T - (V_t * S_sigma_t) @ V_t.T) ** 2),
        np.sum(((U * S_sigma) @ U.T - (U_t * S_sigma_t) @ U_t.T) ** 2),
    ))

    gamma = (s_t**2 + sigma2) / (s**2 + sigma2)
    rho = (s**2 - s_t**2) / (s_t**2 + sigma2)
    zeta = s + sigma2 / s
    zeta_t = s_t + sigma2 / s_t
    snr_factor = s[0] ** 2 / sigma2

    eps_l = kappa_plus * (1.0 + eps) - 1.0
    kappa_a = max(abs(1.0 / kappa_minus - 1.0), abs(1.0 / kappa_plus - 1.0)) ** 2
    kappa_l = kappa_plus**2 / kappa_minus**2 - 2.0 * kappa_minus / kappa_plus + 1.0

    bound_a = (
        2.0 * eps * d
        + np.sum((1.0 + 2.0 * eps) * rho + np.log(gamma))
        + (1.0 + snr_factor) * (
            tau
            + kappa_a * d_y
            + sigma2 * np.sum((1.0 / zeta - 1.0 / zeta_t) ** 2 + 4.0 * eps / (zeta * zeta_t))
        )
    )
    bound_l = (
        2.0 * eps_l * d
        + np.sum((1.0 + 2.0 * eps_l) * rho + np.log(gamma / kappa_minus**2))
        + (2.0 + snr_factor) * tau
        + kappa_l * d_y
        + sigma2 * np.sum(
            kappa_plus**2 / zeta_t**2
            + 1.0 / zeta**2
            - 2.0 * (kappa_minus + eps * (kappa_minus - 1.0)) / (zeta * zeta_t)
        )
    )
    return BoundReport(
        kappa_plus=kappa_plus,
        kappa_minus=kappa_minus,
        eps=eps,
        tau=tau,
        eps_l=float(eps_l),
        kappa_a=float(kappa_a),
        kappa_l=float(kappa_l),
        gamma=gamma.tolist(),
        rho=rho.tolist(),
        zeta=zeta.tolist(),
        zeta_tilde=zeta_t.tolist(),
        bound_D_a=float(bound_a),
        bound_D_l=float(bound_l),
        matching_valid=matching_valid,
        min_overlap=min_overlap,
    )


def mixing_bound(inputs: MixingBoundInputs) -> float:
    """128 log(2 beta / eps) max(1, 128^2 C^2 / ((log 2)^2 m))"""
    ratio = 128.0**2 * inputs.lipschitz_C**2 / (np.log(2.0) ** 2 * inputs.m)
    return float(128.0 * np.log(2.0 * inputs.beta / inputs.eps_tv) * max(1.0, ratio))


def radius_constant(s: float, d: int) -> float:
    """r(s) = 2 + 2 max{(-log s)^(1/4) / d^(1/4), (-log s)^(1/2) / d^(1/2)} for s in (0, 1/2)"""
    if not 0.0 < s < 0.5:
        raise ValueError(f"radius_constant needs s in (0, 1/2), got {s}")
    t = -np.log(s)
    return float(2.0 + 2.0 * max((t / d) ** 0.25, (t / d) ** 0.5))


def mixing_radius(
    d: int, m: float, eps_tv: float, beta: float, mode_gap: float, sigma_min: Optional[float] = None
) -> float:
    """
    Radius of the ball on which the Lipschitz constant is needed.

    mode_gap is the distance between the modes of the target and the proposal;
    sigma_min is the smallest singular value of F_tilde^{-1} F for the latent
    sampler and None for the approximate one.
    """
    scale = np.sqrt(d / m)
    inner = scale * radius_constant(eps_tv / (17.0 * beta), d)
    outer = scale * radius_constant(eps_tv / (272.0 * beta), d)
    if sigma_min is not None:
        outer /= sigma_min
    return float(max(inner, outer + mode_gap))


def lipschitz_admissible(C: float, m: float) -> bool:
    """Whether C <= log 2 sqrt(m) / 32, the regime where mixing_bound holds"""
    return bool(C <= np.log(2.0) * np.sqrt(m) / 32.0)


def mixing_scaling_diagonal(spec: DiagonalSpec, m: float) -> Tuple[float, float]:
    """
    Order-of-magnitude mixing indicators for the diagonal case.

    Approx: (d/m^2) max_{i<=d_y} (1 - alpha_i^2)^2 s_i^4 / sigma^4
    Latent: (d/m^2) max_{i<=d} (1 - 1/alpha_i^2)^2
    """
    if not m > 0:
        raise ValueError(f"m must be positive, got {m}")
    obs = slice(0, spec.d_y)
    a_o, s_o = spec.alpha[obs], spec.s[obs]
    scale = spec.d / m**2
    scale_a = scale * np.max((1.0 - a_o**2) ** 2 * s_o**4 / spec.sigma**4)
    scale_l = scale * np.max((1.0 - 1.0 / spec.alpha**2) ** 2)
    return float(scale_a), float(scale_l)
