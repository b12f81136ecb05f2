"""Pydantic models for settings and report records"""

from typing import List, Literal

from pydantic import BaseModel, ConfigDict, Field, model_validator

from latent_imh.constants import DEFAULT_MAX_ITERS, KL_NEGATIVE_SLACK


class PcgSettings(BaseModel):
    """Stopping rule and preconditioner choice for conjugate gradient solves"""
    model_config = ConfigDict(frozen=True)

    tolerance: float = Field(default=1e-6, gt=0, lt=1, description="Relative residual tolerance")
    max_iters: int = Field(default=DEFAULT_MAX_ITERS, ge=1, description="Iteration cap")
    preconditioner: Literal["none", "factorization"] = Field(
        default="factorization", description="Use the randomized Cholesky factor G as preconditioner"
    )


class HelmholtzGrid(BaseModel):
    """Fine, coarse and source grids of the Helmholtz scattering problem"""
    model_config = ConfigDict(frozen=True)

    n_x: int = Field(default=8, ge=1, description="Source grid side")
    n_u: int = Field(default=32, ge=2, description="Fine grid side")
    n_u_coarse: int = Field(default=16, ge=1, description="Coarse grid side")
    wavenumber: float = Field(default=8.0, gt=0)
    events: int = Field(default=2, ge=1)

    @model_validator(mode="after")
    def _check_sides(self) -> "HelmholtzGrid":
        if self.n_u_coarse >= self.n_u:
            raise ValueError(f"n_u_coarse ({self.n_u_coarse}) must be smaller than n_u ({self.n_u})")
        if self.n_x > self.n_u_coarse:
            raise ValueError("n_x must not exceed n_u_coarse")
        return self


class KlReport(BaseModel):
    """Expected KL divergences of the approximate and latent posteriors"""
    D_a: float
    D_l: float

    @model_validator(mode="after")
    def _check_nonnegative(self) -> "KlReport":
        if self.D_a < -KL_NEGATIVE_SLACK or self.D_l < -KL_NEGATIVE_SLACK:
            raise ValueError(f"expected KL must be nonnegative, got D_a={self.D_a}, D_l={self.D_l}")
        return self


class BoundReport(BaseModel):
    """Perturbation constants and the resulting upper bounds on D_a and D_l"""
    kappa_plus: float = Field(..., gt=0)
    kappa_minus: float = Field(..., gt=0)
    eps: float = Field(..., ge=0)
    tau: float = Field(..., ge=0)
    eps_l: float
    kappa_a: float
    kappa_l: float
    gamma: List[float]
    rho: List[float]
    zeta: List[float]
    zeta_tilde: List[float]
    bound_D_a: float
    bound_D_l: float
    matching_valid: bool = Field(
        default=True, description="False when a matched left or right singular-vector pair has overlap below 0.5"
    )
    min_overlap: float = 1.0


class MixingBoundInputs(BaseModel):
    """Inputs of the general mixing-time bound"""
    m: float = Field(..., gt=0, description="Strong log-concavity constant")
    beta: float = Field(..., ge=1, description="Warm-start constant")
    eps_tv: float = Field(..., gt=0, le=1, description="Total-variation accuracy")
    lipschitz_C: float = Field(..., ge=0)
