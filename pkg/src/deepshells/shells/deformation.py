"""
The deformation step of smooth shells: given a soft correspondence, find the
functional map C and the displacement coefficients τ that best align the
embedding of X with Y.

The source embedding at level k after deformation is

    X*_k = (Φ_k C, X_k + Φ_k τ, n*)

where n* are normals recomputed from the deformed coordinates. C here is the
matrix that multiplies Φ_k from the right.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import torch

from deepshells.errors import (
    DimensionMismatchError,
    NonFiniteError,
    SingularSystemError,
)
from deepshells.mesh import TriMesh
from deepshells.numerics import DTYPE, all_finite
from deepshells.spectral import ProductEmbedding, SpectralBasis, smoothed_coordinates
from deepshells.transport import SoftCorrespondence

logger = logging.getLogger(__name__)

# Systems worse conditioned than this get a Tikhonov term
MAX_CONDITION = 1e12
TIKHONOV = 1e-9


@dataclass(frozen=True, eq=False)
class DeformationParams:
    C: torch.Tensor
    tau: torch.Tensor

    def __post_init__(self):
        k = self.C.shape[0]
        if self.C.shape != (k, k) or self.tau.shape != (k, 3):
            raise DimensionMismatchError(
                f"C must be k×k and τ k×3, got {tuple(self.C.shape)} "
                f"and {tuple(self.tau.shape)}"
            )

    @property
    def k(self) -> int:
        return self.C.shape[0]

    @classmethod
    def identity(cls, k: int) -> DeformationParams:
        return cls(torch.eye(k, dtype=DTYPE), torch.zeros(k, 3, dtype=DTYPE))

    def lifted(self, k: int) -> DeformationParams:
        """
        The same deformation expressed at a finer level: new modes are left alone.
        """
        if k < self.k:
            raise ValueError(f"cannot lift a level-{self.k} deformation to k={k}")
        C = torch.eye(k, dtype=self.C.dtype)
        C[: self.k, : self.k] = self.C.detach()
        tau = torch.zeros(k, 3, dtype=self.tau.dtype)
        tau[: self.k] = self.tau.detach()
        return DeformationParams(C, tau)


def deformed_embedding(
    mesh: TriMesh, basis: SpectralBasis, deform: DeformationParams, k: int
) -> ProductEmbedding:
    if deform.k != k:
        raise DimensionMismatchError(f"deformation is for level {deform.k}, not {k}")
    phi = basis.phi(k)
    coordinates = smoothed_coordinates(mesh, basis, k) + phi @ deform.tau
    return ProductEmbedding.assemble(phi @ deform.C, coordinates, mesh.triangles)


def solve_deformation(
    basis: SpectralBasis,
    mesh: TriMesh,
    target: ProductEmbedding,
    corr: SoftCorrespondence,
    k: int,
    detach_normal_matrix: bool = False,
) -> DeformationParams:
    """
    Least-squares (C, τ) for a fixed coupling π.

    With D the row masses of π and Z the π-pushforward of the target blocks,
    both unknowns share the normal matrix A = Φᵀ D Φ:

        A C = Φᵀ Z_Φ
        A τ = Φᵀ (Z_X - D X_k)

    With `detach_normal_matrix` no gradient flows through A; the right-hand
    sides stay differentiable.
    """
    if target.k != k:
        raise DimensionMismatchError(f"target embedding is level {target.k}, not {k}")
    if corr.n_x != basis.n or corr.n_y != target.coords.shape[0]:
        raise DimensionMismatchError(
            f"coupling is {corr.n_x}×{corr.n_y} but the shapes have "
            f"{basis.n} and {target.coords.shape[0]} vertices"
        )
    phi = basis.phi(k)
    row_mass = corr.row_mass()
    pushed = corr.pushforward(torch.cat([target.spectral, target.coordinates], dim=1))
    smoothed = smoothed_coordinates(mesh, basis, k)

    normal_matrix = phi.T @ (row_mass[:, None] * phi)
    if detach_normal_matrix:
        normal_matrix = normal_matrix.detach()
    rhs = torch.cat(
        [
            phi.T @ pushed[:, :k],
            phi.T @ (pushed[:, k:] - row_mass[:, None] * smoothed),
        ],
        dim=1,
    )
    solution = solve_normal_equations(normal_matrix, rhs, k)
    return DeformationParams(C=solution[:, :k], tau=solution[:, k:])


def solve_normal_equations(A: torch.Tensor, rhs: torch.Tensor, k: int) -> torch.Tensor:
    """
    Solve the symmetric positive semidefinite system A x = rhs.

    The spectrum of A decides whether a Tikhonov term is needed; gradients flow
    through the solve itself.
    """
    if not (all_finite(A.detach()) and all_finite(rhs.detach())):
        raise NonFiniteError(f"deformation system at level k={k} is not finite")
    with torch.no_grad():
        spectrum = torch.linalg.eigvalsh(A)
        largest = float(spectrum[-1])
        smallest = float(spectrum[0])
    condition = largest / smallest if smallest > 0 else float("inf")
    if largest <= 0:
        raise SingularSystemError(k, condition)
    if condition > MAX_CONDITION:
        shift = TIKHONOV * largest
        regularized = largest / (smallest + shift) if smallest + shift > 0 else None
        if regularized is None or regularized > MAX_CONDITION:
            raise SingularSystemError(k, condition)
        logger.warning(
            "deformation system at k=%d has condition %.3e; adding Tikhonov term",
            k,
            condition,
        )
        A = A + shift * torch.eye(A.shape[0], dtype=A.dtype)
    else:
        logger.debug("deformation system at k=%d has condition %.3e", k, condition)
    return torch.linalg.solve(A, rhs)


def alignment_fit(
    basis: SpectralBasis,
    mesh: TriMesh,
    target: ProductEmbedding,
    corr: SoftCorrespondence,
    deform: DeformationParams,
    weights=(1.0, 1.0),
) -> float:
    """
    The part of the transport data term that solve_deformation minimizes:

        Σ_ij π_ij (w_Φ ‖Φ_i C - Φ^Y_j‖² + w_X ‖X_k,i + Φ_i τ - Y_k,j‖²)
    """
    k = deform.k
    spectral_weight, coordinate_weight = (w**0.5 for w in weights)
    with torch.no_grad():
        phi = basis.phi(k)
        moved = smoothed_coordinates(mesh, basis, k) + phi @ deform.tau
        source = torch.cat(
            [spectral_weight * (phi @ deform.C), coordinate_weight * moved], dim=1
        )
        sink = torch.cat(
            [spectral_weight * target.spectral, coordinate_weight * target.coordinates],
            dim=1,
        )
        # expand the square so π never has to be held next to a cost matrix
        rows = corr.row_mass()
        columns = corr.column_mass()
        cross = (source * corr.pushforward(sink)).sum()
        fit = (
            rows @ source.pow(2).sum(dim=1)
            - 2 * cross
            + columns @ sink.pow(2).sum(dim=1)
        )
    return float(fit)


def mode_weights(
    basis: SpectralBasis,
    target: ProductEmbedding,
    corr: SoftCorrespondence,
    deform: DeformationParams,
    max_residual: float = 0.5,
) -> torch.Tensor:
    """
    How well each spectral column of Y is reproduced by Φ_k C under π.

    Column m gets the relative residual

        r_m = Σ_i D_i (Φ_i C_m - T_im)² / Σ_i D_i T_im²

    of its least-squares fit, with T = D⁻¹ π Φ^Y the π-averaged target, and
    the weight max(0, 1 - r_m / max_residual). Columns of Y that leak outside
    the span of Φ_k are down-weighted in the next transport step; a column
    with no target mass keeps weight 1. No gradient flows through the weights.
    """
    if max_residual <= 0:
        raise ValueError(f"max_residual must be positive, got {max_residual}")
    k = deform.k
    if target.k != k:
        raise DimensionMismatchError(f"target embedding is level {target.k}, not {k}")
    with torch.no_grad():
        phi = basis.phi(k)
        row_mass = corr.row_mass()
        averaged = corr.pushforward(target.spectral) / row_mass.clamp_min(
            torch.finfo(DTYPE).tiny
        )[:, None]
        misfit = row_mass @ (phi @ deform.C - averaged).pow(2)
        norm = row_mass @ averaged.pow(2)
        empty = norm <= torch.finfo(DTYPE).eps * float(norm.max().clamp_min(1.0))
        residual = torch.where(empty, torch.zeros_like(norm), misfit / norm)
        weights = (1 - residual / max_residual).clamp(0.0, 1.0)
    return weights
