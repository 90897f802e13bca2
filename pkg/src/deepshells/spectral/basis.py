"""
Truncated Laplace–Beltrami eigenbases and the smooth-shells product embedding.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import cached_property
from typing import overload

import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg
import torch

from deepshells.errors import (
    DegenerateMeshError,
    DimensionMismatchError,
    EigensolverError,
)
from deepshells.mesh import TriMesh
from deepshells.numerics import as_index_tensor, as_tensor, safe_norm
from deepshells.spectral.laplacian import LaplacianPair

logger = logging.getLogger(__name__)

# Above this many vertices, fall back to shift-invert Lanczos
DENSE_SOLVE_LIMIT = 4000

_SHIFT_INVERT_ATTEMPTS = 4
_NORMAL_EPS = 1e-14


@dataclass(frozen=True, eq=False)
class SpectralBasis:
    """
    The K smallest eigenpairs of W φ = λ M φ, eigenvectors mass-orthonormal.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    @property
    def K(self) -> int:
        return len(self.eigenvalues)

    @property
    def n(self) -> int:
        return self.eigenvectors.shape[0]

    @cached_property
    def tensor(self) -> torch.Tensor:
        return as_tensor(self.eigenvectors)

    def phi(self, k: int) -> torch.Tensor:
        """
        First k eigenvectors as an n×k float64 tensor.
        """
        if not 1 <= k <= self.K:
            raise ValueError(f"level k={k} outside the basis size [1, {self.K}]")
        return self.tensor[:, :k]

    def truncated(self, K: int) -> SpectralBasis:
        if K > self.K:
            raise ValueError(f"cannot truncate a basis of size {self.K} to {K}")
        return SpectralBasis(self.eigenvalues[:K], self.eigenvectors[:, :K])


@dataclass(frozen=True, eq=False)
class ProductEmbedding:
    """
    Per-vertex rows (Φ_k, X_k, n_k) of the smooth-shells product space.
    """

    k: int
    coords: torch.Tensor

    @property
    def spectral(self) -> torch.Tensor:
        return self.coords[:, : self.k]

    @property
    def coordinates(self) -> torch.Tensor:
        return self.coords[:, self.k : self.k + 3]

    @property
    def normals(self) -> torch.Tensor:
        return self.coords[:, self.k + 3 :]

    @classmethod
    def assemble(
        cls, spectral: torch.Tensor, coordinates: torch.Tensor, triangles
    ) -> ProductEmbedding:
        normals = vertex_normals(coordinates, triangles)
        return cls(
            k=spectral.shape[1], coords=torch.cat([spectral, coordinates, normals], 1)
        )


def eigendecompose(lap: LaplacianPair, K: int) -> SpectralBasis:
    """
    Smallest K generalized eigenpairs, ascending, with deterministic signs.

    The entry of largest magnitude in each eigenvector is made positive.
    """
    n = lap.n
    if not 1 <= K <= n:
        raise ValueError(f"requested K={K} eigenpairs of a {n}-vertex Laplacian")
    if not (lap.mass > 0).all():
        raise DegenerateMeshError(
            f"{np.count_nonzero(lap.mass <= 0)} vertices have zero area; "
            "the mass matrix must be positive"
        )

    if n <= DENSE_SOLVE_LIMIT:
        values, vectors = _dense_eigenpairs(lap, K)
    else:
        values, vectors = _sparse_eigenpairs(lap, K)

    values = np.clip(values, 0.0, None)
    pivots = np.argmax(np.abs(vectors), axis=0)
    vectors = vectors * np.sign(vectors[pivots, np.arange(K)])

    _check_residuals(lap, values, vectors)
    return SpectralBasis(eigenvalues=values, eigenvectors=np.ascontiguousarray(vectors))


def _dense_eigenpairs(lap: LaplacianPair, K: int):
    # symmetric form M^{-1/2} W M^{-1/2}
    inv_sqrt = 1 / np.sqrt(lap.mass)
    symmetric = inv_sqrt[:, None] * lap.stiffness.toarray() * inv_sqrt[None, :]
    symmetric = 0.5 * (symmetric + symmetric.T)
    values, psi = scipy.linalg.eigh(symmetric, subset_by_index=[0, K - 1])
    return values, inv_sqrt[:, None] * psi


def _sparse_eigenpairs(lap: LaplacianPair, K: int):
    mass = lap.mass_matrix
    shift = 1e-8
    for attempt in range(_SHIFT_INVERT_ATTEMPTS):
        try:
            values, vectors = scipy.sparse.linalg.eigsh(
                lap.stiffness.tocsc(), k=K, M=mass, sigma=-shift, which="LM"
            )
            break
        except (RuntimeError, scipy.sparse.linalg.ArpackError) as e:
            logger.warning("eigsh attempt %d failed (%s); widening shift", attempt, e)
            shift *= 10
    else:
        raise EigensolverError(residual=float("inf"), index=0)
    order = np.argsort(values)
    return values[order], vectors[:, order]


def _check_residuals(lap: LaplacianPair, values, vectors) -> None:
    applied = lap.stiffness @ vectors
    residual = np.linalg.norm(applied - lap.mass[:, None] * vectors * values, axis=0)
    scale = max(1.0, float(abs(lap.stiffness).max()))
    tolerance = 1e-7 * np.linalg.norm(applied, axis=0) + 1e-12 * scale
    failed = np.flatnonzero(residual > tolerance)
    if len(failed):
        worst = int(failed[np.argmax(residual[failed])])
        raise EigensolverError(residual=float(residual[worst]), index=worst)


@overload
def spectral_coeffs(basis: SpectralBasis, mass, signal: np.ndarray) -> np.ndarray:
    ...


@overload
def spectral_coeffs(basis: SpectralBasis, mass, signal: torch.Tensor) -> torch.Tensor:
    ...


def spectral_coeffs(basis, mass, signal):
    """
    Φᵀ M s: analysis with the mass-weighted adjoint of the basis.
    """
    if signal.shape[0] != basis.n:
        raise DimensionMismatchError(
            f"signal has {signal.shape[0]} rows but the basis has {basis.n} vertices"
        )
    if isinstance(signal, torch.Tensor):
        weighted = as_tensor(mass).reshape(-1, *([1] * (signal.dim() - 1))) * signal
        return basis.tensor.T @ weighted
    mass = np.asarray(mass)
    weighted = mass.reshape(-1, *([1] * (signal.ndim - 1))) * signal
    return basis.eigenvectors.T @ weighted


def smoothed_coordinates(mesh: TriMesh, basis: SpectralBasis, k: int) -> torch.Tensor:
    """
    X_k = Φ_k Φ_kᵀ M X.
    """
    phi = basis.phi(k)
    weighted = as_tensor(mesh.vertex_areas)[:, None] * as_tensor(mesh.vertices)
    return phi @ (phi.T @ weighted)


def smooth_embed(mesh: TriMesh, basis: SpectralBasis, k: int) -> ProductEmbedding:
    if k < 1:
        raise ValueError(f"detail level must be positive, got k={k}")
    return ProductEmbedding.assemble(
        basis.phi(k), smoothed_coordinates(mesh, basis, k), mesh.triangles
    )


def vertex_normals(coordinates: torch.Tensor, triangles) -> torch.Tensor:
    """
    Differentiable area-weighted vertex normals of arbitrary coordinates.

    Vertices whose weighted normal vanishes use the mean unit normal of incident
    triangles with nonzero area, then +z.
    """
    t = as_index_tensor(triangles)
    v0, v1, v2 = (coordinates[t[:, i]] for i in range(3))
    cross = torch.cross(v1 - v0, v2 - v0, dim=1)

    def scatter(per_face: torch.Tensor) -> torch.Tensor:
        out = torch.zeros_like(coordinates)
        for corner in range(3):
            out = out.index_add(0, t[:, corner], per_face)
        return out

    summed = scatter(cross)
    summed_length = safe_norm(summed, 1, _NORMAL_EPS)
    face_length = safe_norm(cross, 1, _NORMAL_EPS)
    usable_face = face_length > _NORMAL_EPS
    averaged = scatter(
        torch.where(usable_face, cross / face_length, torch.zeros_like(cross))
    )
    averaged_length = safe_norm(averaged, 1, _NORMAL_EPS)

    up = torch.zeros_like(coordinates)
    up[:, 2] = 1.0
    use_sum = summed_length > _NORMAL_EPS
    use_average = ~use_sum & (averaged_length > _NORMAL_EPS)
    return torch.where(
        use_sum,
        summed / summed_length,
        torch.where(use_average, averaged / averaged_length, up),
    )
