"""
Cotangent Laplace–Beltrami operator with a lumped mass matrix.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.sparse import coo_matrix, csr_matrix, diags

from deepshells.mesh import TriMesh

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class LaplacianPair:
    """
    Stiffness W (positive semi-definite, rows sum to zero) and lumped mass M.

    The generalized eigenproblem is W φ = λ M φ.
    """

    stiffness: csr_matrix
    mass: np.ndarray

    @property
    def n(self) -> int:
        return len(self.mass)

    @property
    def mass_matrix(self) -> csr_matrix:
        return diags(self.mass).tocsr()


def cotangent_weights(mesh: TriMesh) -> np.ndarray:
    """
    m×3 array: cotangent of the angle at each corner of each triangle.

    Zero-area triangles contribute zero.
    """
    v = mesh.vertices
    t = mesh.triangles
    cot = np.zeros(t.shape)
    for corner in range(3):
        here = v[t[:, corner]]
        u = v[t[:, (corner + 1) % 3]] - here
        w = v[t[:, (corner + 2) % 3]] - here
        dot = np.einsum("ij,ij->i", u, w)
        cross = np.linalg.norm(np.cross(u, w), axis=1)
        ok = cross > 0
        cot[ok, corner] = dot[ok] / cross[ok]
        if corner == 0 and not ok.all():
            logger.warning(
                "%d zero-area triangles contribute no cotangent weight",
                np.count_nonzero(~ok),
            )
    return cot


def build_laplacian(mesh: TriMesh) -> LaplacianPair:
    """
    W_ij = -(cot α_ij + cot β_ij) / 2 on edges, W_ii = -Σ_j W_ij.
    """
    cot = cotangent_weights(mesh)
    t = mesh.triangles
    n = mesh.n_vertices

    # the corner opposite edge (a, b) is the third vertex
    rows, cols, values = [], [], []
    for corner in range(3):
        a = t[:, (corner + 1) % 3]
        b = t[:, (corner + 2) % 3]
        weight = -0.5 * cot[:, corner]
        rows += [a, b]
        cols += [b, a]
        values += [weight, weight]
    off_diagonal = coo_matrix(
        (np.concatenate(values), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, n),
    ).tocsr()
    off_diagonal.sum_duplicates()
    diagonal = -np.asarray(off_diagonal.sum(axis=1)).ravel()
    stiffness = (off_diagonal + diags(diagonal)).tocsr()
    return LaplacianPair(stiffness=stiffness, mass=mesh.vertex_areas.copy())
