"""
Triangle meshes: construction, per-vertex areas and normals, normalization.

A TriMesh is immutable once built; every operation returns a new one.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from deepshells.errors import DegenerateMeshError, EmptyMeshError

logger = logging.getLogger(__name__)

# sqrt(total area) of every normalized mesh
TARGET_SQRT_AREA = 2 / 3

# Normals shorter than this are treated as undefined
_NORMAL_EPS = 1e-14


@dataclass(frozen=True)
class Normalization:
    """
    The similarity transform applied by normalize_mesh: x' = (x - centroid) * scale.
    """

    scale: float = 1.0
    centroid: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def undo(self, points: np.ndarray) -> np.ndarray:
        return points / self.scale + self.centroid


@dataclass(frozen=True, eq=False)
class TriMesh:
    vertices: np.ndarray
    triangles: np.ndarray
    vertex_areas: np.ndarray
    vertex_normals: np.ndarray
    normalization: Normalization = field(default_factory=Normalization)

    @classmethod
    def from_arrays(
        cls,
        vertices,
        triangles,
        normalization: Optional[Normalization] = None,
    ) -> TriMesh:
        """
        Build a mesh and compute its lumped areas and vertex normals.
        """
        vertices = np.ascontiguousarray(vertices, dtype=np.float64)
        triangles = np.ascontiguousarray(triangles, dtype=np.int64)
        if vertices.ndim != 2 or vertices.shape[1] != 3:
            raise ValueError(f"vertices must be n×3, got shape {vertices.shape}")
        if triangles.ndim != 2 or triangles.shape[1] != 3:
            raise ValueError(f"triangles must be m×3, got shape {triangles.shape}")
        if len(vertices) == 0 or len(triangles) == 0:
            raise EmptyMeshError()
        if triangles.min() < 0 or triangles.max() >= len(vertices):
            raise ValueError(
                f"triangle index out of range [0, {len(vertices)}): "
                f"min {triangles.min()}, max {triangles.max()}"
            )
        repeated = (
            (triangles[:, 0] == triangles[:, 1])
            | (triangles[:, 1] == triangles[:, 2])
            | (triangles[:, 0] == triangles[:, 2])
        )
        if repeated.any():
            raise ValueError(
                f"triangle {int(np.flatnonzero(repeated)[0])} repeats a vertex index"
            )

        face_normals = triangle_cross_products(vertices, triangles)
        return cls(
            vertices=vertices,
            triangles=triangles,
            vertex_areas=lumped_areas(len(vertices), triangles, face_normals),
            vertex_normals=vertex_normals(len(vertices), triangles, face_normals),
            normalization=normalization or Normalization(),
        )

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def total_area(self) -> float:
        return float(self.vertex_areas.sum())

    def edges(self) -> np.ndarray:
        """
        Unique undirected edges as an e×2 array with edge[:, 0] < edge[:, 1].
        """
        t = self.triangles
        pairs = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        pairs.sort(axis=1)
        return np.unique(pairs, axis=0)

    def content_hash(self) -> str:
        """
        Hash of vertex coordinates and connectivity, used as a cache key.
        """
        digest = hashlib.sha256()
        digest.update(np.ascontiguousarray(self.vertices, dtype="<f8").tobytes())
        digest.update(np.ascontiguousarray(self.triangles, dtype="<i8").tobytes())
        return digest.hexdigest()[:32]

    def permuted(self, permutation: np.ndarray) -> TriMesh:
        """
        Relabel vertices: new vertex i is old vertex permutation[i].
        """
        permutation = np.asarray(permutation)
        inverse = np.empty_like(permutation)
        inverse[permutation] = np.arange(len(permutation))
        return TriMesh.from_arrays(
            self.vertices[permutation], inverse[self.triangles], self.normalization
        )

    def __repr__(self):
        return f"<TriMesh n={self.n_vertices} m={self.n_triangles}>"


def triangle_cross_products(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    """
    (v1 - v0) × (v2 - v0) per triangle: area-weighted normals of twice the area.
    """
    v0, v1, v2 = (vertices[triangles[:, i]] for i in range(3))
    return np.cross(v1 - v0, v2 - v0)


def lumped_areas(n: int, triangles: np.ndarray, cross: np.ndarray) -> np.ndarray:
    tri_areas = 0.5 * np.linalg.norm(cross, axis=1)
    areas = np.zeros(n)
    for corner in range(3):
        areas += np.bincount(triangles[:, corner], weights=tri_areas, minlength=n)
    return areas / 3


def vertex_normals(n: int, triangles: np.ndarray, cross: np.ndarray) -> np.ndarray:
    """
    Area-weighted vertex normals.

    Where the weighted sum vanishes, fall back to the mean of the unit normals of
    incident triangles with nonzero area, then to +z.
    """
    summed = np.zeros((n, 3))
    for corner in range(3):
        np.add.at(summed, triangles[:, corner], cross)
    lengths = np.linalg.norm(summed, axis=1)

    bad = lengths <= _NORMAL_EPS
    if bad.any():
        face_lengths = np.linalg.norm(cross, axis=1)
        usable = face_lengths > _NORMAL_EPS
        unit = np.zeros_like(cross)
        unit[usable] = cross[usable] / face_lengths[usable, None]
        averaged = np.zeros((n, 3))
        for corner in range(3):
            np.add.at(averaged, triangles[:, corner], unit)
        avg_lengths = np.linalg.norm(averaged, axis=1)
        use_average = bad & (avg_lengths > _NORMAL_EPS)
        summed[use_average] = averaged[use_average]
        lengths[use_average] = avg_lengths[use_average]
        fallback_z = bad & ~use_average
        summed[fallback_z] = (0.0, 0.0, 1.0)
        lengths[fallback_z] = 1.0

    return summed / lengths[:, None]


def normalize_mesh(mesh: TriMesh, sqrt_area: float = TARGET_SQRT_AREA) -> TriMesh:
    """
    Translate the area-weighted centroid to the origin and scale to the given
    sqrt(total area).

    The returned mesh's `normalization` holds the transform of this call.
    """
    area = mesh.total_area
    if not area > 0:
        raise DegenerateMeshError("cannot normalize a mesh with zero total area")
    centroid = mesh.vertex_areas @ mesh.vertices / area
    scale = sqrt_area / np.sqrt(area)
    logger.debug("normalizing %r: scale %.6g, centroid %s", mesh, scale, centroid)
    return TriMesh.from_arrays(
        (mesh.vertices - centroid) * scale,
        mesh.triangles,
        Normalization(scale=float(scale), centroid=centroid),
    )


def non_manifold_edges(mesh: TriMesh) -> np.ndarray:
    """
    Edges shared by more than two triangles.
    """
    t = mesh.triangles
    pairs = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
    pairs.sort(axis=1)
    unique, counts = np.unique(pairs, axis=0, return_counts=True)
    return unique[counts > 2]
