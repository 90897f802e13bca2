"""
SHOT local surface descriptors: histograms of normal orientations over a
partitioned spherical support around each vertex.

The raw 352-dimensional descriptors are the input features F of the filter bank.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import torch
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist

from deepshells.binformat import (
    check_version,
    read_array,
    read_header,
    write_array,
    write_header,
)
from deepshells.errors import DimensionMismatchError
from deepshells.mesh import TriMesh
from deepshells.numerics import as_tensor

logger = logging.getLogger(__name__)

# shape_diameter is exact up to this many vertices
EXACT_DIAMETER_LIMIT = 5000
_DIAMETER_RESTARTS = 8


@dataclass(frozen=True)
class ShotConfig:
    radius_fraction: float = 0.05
    azimuth_bins: int = 8
    elevation_bins: int = 2
    radial_bins: int = 2
    cosine_bins: int = 11

    def __post_init__(self):
        if not 0 < self.radius_fraction <= 0.5:
            raise ValueError(
                f"radius_fraction must be in (0, 0.5], got {self.radius_fraction}"
            )
        if min(self.azimuth_bins, self.elevation_bins, self.radial_bins) < 1:
            raise ValueError("every spatial partition needs at least one bin")
        if self.cosine_bins < 2:
            raise ValueError("at least two cosine bins are needed to interpolate")

    @property
    def spatial_bins(self) -> int:
        return self.azimuth_bins * self.elevation_bins * self.radial_bins

    @property
    def descriptor_dim(self) -> int:
        return self.spatial_bins * self.cosine_bins


@dataclass(frozen=True, eq=False)
class FeatureMap:
    """
    Per-vertex feature matrix (n × L) and what its channels mean.
    """

    values: torch.Tensor
    label: str = ""

    def __post_init__(self):
        if self.values.dim() != 2:
            raise DimensionMismatchError(
                f"features must be a matrix, got shape {tuple(self.values.shape)}"
            )

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def channels(self) -> int:
        return self.values.shape[1]

    def permuted(self, permutation) -> FeatureMap:
        return FeatureMap(self.values[torch.as_tensor(permutation)], self.label)


def shape_diameter(mesh: TriMesh) -> float:
    """
    Largest Euclidean distance between two vertices.

    Exact for small meshes, a farthest-point heuristic with restarts otherwise.
    """
    points = mesh.vertices
    n = len(points)
    if n <= EXACT_DIAMETER_LIMIT:
        return max(
            float(cdist(points[start : start + 1024], points).max())
            for start in range(0, n, 1024)
        )

    best = 0.0
    for start in np.linspace(0, n - 1, _DIAMETER_RESTARTS).astype(int):
        current, previous = int(start), -1.0
        while True:
            distances = np.linalg.norm(points - points[current], axis=1)
            far = int(np.argmax(distances))
            if distances[far] <= previous:
                break
            previous, current = float(distances[far]), far
        best = max(best, previous)
    return best


def compute_shot(
    mesh: TriMesh, cfg: ShotConfig = ShotConfig(), diameter: Optional[float] = None
) -> FeatureMap:
    """
    One unit-norm descriptor per vertex; zero for vertices without neighbors.

    `mesh` should already be normalized so that radius_fraction means the same
    thing on every shape.
    """
    points = mesh.vertices
    normals = mesh.vertex_normals
    n = len(points)
    if diameter is None:
        diameter = shape_diameter(mesh)
    radius = cfg.radius_fraction * diameter

    neighborhoods = cKDTree(points).query_ball_point(points, radius)
    counts = np.array([len(hood) for hood in neighborhoods], dtype=np.int64)
    centers = np.repeat(np.arange(n), counts)
    neighbors = np.concatenate(
        [np.asarray(hood, dtype=np.int64) for hood in neighborhoods]
    )
    offsets = points[neighbors] - points[centers]
    distances = np.linalg.norm(offsets, axis=1)
    keep = distances > 0
    centers, neighbors = centers[keep], neighbors[keep]
    offsets, distances = offsets[keep], distances[keep]

    frames = local_reference_frames(mesh, centers, offsets, distances, radius)
    local = np.einsum("pij,pj->pi", frames[centers], offsets)
    cosines = np.einsum("pj,pj->p", normals[neighbors], frames[centers, 2])

    descriptors = _histograms(cfg, n, centers, local, distances, cosines, radius)
    lengths = np.linalg.norm(descriptors, axis=1)
    nonzero = lengths > 0
    descriptors[nonzero] /= lengths[nonzero, None]
    logger.debug(
        "SHOT: radius %.4g, %.1f neighbors per vertex, %d isolated vertices",
        radius,
        len(centers) / n,
        np.count_nonzero(~nonzero),
    )
    return FeatureMap(values=as_tensor(descriptors), label="shot")


def local_reference_frames(
    mesh: TriMesh, centers, offsets, distances, radius
) -> np.ndarray:
    """
    n×3×3 rotations whose rows are the local x, y and z axes.

    Axes come from the (r - d)-weighted neighbor covariance; x and z point to the
    side holding most of the weighted neighbors. Rank-deficient neighborhoods
    use the vertex normal as z.
    """
    n = mesh.n_vertices
    normals = mesh.vertex_normals
    weights = radius - distances

    covariance = np.zeros((n, 3, 3))
    outer = np.einsum("pi,pj->pij", offsets, offsets)
    np.add.at(covariance, centers, weights[:, None, None] * outer)
    total = np.bincount(centers, weights=weights, minlength=n)
    populated = total > 0
    covariance[populated] /= total[populated, None, None]

    eigenvalues, eigenvectors = np.linalg.eigh(covariance)
    x_axis = eigenvectors[:, :, 2].copy()
    z_axis = eigenvectors[:, :, 0].copy()

    def majority(axis):
        projection = np.einsum("pj,pj->p", offsets, axis[centers])
        # neighbors on the tangent plane vote for neither side
        votes = np.where(np.abs(projection) > 1e-10 * distances, np.sign(projection), 0)
        return np.bincount(centers, weights=weights * votes, minlength=n)

    x_axis[majority(x_axis) < 0] *= -1
    z_votes = majority(z_axis)
    tie = np.abs(z_votes) <= 1e-9 * np.maximum(total, 1e-300)
    flip_z = np.where(tie, np.einsum("ij,ij->i", z_axis, normals) < 0, z_votes < 0)
    z_axis[flip_z] *= -1

    counts = np.bincount(centers, minlength=n)
    degenerate = (counts < 3) | (eigenvalues[:, 1] <= 1e-12 * eigenvalues[:, 2])
    if degenerate.any():
        z_axis[degenerate] = normals[degenerate]
        reference = np.zeros((np.count_nonzero(degenerate), 3))
        reference[:, 0] = 1.0
        near_x = np.abs(normals[degenerate, 0]) > 0.9
        reference[near_x] = (0.0, 1.0, 0.0)
        z_fallback = z_axis[degenerate]
        along = np.einsum("ij,ij->i", reference, z_fallback)
        tangent = reference - along[:, None] * z_fallback
        x_axis[degenerate] = tangent / np.linalg.norm(tangent, axis=1, keepdims=True)

    y_axis = np.cross(z_axis, x_axis)
    return np.stack([x_axis, y_axis, z_axis], axis=1)


def _histograms(cfg: ShotConfig, n, centers, local, distances, cosines, radius):
    A, E, R, C = cfg.azimuth_bins, cfg.elevation_bins, cfg.radial_bins, cfg.cosine_bins

    # soft azimuth: sector centres sit at half-integer positions
    azimuth = np.mod(np.arctan2(local[:, 1], local[:, 0]), 2 * np.pi)
    position = azimuth / (2 * np.pi / A) - 0.5
    lower = np.floor(position)
    azimuth_frac = position - lower
    azimuth_bins = (
        np.mod(lower, A).astype(np.int64),
        np.mod(lower + 1, A).astype(np.int64),
    )

    polar = np.arccos(np.clip(local[:, 2] / distances, -1.0, 1.0))
    elevation = np.minimum((polar / np.pi * E).astype(np.int64), E - 1)
    radial = np.minimum((distances / radius * R).astype(np.int64), R - 1)

    # soft cosine: bin centres at integers 0 .. C-1 spanning [-1, 1]
    position = (np.clip(cosines, -1.0, 1.0) + 1) / 2 * (C - 1)
    cosine_lower = np.minimum(np.floor(position).astype(np.int64), C - 2)
    cosine_frac = position - cosine_lower

    D = cfg.descriptor_dim
    flat = np.zeros(n * D)
    azimuth_weights = (1 - azimuth_frac, azimuth_frac)
    for azimuth_bin, azimuth_weight in zip(azimuth_bins, azimuth_weights):
        spatial = (radial * E + elevation) * A + azimuth_bin
        for offset, cosine_weight in ((0, 1 - cosine_frac), (1, cosine_frac)):
            index = centers * D + spatial * C + cosine_lower + offset
            weight = azimuth_weight * cosine_weight
            flat += np.bincount(index, weights=weight, minlength=n * D)
    return flat.reshape(n, D)


######################################## Cache #########################################

MAGIC = b"DSFT"
VERSION = 1
SUFFIX = ".dsft"


def write_feature_cache(path: Path, features: FeatureMap) -> None:
    values = features.values.detach().cpu().numpy()
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as out:
        write_header(out, MAGIC, "IQQ", VERSION, *values.shape)
        write_array(out, values, "<f4")
    tmp.replace(path)


def read_feature_cache(path: Path, label: str = "shot") -> FeatureMap:
    with open(path, "rb") as source:
        version, n, L = read_header(source, MAGIC, "IQQ", path)
        check_version(version, VERSION, path)
        values = read_array(source, "<f4", n * L, path).reshape(n, L)
    return FeatureMap(values=as_tensor(values.astype(np.float64)), label=label)
