"""
Quality measures for vertex correspondences: geodesic error curves against a
ground truth, and the conformal distortion of the triangles a map moves.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Literal, Optional

import numpy as np

from deepshells.errors import DimensionMismatchError
from deepshells.mesh import TriMesh
from deepshells.mesh.geodesics import geodesic_matrix
from deepshells.shot import shape_diameter
from deepshells.transport import HardCorrespondence

logger = logging.getLogger(__name__)

ErrorNorm = Literal["sqrt_area", "diameter"]

ERROR_THRESHOLDS = 200
ERROR_MAX = 0.25
DISTORTION_THRESHOLDS = 200
DISTORTION_MAX = 5.0
# images of zero area would otherwise be infinitely distorted
DISTORTION_CAP = 1e6

# geodesic rows computed at once
_SOURCE_BLOCK = 256


def cumulative_fractions(values: np.ndarray, thresholds: np.ndarray) -> np.ndarray:
    """
    Fraction of `values` at or below each threshold.

    >>> cumulative_fractions(np.array([0.1, 0.3]), np.array([0.0, 0.2, 0.3]))
    array([0. , 0.5, 1. ])
    """
    if len(values) == 0:
        return np.zeros(len(thresholds))
    ordered = np.sort(values)
    return np.searchsorted(ordered, thresholds, side="right") / len(ordered)


@dataclass(frozen=True, eq=False)
class ErrorCurve:
    thresholds: np.ndarray
    fractions: np.ndarray
    errors: np.ndarray

    @property
    def mean_error(self) -> float:
        return float(self.errors.mean())


@dataclass(frozen=True, eq=False)
class DistortionCurve:
    values: np.ndarray
    thresholds: np.ndarray
    fractions: np.ndarray
    # degenerate source triangles left out of `values`
    skipped: int = 0


def _check_map(name: str, correspondence, n_x: int, n_y: int) -> np.ndarray:
    correspondence = np.asarray(correspondence, dtype=np.int64)
    if correspondence.shape != (n_x,):
        raise DimensionMismatchError(
            f"{name} has shape {correspondence.shape}, expected ({n_x},)"
        )
    if n_x and not (0 <= correspondence.min() and correspondence.max() < n_y):
        raise ValueError(f"{name} holds indices outside [0, {n_y})")
    return correspondence


def error_normalizer(mesh: TriMesh, error_norm: ErrorNorm = "sqrt_area") -> float:
    if error_norm == "sqrt_area":
        return float(np.sqrt(mesh.total_area))
    if error_norm == "diameter":
        return shape_diameter(mesh)
    raise ValueError(f"unknown error normalization {error_norm!r}")


def geodesic_error(
    mesh_y: TriMesh,
    predicted: HardCorrespondence,
    ground_truth: HardCorrespondence,
    error_norm: ErrorNorm = "sqrt_area",
    thresholds: Optional[np.ndarray] = None,
) -> ErrorCurve:
    """
    Normalized geodesic distance on Y between predicted and true targets.
    """
    ground_truth = np.asarray(ground_truth, dtype=np.int64)
    n_x = len(ground_truth)
    predicted = _check_map("predicted map", predicted, n_x, mesh_y.n_vertices)
    ground_truth = _check_map("ground truth", ground_truth, n_x, mesh_y.n_vertices)

    distances = np.zeros(n_x)
    sources, inverse = np.unique(predicted, return_inverse=True)
    for start in range(0, len(sources), _SOURCE_BLOCK):
        block = sources[start : start + _SOURCE_BLOCK]
        rows = geodesic_matrix(mesh_y, block)
        members = np.flatnonzero(
            (inverse >= start) & (inverse < start + _SOURCE_BLOCK)
        )
        distances[members] = rows[inverse[members] - start, ground_truth[members]]

    unreached = ~np.isfinite(distances)
    if unreached.any():
        extent = mesh_y.vertices.max(axis=0) - mesh_y.vertices.min(axis=0)
        fallback = float(np.linalg.norm(extent))
        logger.warning(
            "%d predicted targets lie in another component than the truth; "
            "counting the bounding-box diagonal %.4g for them",
            int(unreached.sum()),
            fallback,
        )
        distances[unreached] = fallback

    errors = distances / error_normalizer(mesh_y, error_norm)
    if thresholds is None:
        thresholds = np.linspace(0, ERROR_MAX, ERROR_THRESHOLDS)
    thresholds = np.asarray(thresholds, dtype=np.float64)
    return ErrorCurve(
        thresholds=thresholds,
        fractions=cumulative_fractions(errors, thresholds),
        errors=errors,
    )


def _planar_edges(a: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    """
    Edge vectors b - a and c - a of each triangle in a frame of its own plane,
    as the columns of an m×2×2 array.
    """
    u, v = b - a, c - a
    u_length = np.linalg.norm(u, axis=1)
    e1 = u / np.where(u_length > 0, u_length, 1)[:, None]
    normal = np.cross(u, v)
    normal_length = np.linalg.norm(normal, axis=1)
    n = normal / np.where(normal_length > 0, normal_length, 1)[:, None]
    e2 = np.cross(n, e1)
    edges = np.zeros((len(a), 2, 2))
    edges[:, 0, 0] = u_length
    edges[:, 0, 1] = np.einsum("ij,ij->i", v, e1)
    edges[:, 1, 1] = np.einsum("ij,ij->i", v, e2)
    return edges


def conformal_distortion(
    mesh_x: TriMesh,
    mesh_y: TriMesh,
    correspondence: HardCorrespondence,
    thresholds: Optional[np.ndarray] = None,
) -> DistortionCurve:
    """
    σ1/σ2 + σ2/σ1 of the linear map between each X-triangle and its image.

    Conformal triangles score exactly 2.
    """
    correspondence = _check_map(
        "map", correspondence, mesh_x.n_vertices, mesh_y.n_vertices
    )
    t = mesh_x.triangles
    source = _planar_edges(*(mesh_x.vertices[t[:, i]] for i in range(3)))
    image_vertices = mesh_y.vertices[correspondence]
    image = _planar_edges(*(image_vertices[t[:, i]] for i in range(3)))

    source_area = np.abs(np.linalg.det(source))
    scale = np.maximum(source[:, 0, 0], 1e-300) ** 2
    usable = source_area > 1e-12 * scale
    skipped = int((~usable).sum())
    if skipped:
        logger.warning("skipping %d degenerate source triangles", skipped)

    jacobian = image[usable] @ np.linalg.inv(source[usable])
    singular = np.linalg.svd(jacobian, compute_uv=False)
    largest, smallest = singular[:, 0], singular[:, 1]
    with np.errstate(divide="ignore", invalid="ignore"):
        values = (largest**2 + smallest**2) / (largest * smallest)
    degenerate = ~(smallest > 1e-12 * np.maximum(largest, 1e-300))
    values = np.where(degenerate, DISTORTION_CAP, np.minimum(values, DISTORTION_CAP))

    if thresholds is None:
        thresholds = np.linspace(2, DISTORTION_MAX, DISTORTION_THRESHOLDS)
    thresholds = np.asarray(thresholds, dtype=np.float64)
    return DistortionCurve(
        values=values,
        thresholds=thresholds,
        fractions=cumulative_fractions(values, thresholds),
        skipped=skipped,
    )


def write_curve(path: Path, thresholds: np.ndarray, fractions: np.ndarray) -> None:
    with open(path, "w", encoding="UTF-8", newline="") as out:
        writer = csv.writer(out)
        writer.writerow(["threshold", "fraction"])
        for threshold, fraction in zip(thresholds, fractions):
            writer.writerow([repr(float(threshold)), repr(float(fraction))])
