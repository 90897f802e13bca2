"""
Generated test shapes: icospheres, ellipsoids, flat patches, and smooth
near-isometric deformations of any mesh.
"""

from __future__ import annotations

from typing import Tuple

import numpy as np
import trimesh.creation
from scipy.spatial import Delaunay

from deepshells.mesh import TriMesh

MAX_SUBDIVISIONS = 6


def make_icosphere(subdivisions: int = 3, radius: float = 1.0) -> TriMesh:
    """
    Icosahedron whose edges are split at their midpoints `subdivisions` times,
    with every vertex projected onto the sphere.

    >>> make_icosphere(0)
    <TriMesh n=12 m=20>
    >>> make_icosphere(3)
    <TriMesh n=642 m=1280>
    """
    if not 0 <= subdivisions <= MAX_SUBDIVISIONS:
        raise ValueError(
            f"subdivisions must be in [0, {MAX_SUBDIVISIONS}], got {subdivisions}"
        )
    sphere = trimesh.creation.icosphere(subdivisions=subdivisions, radius=radius)
    vertices = np.asarray(sphere.vertices, dtype=np.float64)
    vertices *= radius / np.linalg.norm(vertices, axis=1, keepdims=True)
    return TriMesh.from_arrays(vertices, np.asarray(sphere.faces))


def make_ellipsoid(
    subdivisions: int = 3, axes: Tuple[float, float, float] = (1.0, 0.75, 0.55)
) -> TriMesh:
    """
    An icosphere stretched along the coordinate axes.

    Unlike the round sphere, its low Laplace–Beltrami spectrum has no repeated
    eigenvalues.
    """
    sphere = make_icosphere(subdivisions)
    return TriMesh.from_arrays(sphere.vertices * np.asarray(axes), sphere.triangles)


def make_flat_patch(radius: float = 1.0, spacing: float = 0.05) -> TriMesh:
    """
    A disc in the z=0 plane sampled on a regular triangular lattice.

    Triangles are oriented so every normal is +z.
    """
    rows = int(np.ceil(radius / (spacing * np.sqrt(3) / 2)))
    points = []
    for r in range(-rows, rows + 1):
        y = r * spacing * np.sqrt(3) / 2
        offset = 0.5 * spacing if r % 2 else 0.0
        cols = int(np.ceil(radius / spacing)) + 1
        for c in range(-cols, cols + 1):
            x = c * spacing + offset
            if x * x + y * y <= radius * radius + 1e-12:
                points.append((x, y))
    planar = np.array(points)
    triangles = Delaunay(planar).simplices
    a, b, c = (planar[triangles[:, i]] for i in range(3))
    signed = (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (
        c[:, 0] - a[:, 0]
    )
    triangles = np.where(signed[:, None] < 0, triangles[:, [0, 2, 1]], triangles)
    # Delaunay may add slivers along the circular boundary
    triangles = triangles[np.abs(signed) > 1e-6 * spacing**2]
    vertices = np.column_stack([planar, np.zeros(len(planar))])
    return TriMesh.from_arrays(vertices, triangles)


def deform_lowfreq(mesh: TriMesh, seed: int, amplitude: float) -> TriMesh:
    """
    Displace every vertex by a smooth trigonometric field of its coordinates.

    The displacement never exceeds `amplitude` and its Jacobian norm stays below
    0.05 * 2.5 = 12.5% at amplitude = 0.05 * sqrt(area), so edge lengths change by
    at most that fraction. Connectivity is kept.
    """
    scale = np.sqrt(mesh.total_area)
    if amplitude > 0.2 * scale:
        raise ValueError(
            f"amplitude {amplitude:g} exceeds 0.2 * sqrt(area) = {0.2 * scale:g}"
        )
    if amplitude == 0:
        return mesh

    rng = np.random.default_rng(seed)
    waves = 2
    directions = rng.normal(size=(3, waves, 3))
    directions /= np.linalg.norm(directions, axis=2, keepdims=True)
    frequencies = rng.uniform(1.5, 2.5, size=(3, waves, 1)) / scale
    phases = rng.uniform(0, 2 * np.pi, size=(3, waves))
    weights = rng.uniform(0.5, 1.0, size=(3, waves)) * rng.choice((-1, 1), (3, waves))
    weights /= np.abs(weights).sum(axis=1, keepdims=True)

    omega = directions * frequencies  # axis × wave × 3
    angles = np.einsum("nd,awd->naw", mesh.vertices, omega) + phases
    displacement = np.einsum("naw,aw->na", np.sin(angles), weights)
    displacement *= amplitude / np.sqrt(3)

    return TriMesh.from_arrays(mesh.vertices + displacement, mesh.triangles)
