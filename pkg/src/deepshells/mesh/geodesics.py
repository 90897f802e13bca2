"""
Shortest paths along mesh edges.

Distances are measured on the edge graph with Euclidean edge lengths, which
overestimates true surface geodesics by a few percent at desk-scale resolutions.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np
from scipy.sparse import coo_matrix, csr_matrix
from scipy.sparse.csgraph import dijkstra, floyd_warshall

from deepshells.mesh import TriMesh

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class GeodesicField:
    source: int
    distances: np.ndarray


def edge_graph(mesh: TriMesh) -> csr_matrix:
    """
    Symmetric sparse adjacency matrix weighted by edge length.
    """
    edges = mesh.edges()
    lengths = np.linalg.norm(
        mesh.vertices[edges[:, 0]] - mesh.vertices[edges[:, 1]], axis=1
    )
    n = mesh.n_vertices
    rows = np.concatenate([edges[:, 0], edges[:, 1]])
    cols = np.concatenate([edges[:, 1], edges[:, 0]])
    return coo_matrix((np.tile(lengths, 2), (rows, cols)), shape=(n, n)).tocsr()


def geodesic_distances(mesh: TriMesh, source: int) -> GeodesicField:
    """
    Single-source Dijkstra on the edge graph; unreached vertices get +inf.
    """
    if not 0 <= source < mesh.n_vertices:
        raise IndexError(
            f"source vertex {source} out of range [0, {mesh.n_vertices})"
        )
    distances = dijkstra(edge_graph(mesh), directed=False, indices=source)
    unreached = np.isinf(distances).sum()
    if unreached:
        logger.warning(
            "%d vertices unreachable from vertex %d; their distance is inf",
            unreached,
            source,
        )
    return GeodesicField(source=source, distances=distances)


def geodesic_matrix(
    mesh: TriMesh, sources: Union[Sequence[int], np.ndarray]
) -> np.ndarray:
    """
    Distances from each of `sources` (rows) to every vertex (columns).
    """
    return dijkstra(edge_graph(mesh), directed=False, indices=np.asarray(sources))


def all_pairs_geodesics(mesh: TriMesh) -> np.ndarray:
    """
    Floyd–Warshall over the edge graph. Cubic; meant for small meshes.
    """
    return floyd_warshall(edge_graph(mesh), directed=False)
