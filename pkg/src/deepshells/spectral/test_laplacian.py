import logging

import numpy as np
import pytest

from deepshells.mesh import TriMesh
from deepshells.spectral import build_laplacian


def test_equilateral_triangle_weights():
    triangle = TriMesh.from_arrays(
        [[0, 0, 0], [1, 0, 0], [0.5, np.sqrt(3) / 2, 0]], [[0, 1, 2]]
    )
    W = build_laplacian(triangle).stiffness.toarray()
    off_diagonal = W[~np.eye(3, dtype=bool)]
    assert off_diagonal == pytest.approx(np.full(6, -1 / (2 * np.sqrt(3))), rel=1e-12)


def test_unit_square_diagonal_has_zero_weight():
    square = TriMesh.from_arrays(
        [[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]], [[0, 1, 2], [0, 2, 3]]
    )
    W = build_laplacian(square).stiffness
    assert W[0, 2] == pytest.approx(0, abs=1e-15)
    assert W[0, 1] == pytest.approx(-0.5, rel=1e-12)


@pytest.mark.parametrize("fixture", ("tetrahedron", "unit_icosphere", "blob"))
def test_stiffness_invariants(fixture, request):
    mesh = request.getfixturevalue(fixture)
    lap = build_laplacian(mesh)
    W = lap.stiffness
    assert abs(W - W.T).max() <= 1e-12
    assert np.abs(W @ np.ones(mesh.n_vertices)).max() <= 1e-9
    assert np.array_equal(lap.mass, mesh.vertex_areas)
    assert (lap.mass > 0).all()


def test_obtuse_triangles_keep_negative_cotangents():
    # the corner at vertex 2 is obtuse, so edge (0, 1) gets a positive entry
    mesh = TriMesh.from_arrays([[0, 0, 0], [2, 0, 0], [1, 0.2, 0]], [[0, 1, 2]])
    W = build_laplacian(mesh).stiffness
    assert W[0, 1] > 0


def test_zero_area_triangle_warns(caplog):
    mesh = TriMesh.from_arrays(
        [[0, 0, 0], [1, 0, 0], [0, 1, 0], [2, 0, 0]], [[0, 1, 2], [0, 1, 3]]
    )
    with caplog.at_level(logging.WARNING):
        W = build_laplacian(mesh).stiffness
    assert "zero-area" in caplog.text
    assert W[0, 3] == 0
