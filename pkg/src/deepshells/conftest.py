from datetime import timedelta

import numpy as np
import pytest
from hypothesis import settings

from deepshells.mesh import TriMesh, normalize_mesh
from deepshells.mesh.synthetic import deform_lowfreq, make_ellipsoid, make_icosphere

settings.register_profile("default", deadline=timedelta(milliseconds=5000))
# eigendecompositions inside property tests can take a while on slow CI machines
settings.load_profile("default")


def regular_tetrahedron(edge: float = 1.0) -> TriMesh:
    vertices = edge * np.array(
        [
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [0.5, np.sqrt(3) / 2, 0.0],
            [0.5, np.sqrt(3) / 6, np.sqrt(2 / 3)],
        ]
    )
    triangles = np.array([[0, 2, 1], [0, 1, 3], [1, 2, 3], [2, 0, 3]])
    return TriMesh.from_arrays(vertices, triangles)


def random_rotation(seed: int) -> np.ndarray:
    q, r = np.linalg.qr(np.random.default_rng(seed).normal(size=(3, 3)))
    q *= np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] *= -1
    return q


@pytest.fixture
def tetrahedron() -> TriMesh:
    return regular_tetrahedron()


@pytest.fixture(scope="session")
def unit_icosphere() -> TriMesh:
    return make_icosphere(3)


@pytest.fixture(scope="session")
def small_icosphere() -> TriMesh:
    """
    162 vertices: cheap enough for all-pairs oracles.
    """
    return make_icosphere(2)


@pytest.fixture(scope="session")
def blob() -> TriMesh:
    """
    A normalized, asymmetric closed shape with 642 vertices.
    """
    ellipsoid = make_ellipsoid(3)
    return normalize_mesh(
        deform_lowfreq(
            ellipsoid, seed=3, amplitude=0.03 * np.sqrt(ellipsoid.total_area)
        )
    )


@pytest.fixture(scope="session")
def tiny_blob() -> TriMesh:
    """
    A normalized, asymmetric closed shape with 42 vertices.
    """
    ellipsoid = make_ellipsoid(1)
    return normalize_mesh(
        deform_lowfreq(
            ellipsoid, seed=5, amplitude=0.03 * np.sqrt(ellipsoid.total_area)
        )
    )
