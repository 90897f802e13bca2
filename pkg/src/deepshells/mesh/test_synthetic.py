import numpy as np
import pytest

from deepshells.mesh.synthetic import (
    deform_lowfreq,
    make_ellipsoid,
    make_flat_patch,
    make_icosphere,
)


@pytest.mark.parametrize(
    ("subdivisions", "n_vertices", "n_triangles"),
    ((0, 12, 20), (1, 42, 80), (2, 162, 320), (3, 642, 1280)),
)
def test_icosphere_counts(subdivisions, n_vertices, n_triangles):
    sphere = make_icosphere(subdivisions)
    assert sphere.n_vertices == n_vertices
    assert sphere.n_triangles == n_triangles


@pytest.mark.parametrize("radius", (1.0, 0.3, 7.5))
def test_icosphere_vertices_on_sphere(radius):
    sphere = make_icosphere(2, radius)
    assert np.abs(np.linalg.norm(sphere.vertices, axis=1) - radius).max() <= 1e-12


def test_icosphere_subdivision_range():
    with pytest.raises(ValueError):
        make_icosphere(7)


def test_icosphere_area(unit_icosphere):
    assert unit_icosphere.total_area == pytest.approx(4 * np.pi, rel=1e-2)


def test_ellipsoid_axes():
    ellipsoid = make_ellipsoid(2, (2.0, 1.0, 0.5))
    extent = np.abs(ellipsoid.vertices).max(axis=0)
    assert extent == pytest.approx([2.0, 1.0, 0.5], rel=1e-2)


def test_flat_patch_faces_up():
    patch = make_flat_patch(radius=0.5, spacing=0.1)
    assert np.all(patch.vertices[:, 2] == 0)
    used = np.unique(patch.triangles)
    up = np.tile([0, 0, 1], (len(used), 1))
    assert patch.vertex_normals[used] == pytest.approx(up)


def test_zero_amplitude_is_identity(unit_icosphere):
    assert deform_lowfreq(unit_icosphere, seed=1, amplitude=0) is unit_icosphere


def test_deformation_is_deterministic(unit_icosphere):
    first = deform_lowfreq(unit_icosphere, seed=42, amplitude=0.1)
    second = deform_lowfreq(unit_icosphere, seed=42, amplitude=0.1)
    assert np.array_equal(first.vertices, second.vertices)
    assert np.array_equal(first.triangles, unit_icosphere.triangles)
    different = deform_lowfreq(unit_icosphere, seed=43, amplitude=0.1)
    assert not np.array_equal(first.vertices, different.vertices)


@pytest.mark.parametrize("seed", range(5))
def test_deformation_is_near_isometric(unit_icosphere, seed):
    amplitude = 0.05 * np.sqrt(unit_icosphere.total_area)
    deformed = deform_lowfreq(unit_icosphere, seed=seed, amplitude=amplitude)
    edges = unit_icosphere.edges()

    def lengths(mesh):
        offsets = mesh.vertices[edges[:, 0]] - mesh.vertices[edges[:, 1]]
        return np.linalg.norm(offsets, axis=1)

    change = np.abs(lengths(deformed) / lengths(unit_icosphere) - 1)
    assert change.max() <= 0.15
    displacement = np.linalg.norm(deformed.vertices - unit_icosphere.vertices, axis=1)
    assert displacement.max() <= amplitude + 1e-12
    assert displacement.max() > 0


def test_amplitude_limit(unit_icosphere):
    with pytest.raises(ValueError, match="amplitude"):
        deform_lowfreq(unit_icosphere, seed=0, amplitude=0.25 * np.sqrt(4 * np.pi))
