"""
Turn mesh files into matchable shapes: normalized geometry, cached eigenpairs and
cached SHOT descriptors.

Caches live in settings.CACHE_DIR and are keyed by the content hash of the
normalized mesh, so renaming or moving a mesh file keeps its cache.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Optional

from deepshells import settings
from deepshells.errors import CacheMissingError
from deepshells.mesh import TriMesh, normalize_mesh
from deepshells.mesh.formats import load_mesh
from deepshells.profiling import timed
from deepshells.shot import (
    FeatureMap,
    ShotConfig,
    compute_shot,
    read_feature_cache,
    write_feature_cache,
)
from deepshells.spectral import SpectralBasis, build_laplacian, eigendecompose
from deepshells.spectral.cache import read_eigen_cache, write_eigen_cache

logger = logging.getLogger(__name__)

MESH_SUFFIXES = (".off", ".ply")


@timed("eigenpairs of {args[0]!r} took {seconds:.2f}s")
def _eigenpairs(mesh: TriMesh, K: int) -> SpectralBasis:
    return eigendecompose(build_laplacian(mesh), K)


@timed("SHOT descriptors of {args[0]!r} took {seconds:.2f}s")
def _descriptors(mesh: TriMesh, shot: ShotConfig) -> FeatureMap:
    return compute_shot(mesh, shot)


@dataclass(frozen=True, eq=False)
class Shape:
    """
    Everything the matching pipeline needs to know about one input mesh.
    """

    mesh: TriMesh
    basis: SpectralBasis
    features: FeatureMap
    name: str = ""

    @property
    def n(self) -> int:
        return self.mesh.n_vertices


def prepare_shape(
    mesh: TriMesh,
    n_eigs: int,
    shot: ShotConfig = ShotConfig(),
    name: str = "",
    sqrt_area: Optional[float] = None,
) -> Shape:
    """
    Normalize `mesh` and compute its eigenpairs and descriptors in memory.

    With `sqrt_area=None` the mesh is assumed to be normalized already.
    """
    if sqrt_area is not None:
        mesh = normalize_mesh(mesh, sqrt_area)
    K = min(n_eigs, mesh.n_vertices)
    basis = _eigenpairs(mesh, K)
    return Shape(mesh=mesh, basis=basis, features=_descriptors(mesh, shot), name=name)


class ShapeCache:
    """
    Eigenpair and descriptor files for normalized meshes.
    """

    def __init__(
        self,
        n_eigs: int,
        shot: ShotConfig = ShotConfig(),
        sqrt_area: float = 2 / 3,
        directory: Optional[Path] = None,
    ):
        self.n_eigs = n_eigs
        self.shot = shot
        self.sqrt_area = sqrt_area
        if directory is None:
            directory = settings.CACHE_DIR
        self.directory = Path(directory)

    def eigen_path(self, mesh: TriMesh) -> Path:
        return self.directory / f"{mesh.content_hash()}.dsec"

    def feature_path(self, mesh: TriMesh) -> Path:
        radius = f"{self.shot.radius_fraction:g}"
        return self.directory / f"{mesh.content_hash()}-r{radius}.dsft"

    def _normalized(self, path: Path) -> TriMesh:
        return normalize_mesh(load_mesh(path), self.sqrt_area)

    def _wanted_K(self, mesh: TriMesh) -> int:
        return min(self.n_eigs, mesh.n_vertices)

    def precompute(self, path: Path, force: bool = False) -> Shape:
        """
        Load a mesh file and make sure both caches exist for it.
        """
        start = time.perf_counter()
        mesh = self._normalized(path)
        self.directory.mkdir(parents=True, exist_ok=True)

        eigen_path = self.eigen_path(mesh)
        basis = None
        if eigen_path.exists() and not force:
            cached = read_eigen_cache(eigen_path)
            if cached.K >= self._wanted_K(mesh):
                basis = cached.truncated(self._wanted_K(mesh))
        if basis is None:
            basis = _eigenpairs(mesh, self._wanted_K(mesh))
            write_eigen_cache(eigen_path, basis)

        feature_path = self.feature_path(mesh)
        if feature_path.exists() and not force:
            features = read_feature_cache(feature_path)
        else:
            features = _descriptors(mesh, self.shot)
            write_feature_cache(feature_path, features)

        logger.info(
            "preprocessed %s (%d vertices, K=%d) in %.2fs",
            path,
            mesh.n_vertices,
            basis.K,
            time.perf_counter() - start,
        )
        return Shape(mesh=mesh, basis=basis, features=features, name=Path(path).stem)

    def load(self, path: Path) -> Shape:
        """
        Load a mesh file whose caches were written by precompute.
        """
        mesh = self._normalized(path)
        eigen_path = self.eigen_path(mesh)
        feature_path = self.feature_path(mesh)
        for required in (eigen_path, feature_path):
            if not required.exists():
                raise CacheMissingError(required, Path(path))
        basis = read_eigen_cache(eigen_path)
        if basis.K < self._wanted_K(mesh):
            raise CacheMissingError(eigen_path, Path(path))
        return Shape(
            mesh=mesh,
            basis=basis.truncated(self._wanted_K(mesh)),
            features=read_feature_cache(feature_path),
            name=Path(path).stem,
        )


def mesh_files(directories: Iterable[Path]) -> List[Path]:
    """
    Mesh files directly inside the given directories, sorted by path.
    """
    found: List[Path] = []
    for directory in directories:
        found.extend(
            path
            for path in Path(directory).iterdir()
            if path.suffix.lower() in MESH_SUFFIXES
        )
    return sorted(found)
