"""
Eigenpair cache files (.dsec).

Layout, little-endian: magic "DSEC", version u32, n u64, K u64, K float64
eigenvalues, n·K float64 eigenvector entries in column-major order.
"""

from __future__ import annotations

from pathlib import Path

from deepshells.binformat import (
    check_version,
    read_array,
    read_header,
    write_array,
    write_header,
)
from deepshells.spectral.basis import SpectralBasis

MAGIC = b"DSEC"
VERSION = 1
SUFFIX = ".dsec"


def write_eigen_cache(path: Path, basis: SpectralBasis) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as out:
        write_header(out, MAGIC, "IQQ", VERSION, basis.n, basis.K)
        write_array(out, basis.eigenvalues, "<f8")
        write_array(out, basis.eigenvectors, "<f8", order="F")
    tmp.replace(path)


def read_eigen_cache(path: Path) -> SpectralBasis:
    with open(path, "rb") as source:
        version, n, K = read_header(source, MAGIC, "IQQ", path)
        check_version(version, VERSION, path)
        eigenvalues = read_array(source, "<f8", K, path)
        eigenvectors = read_array(source, "<f8", n * K, path).reshape((K, n)).T
    return SpectralBasis(
        eigenvalues=eigenvalues.astype(float),
        eigenvectors=eigenvectors.astype(float, order="C"),
    )
