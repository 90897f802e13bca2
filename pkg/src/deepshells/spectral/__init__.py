"""
Laplace–Beltrami spectral geometry: the cotangent Laplacian, its truncated
eigenbasis, spectral analysis and the smooth-shells product embedding.
"""

from deepshells.spectral.basis import (
    ProductEmbedding,
    SpectralBasis,
    eigendecompose,
    smooth_embed,
    smoothed_coordinates,
    spectral_coeffs,
    vertex_normals,
)
from deepshells.spectral.laplacian import LaplacianPair, build_laplacian

__all__ = [
    "LaplacianPair",
    "ProductEmbedding",
    "SpectralBasis",
    "build_laplacian",
    "eigendecompose",
    "smooth_embed",
    "smoothed_coordinates",
    "spectral_coeffs",
    "vertex_normals",
]
