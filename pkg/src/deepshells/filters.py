"""
Learnable spectral convolution filters.

Each filter is a smooth function of the Laplacian eigenvalue, written in a small
cosine basis over the fixed frequency interval [0, T]. A bank maps L_in input
channels to L_out output channels:

    G_o = h( Σ_l Φ_k (B γ[o, l] ⊙ Φ_kᵀ M F_l) )
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from enum import IntEnum
from functools import lru_cache
from pathlib import Path
from typing import List, Sequence

import torch

from deepshells.binformat import (
    check_version,
    read_array,
    read_header,
    write_array,
    write_header,
)
from deepshells.errors import CacheFormatError, DimensionMismatchError, NonFiniteError
from deepshells.numerics import DTYPE, ArrayLike, all_finite, as_tensor
from deepshells.shot import FeatureMap
from deepshells.spectral import SpectralBasis

logger = logging.getLogger(__name__)


class Activation(IntEnum):
    """
    Pointwise nonlinearity h; the values are the checkpoint codes.
    """

    IDENTITY = 0
    RELU = 1

    def __call__(self, x: torch.Tensor) -> torch.Tensor:
        if self is Activation.RELU:
            return torch.relu(x)
        return x

    @classmethod
    def from_name(cls, name: str) -> Activation:
        try:
            return cls[name.upper()]
        except KeyError:
            raise ValueError(f"unknown activation {name!r}") from None


@dataclass(frozen=True)
class BankShape:
    L_out: int = 120
    L_in: int = 352
    J: int = 16
    T: float = 2e4
    activation: Activation = Activation.RELU
    k_conv: int = 200

    @property
    def init_bound(self) -> float:
        """
        >>> round(BankShape().init_bound, 4)
        0.0282
        """
        return math.sqrt(6 / (self.L_in * self.J + self.L_out * self.J))


@dataclass(frozen=True, eq=False)
class FilterBank:
    weights: torch.Tensor
    T: float = 2e4
    activation: Activation = Activation.RELU
    k_conv: int = 200

    def __post_init__(self):
        if self.weights.dim() != 3 or self.weights.shape[2] < 1:
            raise DimensionMismatchError(
                f"filter weights must be L_out × L_in × J with J ≥ 1, "
                f"got shape {tuple(self.weights.shape)}"
            )
        if self.T <= 0:
            raise ValueError(f"frequency extent T must be positive, got {self.T}")
        if self.k_conv < 1:
            raise ValueError(f"k_conv must be positive, got {self.k_conv}")

    @property
    def L_out(self) -> int:
        return self.weights.shape[0]

    @property
    def L_in(self) -> int:
        return self.weights.shape[1]

    @property
    def J(self) -> int:
        return self.weights.shape[2]

    @property
    def shape(self) -> BankShape:
        return BankShape(
            self.L_out, self.L_in, self.J, self.T, self.activation, self.k_conv
        )

    def with_weights(self, weights: torch.Tensor) -> FilterBank:
        return replace(self, weights=weights)


@dataclass(frozen=True, eq=False)
class FrequencyBasis:
    """
    k × J matrix of cosines b_j(λ_i) = cos(λ_i π j / T).
    """

    values: torch.Tensor


def build_frequency_basis(eigenvalues: ArrayLike, J: int, T: float) -> FrequencyBasis:
    if T <= 0:
        raise ValueError(f"frequency extent T must be positive, got {T}")
    if J < 1:
        raise ValueError(f"need at least one cosine basis function, got J={J}")
    eigenvalues = as_tensor(eigenvalues).detach()
    if bool((eigenvalues < 0).any()):
        raise ValueError("eigenvalues must be nonnegative")
    largest = float(eigenvalues.max()) if len(eigenvalues) else 0.0
    if largest > 1.5 * T:
        raise ValueError(
            f"eigenvalue {largest:.6g} is far outside the filter domain [0, {T:g}]; "
            "normalize the mesh or raise T"
        )
    if largest > T:
        logger.warning(
            "%d eigenvalues exceed the filter frequency extent T=%g",
            int((eigenvalues > T).sum()),
            T,
        )
    frequencies = torch.arange(J, dtype=DTYPE) * (math.pi / T)
    return FrequencyBasis(values=torch.cos(torch.outer(eigenvalues, frequencies)))


@lru_cache(maxsize=None)
def _warn_truncated(k_conv: int, available: int) -> None:
    logger.warning(
        "filters use k_conv=%d eigenfunctions but only %d are available; "
        "convolving with %d",
        k_conv,
        available,
        available,
    )


def apply_filters(
    bank: FilterBank, basis: SpectralBasis, mass: ArrayLike, features: FeatureMap
) -> FeatureMap:
    """
    Spectral convolution of `features` with every filter of the bank.

    A basis smaller than the bank's k_conv truncates the convolution to the
    available eigenfunctions, with a warning once per size.
    """
    if features.channels != bank.L_in:
        raise DimensionMismatchError(
            f"filter bank expects {bank.L_in} input channels, got {features.channels}"
        )
    if features.n != basis.n:
        raise DimensionMismatchError(
            f"features cover {features.n} vertices but the basis has {basis.n}"
        )
    if not all_finite(bank.weights.detach()):
        raise NonFiniteError("filter weights contain NaN or infinite values")

    k, J, L_in = bank.k_conv, bank.J, bank.L_in
    if k > basis.K:
        _warn_truncated(k, basis.K)
        k = basis.K
    phi = basis.phi(k)
    B = build_frequency_basis(basis.eigenvalues[:k], J, bank.T).values
    analysis = phi.T @ (as_tensor(mass)[:, None] * features.values)

    # coefficients[i, o] = Σ_l Σ_j B[i, j] γ[o, l, j] A[i, l]
    products = (B[:, :, None] * analysis[:, None, :]).reshape(k, J * L_in)
    kernel = bank.weights.permute(2, 1, 0).reshape(J * L_in, bank.L_out)
    coefficients = products @ kernel
    return FeatureMap(
        values=bank.activation(phi @ coefficients), label=f"filters[{bank.L_out}]"
    )


def extract_features(
    banks: Sequence[FilterBank],
    basis: SpectralBasis,
    mass: ArrayLike,
    features: FeatureMap,
) -> FeatureMap:
    """
    Run a stack of banks, each feeding the next.
    """
    for bank in banks:
        features = apply_filters(bank, basis, mass, features)
    return features


def init_filterbank(seed: int, shape: BankShape = BankShape()) -> FilterBank:
    """
    Weights i.i.d. uniform in [-a, a) with a = sqrt(6 / (L_in·J + L_out·J)).
    """
    generator = torch.Generator().manual_seed(seed)
    size = (shape.L_out, shape.L_in, shape.J)
    unit = torch.rand(size, generator=generator, dtype=DTYPE)
    return FilterBank(
        weights=(2 * unit - 1) * shape.init_bound,
        T=shape.T,
        activation=shape.activation,
        k_conv=shape.k_conv,
    )


def init_filter_stack(seed: int, shapes: Sequence[BankShape]) -> List[FilterBank]:
    for upstream, downstream in zip(shapes, shapes[1:]):
        if upstream.L_out != downstream.L_in:
            raise DimensionMismatchError(
                f"a bank with {upstream.L_out} outputs cannot feed one "
                f"expecting {downstream.L_in} inputs"
            )
    return [init_filterbank(seed + index, shape) for index, shape in enumerate(shapes)]


###################################### Checkpoints #####################################

MAGIC = b"DSHL"
VERSION = 1
SUFFIX = ".dshl"
_RECORD = "IIIIdBI"


def write_filterbanks(path: Path, banks: Sequence[FilterBank]) -> None:
    """
    One DSHL record per bank, back to back.
    """
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as out:
        for bank in banks:
            write_header(
                out,
                MAGIC,
                _RECORD,
                VERSION,
                bank.L_out,
                bank.L_in,
                bank.J,
                bank.T,
                int(bank.activation),
                bank.k_conv,
            )
            write_array(out, bank.weights.detach().cpu().numpy(), "<f4")
    tmp.replace(path)


def read_filterbanks(path: Path) -> List[FilterBank]:
    banks = []
    end = Path(path).stat().st_size
    with open(path, "rb") as source:
        while source.tell() < end:
            version, L_out, L_in, J, T, activation, k_conv = read_header(
                source, MAGIC, _RECORD, path
            )
            check_version(version, VERSION, path)
            try:
                activation = Activation(activation)
            except ValueError:
                raise CacheFormatError(
                    f"{path}: unknown activation code {activation}"
                ) from None
            weights = read_array(source, "<f4", L_out * L_in * J, path)
            banks.append(
                FilterBank(
                    weights=as_tensor(weights.reshape(L_out, L_in, J)),
                    T=T,
                    activation=activation,
                    k_conv=k_conv,
                )
            )
    if not banks:
        raise CacheFormatError(f"{path}: no filter records")
    return banks
