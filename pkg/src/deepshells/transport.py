"""
Entropy-regularized optimal transport between two vertex sets.

A SoftCorrespondence keeps only the dual potentials (f, g) next to the cost;
the coupling

    π_ij = a_i b_j exp((f_i + g_j - c_ij) / λ)

is rebuilt block by block whenever it is needed. All of it is differentiable
with torch autograd.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Literal, Optional, Tuple

import numpy as np
import torch

from deepshells import settings
from deepshells.binformat import read_array, read_header, write_array, write_header
from deepshells.errors import DimensionMismatchError, NonFiniteError, UserError
from deepshells.mesh import TriMesh
from deepshells.numerics import ArrayLike, all_finite, as_tensor

logger = logging.getLogger(__name__)

# Row blocks are sized to hold about this many float64 entries
_BLOCK_ENTRIES = 1 << 22

CONVERGED_TOLERANCE = 1e-6
CONVERGED_MAX_ITERS = 500

HardCorrespondence = np.ndarray
"""n_X indices into the vertices of Y."""

Side = Literal["x", "y"]


@dataclass(frozen=True, eq=False)
class MarginalWeights:
    a: torch.Tensor
    b: torch.Tensor

    def __post_init__(self):
        for name, weights in (("a", self.a), ("b", self.b)):
            if not bool((weights > 0).all()):
                raise ValueError(f"marginal {name} must be strictly positive")
            if abs(float(weights.sum()) - 1) > 1e-12:
                raise ValueError(
                    f"marginal {name} must sum to 1, not {float(weights.sum())}"
                )

    @classmethod
    def from_areas(cls, areas_x: ArrayLike, areas_y: ArrayLike) -> MarginalWeights:
        a, b = as_tensor(areas_x), as_tensor(areas_y)
        return cls(a / a.sum(), b / b.sum())

    @classmethod
    def from_meshes(cls, mesh_x: TriMesh, mesh_y: TriMesh) -> MarginalWeights:
        return cls.from_areas(mesh_x.vertex_areas, mesh_y.vertex_areas)

    @classmethod
    def uniform(cls, n_x: int, n_y: int) -> MarginalWeights:
        return cls(
            torch.full((n_x,), 1 / n_x, dtype=torch.float64),
            torch.full((n_y,), 1 / n_y, dtype=torch.float64),
        )

    def transposed(self) -> MarginalWeights:
        return MarginalWeights(self.b, self.a)


@dataclass(frozen=True, eq=False)
class CostMatrix:
    values: torch.Tensor

    @property
    def n_x(self) -> int:
        return self.values.shape[0]

    @property
    def n_y(self) -> int:
        return self.values.shape[1]

    @property
    def T(self) -> CostMatrix:
        return CostMatrix(self.values.T)

    def scaled(self, factor: float) -> CostMatrix:
        return self if factor == 1 else CostMatrix(self.values * factor)


def _row_blocks(n_rows: int, row_width: int) -> Iterator[slice]:
    step = max(1, _BLOCK_ENTRIES // max(1, row_width))
    for start in range(0, n_rows, step):
        yield slice(start, min(start + step, n_rows))


def embedding_cost(EX: torch.Tensor, EY: torch.Tensor) -> CostMatrix:
    """
    c_ij = ‖EX_i - EY_j‖², computed from differences so that equal rows cost 0.
    """
    EX, EY = as_tensor(EX), as_tensor(EY)
    if EX.dim() != 2 or EY.dim() != 2 or EX.shape[1] != EY.shape[1]:
        raise DimensionMismatchError(
            f"cannot compare embeddings of shapes {tuple(EX.shape)} "
            f"and {tuple(EY.shape)}"
        )
    if EX.shape[1] == 0:
        raise ValueError("embeddings must have at least one column")
    blocks = [
        (EX[rows, None, :] - EY[None, :, :]).pow(2).sum(dim=2)
        for rows in _row_blocks(EX.shape[0], EY.shape[0] * EY.shape[1])
    ]
    return CostMatrix(torch.cat(blocks, dim=0))


@dataclass(frozen=True, eq=False)
class SoftCorrespondence:
    f: torch.Tensor
    g: torch.Tensor
    lam: float
    cost: CostMatrix
    marginals: MarginalWeights
    iterations: int = 0

    @property
    def n_x(self) -> int:
        return len(self.f)

    @property
    def n_y(self) -> int:
        return len(self.g)

    def log_ratio(self, rows: slice = slice(None)) -> torch.Tensor:
        """
        log(π / (a ⊗ b)) for a block of rows.
        """
        shifted = self.f[rows, None] + self.g[None, :] - self.cost.values[rows]
        return shifted / self.lam

    def log_coupling(self, rows: slice = slice(None)) -> torch.Tensor:
        log_ab = self.marginals.a.log()[rows, None] + self.marginals.b.log()[None, :]
        return log_ab + self.log_ratio(rows)

    def blocks(self) -> Iterator[Tuple[slice, torch.Tensor]]:
        for rows in _row_blocks(self.n_x, self.n_y):
            yield rows, self.log_coupling(rows).exp()

    def dense(self) -> torch.Tensor:
        return self.log_coupling().exp()

    def row_mass(self) -> torch.Tensor:
        return torch.cat([block.sum(dim=1) for _, block in self.blocks()])

    def column_mass(self) -> torch.Tensor:
        return sum(block.sum(dim=0) for _, block in self.blocks())  # type: ignore

    def marginal_residual(self) -> float:
        with torch.no_grad():
            rows = (self.row_mass() - self.marginals.a).abs().max()
            columns = (self.column_mass() - self.marginals.b).abs().max()
        return float(max(rows, columns))

    def pushforward(self, signal: torch.Tensor) -> torch.Tensor:
        """
        Σ_j π_ij signal_j, without dividing by the row mass.
        """
        if signal.shape[0] != self.n_y:
            raise DimensionMismatchError(
                f"signal has {signal.shape[0]} rows, the target has {self.n_y} vertices"
            )
        return torch.cat([block @ signal for _, block in self.blocks()])

    def transposed(self) -> SoftCorrespondence:
        return SoftCorrespondence(
            f=self.g,
            g=self.f,
            lam=self.lam,
            cost=self.cost.T,
            marginals=self.marginals.transposed(),
            iterations=self.iterations,
        )


def sinkhorn(
    cost: CostMatrix,
    marginals: MarginalWeights,
    lam: float,
    iters: int = 10,
    *,
    start: Side = "x",
    converge: bool = False,
    tolerance: float = CONVERGED_TOLERANCE,
    max_iters: int = CONVERGED_MAX_ITERS,
) -> SoftCorrespondence:
    """
    Log-domain Sinkhorn projections from f = g = 0.

    Each iteration updates the potential on the `start` side, then the other one.
    With `converge`, iterations continue past `iters` until both marginals are
    within `tolerance` or `max_iters` is reached.
    """
    if lam <= 0:
        raise ValueError(f"entropy coefficient must be positive, got {lam}")
    if iters < 1:
        raise ValueError(f"need at least one Sinkhorn iteration, got {iters}")
    c = cost.values
    if (cost.n_x, cost.n_y) != (len(marginals.a), len(marginals.b)):
        raise DimensionMismatchError(
            f"cost is {cost.n_x}×{cost.n_y} but the marginals have "
            f"{len(marginals.a)} and {len(marginals.b)} entries"
        )
    if not all_finite(c.detach()):
        raise NonFiniteError("cost matrix contains NaN or infinite entries")

    log_a = marginals.a.log()
    log_b = marginals.b.log()

    def update_f(g):
        return -lam * torch.logsumexp(log_b[None, :] + (g[None, :] - c) / lam, dim=1)

    def update_g(f):
        return -lam * torch.logsumexp(log_a[:, None] + (f[:, None] - c) / lam, dim=0)

    f = torch.zeros(cost.n_x, dtype=c.dtype)
    g = torch.zeros(cost.n_y, dtype=c.dtype)
    limit = max(iters, max_iters) if converge else iters
    done = 0
    while done < limit:
        if start == "x":
            f = update_f(g)
            g = update_g(f)
        else:
            g = update_g(f)
            f = update_f(g)
        done += 1
        if converge and done >= iters:
            residual = _residual(f, g, c, lam, log_a, log_b)
            if residual <= tolerance:
                break
    else:
        if converge:
            logger.warning(
                "Sinkhorn stopped after %d iterations with marginal residual %.3e",
                done,
                residual,
            )

    if not (all_finite(f.detach()) and all_finite(g.detach())):
        raise NonFiniteError(f"Sinkhorn potentials became non-finite (λ={lam})")
    return SoftCorrespondence(f, g, lam, cost, marginals, iterations=done)


def _residual(f, g, c, lam, log_a, log_b) -> float:
    with torch.no_grad():
        log_pi = log_a[:, None] + log_b[None, :] + (f[:, None] + g[None, :] - c) / lam
        pi = log_pi.exp()
        rows = (pi.sum(dim=1) - log_a.exp()).abs().max()
        columns = (pi.sum(dim=0) - log_b.exp()).abs().max()
    return float(max(rows, columns))


def coupling_apply(corr: SoftCorrespondence, signal: torch.Tensor) -> torch.Tensor:
    """
    Barycentric map: row i is the π-weighted mean of the target signal.
    """
    mass = corr.row_mass()
    if not bool((mass > 0).all()):
        raise NonFiniteError(
            f"{int((mass <= 0).sum())} source vertices carry no transport mass; "
            "the coupling has not converged"
        )
    return corr.pushforward(signal) / mass[:, None]


@dataclass(frozen=True)
class TransportEnergy:
    """
    Σ π c - λ H(π), with H relative to a ⊗ b.
    """

    data_term: torch.Tensor
    entropy: torch.Tensor
    lam: float

    @property
    def entropy_term(self) -> torch.Tensor:
        return -self.lam * self.entropy

    @property
    def total(self) -> torch.Tensor:
        return self.data_term + self.entropy_term


def transport_energy(
    corr: SoftCorrespondence, cost: Optional[CostMatrix] = None
) -> TransportEnergy:
    """
    Energy of `corr` under `cost` (by default the cost it was solved for).

    >>> zero = CostMatrix(torch.zeros(2, 2, dtype=torch.float64))
    >>> corr = sinkhorn(zero, MarginalWeights.uniform(2, 2), 0.5)
    >>> float(transport_energy(corr).total)
    -0.5
    """
    cost = corr.cost if cost is None else cost
    data_term = 0
    entropy = 0
    for rows, pi in corr.blocks():
        data_term = data_term + (pi * cost.values[rows]).sum()
        entropy = entropy - (pi * (corr.log_ratio(rows) - 1)).sum()
    return TransportEnergy(
        data_term=as_tensor(data_term), entropy=as_tensor(entropy), lam=corr.lam
    )


def transport_dual(corr: SoftCorrespondence) -> torch.Tensor:
    """
    The dual objective Σ a f + Σ b g - λ Σ π that Sinkhorn maximizes.

    Each half-step is an exact coordinate ascent step, so the value never
    decreases with more iterations. Once the marginals hold it equals
    transport_energy(corr).total; before that the energy can go either way.
    """
    mass = sum(block.sum() for _, block in corr.blocks())
    a, b = corr.marginals.a, corr.marginals.b
    return a @ corr.f + b @ corr.g - corr.lam * mass


def extract_map(corr: SoftCorrespondence) -> HardCorrespondence:
    """
    argmax_j π_ij per source vertex; ties go to the smallest j.
    """
    matches = []
    with torch.no_grad():
        for rows, _ in corr.blocks():
            scores = corr.log_coupling(rows).numpy()
            matches.append(np.argmax(scores, axis=1))
    return np.concatenate(matches).astype(np.int64)


##################################### Dense export #####################################

MAGIC = b"DSPI"


def write_dense_coupling(path: Path, corr: SoftCorrespondence) -> None:
    entries = corr.n_x * corr.n_y
    if entries > settings.DENSE_EXPORT_LIMIT:
        raise UserError(
            f"refusing to export a {corr.n_x}×{corr.n_y} coupling "
            f"({entries} entries > DEEPSHELLS_DENSE_EXPORT_LIMIT="
            f"{settings.DENSE_EXPORT_LIMIT})"
        )
    with open(path, "wb") as out:
        write_header(out, MAGIC, "QQ", corr.n_x, corr.n_y)
        with torch.no_grad():
            for _, block in corr.blocks():
                write_array(out, block.numpy(), "<f4")


def read_dense_coupling(path: Path) -> np.ndarray:
    with open(path, "rb") as source:
        n_x, n_y = read_header(source, MAGIC, "QQ", path)
        return read_array(source, "<f4", n_x * n_y, path).reshape(n_x, n_y)
