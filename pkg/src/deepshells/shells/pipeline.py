"""
Coarse-to-fine matching of two shapes.

Learned (or raw) descriptors give the first soft correspondence. Every level k
of the schedule then solves for the deformation (C, τ) under the current
coupling, re-embeds the source and runs a fixed number of Sinkhorn projections
on the product-space cost. The transport energy of each level is recorded; its
mean is the training loss.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import torch

from deepshells.errors import DimensionMismatchError
from deepshells.filters import FilterBank, extract_features
from deepshells.preprocess import Shape
from deepshells.shells.deformation import (
    DeformationParams,
    alignment_fit,
    deformed_embedding,
    mode_weights,
    solve_deformation,
)
from deepshells.shells.schedule import Schedule
from deepshells.shot import FeatureMap
from deepshells.spectral import ProductEmbedding, smooth_embed
from deepshells.transport import (
    CostMatrix,
    HardCorrespondence,
    MarginalWeights,
    SoftCorrespondence,
    TransportEnergy,
    embedding_cost,
    extract_map,
    sinkhorn,
    transport_energy,
)

logger = logging.getLogger(__name__)

DEFAULT_LAMBDA = 0.12
DEFAULT_SINKHORN_ITERS = 10


@dataclass(frozen=True)
class ShellsConfig:
    lam: float = DEFAULT_LAMBDA
    sinkhorn_iters: int = DEFAULT_SINKHORN_ITERS
    # spectral, coordinate and normal block
    block_weights: Tuple[float, float, float] = (1.0, 1.0, 1.0)
    cost_scale: float = 1.0
    detach_deformation: bool = False
    converge_final: bool = True
    # no features, no deformation: repeated Sinkhorn on the raw embeddings
    ablation: bool = False
    init_from_shot: bool = False
    # down-weight spectral columns of Y that the deformation cannot reproduce
    mode_weighting: bool = False

    def __post_init__(self):
        if self.lam <= 0:
            raise ValueError(f"λ must be positive, got {self.lam}")
        if self.sinkhorn_iters < 1:
            raise ValueError(
                f"need at least one Sinkhorn projection, got {self.sinkhorn_iters}"
            )
        if len(self.block_weights) != 3 or min(self.block_weights) < 0:
            raise ValueError(
                f"block weights must be three nonnegative numbers, "
                f"got {self.block_weights}"
            )
        if self.cost_scale <= 0:
            raise ValueError(f"cost scale must be positive, got {self.cost_scale}")


@dataclass(frozen=True)
class EnergyRecord:
    """
    One level of the pipeline: its transport energy and the alignment fit of the
    deformation before and after the solve (None when the solve was skipped).
    With mode weighting, `mode_weight` is the mean weight of the spectral columns.
    """

    k: int
    energy: TransportEnergy
    fit_before: Optional[float] = None
    fit_after: Optional[float] = None
    mode_weight: Optional[float] = None

    @property
    def data_term(self) -> float:
        return float(self.energy.data_term)

    @property
    def entropy_term(self) -> float:
        return float(self.energy.entropy_term)

    @property
    def total(self) -> float:
        return float(self.energy.total)


@dataclass
class ShellState:
    k: int = 0
    deform: Optional[DeformationParams] = None
    corr: Optional[SoftCorrespondence] = None
    records: List[EnergyRecord] = field(default_factory=list)
    # the coupling the hard map was read from
    final: Optional[SoftCorrespondence] = None

    @property
    def energy_trace(self) -> List[torch.Tensor]:
        return [record.energy.total for record in self.records]


def weighted(
    embedding: ProductEmbedding,
    weights: Sequence[float],
    modes: Optional[torch.Tensor] = None,
) -> torch.Tensor:
    """
    Product-space rows with each block scaled by the square root of its weight.

    `modes` optionally weights the spectral columns one by one.
    """
    spectral, coordinate, normal = (w**0.5 for w in weights)
    columns = embedding.spectral
    if modes is not None:
        columns = columns * modes.sqrt()
    return torch.cat(
        [
            spectral * columns,
            coordinate * embedding.coordinates,
            normal * embedding.normals,
        ],
        dim=1,
    )


def init_correspondence(
    GX: FeatureMap,
    GY: FeatureMap,
    marginals: MarginalWeights,
    lam: float = DEFAULT_LAMBDA,
    iters: int = DEFAULT_SINKHORN_ITERS,
    *,
    converge: bool = False,
    cost_scale: float = 1.0,
) -> SoftCorrespondence:
    """
    Soft correspondence between two shapes from their per-vertex descriptors.
    """
    if GX.channels != GY.channels:
        raise DimensionMismatchError(
            f"features of X have {GX.channels} channels, those of Y {GY.channels}"
        )
    cost = embedding_cost(GX.values, GY.values).scaled(cost_scale)
    return sinkhorn(cost, marginals, lam, iters, converge=converge)


def _check_schedule(X: Shape, Y: Shape, schedule: Schedule) -> None:
    available = min(X.basis.K, Y.basis.K)
    if schedule.max_k > available:
        raise DimensionMismatchError(
            f"schedule reaches k={schedule.max_k} but only {available} "
            f"eigenpairs are available for {X.name or 'X'} and {Y.name or 'Y'}"
        )


def _initial_features(
    shape: Shape, banks: Sequence[FilterBank], cfg: ShellsConfig
) -> FeatureMap:
    if cfg.init_from_shot:
        return shape.features
    if not banks:
        raise ValueError("matching needs filter banks unless init_from_shot is set")
    return extract_features(banks, shape.basis, shape.mesh.vertex_areas, shape.features)


def match_pair(
    X: Shape,
    Y: Shape,
    banks: Sequence[FilterBank],
    schedule: Schedule,
    cfg: ShellsConfig = ShellsConfig(),
) -> Tuple[HardCorrespondence, ShellState]:
    """
    Match every vertex of X to a vertex of Y.

    Gradients of the recorded energies with respect to the filter weights are
    kept, so the returned state can feed matching_loss during training.
    """
    _check_schedule(X, Y, schedule)
    start = time.perf_counter()
    marginals = MarginalWeights.from_meshes(X.mesh, Y.mesh)
    state = ShellState()

    if not cfg.ablation:
        GX = _initial_features(X, banks, cfg)
        GY = _initial_features(Y, banks, cfg)
        state.corr = init_correspondence(
            GX,
            GY,
            marginals,
            cfg.lam,
            cfg.sinkhorn_iters,
            cost_scale=cfg.cost_scale,
        )

    for k in schedule:
        target = smooth_embed(Y.mesh, Y.basis, k)
        fit_before = fit_after = None
        modes = None
        if state.corr is None or cfg.ablation:
            deform = DeformationParams.identity(k)
        else:
            previous = (
                state.deform.lifted(k)
                if state.deform is not None
                else DeformationParams.identity(k)
            )
            fit_weights = cfg.block_weights[:2]
            fit_before = alignment_fit(
                X.basis, X.mesh, target, state.corr, previous, fit_weights
            )
            deform = solve_deformation(
                X.basis,
                X.mesh,
                target,
                state.corr,
                k,
                detach_normal_matrix=cfg.detach_deformation,
            )
            fit_after = alignment_fit(
                X.basis, X.mesh, target, state.corr, deform, fit_weights
            )
            if cfg.mode_weighting:
                modes = mode_weights(X.basis, target, state.corr, deform)

        source = deformed_embedding(X.mesh, X.basis, deform, k)
        cost = embedding_cost(
            weighted(source, cfg.block_weights, modes),
            weighted(target, cfg.block_weights, modes),
        ).scaled(cfg.cost_scale)
        corr = sinkhorn(cost, marginals, cfg.lam, cfg.sinkhorn_iters)
        record = EnergyRecord(
            k,
            transport_energy(corr),
            fit_before,
            fit_after,
            None if modes is None else float(modes.mean()),
        )

        state.k, state.deform, state.corr = k, deform, corr
        state.records.append(record)
        logger.debug(
            "level k=%d: data %.6g, entropy %.6g, total %.6g",
            k,
            record.data_term,
            record.entropy_term,
            record.total,
        )
        if logger.isEnabledFor(logging.DEBUG):
            residual = corr.marginal_residual()
            logger.debug("level k=%d: marginal residual %.3e", k, residual)
            if modes is not None:
                logger.debug(
                    "level k=%d: %d of %d spectral columns fully weighted",
                    k,
                    int((modes == 1).sum()),
                    k,
                )

    state.final = _final_coupling(state.corr, marginals, cfg)
    hard = extract_map(state.final)
    logger.info(
        "matched %s (%d vertices) to %s (%d vertices) over %d levels in %.2fs",
        X.name or "X",
        X.n,
        Y.name or "Y",
        Y.n,
        len(schedule),
        time.perf_counter() - start,
    )
    return hard, state


def _final_coupling(
    corr: Optional[SoftCorrespondence], marginals: MarginalWeights, cfg: ShellsConfig
) -> SoftCorrespondence:
    assert corr is not None, "the schedule has at least one level"
    if not cfg.converge_final:
        return corr
    with torch.no_grad():
        cost = CostMatrix(corr.cost.values.detach())
        return sinkhorn(cost, marginals, cfg.lam, cfg.sinkhorn_iters, converge=True)


def matching_loss(state: ShellState) -> torch.Tensor:
    """
    Mean transport energy over the levels of a match_pair run.
    """
    trace = state.energy_trace
    if not trace:
        raise ValueError("cannot compute a loss from an empty energy trace")
    return torch.stack(trace).mean()