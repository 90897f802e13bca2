"""
Smooth shells matching: deformation solves, the coarse-to-fine schedule and the
pipeline that alternates them with Sinkhorn projections.
"""

from deepshells.shells.deformation import (
    DeformationParams,
    alignment_fit,
    deformed_embedding,
    mode_weights,
    solve_deformation,
)
from deepshells.shells.pipeline import (
    EnergyRecord,
    ShellsConfig,
    ShellState,
    init_correspondence,
    match_pair,
    matching_loss,
)
from deepshells.shells.schedule import Schedule

__all__ = [
    "DeformationParams",
    "EnergyRecord",
    "Schedule",
    "ShellState",
    "ShellsConfig",
    "alignment_fit",
    "deformed_embedding",
    "init_correspondence",
    "match_pair",
    "matching_loss",
    "mode_weights",
    "solve_deformation",
]
