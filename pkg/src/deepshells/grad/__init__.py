"""
Gradients through the unrolled pipeline, Adam and the unsupervised trainer.
"""

from deepshells.grad.adam import AdamMoments, TrainerConfig, adam_step
from deepshells.grad.tape import Tape, UnregisteredLeafError, graph_leaves
from deepshells.grad.trainer import StepLog, TrainingResult, ordered_pairs, train

__all__ = [
    "AdamMoments",
    "StepLog",
    "Tape",
    "TrainerConfig",
    "TrainingResult",
    "UnregisteredLeafError",
    "adam_step",
    "graph_leaves",
    "ordered_pairs",
    "train",
]
