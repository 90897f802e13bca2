"""
Unsupervised training of the filter banks.

Every step matches one or more ordered pairs of training shapes, averages the
matching losses, differentiates them with respect to the filter weights and
applies an Adam update. No ground-truth correspondences are involved.
"""

from __future__ import annotations

import csv
import dataclasses
import logging
from contextlib import ExitStack
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, TextIO, Tuple

import numpy as np
import torch
from more_itertools import chunked
from tqdm import tqdm

from deepshells.errors import NonFiniteError
from deepshells.filters import FilterBank, write_filterbanks
from deepshells.grad.adam import AdamMoments, TrainerConfig, adam_step
from deepshells.grad.tape import Tape
from deepshells.numerics import all_finite
from deepshells.preprocess import Shape
from deepshells.shells import ShellsConfig, match_pair, matching_loss

logger = logging.getLogger(__name__)

LOSS_FIELDS = ("step", "pair_x", "pair_y", "loss", "data_term", "entropy_term")

Pair = Tuple[int, int]


@dataclass(frozen=True)
class StepLog:
    step: int
    pair_x: str
    pair_y: str
    loss: float
    data_term: float
    entropy_term: float

    def as_row(self) -> Dict[str, object]:
        return {
            "step": self.step,
            "pair_x": self.pair_x,
            "pair_y": self.pair_y,
            "loss": repr(self.loss),
            "data_term": repr(self.data_term),
            "entropy_term": repr(self.entropy_term),
        }


@dataclass(frozen=True)
class TrainingResult:
    banks: List[FilterBank]
    log: List[StepLog]


def ordered_pairs(n_shapes: int) -> List[Pair]:
    """
    >>> ordered_pairs(3)
    [(0, 1), (0, 2), (1, 0), (1, 2), (2, 0), (2, 1)]
    """
    return [(i, j) for i in range(n_shapes) for j in range(n_shapes) if i != j]


def shuffled_pairs(n_shapes: int, epochs: int, seed: int) -> Iterator[Pair]:
    """
    All ordered pairs, in a fresh random order each epoch.
    """
    pairs = ordered_pairs(n_shapes)
    rng = np.random.default_rng(seed)
    for _ in range(epochs):
        for index in rng.permutation(len(pairs)):
            yield pairs[index]


def _label(shapes: Sequence[Shape], index: int) -> str:
    return shapes[index].name or str(index)


def train(
    shapes: Sequence[Shape],
    banks: Sequence[FilterBank],
    cfg: TrainerConfig = TrainerConfig(),
    loss_log: Optional[Path] = None,
    checkpoint: Optional[Path] = None,
    progress: bool = False,
) -> TrainingResult:
    """
    Train `banks` on every ordered pair of distinct `shapes`.

    The loss of each pair is appended to `loss_log` as it is computed. With
    cfg.checkpoint_every > 0 the banks are written to `checkpoint` every that many
    steps, and once more at the end.
    """
    if len(shapes) < 2:
        raise ValueError(f"training needs at least two shapes, got {len(shapes)}")
    if not banks:
        raise ValueError("training needs at least one filter bank")
    if cfg.shells.init_from_shot or cfg.shells.ablation:
        raise ValueError("the filter banks take no part in this matching configuration")
    # the hard map is never used during training, and the loss is the plain energy
    shells_cfg = dataclasses.replace(
        cfg.shells, converge_final=False, mode_weighting=False
    )

    banks = list(banks)
    moments = [AdamMoments.zeros_like(bank.weights) for bank in banks]
    n_pairs = len(ordered_pairs(len(shapes))) * cfg.epochs
    n_steps = -(-n_pairs // cfg.pairs_per_step)
    log: List[StepLog] = []

    with ExitStack() as stack:
        writer = None
        if loss_log is not None:
            out: TextIO = stack.enter_context(
                open(loss_log, "w", encoding="UTF-8", newline="")
            )
            writer = csv.DictWriter(out, fieldnames=LOSS_FIELDS)
            writer.writeheader()
        bar = stack.enter_context(
            tqdm(total=n_steps, desc="training", unit="step", disable=not progress)
        )

        pairs = shuffled_pairs(len(shapes), cfg.epochs, cfg.seed)
        for step, batch in enumerate(chunked(pairs, cfg.pairs_per_step), start=1):
            gradients = [torch.zeros_like(bank.weights) for bank in banks]
            for x, y in batch:
                entry, pair_gradients = _pair_gradients(
                    shapes, x, y, banks, cfg, shells_cfg, step
                )
                log.append(entry)
                if writer is not None:
                    writer.writerow(entry.as_row())
                for total, gradient in zip(gradients, pair_gradients):
                    total += gradient / len(batch)

            updated = []
            for index, bank in enumerate(banks):
                weights, moments[index] = adam_step(
                    bank.weights, gradients[index], moments[index], cfg, step
                )
                updated.append(bank.with_weights(weights))
            banks = updated

            losses = [entry.loss for entry in log[-len(batch) :]]
            bar.set_postfix(loss=f"{np.mean(losses):.5g}")
            bar.update()
            logger.debug("step %d: mean loss %.6g", step, np.mean(losses))

            if checkpoint is not None and cfg.checkpoint_every and (
                step % cfg.checkpoint_every == 0
            ):
                write_filterbanks(checkpoint, banks)
                logger.info("step %d: wrote checkpoint %s", step, checkpoint)

    if checkpoint is not None:
        write_filterbanks(checkpoint, banks)
    logger.info("trained for %d steps over %d shapes", n_steps, len(shapes))
    return TrainingResult(banks=banks, log=log)


def _pair_gradients(
    shapes: Sequence[Shape],
    x: int,
    y: int,
    banks: Sequence[FilterBank],
    cfg: TrainerConfig,
    shells_cfg: ShellsConfig,
    step: int,
) -> Tuple[StepLog, List[torch.Tensor]]:
    tape = Tape()
    live = [
        bank.with_weights(tape.watch(f"bank{index}", bank.weights))
        for index, bank in enumerate(banks)
    ]
    with tape.recording():
        _, state = match_pair(shapes[x], shapes[y], live, cfg.schedule, shells_cfg)
        loss = matching_loss(state)

    pair_x, pair_y = _label(shapes, x), _label(shapes, y)
    if not all_finite(loss.detach()):
        raise NonFiniteError(
            f"loss became {float(loss)} at step {step} on the pair "
            f"({pair_x}, {pair_y})"
        )
    entry = StepLog(
        step=step,
        pair_x=pair_x,
        pair_y=pair_y,
        loss=float(loss),
        data_term=float(np.mean([record.data_term for record in state.records])),
        entropy_term=float(
            np.mean([record.entropy_term for record in state.records])
        ),
    )
    try:
        gradients = tape.backward(loss)
    except NonFiniteError as e:
        raise NonFiniteError(
            f"non-finite gradient at step {step} on the pair ({pair_x}, {pair_y}): {e}"
        ) from e
    return entry, [gradients[f"bank{index}"] for index in range(len(banks))]
