from __future__ import annotations

from dataclasses import dataclass, field
from typing import Tuple

import torch

from deepshells.shells import Schedule, ShellsConfig


@dataclass(frozen=True)
class TrainerConfig:
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    pairs_per_step: int = 1
    epochs: int = 1
    seed: int = 0
    schedule: Schedule = field(default_factory=Schedule.training)
    shells: ShellsConfig = ShellsConfig()
    # 0 disables checkpoints
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError(
                f"learning rate must be nonnegative, got {self.learning_rate}"
            )
        for name in ("adam_beta1", "adam_beta2"):
            if not 0 <= getattr(self, name) < 1:
                raise ValueError(
                    f"{name} must lie in [0, 1), got {getattr(self, name)}"
                )
        if self.adam_eps <= 0:
            raise ValueError(f"adam_eps must be positive, got {self.adam_eps}")
        if self.pairs_per_step < 1:
            raise ValueError(
                f"pairs_per_step must be at least 1, got {self.pairs_per_step}"
            )
        if self.epochs < 1:
            raise ValueError(f"epochs must be at least 1, got {self.epochs}")
        if self.checkpoint_every < 0:
            raise ValueError("checkpoint_every must be nonnegative")

    @property
    def lam(self) -> float:
        return self.shells.lam

    @property
    def sinkhorn_iters(self) -> int:
        return self.shells.sinkhorn_iters


@dataclass(frozen=True)
class AdamMoments:
    m: torch.Tensor
    v: torch.Tensor

    @classmethod
    def zeros_like(cls, weights: torch.Tensor) -> AdamMoments:
        return cls(torch.zeros_like(weights), torch.zeros_like(weights))


def adam_step(
    weights: torch.Tensor,
    grads: torch.Tensor,
    moments: AdamMoments,
    cfg: TrainerConfig,
    t: int,
) -> Tuple[torch.Tensor, AdamMoments]:
    """
    One bias-corrected Adam update; `t` counts steps from 1.

    >>> w, _ = adam_step(
    ...     torch.tensor([1.0]), torch.tensor([0.5]),
    ...     AdamMoments.zeros_like(torch.tensor([1.0])), TrainerConfig(), t=1,
    ... )
    >>> round(float(w), 6)
    0.999
    """
    if t < 1:
        raise ValueError(f"Adam steps count from 1, got t={t}")
    if grads.shape != weights.shape:
        raise ValueError(
            f"gradient shape {tuple(grads.shape)} does not match "
            f"weights {tuple(weights.shape)}"
        )
    beta1, beta2 = cfg.adam_beta1, cfg.adam_beta2
    with torch.no_grad():
        m = beta1 * moments.m + (1 - beta1) * grads
        v = beta2 * moments.v + (1 - beta2) * grads * grads
        m_hat = m / (1 - beta1**t)
        v_hat = v / (1 - beta2**t)
        step = cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.adam_eps)
        updated = weights.detach() - step
    return updated, AdamMoments(m, v)
