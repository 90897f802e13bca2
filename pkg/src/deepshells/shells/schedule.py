from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional, Tuple

import numpy as np

TRAINING_START = 6
TRAINING_STOP = 20
TRAINING_LEVELS = 8
TESTING_K_MAX = 500
TESTING_EXTRA_LEVELS = 12


def _log_spaced(start: float, stop: float, count: int) -> np.ndarray:
    return np.rint(np.geomspace(start, stop, count)).astype(int)


@dataclass(frozen=True)
class Schedule:
    """
    Ascending detail levels k visited by the matching pipeline.

    >>> Schedule.training().k_values
    (6, 7, 8, 10, 12, 14, 17, 20)
    >>> Schedule.testing().k_values[8:11]
    (26, 34, 45)
    """

    k_values: Tuple[int, ...]

    def __post_init__(self):
        values = tuple(int(k) for k in self.k_values)
        object.__setattr__(self, "k_values", values)
        if not values:
            raise ValueError("a schedule needs at least one level")
        if values[0] < 2:
            raise ValueError(f"the first level must be at least 2, got {values[0]}")
        if any(later <= earlier for earlier, later in zip(values, values[1:])):
            raise ValueError(f"levels must be strictly ascending, got {list(values)}")

    @classmethod
    def of(cls, k_values: Iterable[int]) -> Schedule:
        return cls(tuple(sorted(set(int(k) for k in k_values))))

    @classmethod
    def training(
        cls,
        start: int = TRAINING_START,
        stop: int = TRAINING_STOP,
        count: int = TRAINING_LEVELS,
    ) -> Schedule:
        return cls.of(_log_spaced(start, stop, count))

    @classmethod
    def testing(
        cls,
        k_max: int = TESTING_K_MAX,
        training: Optional[Schedule] = None,
        extra_levels: int = TESTING_EXTRA_LEVELS,
    ) -> Schedule:
        """
        The training levels continued log-spaced up to k_max.
        """
        training = training or cls.training()
        if k_max <= training.max_k:
            return cls.of(k for k in training.k_values if k <= k_max)
        extension = _log_spaced(training.max_k, k_max, extra_levels + 1)[1:]
        return cls.of([*training.k_values, *extension])

    @property
    def max_k(self) -> int:
        return self.k_values[-1]

    def capped(self, K: int) -> Schedule:
        """
        Drop levels beyond K, the size of the smaller basis.
        """
        kept = [k for k in self.k_values if k <= K]
        if not kept:
            raise ValueError(f"no level of {list(self.k_values)} fits a basis of {K}")
        return Schedule(tuple(kept))

    def __len__(self) -> int:
        return len(self.k_values)

    def __iter__(self):
        return iter(self.k_values)
