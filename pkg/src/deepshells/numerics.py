"""
Tensor conventions shared by the differentiable parts of the pipeline.

Everything that may carry gradients is a float64 torch tensor on the CPU;
preprocessing stays in numpy and crosses over through `as_tensor`.
"""

from typing import Union

import numpy as np
import torch

DTYPE = torch.float64

ArrayLike = Union[np.ndarray, torch.Tensor]


def as_tensor(values: ArrayLike) -> torch.Tensor:
    """
    float64 tensor view of `values`; shares memory with contiguous numpy arrays.
    """
    if isinstance(values, torch.Tensor):
        return values if values.dtype == DTYPE else values.to(DTYPE)
    return torch.from_numpy(np.ascontiguousarray(values, dtype=np.float64))


def as_index_tensor(values) -> torch.Tensor:
    if isinstance(values, torch.Tensor):
        return values.long()
    return torch.from_numpy(np.ascontiguousarray(values, dtype=np.int64))


def safe_norm(x: torch.Tensor, dim: int, eps: float) -> torch.Tensor:
    """
    Euclidean norm clamped below at `eps`, with a zero (not NaN) gradient there.
    """
    return x.pow(2).sum(dim=dim, keepdim=True).clamp_min(eps * eps).sqrt()


def all_finite(x: ArrayLike) -> bool:
    if isinstance(x, torch.Tensor):
        return bool(torch.isfinite(x).all())
    return bool(np.isfinite(x).all())
