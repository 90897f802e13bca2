"""
Reverse-mode gradients of the unrolled matching pipeline.

torch autograd records every differentiable step of a forward pass. A Tape
keeps track of which tensors are trainable leaves, so that backward can check
that the recorded graph reaches nothing else (mesh geometry, eigenpairs and
descriptors are constants) and report non-finite adjoints.
"""

from __future__ import annotations

import logging
from contextlib import contextmanager
from typing import Dict, Iterable, Iterator, List, Optional, Set

import torch

from deepshells.errors import NonFiniteError
from deepshells.numerics import all_finite

logger = logging.getLogger(__name__)


class UnregisteredLeafError(ValueError):
    """
    The loss depends on a trainable tensor the tape does not know about.
    """


class Tape:
    def __init__(self, detect_anomaly: bool = False):
        self.detect_anomaly = detect_anomaly
        self._leaves: Dict[str, torch.Tensor] = {}

    def watch(self, name: str, values: torch.Tensor) -> torch.Tensor:
        """
        Register a fresh trainable copy of `values` and return it.
        """
        if name in self._leaves:
            raise ValueError(f"a leaf named {name!r} is already registered")
        leaf = values.detach().clone().requires_grad_(True)
        self._leaves[name] = leaf
        return leaf

    @property
    def names(self) -> List[str]:
        return list(self._leaves)

    def __getitem__(self, name: str) -> torch.Tensor:
        try:
            return self._leaves[name]
        except KeyError:
            raise KeyError(f"no leaf named {name!r} on this tape") from None

    @contextmanager
    def recording(self) -> Iterator[None]:
        """
        Enable gradient recording, with anomaly detection if requested.
        """
        with torch.enable_grad(), torch.autograd.set_detect_anomaly(
            self.detect_anomaly
        ):
            yield

    def backward(
        self, loss: torch.Tensor, names: Optional[Iterable[str]] = None
    ) -> Dict[str, torch.Tensor]:
        """
        d loss / d leaf for the requested leaves (all of them by default).

        Leaves the loss does not depend on get a zero gradient.
        """
        if loss.numel() != 1:
            raise ValueError(f"loss must be a scalar, got shape {tuple(loss.shape)}")
        if not all_finite(loss.detach()):
            raise NonFiniteError(f"loss is {float(loss)}")
        wanted = list(self._leaves) if names is None else list(names)
        leaves = [self[name] for name in wanted]

        known = {id(leaf) for leaf in self._leaves.values()}
        stray = [leaf for leaf in graph_leaves(loss) if id(leaf) not in known]
        if stray:
            shapes = ", ".join(str(tuple(leaf.shape)) for leaf in stray)
            raise UnregisteredLeafError(
                f"the loss depends on {len(stray)} unregistered tensors ({shapes})"
            )

        if not loss.requires_grad:
            return {name: torch.zeros_like(leaf) for name, leaf in zip(wanted, leaves)}

        try:
            with torch.autograd.set_detect_anomaly(self.detect_anomaly):
                gradients = torch.autograd.grad(
                    loss, leaves, allow_unused=True, retain_graph=False
                )
        except RuntimeError as e:
            # anomaly mode names the backward node that produced NaN
            if "nan" in str(e).lower():
                raise NonFiniteError(str(e)) from e
            raise

        logger.debug("differentiated the loss for %d leaves", len(leaves))
        result = {}
        for name, leaf, gradient in zip(wanted, leaves, gradients):
            if gradient is None:
                gradient = torch.zeros_like(leaf)
            if not all_finite(gradient):
                raise NonFiniteError(f"gradient of leaf {name!r} is not finite")
            result[name] = gradient
        return result


def graph_leaves(output: torch.Tensor) -> List[torch.Tensor]:
    """
    Every tensor that receives a gradient when `output` is differentiated.
    """
    if output.grad_fn is None:
        return [output] if output.requires_grad else []
    found: List[torch.Tensor] = []
    seen: Set[int] = set()
    stack = [output.grad_fn]
    while stack:
        node = stack.pop()
        if node is None or id(node) in seen:
            continue
        seen.add(id(node))
        variable = getattr(node, "variable", None)
        if variable is not None:
            found.append(variable)
        stack.extend(child for child, _ in node.next_functions)
    return found
