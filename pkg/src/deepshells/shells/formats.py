"""
Text formats for matching results.

A correspondence file starts with the header line

    # deepshells v1 nX=<n> nY=<m>

followed by one zero-based Y-vertex index per X-vertex. Ground truth uses the
same format, or the single token "identity".
"""

from __future__ import annotations

import csv
import re
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np

from deepshells.errors import CorrespondenceFormatError, DimensionMismatchError
from deepshells.shells.pipeline import ShellState
from deepshells.transport import HardCorrespondence

IDENTITY_TOKEN = "identity"
HEADER_PATTERN = re.compile(r"^# deepshells v1 nX=(\d+) nY=(\d+)$")
ENERGY_FIELDS = ("level", "k", "data_term", "entropy_term", "total")


def _in_range(indices: np.ndarray, n_y: int) -> bool:
    return len(indices) == 0 or bool(0 <= indices.min() <= indices.max() < n_y)


def write_correspondence(
    path: Path, correspondence: HardCorrespondence, n_y: int
) -> None:
    correspondence = np.asarray(correspondence)
    if not _in_range(correspondence, n_y):
        raise DimensionMismatchError(f"correspondence indices must lie in [0, {n_y})")
    with open(path, "w", encoding="UTF-8") as out:
        out.write(f"# deepshells v1 nX={len(correspondence)} nY={n_y}\n")
        for index in correspondence:
            out.write(f"{int(index)}\n")


def read_correspondence(path: Path) -> Tuple[HardCorrespondence, int]:
    """
    The indices of a correspondence file and the vertex count of its target.
    """
    with open(path, encoding="UTF-8") as source:
        header = source.readline().strip()
        match = HEADER_PATTERN.match(header)
        if match is None:
            raise CorrespondenceFormatError(
                f"{path}: expected a '# deepshells v1 nX=<n> nY=<m>' header, "
                f"got {header!r}"
            )
        n_x, n_y = int(match[1]), int(match[2])
        lines = [line.strip() for line in source if line.strip()]

    if len(lines) != n_x:
        raise CorrespondenceFormatError(
            f"{path}: header announces {n_x} vertices but {len(lines)} lines follow"
        )
    try:
        indices = np.array([int(line) for line in lines], dtype=np.int64)
    except ValueError as e:
        raise CorrespondenceFormatError(f"{path}: {e}") from e
    if not _in_range(indices, n_y):
        raise CorrespondenceFormatError(f"{path}: index outside [0, {n_y})")
    return indices, n_y


def read_ground_truth(
    source: Union[Path, str], n_x: Optional[int] = None
) -> HardCorrespondence:
    """
    Ground truth from a correspondence file or the literal token "identity".

    >>> read_ground_truth("identity", 3)
    array([0, 1, 2])
    """
    if str(source) == IDENTITY_TOKEN:
        if n_x is None:
            raise ValueError("an identity ground truth needs the vertex count")
        return np.arange(n_x)
    indices, _ = read_correspondence(Path(source))
    if n_x is not None and len(indices) != n_x:
        raise DimensionMismatchError(
            f"ground truth covers {len(indices)} vertices, expected {n_x}"
        )
    return indices


def write_energy_trace(path: Path, state: ShellState) -> None:
    with open(path, "w", encoding="UTF-8", newline="") as out:
        writer = csv.DictWriter(out, fieldnames=ENERGY_FIELDS)
        writer.writeheader()
        for level, record in enumerate(state.records, start=1):
            writer.writerow(
                {
                    "level": level,
                    "k": record.k,
                    "data_term": repr(record.data_term),
                    "entropy_term": repr(record.entropy_term),
                    "total": repr(record.total),
                }
            )
