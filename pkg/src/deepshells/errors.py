"""
Exceptions raised throughout deepshells.

The command-line interface turns UserError into exit code 1 and NumericalError
into exit code 2.
"""

from __future__ import annotations

from pathlib import Path
from typing import Optional, Union


class DeepShellsError(Exception):
    """
    Base class of everything deepshells raises on purpose.
    """


class UserError(DeepShellsError):
    """
    The input (files, flags, arguments) was wrong; fixing it is up to the user.
    """


class NumericalError(DeepShellsError):
    """
    The input was acceptable but a numerical step failed.
    """


class MeshParseError(UserError):
    """
    Raised when an OFF or PLY file does not follow its format.
    """

    def __init__(self, message: str, path: Union[str, Path, None] = None, line=None):
        self.path = path
        self.line = line
        location = ""
        if path is not None:
            location = f"{path}"
            if line is not None:
                location += f":{line}"
            location += ": "
        super().__init__(f"{location}{message}")


class EmptyMeshError(UserError):
    """
    Raised for a mesh without vertices or without triangles.
    """

    def __init__(self, path: Union[str, Path, None] = None):
        self.path = path
        suffix = f" in {path}" if path is not None else ""
        super().__init__(f"empty mesh{suffix}")


class DegenerateMeshError(UserError):
    """
    Raised when a mesh has no surface area to normalize or integrate over.
    """


class DimensionMismatchError(UserError, ValueError):
    """
    Raised when matrices handed to an operation have incompatible shapes.
    """


class CacheMissingError(UserError):
    """
    A precomputed eigenpair or descriptor file is not in the cache directory.
    """

    def __init__(self, path: Path, mesh_path: Optional[Path] = None):
        self.path = path
        hint = mesh_path.parent if mesh_path is not None else "<mesh directory>"
        super().__init__(
            f"no cached data at {path}; run `deepshells precompute {hint}` first"
        )


class CacheFormatError(UserError):
    """
    A binary file has the wrong magic number, version, or size.
    """


class CorrespondenceFormatError(UserError):
    """
    A correspondence or ground-truth text file is malformed.
    """


class ConfigError(UserError):
    """
    The JSON configuration could not be read or failed validation.
    """


class UsageError(UserError):
    """
    Bad command-line usage.
    """


class EigensolverError(NumericalError):
    """
    The generalized eigensolver did not reach the required residual.
    """

    def __init__(self, residual: float, index: int):
        self.residual = residual
        self.index = index
        super().__init__(
            f"eigenpair {index} did not converge: achieved residual {residual:.3e}"
        )


class SingularSystemError(NumericalError):
    """
    A deformation least-squares system stayed singular after regularization.
    """

    def __init__(self, k: int, condition: float):
        self.k = k
        self.condition = condition
        super().__init__(
            f"deformation system at level k={k} is singular "
            f"(condition estimate {condition:.3e})"
        )


class NonFiniteError(NumericalError):
    """
    A loss, gradient, or intermediate value became NaN or infinite.
    """
