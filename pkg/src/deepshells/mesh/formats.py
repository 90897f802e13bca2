"""
Readers for OFF and ASCII PLY triangle meshes, and an OFF writer.
"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Iterator, List, Literal, Optional, TextIO, Tuple, Union

import numpy as np

from deepshells.errors import EmptyMeshError, MeshParseError
from deepshells.mesh import TriMesh, non_manifold_edges

logger = logging.getLogger(__name__)

MeshFormat = Literal["off", "ply"]

PathLike = Union[str, Path]


def load_mesh(path: PathLike, format: Optional[MeshFormat] = None) -> TriMesh:
    """
    Read a mesh, guessing the format from the file suffix when not given.

    Vertex order is preserved from the file. Non-manifold edges are accepted
    with a warning.
    """
    path = Path(path)
    if format is None:
        suffix = path.suffix.lower().lstrip(".")
        if suffix not in ("off", "ply"):
            raise MeshParseError(
                f"cannot guess mesh format from suffix {path.suffix!r}", path
            )
        format = suffix  # type: ignore[assignment]

    with open(path, "r", encoding="UTF-8", errors="replace") as source:
        if format == "off":
            vertices, triangles = _OffReader(source, path).read()
        elif format == "ply":
            vertices, triangles = _PlyReader(source, path).read()
        else:
            raise ValueError(f"unknown mesh format {format!r}")

    if len(vertices) == 0 or len(triangles) == 0:
        raise EmptyMeshError(path)

    try:
        mesh = TriMesh.from_arrays(vertices, triangles)
    except ValueError as e:
        raise MeshParseError(str(e), path) from e

    bad_edges = non_manifold_edges(mesh)
    if len(bad_edges):
        logger.warning(
            "%s: %d non-manifold edges (first: %s)",
            path,
            len(bad_edges),
            tuple(bad_edges[0]),
        )
    logger.debug("loaded %s: %r", path, mesh)
    return mesh


def write_off(mesh: TriMesh, path: PathLike) -> None:
    with open(path, "w", encoding="UTF-8") as out:
        out.write("OFF\n")
        out.write(f"{mesh.n_vertices} {mesh.n_triangles} 0\n")
        for x, y, z in mesh.vertices:
            out.write(f"{float(x)!r} {float(y)!r} {float(z)!r}\n")
        for i, j, k in mesh.triangles:
            out.write(f"3 {i} {j} {k}\n")


class _LineReader:
    """
    Yields (line number, tokens) for non-blank lines, skipping '#' comments.
    """

    def __init__(self, source: TextIO, path: Path):
        self.path = path
        self._lines = self._tokenize(source)
        self.line_no = 0

    @staticmethod
    def _tokenize(source: TextIO) -> Iterator[Tuple[int, List[str]]]:
        for number, line in enumerate(source, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            yield number, stripped.split()

    def next_tokens(self, what: str) -> List[str]:
        try:
            self.line_no, tokens = next(self._lines)
        except StopIteration:
            raise self.error(f"unexpected end of file while reading {what}")
        return tokens

    def error(self, message: str) -> MeshParseError:
        return MeshParseError(message, self.path, self.line_no or None)

    def floats(self, tokens: List[str], count: int, what: str) -> List[float]:
        if len(tokens) < count:
            raise self.error(f"expected {count} numbers for {what}, got {len(tokens)}")
        try:
            return [float(t) for t in tokens[:count]]
        except ValueError:
            raise self.error(f"malformed number in {what}: {' '.join(tokens)}")

    def ints(self, tokens: List[str], what: str) -> List[int]:
        try:
            return [int(t) for t in tokens]
        except ValueError:
            raise self.error(f"malformed integer in {what}: {' '.join(tokens)}")


class _OffReader(_LineReader):
    def read(self) -> Tuple[np.ndarray, np.ndarray]:
        tokens = self.next_tokens("the OFF header")
        if tokens[0] != "OFF":
            raise self.error(f"expected 'OFF' on the first line, got {tokens[0]!r}")
        counts = tokens[1:] or self.next_tokens("the element counts")
        if len(counts) < 2:
            raise self.error("expected '<vertices> <faces> <edges>'")
        n_vertices, n_faces = self.ints(counts[:2], "the element counts")
        if n_vertices < 0 or n_faces < 0:
            raise self.error("negative element count")

        vertices = np.empty((n_vertices, 3))
        for i in range(n_vertices):
            vertices[i] = self.floats(self.next_tokens("vertices"), 3, "a vertex")

        triangles = np.empty((n_faces, 3), dtype=np.int64)
        for f in range(n_faces):
            face = self.ints(self.next_tokens("faces"), "a face")
            if face[0] != 3 or len(face) < 4:
                raise self.error(
                    f"only triangles are supported, got a face with {face[0]} vertices"
                )
            if min(face[1:4]) < 0 or max(face[1:4]) >= n_vertices:
                raise self.error(f"face index out of range [0, {n_vertices})")
            triangles[f] = face[1:4]
        return vertices, triangles


class _PlyReader(_LineReader):
    def read(self) -> Tuple[np.ndarray, np.ndarray]:
        if self.next_tokens("the PLY header") != ["ply"]:
            raise self.error("expected 'ply' on the first line")

        # (name, count, properties); properties are (name, is_list)
        elements: List[Tuple[str, int, List[Tuple[str, bool]]]] = []
        while True:
            tokens = self.next_tokens("the PLY header")
            keyword = tokens[0]
            if keyword == "end_header":
                break
            elif keyword == "format":
                if len(tokens) < 2 or tokens[1] != "ascii":
                    raise self.error(
                        "only ASCII PLY is supported, got format "
                        + " ".join(tokens[1:])
                    )
            elif keyword == "element":
                if len(tokens) != 3:
                    raise self.error("expected 'element <name> <count>'")
                elements.append((tokens[1], self.ints([tokens[2]], "count")[0], []))
            elif keyword == "property":
                if not elements:
                    raise self.error("property declared before any element")
                is_list = len(tokens) >= 2 and tokens[1] == "list"
                elements[-1][2].append((tokens[-1], is_list))
            elif keyword in ("comment", "obj_info"):
                continue
            else:
                raise self.error(f"unknown header keyword {keyword!r}")

        vertices = np.empty((0, 3))
        triangles = np.empty((0, 3), dtype=np.int64)
        for name, count, properties in elements:
            if name == "vertex":
                vertices = self._read_vertices(count, properties)
            elif name == "face":
                triangles = self._read_faces(count, properties, len(vertices))
            else:
                for _ in range(count):
                    self.next_tokens(f"element {name}")
        return vertices, triangles

    def _read_vertices(self, count, properties) -> np.ndarray:
        names = [p for p, _ in properties]
        missing = {"x", "y", "z"} - set(names)
        if missing:
            raise self.error(f"vertex element lacks properties {sorted(missing)}")
        if any(is_list for _, is_list in properties):
            raise self.error("list properties on vertices are not supported")
        columns = [names.index(axis) for axis in "xyz"]
        vertices = np.empty((count, 3))
        for i in range(count):
            row = self.floats(self.next_tokens("vertices"), len(names), "a vertex")
            vertices[i] = [row[c] for c in columns]
        return vertices

    def _read_faces(self, count, properties, n_vertices) -> np.ndarray:
        if [p for p, is_list in properties if is_list] not in (
            ["vertex_indices"],
            ["vertex_index"],
        ) or len(properties) != 1:
            raise self.error("face element must have one 'vertex_indices' list")
        triangles = np.empty((count, 3), dtype=np.int64)
        for f in range(count):
            face = self.ints(self.next_tokens("faces"), "a face")
            if face[0] != 3 or len(face) != 4:
                raise self.error(
                    f"only triangles are supported, got a face with {face[0]} vertices"
                )
            if min(face[1:]) < 0 or max(face[1:]) >= n_vertices:
                raise self.error(f"face index out of range [0, {n_vertices})")
            triangles[f] = face[1:]
        return triangles
