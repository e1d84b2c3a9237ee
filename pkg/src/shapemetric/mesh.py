"""Triangle mesh container, validity checks, and ASCII OFF file I/O."""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .validation import readonly

# A face whose area falls below this fraction of the squared bounding-box
# diagonal is treated as degenerate.
DEGENERATE_AREA_FACTOR = 1e-12


class OffParseError(ValueError):
    """Malformed OFF file (header, counts, or element lines)."""


class MeshValidationError(ValueError):
    """Mesh violates a structural invariant; names the offending element."""


@dataclass(frozen=True)
class TriMesh:
    """Watertight triangle mesh given by vertex positions and index triples.

    Parameters
    ----------
    vertices : (V, 3) float array
        Vertex positions in model units.
    faces : (F, 3) int array
        Vertex indices per triangle.
    name : str
        Identifier, usually the source file stem.

    Notes
    -----
    Construction validates index ranges, repeated indices within a face,
    near-zero face areas, and the at-most-two-faces-per-edge manifold
    condition. Arrays are frozen after construction; all operations on the
    mesh are pure functions.
    """

    vertices: np.ndarray
    faces: np.ndarray
    name: str = ""

    def __post_init__(self):
        vertices = np.asarray(self.vertices, dtype=np.float64)
        faces = np.asarray(self.faces, dtype=np.int64)
        if vertices.ndim != 2 or vertices.shape[1] != 3:
            raise MeshValidationError(f"vertices must be (V, 3), got {vertices.shape}")
        if faces.ndim != 2 or faces.shape[1] != 3:
            raise MeshValidationError(f"faces must be (F, 3), got {faces.shape}")
        if not np.all(np.isfinite(vertices)):
            raise MeshValidationError("vertices contain NaN or Inf")
        object.__setattr__(self, "vertices", readonly(vertices))
        object.__setattr__(self, "faces", readonly(faces))
        _validate_mesh(self)

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_faces(self) -> int:
        return self.faces.shape[0]

    def bbox_diagonal(self) -> float:
        """Length of the axis-aligned bounding-box diagonal."""
        span = self.vertices.max(axis=0) - self.vertices.min(axis=0)
        return float(np.linalg.norm(span))

    def scaled(self, factor: float, name: str | None = None) -> "TriMesh":
        """Uniformly scaled copy (same connectivity)."""
        return TriMesh(self.vertices * float(factor), self.faces,
                       name if name is not None else self.name)


def face_areas(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    """Triangle areas, one per face."""
    p0 = vertices[faces[:, 0]]
    p1 = vertices[faces[:, 1]]
    p2 = vertices[faces[:, 2]]
    cross = np.cross(p1 - p0, p2 - p0)
    return 0.5 * np.linalg.norm(cross, axis=1)


def _validate_mesh(mesh: TriMesh) -> None:
    V = mesh.vertices.shape[0]
    F = mesh.faces

    if F.size:
        bad = np.flatnonzero((F < 0) | (F >= V))
        if bad.size:
            face_idx = int(bad[0] // 3)
            raise MeshValidationError(
                f"face {face_idx} references vertex {int(F.flat[bad[0]])} "
                f"outside [0, {V})"
            )
        repeated = (
            (F[:, 0] == F[:, 1]) | (F[:, 1] == F[:, 2]) | (F[:, 0] == F[:, 2])
        )
        if repeated.any():
            raise MeshValidationError(
                f"face {int(np.flatnonzero(repeated)[0])} repeats a vertex index"
            )

        diag2 = mesh.bbox_diagonal() ** 2
        areas = face_areas(mesh.vertices, F)
        tiny = areas < DEGENERATE_AREA_FACTOR * diag2
        if tiny.any():
            idx = int(np.flatnonzero(tiny)[0])
            raise MeshValidationError(
                f"face {idx} is degenerate (area {areas[idx]:.3e} below "
                f"{DEGENERATE_AREA_FACTOR:g} x bbox-diagonal^2)"
            )

        # Manifold condition: an undirected edge may appear in at most 2 faces.
        edges = np.sort(F[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
        uniq, counts = np.unique(edges, axis=0, return_counts=True)
        over = counts > 2
        if over.any():
            i, j = uniq[np.flatnonzero(over)[0]]
            raise MeshValidationError(
                f"edge ({int(i)}, {int(j)}) is shared by more than 2 faces"
            )


def load_off(path) -> TriMesh:
    """Read an ASCII OFF file into a validated :class:`TriMesh`.

    The expected layout is a header line ``OFF``, a counts line ``V F E``,
    then ``V`` vertex lines ``x y z`` and ``F`` face lines ``3 i j k``.
    Blank lines and ``#`` comments are tolerated. Vertex order is preserved.

    Raises
    ------
    OffParseError
        On malformed header, counts, or element lines.
    MeshValidationError
        When the parsed mesh violates a TriMesh invariant.
    """
    path = os.fspath(path)
    with open(path, "r", encoding="utf-8") as fh:
        tokens = iter(list(_off_tokens(fh)))

    try:
        header = next(tokens)
    except StopIteration:
        raise OffParseError(f"{path}: empty file") from None
    if header != "OFF":
        raise OffParseError(f"{path}: expected 'OFF' header, got {header!r}")

    def take_int(what):
        try:
            return int(next(tokens))
        except StopIteration:
            raise OffParseError(f"{path}: truncated file while reading {what}") from None
        except ValueError as exc:
            raise OffParseError(f"{path}: bad integer while reading {what}: {exc}") from None

    def take_float(what):
        try:
            return float(next(tokens))
        except StopIteration:
            raise OffParseError(f"{path}: truncated file while reading {what}") from None
        except ValueError as exc:
            raise OffParseError(f"{path}: bad number while reading {what}: {exc}") from None

    n_vertices = take_int("vertex count")
    n_faces = take_int("face count")
    take_int("edge count")  # present in the format, unused
    if n_vertices < 0 or n_faces < 0:
        raise OffParseError(f"{path}: negative counts")

    vertices = np.empty((n_vertices, 3), dtype=np.float64)
    for i in range(n_vertices):
        for c in range(3):
            vertices[i, c] = take_float(f"vertex {i}")

    faces = np.empty((n_faces, 3), dtype=np.int64)
    for i in range(n_faces):
        arity = take_int(f"face {i} arity")
        if arity != 3:
            raise OffParseError(f"{path}: face {i} has {arity} vertices, only triangles supported")
        for c in range(3):
            faces[i, c] = take_int(f"face {i}")

    name = os.path.splitext(os.path.basename(path))[0]
    return TriMesh(vertices, faces, name=name)


def _off_tokens(fh):
    for line in fh:
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        yield from line.split()


def write_off(mesh: TriMesh, path) -> None:
    """Write a mesh to an ASCII OFF file (inverse of :func:`load_off`)."""
    path = os.fspath(path)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("OFF\n")
        fh.write(f"{mesh.n_vertices} {mesh.n_faces} 0\n")
        for v in mesh.vertices:
            fh.write(f"{v[0]:.17g} {v[1]:.17g} {v[2]:.17g}\n")
        for f in mesh.faces:
            fh.write(f"3 {f[0]} {f[1]} {f[2]}\n")
