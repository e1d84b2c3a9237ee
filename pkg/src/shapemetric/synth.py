"""Seeded synthetic meshes: primitives plus smooth bump deformations.

These stand in for an external benchmark so the full pipeline can run and
be tested without redistributable data. Classes are geometric primitives
(sphere, torus, cylinder); instances differ by random, near-isometric bump
deformations along vertex normals.
"""

from __future__ import annotations

import csv
import os

import numpy as np

from .mesh import TriMesh, write_off

# Primitive sizes are in the hundreds so that the fixed absolute time grid
# of the scale-invariant heat signature sees the full heat-decay plateau.
DEFAULT_SCALE = 500.0


def icosphere(subdivisions: int = 3, radius: float = 1.0, name: str = "icosphere") -> TriMesh:
    """Geodesic sphere: subdivided icosahedron projected to the sphere.

    ``subdivisions`` levels give ``10 * 4**s + 2`` vertices and
    ``20 * 4**s`` faces.
    """
    t = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array(
        [
            [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
            [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
            [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
        ],
        dtype=np.float64,
    )
    faces = np.array(
        [
            [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
            [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
            [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
            [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
        ],
        dtype=np.int64,
    )
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)

    for _ in range(subdivisions):
        verts, faces = _subdivide(verts, faces)
        verts /= np.linalg.norm(verts, axis=1, keepdims=True)

    return TriMesh(verts * radius, faces, name=name)


def _subdivide(verts, faces):
    verts = list(verts)
    midpoint = {}

    def mid(a, b):
        key = (a, b) if a < b else (b, a)
        if key not in midpoint:
            midpoint[key] = len(verts)
            verts.append(0.5 * (verts[a] + verts[b]))
        return midpoint[key]

    new_faces = []
    for a, b, c in faces:
        ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
        new_faces.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]])
    return np.asarray(verts), np.asarray(new_faces, dtype=np.int64)


def torus(major_radius: float = 1.0, minor_radius: float = 0.4,
          n_major: int = 24, n_minor: int = 16, name: str = "torus") -> TriMesh:
    """Torus as a closed quad grid split into triangles."""
    u = 2.0 * np.pi * np.arange(n_major) / n_major
    v = 2.0 * np.pi * np.arange(n_minor) / n_minor
    uu, vv = np.meshgrid(u, v, indexing="ij")
    x = (major_radius + minor_radius * np.cos(vv)) * np.cos(uu)
    y = (major_radius + minor_radius * np.cos(vv)) * np.sin(uu)
    z = minor_radius * np.sin(vv)
    verts = np.stack([x.ravel(), y.ravel(), z.ravel()], axis=1)

    faces = []
    for i in range(n_major):
        for j in range(n_minor):
            a = i * n_minor + j
            b = ((i + 1) % n_major) * n_minor + j
            c = ((i + 1) % n_major) * n_minor + (j + 1) % n_minor
            d = i * n_minor + (j + 1) % n_minor
            faces.append([a, b, c])
            faces.append([a, c, d])
    return TriMesh(verts, np.asarray(faces, dtype=np.int64), name=name)


def cylinder(radius: float = 0.5, height: float = 2.0,
             n_segments: int = 16, n_rings: int = 8, name: str = "cylinder") -> TriMesh:
    """Capped cylinder; each cap is a triangle fan around a center vertex."""
    zs = np.linspace(-height / 2.0, height / 2.0, n_rings + 1)
    angles = 2.0 * np.pi * np.arange(n_segments) / n_segments
    ring = np.stack([radius * np.cos(angles), radius * np.sin(angles)], axis=1)

    verts = [np.column_stack([np.tile(ring[:, 0], n_rings + 1),
                              np.tile(ring[:, 1], n_rings + 1),
                              np.repeat(zs, n_segments)])]
    bottom_center = (n_rings + 1) * n_segments
    top_center = bottom_center + 1
    verts.append(np.array([[0.0, 0.0, -height / 2.0], [0.0, 0.0, height / 2.0]]))
    verts = np.concatenate(verts, axis=0)

    faces = []
    for r in range(n_rings):
        for s in range(n_segments):
            a = r * n_segments + s
            b = r * n_segments + (s + 1) % n_segments
            c = (r + 1) * n_segments + (s + 1) % n_segments
            d = (r + 1) * n_segments + s
            faces.append([a, b, c])
            faces.append([a, c, d])
    for s in range(n_segments):
        nxt = (s + 1) % n_segments
        faces.append([bottom_center, nxt, s])  # bottom ring, outward normal
        top0 = n_rings * n_segments
        faces.append([top_center, top0 + s, top0 + nxt])
    return TriMesh(verts, np.asarray(faces, dtype=np.int64), name=name)


def vertex_normals(mesh: TriMesh) -> np.ndarray:
    """Area-weighted vertex normals (unit length)."""
    V, F = mesh.vertices, mesh.faces
    fn = np.cross(V[F[:, 1]] - V[F[:, 0]], V[F[:, 2]] - V[F[:, 0]])
    normals = np.zeros_like(V)
    for c in range(3):
        np.add.at(normals, F[:, c], fn)
    norms = np.linalg.norm(normals, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return normals / norms


def bump_deform(mesh: TriMesh, seed: int, n_bumps: int = 10,
                amplitude: float = 0.08, width: float = 0.25,
                name: str | None = None) -> TriMesh:
    """Displace vertices along normals by random smooth Gaussian bumps.

    ``amplitude`` and ``width`` are fractions of the bounding-box diagonal.
    The defaults are strong enough that no single descriptor view separates
    the primitive classes perfectly, yet gentle enough to preserve mesh
    validity.
    """
    rng = np.random.default_rng(seed)
    V = mesh.vertices.copy()
    diag = mesh.bbox_diagonal()
    normals = vertex_normals(mesh)

    offset = np.zeros(len(V))
    for _ in range(n_bumps):
        center = V[rng.integers(len(V))]
        amp = rng.uniform(-amplitude, amplitude) * diag
        sigma = rng.uniform(0.5, 1.5) * width * diag
        d2 = ((V - center) ** 2).sum(axis=1)
        offset += amp * np.exp(-d2 / (2.0 * sigma**2))

    return TriMesh(V + offset[:, None] * normals, mesh.faces,
                   name=name if name is not None else mesh.name)


def _base_primitive(kind: str, scale: float) -> TriMesh:
    if kind == "sphere":
        return icosphere(subdivisions=2, radius=scale, name=kind)
    if kind == "torus":
        return torus(major_radius=scale, minor_radius=0.35 * scale,
                     n_major=18, n_minor=12, name=kind)
    if kind == "cylinder":
        return cylinder(radius=0.45 * scale, height=2.2 * scale,
                        n_segments=14, n_rings=10, name=kind)
    raise ValueError(f"unknown primitive kind {kind!r}")


def make_shape(kind: str, instance_seed: int, scale: float = DEFAULT_SCALE) -> TriMesh:
    """One deformed primitive instance, deterministic in ``instance_seed``."""
    base = _base_primitive(kind, scale)
    return bump_deform(base, seed=instance_seed, name=f"{kind}_{instance_seed:03d}")


def make_synthetic_dataset(out_dir, per_class: int = 20, seed: int = 0,
                           scale: float = DEFAULT_SCALE,
                           kinds=("sphere", "torus", "cylinder")) -> str:
    """Write OFF meshes plus a ``manifest.csv`` and return the manifest path."""
    out_dir = os.fspath(out_dir)
    os.makedirs(out_dir, exist_ok=True)
    manifest_path = os.path.join(out_dir, "manifest.csv")
    rows = []
    for kind in kinds:
        for i in range(per_class):
            shape_id = f"{kind}_{i:03d}"
            mesh = make_shape(kind, instance_seed=seed * 100003 + hash_free_index(kind, i),
                              scale=scale)
            path = os.path.join(out_dir, f"{shape_id}.off")
            write_off(TriMesh(mesh.vertices, mesh.faces, name=shape_id), path)
            rows.append((f"{shape_id}.off", kind, shape_id))
    with open(manifest_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["path", "label", "id"])
        writer.writerows(rows)
    return manifest_path


def hash_free_index(kind: str, i: int) -> int:
    """Stable per-instance seed component (no reliance on builtin hash)."""
    base = {"sphere": 1, "torus": 2, "cylinder": 3}.get(kind, 7)
    return base * 1009 + i
