"""Codebook learning, bag-of-words encoding, and feature-view assembly.

A codebook is learned with Lloyd's algorithm (k-means++ seeding, empty
clusters reseeded to the farthest point) so the whole procedure is
deterministic under a fixed seed. Shapes are encoded as L1-normalized
histograms of nearest-codeword assignments; per-view matrices are z-scored
dimension-wise over the training split.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .descriptors import PointSignatureField
from .validation import as_float_matrix, check_labels, check_min_class_size, readonly

KMEANS_MAX_ITERS = 300
KMEANS_REL_TOL = 1e-6


@dataclass(frozen=True)
class Codebook:
    """K codeword centers for one signature kind."""

    centers: np.ndarray
    kind: str
    seed: int

    def __post_init__(self):
        centers = readonly(as_float_matrix(self.centers, "centers"))
        object.__setattr__(self, "centers", centers)
        if centers.shape[0] > 1:
            d2 = _sq_distances(centers, centers)
            np.fill_diagonal(d2, np.inf)
            if d2.min() <= 0.0:
                raise ValueError("codebook centers must be pairwise distinct")

    @property
    def size(self) -> int:
        return self.centers.shape[0]

    @property
    def dim(self) -> int:
        return self.centers.shape[1]


@dataclass(frozen=True)
class Standardization:
    """Per-dimension shift and scale recorded at training time."""

    mean: np.ndarray
    scale: np.ndarray

    def apply(self, matrix: np.ndarray) -> np.ndarray:
        """Standardize a (n_dims, n_samples) matrix of column vectors."""
        return (matrix - self.mean[:, None]) / self.scale[:, None]

    @staticmethod
    def fit(matrix: np.ndarray) -> "Standardization":
        """Learn mean/deviation per dimension; constant dims stay untouched."""
        mean = matrix.mean(axis=1)
        scale = matrix.std(axis=1)
        constant = scale == 0.0
        mean = np.where(constant, 0.0, mean)
        scale = np.where(constant, 1.0, scale)
        return Standardization(mean=mean, scale=scale)


@dataclass(frozen=True)
class ViewFeatures:
    """One view of the sample collection: a (n_dims, N) column-per-shape matrix."""

    matrix: np.ndarray
    view_name: str
    labels: np.ndarray
    standardization: Standardization

    def __post_init__(self):
        matrix = readonly(as_float_matrix(self.matrix, f"view {self.view_name!r}"))
        labels = readonly(check_labels(self.labels, matrix.shape[1], "labels"))
        object.__setattr__(self, "matrix", matrix)
        object.__setattr__(self, "labels", labels)
        check_min_class_size(labels, 2, f"view {self.view_name!r}")

    @property
    def n_dims(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_samples(self) -> int:
        return self.matrix.shape[1]


def _sq_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Squared Euclidean distances between row sets, clipped at zero."""
    d2 = (
        (a**2).sum(axis=1)[:, None]
        - 2.0 * (a @ b.T)
        + (b**2).sum(axis=1)[None, :]
    )
    return np.maximum(d2, 0.0)


def _kmeans_pp_init(rows: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    centers = np.empty((k, rows.shape[1]))
    centers[0] = rows[rng.integers(rows.shape[0])]
    d2 = _sq_distances(rows, centers[:1])[:, 0]
    for c in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            idx = int(rng.integers(rows.shape[0]))
        else:
            idx = int(rng.choice(rows.shape[0], p=d2 / total))
        centers[c] = rows[idx]
        d2 = np.minimum(d2, _sq_distances(rows, centers[c : c + 1])[:, 0])
    return centers


def kmeans_fit(signatures: np.ndarray, n_words: int, seed: int, kind: str = "") -> Codebook:
    """Fit a codebook on pooled signature rows.

    Lloyd iterations run until the relative inertia change drops below
    ``1e-6`` or 300 iterations; empty clusters are reseeded to the point
    farthest from its assigned center.
    """
    rows = as_float_matrix(signatures, "signatures")
    if rows.shape[0] < n_words:
        raise ValueError(
            f"need at least {n_words} signature rows to fit {n_words} words, "
            f"got {rows.shape[0]}"
        )
    rng = np.random.default_rng(seed)
    centers = _kmeans_pp_init(rows, n_words, rng)

    prev_inertia = np.inf
    for _ in range(KMEANS_MAX_ITERS):
        d2 = _sq_distances(rows, centers)
        assign = d2.argmin(axis=1)
        point_d2 = d2[np.arange(rows.shape[0]), assign]

        occupied = np.bincount(assign, minlength=n_words) > 0
        for c in np.flatnonzero(~occupied):
            far = int(point_d2.argmax())
            centers[c] = rows[far]
            assign[far] = c
            point_d2[far] = 0.0

        for c in range(n_words):
            members = assign == c
            if members.any():
                centers[c] = rows[members].mean(axis=0)

        inertia = _sq_distances(rows, centers)[np.arange(rows.shape[0]), assign].sum()
        if inertia == 0.0 or (prev_inertia - inertia) <= KMEANS_REL_TOL * inertia:
            break
        prev_inertia = inertia

    return Codebook(centers=centers, kind=kind, seed=seed)


def bow_encode(field: PointSignatureField, codebook: Codebook) -> np.ndarray:
    """L1-normalized histogram of nearest-codeword counts for one shape."""
    if field.dim != codebook.dim:
        raise ValueError(
            f"signature dim {field.dim} does not match codebook dim {codebook.dim}"
        )
    d2 = _sq_distances(field.signatures, codebook.centers)
    assign = d2.argmin(axis=1)  # ties resolve to the lowest center index
    counts = np.bincount(assign, minlength=codebook.size).astype(np.float64)
    return counts / counts.sum()


def assemble_view(features, labels, name: str,
                  standardization: Standardization | None = None) -> ViewFeatures:
    """Stack per-shape feature vectors into a standardized view matrix.

    With ``standardization=None`` the z-scoring statistics are learned from
    these columns (the training split); pass a recorded
    :class:`Standardization` to reuse training statistics on new shapes.
    """
    vectors = [np.asarray(v, dtype=np.float64).ravel() for v in features]
    if not vectors:
        raise ValueError("no feature vectors given")
    dims = {v.shape[0] for v in vectors}
    if len(dims) != 1:
        raise ValueError(f"ragged feature vectors: lengths {sorted(dims)}")
    matrix = np.stack(vectors, axis=1)
    labels = check_labels(labels, matrix.shape[1])

    if standardization is None:
        standardization = Standardization.fit(matrix)
    elif standardization.mean.shape[0] != matrix.shape[0]:
        raise ValueError("standardization dimension does not match features")

    return ViewFeatures(
        matrix=standardization.apply(matrix),
        view_name=name,
        labels=labels,
        standardization=standardization,
    )


# --- persistence -----------------------------------------------------------

def save_codebook(codebook: Codebook, directory) -> None:
    """Write ``codebook_<kind>.csv`` (centers) and ``codebook_<kind>.json``."""
    directory = os.fspath(directory)
    os.makedirs(directory, exist_ok=True)
    np.savetxt(os.path.join(directory, f"codebook_{codebook.kind}.csv"),
               codebook.centers, delimiter=",")
    meta = {"K": codebook.size, "kind": codebook.kind, "seed": codebook.seed}
    with open(os.path.join(directory, f"codebook_{codebook.kind}.json"), "w",
              encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)


def load_codebook(directory, kind: str) -> Codebook:
    directory = os.fspath(directory)
    centers = np.loadtxt(os.path.join(directory, f"codebook_{kind}.csv"),
                         delimiter=",", ndmin=2)
    with open(os.path.join(directory, f"codebook_{kind}.json"), "r", encoding="utf-8") as fh:
        meta = json.load(fh)
    return Codebook(centers=centers, kind=meta["kind"], seed=meta["seed"])


def save_view(view: ViewFeatures, directory) -> None:
    """Write ``view_<name>.csv``, the shared ``labels.csv``, and the
    standardization sidecar ``view_<name>.json``."""
    directory = os.fspath(directory)
    os.makedirs(directory, exist_ok=True)
    np.savetxt(os.path.join(directory, f"view_{view.view_name}.csv"),
               view.matrix, delimiter=",")
    with open(os.path.join(directory, "labels.csv"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(str(l) for l in view.labels) + "\n")
    sidecar = {
        "view_name": view.view_name,
        "mean": view.standardization.mean.tolist(),
        "scale": view.standardization.scale.tolist(),
    }
    with open(os.path.join(directory, f"view_{view.view_name}.json"), "w",
              encoding="utf-8") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)


def load_view(directory, name: str) -> ViewFeatures:
    directory = os.fspath(directory)
    matrix = np.loadtxt(os.path.join(directory, f"view_{name}.csv"),
                        delimiter=",", ndmin=2)
    with open(os.path.join(directory, "labels.csv"), "r", encoding="utf-8") as fh:
        labels = np.array([line.strip() for line in fh if line.strip()])
    with open(os.path.join(directory, f"view_{name}.json"), "r", encoding="utf-8") as fh:
        sidecar = json.load(fh)
    std = Standardization(mean=np.asarray(sidecar["mean"], dtype=np.float64),
                          scale=np.asarray(sidecar["scale"], dtype=np.float64))
    return ViewFeatures(matrix=matrix, view_name=name, labels=labels, standardization=std)
