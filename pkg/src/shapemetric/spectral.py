"""Cotangent Laplace-Beltrami operator and its truncated eigendecomposition.

The discretization is the classic cotangent stiffness matrix paired with a
barycentric lumped (diagonal) mass matrix. The generalized eigenproblem
``S phi = lambda M phi`` is solved densely: because ``M`` is diagonal it is
whitened by ``M^{-1/2}`` and handed to a standard symmetric eigensolver,
which is robust and exactly reproducible at the mesh sizes this package
targets (a few thousand vertices).
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy import sparse

from .mesh import MeshValidationError, TriMesh, face_areas
from .validation import readonly

# Cotangents above this magnitude indicate a numerically degenerate triangle.
MAX_COTANGENT = 1e8

# |lambda_0| below this fraction of lambda_{k-1} is clamped to exactly 0.
ZERO_EIGENVALUE_FACTOR = 1e-8


class EigensolverError(RuntimeError):
    """The symmetric eigensolver failed to converge."""


@dataclass(frozen=True)
class LaplaceOperator:
    """Discrete Laplace-Beltrami operator of a triangle mesh.

    Attributes
    ----------
    stiffness : (N, N) scipy sparse matrix
        Symmetric cotangent-weight matrix. Off-diagonal entries are
        ``-(cot a + cot b)/2`` for the two angles opposite each edge; the
        diagonal makes every row sum to zero.
    mass : (N,) float array
        Diagonal of the lumped mass matrix: one third of the total area of
        the triangles incident to each vertex.
    n_vertices : int
    """

    stiffness: sparse.csr_matrix
    mass: np.ndarray
    n_vertices: int

    def __post_init__(self):
        object.__setattr__(self, "mass", readonly(np.asarray(self.mass, dtype=np.float64)))
        if self.mass.shape != (self.n_vertices,):
            raise ValueError("mass diagonal length must equal n_vertices")
        if np.any(self.mass <= 0):
            raise ValueError("all lumped mass entries must be strictly positive")


@dataclass(frozen=True)
class Spectrum:
    """Truncated generalized eigenpairs of a Laplace-Beltrami operator.

    Attributes
    ----------
    eigenvalues : (k,) float array
        Ascending, nonnegative up to solver tolerance; the first entry is
        the (clamped) zero of the constant mode for a connected mesh.
    eigenfunctions : (N, k) float array
        Column ``i`` samples the eigenfunction of ``eigenvalues[i]`` at the
        vertices, M-orthonormal: ``Phi^T M Phi = I``.
    mass : (N,) float array
        Diagonal mass weights carried from the operator.
    name : str
        Identifier of the source mesh.
    """

    eigenvalues: np.ndarray
    eigenfunctions: np.ndarray
    mass: np.ndarray
    name: str = ""

    def __post_init__(self):
        lam = readonly(np.asarray(self.eigenvalues, dtype=np.float64))
        phi = readonly(np.asarray(self.eigenfunctions, dtype=np.float64))
        mass = readonly(np.asarray(self.mass, dtype=np.float64))
        object.__setattr__(self, "eigenvalues", lam)
        object.__setattr__(self, "eigenfunctions", phi)
        object.__setattr__(self, "mass", mass)
        _validate_spectrum(self)

    @property
    def k(self) -> int:
        return self.eigenvalues.shape[0]

    @property
    def n_vertices(self) -> int:
        return self.eigenfunctions.shape[0]


def _validate_spectrum(spec: Spectrum) -> None:
    lam, phi, mass = spec.eigenvalues, spec.eigenfunctions, spec.mass
    if lam.ndim != 1 or phi.ndim != 2 or phi.shape[1] != lam.shape[0]:
        raise ValueError("eigenfunctions must be (N, k) matching k eigenvalues")
    if mass.shape != (phi.shape[0],):
        raise ValueError("mass length must match eigenfunction rows")
    if np.any(np.diff(lam) < 0):
        raise ValueError("eigenvalues must be ascending")
    scale = abs(lam[-1])
    if abs(lam[0]) > ZERO_EIGENVALUE_FACTOR * scale:
        raise ValueError(
            f"lambda_0 = {lam[0]:.3e} is not numerically zero "
            f"(limit {ZERO_EIGENVALUE_FACTOR:g} x lambda_max)"
        )
    if np.any(lam < -ZERO_EIGENVALUE_FACTOR * scale):
        raise ValueError("spectrum contains a significantly negative eigenvalue")
    gram = phi.T @ (mass[:, None] * phi)
    if not np.allclose(gram, np.eye(lam.shape[0]), atol=1e-6):
        raise ValueError("eigenfunctions are not M-orthonormal within 1e-6")


def cotan_laplacian(mesh: TriMesh) -> LaplaceOperator:
    """Assemble cotangent stiffness and barycentric lumped mass matrices.

    Raises
    ------
    MeshValidationError
        If any cotangent exceeds ``MAX_COTANGENT`` (near-degenerate
        triangle), reported with the triangle index.
    """
    V = mesh.vertices
    F = mesh.faces
    n = mesh.n_vertices

    areas = face_areas(V, F)
    rows, cols, vals = [], [], []
    # Corner c of each face is opposite edge (c+1, c+2); its cotangent is
    # dot(e1, e2) / (2 * area) for the edges leaving the corner.
    for c in range(3):
        i = F[:, (c + 1) % 3]
        j = F[:, (c + 2) % 3]
        e1 = V[i] - V[F[:, c]]
        e2 = V[j] - V[F[:, c]]
        cot = (e1 * e2).sum(axis=1) / (2.0 * areas)
        big = np.abs(cot) > MAX_COTANGENT
        if big.any():
            t = int(np.flatnonzero(big)[0])
            raise MeshValidationError(
                f"triangle {t} is numerically degenerate (|cot| = {abs(cot[t]):.3e})"
            )
        half = 0.5 * cot
        rows.extend((i, j))
        cols.extend((j, i))
        vals.extend((-half, -half))

    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)
    stiffness = sparse.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    # Diagonal = negated off-diagonal row sum, so rows sum to zero exactly.
    diag = -np.asarray(stiffness.sum(axis=1)).ravel()
    stiffness = stiffness + sparse.diags(diag)

    mass = np.zeros(n)
    third = areas / 3.0
    for c in range(3):
        np.add.at(mass, F[:, c], third)

    return LaplaceOperator(stiffness=stiffness.tocsr(), mass=mass, n_vertices=n)


def eigendecompose(op: LaplaceOperator, k: int) -> Spectrum:
    """Solve ``S phi = lambda M phi`` for the ``k`` smallest eigenvalues.

    The diagonal mass matrix is whitened away and the problem handed to a
    dense symmetric eigensolver. Eigenfunction signs are fixed by making
    each column's largest-magnitude entry positive, so repeated runs are
    bit-identical.

    Parameters
    ----------
    op : LaplaceOperator
    k : int
        Number of eigenpairs, ``1 <= k <= n_vertices``.

    Raises
    ------
    ValueError
        If ``k`` is out of range.
    EigensolverError
        If the underlying LAPACK solve does not converge.
    """
    n = op.n_vertices
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, {n}], got {k}")

    inv_sqrt_m = 1.0 / np.sqrt(op.mass)
    whitened = op.stiffness.toarray() * inv_sqrt_m[:, None] * inv_sqrt_m[None, :]
    whitened = 0.5 * (whitened + whitened.T)
    try:
        lam, u = scipy.linalg.eigh(whitened, subset_by_index=(0, k - 1))
    except scipy.linalg.LinAlgError as exc:
        raise EigensolverError(f"eigendecomposition failed for {n} vertices, k={k}: {exc}") from exc

    phi = inv_sqrt_m[:, None] * u
    # Deterministic sign: make the entry of largest magnitude positive.
    lead = np.argmax(np.abs(phi), axis=0)
    signs = np.sign(phi[lead, np.arange(k)])
    signs[signs == 0] = 1.0
    phi = phi * signs[None, :]

    # The constant mode's eigenvalue is exactly zero in theory; clamp the
    # numerical residue.
    if k == 1 or abs(lam[0]) <= ZERO_EIGENVALUE_FACTOR * abs(lam[-1]):
        lam = lam.copy()
        lam[0] = 0.0

    return Spectrum(eigenvalues=lam, eigenfunctions=phi, mass=op.mass.copy(), name="")


def spectrum_for_mesh(mesh: TriMesh, k: int) -> Spectrum:
    """Convenience: operator assembly plus eigendecomposition, named."""
    spec = eigendecompose(cotan_laplacian(mesh), k)
    return Spectrum(spec.eigenvalues, spec.eigenfunctions, spec.mass, name=mesh.name)


def save_spectrum(spec: Spectrum, directory) -> None:
    """Persist a spectrum as ``meta.json`` + CSV arrays in ``directory``."""
    directory = os.fspath(directory)
    os.makedirs(directory, exist_ok=True)
    meta = {"k": spec.k, "n_vertices": spec.n_vertices, "name": spec.name}
    with open(os.path.join(directory, "meta.json"), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
    np.savetxt(os.path.join(directory, "eigenvalues.csv"), spec.eigenvalues, delimiter=",")
    np.savetxt(os.path.join(directory, "eigenfunctions.csv"), spec.eigenfunctions, delimiter=",")
    np.savetxt(os.path.join(directory, "mass.csv"), spec.mass, delimiter=",")


def load_spectrum(directory) -> Spectrum:
    """Inverse of :func:`save_spectrum`."""
    directory = os.fspath(directory)
    with open(os.path.join(directory, "meta.json"), "r", encoding="utf-8") as fh:
        meta = json.load(fh)
    lam = np.loadtxt(os.path.join(directory, "eigenvalues.csv"), delimiter=",", ndmin=1)
    phi = np.loadtxt(os.path.join(directory, "eigenfunctions.csv"), delimiter=",", ndmin=2)
    mass = np.loadtxt(os.path.join(directory, "mass.csv"), delimiter=",", ndmin=1)
    if phi.shape != (meta["n_vertices"], meta["k"]):
        raise ValueError(
            f"spectrum in {directory} is inconsistent with its meta.json "
            f"(expected {(meta['n_vertices'], meta['k'])}, got {phi.shape})"
        )
    return Spectrum(eigenvalues=lam, eigenfunctions=phi, mass=mass, name=meta.get("name", ""))
