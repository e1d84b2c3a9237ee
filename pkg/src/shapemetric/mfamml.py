"""Joint multi-view Mahalanobis metric learning.

Each view gets a marginal-fisher-analysis objective: maximize between-class
penalty-graph scatter subject to a within-class intrinsic-graph scatter
constraint. Views are coupled by a Hilbert-Schmidt independence term on
their projected inner-product kernels, pushing the per-view similarity
structures toward consensus. Optimization alternates per-view generalized
eigenvalue solves; the learned metric for view v is ``M_v = W_v W_v^T`` and
retrieval uses the sum of per-view squared Mahalanobis distances.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass

import numpy as np
import scipy.linalg
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .coding import Standardization, ViewFeatures, assemble_view
from .validation import as_float_matrix, readonly


@dataclass(frozen=True)
class MfaGraphPair:
    """Intrinsic (same-class k1-NN) and penalty (between-class shortest
    pair) adjacency graphs with their Laplacians."""

    intrinsic: np.ndarray
    penalty: np.ndarray
    intrinsic_laplacian: np.ndarray
    penalty_laplacian: np.ndarray
    k1: int
    k2: int

    def __post_init__(self):
        for name in ("intrinsic", "penalty", "intrinsic_laplacian", "penalty_laplacian"):
            object.__setattr__(self, name, readonly(np.asarray(getattr(self, name))))


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters of the alternating optimization.

    ``d`` is the projected dimension per view, ``lam`` the HSIC coupling
    weight, ``k1``/``k2`` the intrinsic/penalty graph neighbor counts, and
    ``ridge`` the regularizer added to each constraint matrix.
    """

    d: int = 30
    lam: float = 1.0
    k1: int = 5
    k2: int = 20
    max_iters: int = 50
    tol: float = 1e-4
    ridge: float = 1e-6

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("d must be >= 1")
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if self.k1 < 1 or self.k2 < 1:
            raise ValueError("k1 and k2 must be >= 1")
        if self.tol <= 0:
            raise ValueError("tol must be > 0")
        if self.ridge < 0:
            raise ValueError("ridge must be >= 0")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")


@dataclass(frozen=True)
class MetricModel:
    """Learned per-view projections plus everything needed to reuse them."""

    projections: tuple
    view_names: tuple
    config: TrainConfig
    standardizations: tuple
    history: tuple
    converged: bool = True

    def __post_init__(self):
        projections = tuple(readonly(np.asarray(w, dtype=np.float64)) for w in self.projections)
        object.__setattr__(self, "projections", projections)
        object.__setattr__(self, "view_names", tuple(self.view_names))
        object.__setattr__(self, "standardizations", tuple(self.standardizations))
        object.__setattr__(self, "history", tuple(float(h) for h in self.history))
        for name, w in zip(self.view_names, projections):
            if not np.all(np.isfinite(w)):
                raise ValueError(f"projection for view {name!r} has non-finite entries")

    @property
    def n_views(self) -> int:
        return len(self.projections)

    def metric(self, v: int) -> np.ndarray:
        """Mahalanobis matrix ``M_v = W_v W_v^T`` of view ``v``."""
        w = self.projections[v]
        return w @ w.T


# --- graph construction ------------------------------------------------------


def build_graphs(view: ViewFeatures, k1: int, k2: int) -> MfaGraphPair:
    """Build the intrinsic and penalty adjacency graphs of one view.

    Intrinsic: ``S[i, j] = 1`` iff j is among the k1 nearest same-class
    neighbors of i, or vice versa. Penalty: ``S̄[i, j] = 1`` iff (i, j) is
    among the k2 closest between-class pairs touching i's class or j's
    class. Distances are Euclidean in the view's (standardized) feature
    space; ties break toward lower sample index.
    """
    if k1 < 1 or k2 < 1:
        raise ValueError("k1 and k2 must be >= 1")
    X = view.matrix
    labels = view.labels
    n = view.n_samples
    counts = {lab: c for lab, c in zip(*np.unique(labels, return_counts=True))}
    singles = [lab for lab, c in counts.items() if c < 2]
    if singles:
        raise ValueError(f"classes with a single member cannot be graphed: {singles}")

    diffs = X[:, :, None] - X[:, None, :]
    d2 = (diffs**2).sum(axis=0)

    same = labels[:, None] == labels[None, :]
    intrinsic = np.zeros((n, n))
    for i in range(n):
        candidates = np.flatnonzero(same[i])
        candidates = candidates[candidates != i]
        order = candidates[np.argsort(d2[i, candidates], kind="stable")]
        for j in order[:k1]:
            intrinsic[i, j] = 1.0
            intrinsic[j, i] = 1.0

    penalty = np.zeros((n, n))
    iu, ju = np.triu_indices(n, k=1)
    between = ~same[iu, ju]
    pairs = np.stack([iu[between], ju[between]], axis=1)
    pair_d2 = d2[pairs[:, 0], pairs[:, 1]]
    order = np.lexsort((pairs[:, 1], pairs[:, 0], pair_d2))
    for lab in counts:
        touching = order[
            (labels[pairs[order, 0]] == lab) | (labels[pairs[order, 1]] == lab)
        ]
        for p in touching[:k2]:
            i, j = pairs[p]
            penalty[i, j] = 1.0
            penalty[j, i] = 1.0

    return MfaGraphPair(
        intrinsic=intrinsic,
        penalty=penalty,
        intrinsic_laplacian=np.diag(intrinsic.sum(axis=1)) - intrinsic,
        penalty_laplacian=np.diag(penalty.sum(axis=1)) - penalty,
        k1=k1,
        k2=k2,
    )


# --- HSIC ---------------------------------------------------------------------


def centering_matrix(n: int) -> np.ndarray:
    """``H = I - (1/n) * ones``; ``H @ 1 = 0``."""
    return np.eye(n) - np.full((n, n), 1.0 / n)


def inner_product_kernel(X: np.ndarray, W: np.ndarray) -> np.ndarray:
    """Projected linear kernel ``X^T W W^T X``."""
    proj = W.T @ X
    return proj.T @ proj


def hsic(kernel_a: np.ndarray, kernel_b: np.ndarray) -> float:
    """Hilbert-Schmidt independence criterion of two N x N kernels:
    ``(N-1)^{-2} tr(K_a H K_b H)`` with the standard centering matrix.

    Evaluated as the Frobenius inner product of the two centered kernels,
    which is the same trace (H is idempotent) but exactly symmetric in its
    arguments and manifestly nonnegative for ``kernel_a == kernel_b``.
    """
    Ka = as_float_matrix(kernel_a, "kernel_a")
    Kb = as_float_matrix(kernel_b, "kernel_b")
    if Ka.shape != Kb.shape or Ka.shape[0] != Ka.shape[1]:
        raise ValueError(f"kernels must share a square shape, got {Ka.shape} and {Kb.shape}")
    n = Ka.shape[0]
    if n < 2:
        raise ValueError("HSIC needs at least 2 samples")
    H = centering_matrix(n)
    centered_a = H @ Ka @ H
    centered_b = H @ Kb @ H
    return float(np.sum(centered_a * centered_b)) / (n - 1) ** 2


# --- per-view solves ----------------------------------------------------------


def _top_generalized_eigvecs(target: np.ndarray, constraint: np.ndarray, d: int) -> np.ndarray:
    """Top-d eigenvectors of ``target w = eta * constraint w``,
    constraint-orthonormal, signs fixed for determinism."""
    n = target.shape[0]
    if d > n:
        raise ValueError(f"d = {d} exceeds problem size {n}")
    try:
        _, vecs = scipy.linalg.eigh(target, constraint)
    except scipy.linalg.LinAlgError as exc:
        raise ValueError(f"generalized eigensolve failed: {exc}") from exc
    W = vecs[:, ::-1][:, :d].copy()
    lead = np.argmax(np.abs(W), axis=0)
    signs = np.sign(W[lead, np.arange(d)])
    signs[signs == 0] = 1.0
    return W * signs[None, :]


def constraint_matrix(view: ViewFeatures, graphs: MfaGraphPair, ridge: float) -> np.ndarray:
    """Within-class scatter ``X L X^T`` plus ridge, symmetrized."""
    X = view.matrix
    C = X @ graphs.intrinsic_laplacian @ X.T + ridge * np.eye(X.shape[0])
    return 0.5 * (C + C.T)


def mfa_init(view: ViewFeatures, graphs: MfaGraphPair, d: int, ridge: float) -> np.ndarray:
    """Single-view initialization: top-d generalized eigenvectors of the
    between-class scatter against the (ridged) within-class scatter."""
    if d > view.n_dims:
        raise ValueError(f"d = {d} exceeds view dimension {view.n_dims}")
    X = view.matrix
    target = X @ graphs.penalty_laplacian @ X.T
    target = 0.5 * (target + target.T)
    return _top_generalized_eigvecs(target, constraint_matrix(view, graphs, ridge), d)


def assemble_pv(views, projections, graphs, v: int, lam: float) -> np.ndarray:
    """Target matrix for view ``v``: between-class scatter plus the HSIC
    coupling against every other view's current projected kernel."""
    X = views[v].matrix
    n = X.shape[1]
    P = X @ graphs[v].penalty_laplacian @ X.T
    if lam != 0.0 and len(views) > 1:
        H = centering_matrix(n)
        coupling = np.zeros((n, n))
        for w in range(len(views)):
            if w == v:
                continue
            coupling += H @ inner_product_kernel(views[w].matrix, projections[w]) @ H
        P = P + lam * (X @ coupling @ X.T)
    return 0.5 * (P + P.T)


def trace_ratio_solve(P: np.ndarray, C: np.ndarray, d: int) -> np.ndarray:
    """Maximize ``tr(W^T P W)`` over C-orthonormal frames (``W^T C W = I``)
    via the generalized eigenvalue relaxation of the trace ratio."""
    P = as_float_matrix(P, "P")
    C = as_float_matrix(C, "C")
    if P.shape != C.shape or P.shape[0] != P.shape[1]:
        raise ValueError("P and C must be square and same-shaped")
    return _top_generalized_eigvecs(P, C, d)


def ratio_objective(W: np.ndarray, P: np.ndarray, C: np.ndarray) -> float:
    """``tr(W^T P W) / tr(W^T C W)``, the per-view trace ratio."""
    return float(np.trace(W.T @ P @ W) / np.trace(W.T @ C @ W))


def joint_objective(views, projections, graphs, lam: float) -> float:
    """Value of the coupled objective at the current projections."""
    total = 0.0
    m = len(views)
    kernels = [inner_product_kernel(v.matrix, w) for v, w in zip(views, projections)]
    n = views[0].n_samples
    H = centering_matrix(n)
    for v in range(m):
        X, W = views[v].matrix, projections[v]
        total += float(np.trace(W.T @ X @ graphs[v].penalty_laplacian @ X.T @ W))
        for w in range(m):
            if w == v:
                continue
            total += lam * float(np.trace(W.T @ X @ H @ kernels[w] @ H @ X.T @ W))
    return total


def train_alternating(views, config: TrainConfig, update_callback=None) -> MetricModel:
    """Alternating per-view optimization of the coupled objective.

    Views are swept in declaration order; each update solves the view's
    generalized eigenproblem with every other view fixed. Convergence is
    measured on the projectors ``W W^T`` (invariant to the eigenvector sign
    and rotation ambiguity). ``update_callback(sweep, view, before, after)``
    receives the view's ratio objective around each update.

    Returns a :class:`MetricModel`; ``converged`` is False when
    ``max_iters`` sweeps never brought the relative projector change below
    ``tol``.
    """
    views = list(views)
    if not views:
        raise ValueError("at least one view is required")
    n = views[0].n_samples
    for v in views[1:]:
        if v.n_samples != n:
            raise ValueError("views disagree on sample count")
        if not np.array_equal(v.labels, views[0].labels):
            raise ValueError("views disagree on labels")
    names = [v.view_name for v in views]
    if len(set(names)) != len(names):
        raise ValueError(f"duplicate view names: {names}")

    graphs = [build_graphs(v, config.k1, config.k2) for v in views]
    constraints = [constraint_matrix(v, g, config.ridge) for v, g in zip(views, graphs)]
    projections = [mfa_init(v, g, config.d, config.ridge) for v, g in zip(views, graphs)]

    history = []
    converged = False
    for sweep in range(config.max_iters):
        old_projectors = [w @ w.T for w in projections]
        for v in range(len(views)):
            P = assemble_pv(views, projections, graphs, v, config.lam)
            before = ratio_objective(projections[v], P, constraints[v])
            projections[v] = trace_ratio_solve(P, constraints[v], config.d)
            if update_callback is not None:
                after = ratio_objective(projections[v], P, constraints[v])
                update_callback(sweep, v, before, after)

        history.append(joint_objective(views, projections, graphs, config.lam))
        change = 0.0
        for w, old in zip(projections, old_projectors):
            new = w @ w.T
            denom = np.linalg.norm(old)
            change = max(change, np.linalg.norm(new - old) / denom if denom > 0 else np.inf)
        if change < config.tol:
            converged = True
            break

    return MetricModel(
        projections=tuple(projections),
        view_names=tuple(names),
        config=config,
        standardizations=tuple(v.standardization for v in views),
        history=tuple(history),
        converged=converged,
    )


# --- fused distances ----------------------------------------------------------


def fused_distance(model: MetricModel, a, b) -> float:
    """Sum over views of squared Mahalanobis distances between two samples.

    ``a`` and ``b`` are sequences of per-view vectors, already standardized
    with the model's recorded statistics.
    """
    if len(a) != model.n_views or len(b) != model.n_views:
        raise ValueError(f"samples must carry {model.n_views} views")
    total = 0.0
    for w, xa, xb in zip(model.projections, a, b):
        xa = np.asarray(xa, dtype=np.float64).ravel()
        xb = np.asarray(xb, dtype=np.float64).ravel()
        if xa.shape[0] != w.shape[0] or xb.shape[0] != w.shape[0]:
            raise ValueError(f"view vector length does not match projection rows {w.shape[0]}")
        delta = w.T @ (xa - xb)
        total += float(delta @ delta)
    return total


def fused_distance_matrix(model: MetricModel, query_views, gallery_views) -> np.ndarray:
    """All pairwise fused distances between two collections.

    Both arguments are sequences of (n_dims, N) standardized view matrices
    in the model's view order; returns a (N_query, N_gallery) matrix.
    """
    if len(query_views) != model.n_views or len(gallery_views) != model.n_views:
        raise ValueError(f"expected {model.n_views} views")
    total = None
    for w, Xq, Xg in zip(model.projections, query_views, gallery_views):
        Pq = (w.T @ Xq).T
        Pg = (w.T @ Xg).T
        d2 = (
            (Pq**2).sum(axis=1)[:, None]
            - 2.0 * (Pq @ Pg.T)
            + (Pg**2).sum(axis=1)[None, :]
        )
        total = d2 if total is None else total + d2
    return np.maximum(total, 0.0)


# --- persistence ----------------------------------------------------------------
#
# model.json schema:
#   {
#     "config": {"d": int, "lambda": float, "k1": int, "k2": int,
#                 "max_iters": int, "tol": float, "ridge": float},
#     "view_names": [str, ...],
#     "history": [float, ...],          # joint objective per sweep
#     "converged": bool,
#     "standardizations": {view_name: {"mean": [...], "scale": [...]}}
#   }
# plus one W_<view>.csv per view holding the (n_dims, d) projection matrix.


def save_model(model: MetricModel, directory) -> None:
    directory = os.fspath(directory)
    os.makedirs(directory, exist_ok=True)
    cfg = asdict(model.config)
    cfg["lambda"] = cfg.pop("lam")
    doc = {
        "config": cfg,
        "view_names": list(model.view_names),
        "history": list(model.history),
        "converged": model.converged,
        "standardizations": {
            name: {"mean": std.mean.tolist(), "scale": std.scale.tolist()}
            for name, std in zip(model.view_names, model.standardizations)
        },
    }
    with open(os.path.join(directory, "model.json"), "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
    for name, w in zip(model.view_names, model.projections):
        np.savetxt(os.path.join(directory, f"W_{name}.csv"), w, delimiter=",")


def load_model(directory) -> MetricModel:
    directory = os.fspath(directory)
    with open(os.path.join(directory, "model.json"), "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    cfg = dict(doc["config"])
    cfg["lam"] = cfg.pop("lambda")
    config = TrainConfig(**cfg)
    names = doc["view_names"]
    projections = [
        np.loadtxt(os.path.join(directory, f"W_{name}.csv"), delimiter=",", ndmin=2)
        for name in names
    ]
    standardizations = [
        Standardization(
            mean=np.asarray(doc["standardizations"][name]["mean"], dtype=np.float64),
            scale=np.asarray(doc["standardizations"][name]["scale"], dtype=np.float64),
        )
        for name in names
    ]
    return MetricModel(
        projections=tuple(projections),
        view_names=tuple(names),
        config=config,
        standardizations=tuple(standardizations),
        history=tuple(doc["history"]),
        converged=doc["converged"],
    )


# --- scikit-learn facade --------------------------------------------------------


class MultiViewMetricLearner(BaseEstimator):
    """Multi-view Mahalanobis metric learner with a scikit-learn interface.

    Parameters mirror :class:`TrainConfig`; ``fit`` takes a list of
    sample-major ``(N, n_v)`` view arrays plus labels, standardizes each
    view, and runs the alternating optimization.

    Attributes
    ----------
    model_ : MetricModel
        The trained projections, standardizations, and history.
    """

    def __init__(self, n_components=30, lam=1.0, k1=5, k2=20,
                 max_iters=50, tol=1e-4, ridge=1e-6):
        self.n_components = n_components
        self.lam = lam
        self.k1 = k1
        self.k2 = k2
        self.max_iters = max_iters
        self.tol = tol
        self.ridge = ridge

    def _config(self) -> TrainConfig:
        return TrainConfig(d=self.n_components, lam=self.lam, k1=self.k1,
                           k2=self.k2, max_iters=self.max_iters, tol=self.tol,
                           ridge=self.ridge)

    def fit(self, Xs, y):
        """Fit on views ``Xs`` (list of (N, n_v) arrays) with labels ``y``."""
        views = [
            assemble_view(np.asarray(X, dtype=np.float64), y, name=f"view{i}")
            for i, X in enumerate(Xs)
        ]
        self.model_ = train_alternating(views, self._config())
        return self

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError("fit must be called before using the learner")

    def _standardized(self, Xs):
        self._check_fitted()
        if len(Xs) != self.model_.n_views:
            raise ValueError(f"expected {self.model_.n_views} views, got {len(Xs)}")
        return [
            std.apply(np.asarray(X, dtype=np.float64).T)
            for std, X in zip(self.model_.standardizations, Xs)
        ]

    def transform(self, Xs):
        """Project each view and concatenate: returns (N, n_views * d)."""
        mats = self._standardized(Xs)
        parts = [(w.T @ X).T for w, X in zip(self.model_.projections, mats)]
        return np.concatenate(parts, axis=1)

    def pairwise_distance(self, Xs, Xs_other=None):
        """Fused distance matrix between sample sets (defaults to self)."""
        q = self._standardized(Xs)
        g = q if Xs_other is None else self._standardized(Xs_other)
        return fused_distance_matrix(self.model_, q, g)
