"""Retrieval rankings and the five standard benchmark measures.

Measures follow the Princeton Shape Benchmark conventions: the query is
excluded from its own ranking, the first/second tier windows are the
relevant-item count and twice it, the E-measure looks at the first 32
retrieved items, and DCG discounts by log2 of the rank with the first rank
undiscounted.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .validation import readonly

E_MEASURE_WINDOW = 32

# Reference scores (x100) on SHREC'10 for the optional dataset reproduction.
SHREC10_REFERENCE = {"NN": 100.0, "FT": 99.5, "ST": 99.7, "E": 73.5, "DCG": 99.8}


@dataclass(frozen=True)
class DistanceMatrix:
    """Query-by-gallery distances with self-pair bookkeeping."""

    values: np.ndarray
    query_ids: tuple
    gallery_ids: tuple

    def __post_init__(self):
        values = readonly(np.asarray(self.values, dtype=np.float64))
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "query_ids", tuple(self.query_ids))
        object.__setattr__(self, "gallery_ids", tuple(self.gallery_ids))
        if values.ndim != 2:
            raise ValueError("distance matrix must be 2-dimensional")
        if values.shape != (len(self.query_ids), len(self.gallery_ids)):
            raise ValueError("distance matrix shape does not match id lists")
        if not np.all(np.isfinite(values)):
            raise ValueError("distances contain NaN or Inf")
        if np.any(values < 0):
            raise ValueError("distances must be nonnegative")

    @property
    def self_pairs(self) -> np.ndarray:
        """Boolean mask of cells where the query is the gallery item."""
        q = np.asarray(self.query_ids, dtype=object)
        g = np.asarray(self.gallery_ids, dtype=object)
        return q[:, None] == g[None, :]


@dataclass(frozen=True)
class EvalReport:
    """The five retrieval scores (each in [0, 1]) plus the PR curve."""

    nn: float
    ft: float
    st: float
    e_measure: float
    dcg: float
    pr_curve: tuple
    per_query: tuple | None = None

    def __post_init__(self):
        for name in ("nn", "ft", "st", "e_measure", "dcg"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} = {v} outside [0, 1]")
        recalls = [r for r, _ in self.pr_curve]
        if any(b < a for a, b in zip(recalls, recalls[1:])):
            raise ValueError("PR curve recalls must be non-decreasing")

    def scaled(self) -> dict:
        """Scores multiplied by 100, the conventional reporting scale."""
        return {
            "NN": 100.0 * self.nn,
            "FT": 100.0 * self.ft,
            "ST": 100.0 * self.st,
            "E": 100.0 * self.e_measure,
            "DCG": 100.0 * self.dcg,
        }


def rank_all(dist: DistanceMatrix):
    """Ascending-distance gallery ranking per query.

    Self pairs are excluded; ties break by gallery id so rankings are
    deterministic. Returns a list of index arrays into the gallery.
    """
    gallery_ids = np.asarray(dist.gallery_ids, dtype=object)
    self_pairs = dist.self_pairs
    rankings = []
    for qi in range(len(dist.query_ids)):
        order = np.lexsort((gallery_ids, dist.values[qi]))
        rankings.append(order[~self_pairs[qi][order]])
    return rankings


def _relevance(ranking, query_label, gallery_labels):
    rel = np.asarray(gallery_labels)[ranking] == query_label
    return rel.astype(np.float64)


def _query_scores(rel: np.ndarray) -> dict:
    n_relevant = int(rel.sum())
    if n_relevant == 0:
        raise ValueError("query has no relevant gallery items (singleton class)")
    nn = float(rel[0])
    ft = float(rel[:n_relevant].sum() / n_relevant)
    st = float(rel[: 2 * n_relevant].sum() / n_relevant)

    window = min(E_MEASURE_WINDOW, rel.shape[0])
    hits = rel[:window].sum()
    if hits == 0:
        e = 0.0
    else:
        precision = hits / window
        recall = hits / n_relevant
        e = float(2.0 / (1.0 / precision + 1.0 / recall))

    ranks = np.arange(1, rel.shape[0] + 1, dtype=np.float64)
    discounts = np.where(ranks >= 2, np.log2(ranks), 1.0)  # rank 1 undiscounted
    gain = float((rel / discounts).sum())
    ideal = 1.0 + float((1.0 / np.log2(ranks[1:n_relevant])).sum())
    dcg = gain / ideal

    return {"nn": nn, "ft": ft, "st": st, "e": e, "dcg": dcg}


def evaluate(rankings, query_labels, gallery_labels,
             n_pr_points: int = 101, keep_per_query: bool = False) -> EvalReport:
    """Compute NN/FT/ST/E/DCG averaged over queries, plus the PR curve.

    ``rankings`` come from :func:`rank_all`; ``query_labels`` align with
    them and ``gallery_labels`` with gallery indices. Every query class
    must still have at least one member in the (query-excluded) ranking.
    """
    if len(rankings) != len(query_labels):
        raise ValueError("one label per query ranking is required")
    per_query = []
    for ranking, qlabel in zip(rankings, query_labels):
        rel = _relevance(ranking, qlabel, gallery_labels)
        per_query.append(_query_scores(rel))

    curve = pr_curve(rankings, query_labels, gallery_labels, n_points=n_pr_points)
    mean = {k: float(np.mean([q[k] for q in per_query])) for k in per_query[0]}
    return EvalReport(
        nn=mean["nn"],
        ft=mean["ft"],
        st=mean["st"],
        e_measure=mean["e"],
        dcg=mean["dcg"],
        pr_curve=tuple(curve),
        per_query=tuple(per_query) if keep_per_query else None,
    )


def pr_curve(rankings, query_labels, gallery_labels, n_points: int = 101):
    """Mean interpolated precision at uniform recall samples.

    Per query, precision is taken at each recall level ``j / n_relevant``
    and interpolated as the maximum precision at any recall at or beyond
    the sample; curves are then averaged across queries on a uniform
    ``[0, 1]`` recall grid.
    """
    if n_points < 2:
        raise ValueError("n_points must be >= 2")
    grid = np.linspace(0.0, 1.0, n_points)
    stack = []
    for ranking, qlabel in zip(rankings, query_labels):
        rel = _relevance(ranking, qlabel, gallery_labels)
        n_relevant = int(rel.sum())
        if n_relevant == 0:
            raise ValueError("query has no relevant gallery items (singleton class)")
        hit_ranks = np.flatnonzero(rel) + 1.0
        precisions = np.arange(1, n_relevant + 1) / hit_ranks
        recalls = np.arange(1, n_relevant + 1) / n_relevant
        # precision at recall >= r, maximized from the right
        interp = np.maximum.accumulate(precisions[::-1])[::-1]
        idx = np.searchsorted(recalls, grid, side="left")
        stack.append(interp[np.minimum(idx, n_relevant - 1)])
    mean_precision = np.mean(np.stack(stack, axis=0), axis=0)
    return [(float(r), float(p)) for r, p in zip(grid, mean_precision)]
