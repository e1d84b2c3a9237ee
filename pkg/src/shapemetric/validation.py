"""Small input-validation helpers shared across the package."""

from __future__ import annotations

import numpy as np


def as_float_matrix(a, name: str, ndim: int = 2) -> np.ndarray:
    """Coerce to a float64 ndarray of the given rank, rejecting NaN/Inf."""
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != ndim:
        raise ValueError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains NaN or Inf entries")
    return arr


def check_labels(labels, n_samples: int, name: str = "labels") -> np.ndarray:
    """Validate a length-``n_samples`` label vector and return it as an array."""
    arr = np.asarray(labels)
    if arr.ndim != 1 or arr.shape[0] != n_samples:
        raise ValueError(
            f"{name} must be a flat sequence of length {n_samples}, got shape {arr.shape}"
        )
    return arr


def check_min_class_size(labels: np.ndarray, minimum: int, context: str) -> None:
    """Raise if any class has fewer than ``minimum`` members."""
    values, counts = np.unique(labels, return_counts=True)
    small = values[counts < minimum]
    if small.size:
        raise ValueError(
            f"{context}: every class needs at least {minimum} members; "
            f"too small: {', '.join(str(v) for v in small)}"
        )


def readonly(arr: np.ndarray) -> np.ndarray:
    """Return ``arr`` flagged immutable (containers share, never copy)."""
    arr.setflags(write=False)
    return arr
