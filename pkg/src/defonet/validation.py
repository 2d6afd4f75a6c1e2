"""Input checks shared by the estimator and the CLI."""

from __future__ import annotations

import numpy as np

from .condition import WIDTHS, Condition


def check_grids(X, resolution: int | None = None, name: str = "X") -> np.ndarray:
    """Coerce to an (n, N, N, N) uint8 occupancy stack.

    Accepts a single N³ cube, a stack of cubes, or a sequence of VoxelGrids.
    """
    if isinstance(X, (list, tuple)) and X and hasattr(X[0], "occupancy"):
        X = [g.occupancy for g in X]
    elif hasattr(X, "occupancy"):
        X = X.occupancy
    arr = np.asarray(X)
    if arr.ndim == 3:
        arr = arr[None]
    if arr.ndim != 4 or not (arr.shape[1] == arr.shape[2] == arr.shape[3]):
        raise ValueError(f"{name} must be a stack of N×N×N grids, got shape {arr.shape}")
    if resolution is not None and arr.shape[1] != resolution:
        raise ValueError(f"{name} has N={arr.shape[1]}, expected N={resolution}")
    if not np.isin(arr, (0, 1)).all():
        raise ValueError(f"{name} must be binary occupancy")
    return arr.astype(np.uint8)


def check_conditions(conditions, n_samples: int | None = None) -> np.ndarray:
    """Coerce conditions (Condition objects or index triples) to an (n, 3) int array."""
    rows = [c.as_tuple() if isinstance(c, Condition) else tuple(c) for c in conditions]
    arr = np.asarray(rows, dtype=np.int64).reshape(-1, 3)
    if n_samples is not None and len(arr) != n_samples:
        raise ValueError(f"got {len(arr)} conditions for {n_samples} grids")
    bad = (arr < 0) | (arr >= np.array(WIDTHS))
    if bad.any():
        row, col = np.argwhere(bad)[0]
        field = ("force", "location", "material")[col]
        raise ValueError(f"condition {row}: {field} index {arr[row, col]} outside [0, {WIDTHS[col]})")
    return arr


def check_threshold(threshold: float) -> float:
    if not 0 < threshold < 1:
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
    return float(threshold)
