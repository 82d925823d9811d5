"""Fill missing keypoint labels by forward fill or K-nearest-neighbour means."""

from __future__ import annotations

import numpy as np

from .dataset import Dataset


class ImputationError(ValueError):
    pass


def forward_fill_array(values: np.ndarray, names=None) -> np.ndarray:
    """Column-wise forward fill in row order.

    Gaps before a column's first observation get the mean of that column's
    present values.
    """
    x = np.array(values, dtype=np.float64)
    n, d = x.shape
    if n == 0:
        return x
    present = ~np.isnan(x)
    rows = np.arange(n)[:, None]
    last = np.maximum.accumulate(np.where(present, rows, -1), axis=0)
    for j in range(d):
        if not present[:, j].any():
            label = names[j] if names is not None else f"column {j}"
            raise ImputationError(f"forward fill: {label} has no present values")
        col = x[:, j]
        filled = np.where(last[:, j] >= 0, col[np.maximum(last[:, j], 0)], col[present[:, j]].mean())
        x[:, j] = np.where(present[:, j], col, filled)
    return x


def forward_fill(dataset: Dataset) -> Dataset:
    if not np.isnan(dataset.coords).any():
        return dataset
    return dataset.with_coords(forward_fill_array(dataset.coords, dataset.keypoint_names))


def nan_euclidean_row(x: np.ndarray, row: np.ndarray) -> np.ndarray:
    """Distances from ``row`` to every row of ``x`` over shared coordinates.

    The squared distance over the shared coordinates is scaled by
    ``n_columns / n_shared``; rows sharing nothing get ``inf``.
    """
    d = x.shape[1]
    shared = ~np.isnan(x) & ~np.isnan(row)[None, :]
    diff = np.where(shared, x - row[None, :], 0.0)
    n_shared = shared.sum(axis=1)
    sq = (diff ** 2).sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        dist = np.sqrt(sq * d / n_shared)
    dist[n_shared == 0] = np.inf
    return dist


def knn_impute_array(values: np.ndarray, k: int = 5, names=None) -> np.ndarray:
    """Replace each gap with the unweighted mean of its k nearest donors.

    Donors for a gap in column j are the other rows with column j present;
    distances use only the original values, so imputations never chain.
    Equal distances are broken by row order.
    """
    if k < 1:
        raise ImputationError("k must be >= 1")
    x = np.asarray(values, dtype=np.float64)
    out = x.copy()
    present = ~np.isnan(x)
    n_donors = present.sum(axis=0)
    for r in np.flatnonzero(~present.all(axis=1)):
        dist = nan_euclidean_row(x, x[r])
        dist[r] = np.inf
        for j in np.flatnonzero(~present[r]):
            label = names[j] if names is not None else f"column {j}"
            if n_donors[j] < k:
                raise ImputationError(f"knn: k={k} exceeds the {n_donors[j]} donor rows for {label}")
            donors = np.flatnonzero(present[:, j])
            dd = dist[donors]
            finite = np.isfinite(dd)
            if not finite.any():
                raise ImputationError(f"knn: row {r} shares no coordinates with any donor for {label}")
            if finite.sum() < k:
                raise ImputationError(
                    f"knn: k={k} exceeds the {int(finite.sum())} donors sharing coordinates with row {r} for {label}")
            nearest = donors[np.argsort(dd, kind="stable")[:k]]
            out[r, j] = x[nearest, j].mean()
    return out


def knn_impute(dataset: Dataset, k: int = 5) -> Dataset:
    if k < 1:
        raise ImputationError("k must be >= 1")
    if not np.isnan(dataset.coords).any():
        return dataset
    return dataset.with_coords(knn_impute_array(dataset.coords, k, dataset.keypoint_names))


def impute(dataset: Dataset, method: str, k: int = 5) -> Dataset:
    if method in ("none", None):
        return dataset
    if method == "forward-fill":
        return forward_fill(dataset)
    if method == "knn":
        return knn_impute(dataset, k)
    raise ImputationError(f"unknown imputation method {method!r}")
