"""Quantile binning of feature columns into at most 255 ordered bins."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MAX_BINS = 255


@dataclass(frozen=True)
class BinMapper:
    """Maps values to bins: bin(v) = number of thresholds strictly below v."""

    thresholds: np.ndarray

    @property
    def n_bins(self) -> int:
        return len(self.thresholds) + 1

    def transform(self, values) -> np.ndarray:
        return np.searchsorted(self.thresholds, np.asarray(values, dtype=np.float64), side="left").astype(np.uint8)

    def upper_bound(self, bin_index: int) -> float:
        """Largest value routed to ``bin_index`` or below."""
        return float(self.thresholds[bin_index])


def _midpoints(lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    mid = lo + (hi - lo) / 2
    # adjacent floats: fall back to the lower value so hi keeps its own bin
    return np.where(mid < hi, mid, lo)


def fit_mapper(column, max_bins: int = MAX_BINS) -> BinMapper:
    if not 2 <= max_bins <= MAX_BINS:
        raise ValueError(f"max_bins must be in [2, {MAX_BINS}]")
    col = np.asarray(column, dtype=np.float64)
    distinct = np.unique(col)
    if len(distinct) <= max_bins:
        return BinMapper(_midpoints(distinct[:-1], distinct[1:]))
    qs = np.linspace(0, 100, max_bins + 1)[1:-1]
    cuts = np.unique(np.percentile(col, qs, method="lower"))
    # place each cut between the cut value and the next distinct value
    nxt = distinct[np.minimum(np.searchsorted(distinct, cuts, side="right"), len(distinct) - 1)]
    cuts = np.unique(_midpoints(cuts, nxt))
    cuts = cuts[cuts < distinct[-1]]
    return BinMapper(cuts)


def bin_features(X, max_bins: int = MAX_BINS) -> tuple[np.ndarray, list[BinMapper]]:
    """Bin every column of ``X`` (n, F).

    Returns the binned data feature-major, shape (F, n) and dtype uint8, plus
    one mapper per column.
    """
    X = np.asarray(X, dtype=np.float64)
    mappers = [fit_mapper(X[:, j], max_bins) for j in range(X.shape[1])]
    return apply_mappers(X, mappers), mappers


def apply_mappers(X, mappers: list[BinMapper]) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    out = np.empty((X.shape[1], X.shape[0]), dtype=np.uint8)
    for j, m in enumerate(mappers):
        out[j] = m.transform(X[:, j])
    return out
