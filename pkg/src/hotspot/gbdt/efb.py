"""Exclusive feature bundling.

Features that are rarely non-default (bin != 0) on the same row are merged
into one bundle column. Member ``f`` with offset ``o`` stores its bin ``k > 0``
as ``o + k - 1``; bundle bin 0 means every member is at its default bin.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

MAX_BUNDLE_BINS = 256


@dataclass
class FeatureBundle:
    members: list[int] = field(default_factory=list)
    offsets: list[int] = field(default_factory=list)
    n_bins: int = 1
    conflicts: int = 0

    def to_dict(self) -> dict:
        return {"members": list(self.members), "offsets": list(self.offsets),
                "n_bins": self.n_bins, "conflicts": self.conflicts}

    @classmethod
    def from_dict(cls, d: dict) -> FeatureBundle:
        return cls(list(d["members"]), list(d["offsets"]), int(d["n_bins"]), int(d["conflicts"]))


def singleton_bundles(n_bins: list[int]) -> list[FeatureBundle]:
    """One bundle per feature; bundle bins then equal feature bins."""
    return [FeatureBundle([j], [1], int(nb), 0) for j, nb in enumerate(n_bins)]


def _popcount(bits: np.ndarray) -> int:
    return int(np.bitwise_count(bits).sum())


def efb_bundle(
    binned: np.ndarray,
    n_bins: list[int],
    conflict_budget: float = 0.0,
    max_bundle_bins: int = MAX_BUNDLE_BINS,
    sample_rows: int | None = None,
) -> list[FeatureBundle]:
    """Greedy bundling of feature-major binned data (F, n).

    Features are visited by decreasing non-default count (ties by index) and
    placed in the first bundle whose conflict count stays within
    ``conflict_budget * n`` and whose bin total fits ``max_bundle_bins``.
    Conflicts are counted on the first ``sample_rows`` rows (all rows when None).
    """
    n_features, n = binned.shape
    rows = n if sample_rows is None else min(n, sample_rows)
    nonzero = binned[:, :rows] != 0
    budget = int(np.floor(conflict_budget * rows + 1e-9))
    packed = np.packbits(nonzero, axis=1)
    nnz = nonzero.sum(axis=1)
    order = sorted(range(n_features), key=lambda j: (-int(nnz[j]), j))

    bundles: list[FeatureBundle] = []
    masks: list[np.ndarray] = []
    mask_nnz: list[int] = []
    for j in order:
        extra_bins = int(n_bins[j]) - 1
        placed = False
        for bi, bundle in enumerate(bundles):
            if bundle.n_bins + extra_bins > max_bundle_bins:
                continue
            # cheap lower bound on overlap before the exact count
            if int(nnz[j]) + mask_nnz[bi] - rows > budget - bundle.conflicts:
                continue
            overlap = _popcount(masks[bi] & packed[j])
            if bundle.conflicts + overlap <= budget:
                bundle.members.append(j)
                bundle.offsets.append(bundle.n_bins)
                bundle.n_bins += extra_bins
                bundle.conflicts += overlap
                masks[bi] = masks[bi] | packed[j]
                mask_nnz[bi] = _popcount(masks[bi])
                placed = True
                break
        if not placed:
            bundles.append(FeatureBundle([j], [1], 1 + extra_bins, 0))
            masks.append(packed[j].copy())
            mask_nnz.append(int(nnz[j]))
    return bundles


def bundle_columns(binned: np.ndarray, bundles: list[FeatureBundle]) -> np.ndarray:
    """Bundle-major bins (n_bundles, n); on conflict the later member wins."""
    n = binned.shape[1]
    out = np.zeros((len(bundles), n), dtype=np.uint8)
    for bi, bundle in enumerate(bundles):
        if bundle.members == [bundle.members[0]] and bundle.offsets == [1]:
            out[bi] = binned[bundle.members[0]]
            continue
        col = out[bi]
        for j, off in zip(bundle.members, bundle.offsets):
            v = binned[j]
            nz = v != 0
            col[nz] = (v[nz].astype(np.int64) + off - 1).astype(np.uint8)
    return out


def unbundle(bundled: np.ndarray, bundles: list[FeatureBundle], n_bins: list[int]) -> np.ndarray:
    """Recover feature-major bins from bundle columns."""
    n_features = sum(len(b.members) for b in bundles)
    out = np.zeros((n_features, bundled.shape[1]), dtype=np.uint8)
    for bi, bundle in enumerate(bundles):
        col = bundled[bi].astype(np.int64)
        for j, off in zip(bundle.members, bundle.offsets):
            hit = (col >= off) & (col < off + n_bins[j] - 1)
            out[j, hit] = col[hit] - off + 1
    return out


def feature_layout(bundles: list[FeatureBundle], n_features: int) -> tuple[np.ndarray, np.ndarray]:
    """Per feature: (bundle index, offset)."""
    bundle_of = np.zeros(n_features, dtype=np.int64)
    offset = np.zeros(n_features, dtype=np.int64)
    for bi, bundle in enumerate(bundles):
        for j, off in zip(bundle.members, bundle.offsets):
            bundle_of[j] = bi
            offset[j] = off
    return bundle_of, offset
