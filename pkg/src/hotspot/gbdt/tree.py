"""Leaf-wise histogram tree growth on bundled, binned data.

Histograms are accumulated per bundle column, sequentially over ascending
sample index, then mapped back to per-feature histograms. A feature's bin 0
is always obtained as node total minus its other bins, so bundling exclusive
features changes nothing bit-wise. Only the smaller child of a split is
histogrammed; the larger one is the parent minus its sibling.
"""
from __future__ import annotations

import heapq
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .efb import FeatureBundle, feature_layout
from .goss import literal_gain, node_score, variance_gain

# histogram channels
G, H, AMP, CNT = 0, 1, 2, 3
LEAF = -1


@njit(cache=True)
def _build_histogram(bundled_rows, rows, g, h, amp, bundle_start):
    """Packed histogram over row-major bins (n, n_bundles).

    Bundle ``j`` owns slots ``bundle_start[j]:bundle_start[j + 1]``; every slot
    receives its rows in ascending order.
    """
    n_bundles = bundled_rows.shape[1]
    hist = np.zeros((bundle_start[n_bundles], 4))
    for r in rows:
        gr, hr, ar = g[r], h[r], amp[r]
        row = bundled_rows[r]
        for j in range(n_bundles):
            b = bundle_start[j] + row[j]
            hist[b, 0] += gr
            hist[b, 1] += hr
            hist[b, 2] += ar
            hist[b, 3] += 1.0
    return hist


@njit(cache=True)
def _node_totals(rows, g, h, amp):
    out = np.zeros(4)
    for r in rows:
        out[0] += g[r]
        out[1] += h[r]
        out[2] += amp[r]
        out[3] += 1.0
    return out


@njit(cache=True)
def _predict_binned(binned, feature, threshold, left, right, value):
    n = binned.shape[1]
    out = np.empty(n)
    for i in range(n):
        node = 0
        while feature[node] >= 0:
            if binned[feature[node], i] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = value[node]
    return out


@njit(cache=True)
def _apply_binned(binned, feature, threshold, left, right):
    n = binned.shape[1]
    out = np.empty(n, dtype=np.int64)
    for i in range(n):
        node = 0
        while feature[node] >= 0:
            if binned[feature[node], i] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = node
    return out

@njit(cache=True)
def _scan_splits(hist, totals, gather, n_bins, n_total, min_samples, squared):
    """Best (improvement, feature, bin) straight from bundle histograms.

    Mirrors :meth:`HistogramLayout.feature_histograms` followed by a cumulative
    scan; strict ``>`` keeps the lowest feature, then the lowest bin, on ties.
    """
    flat = hist
    n_slots = flat.shape[0]
    if squared:
        parent = totals[0] * totals[0] / totals[2] / n_total
    else:
        parent = totals[0] / totals[2] / n_total
    best, best_j, best_d = -np.inf, -1, -1
    for j in range(gather.shape[0]):
        nb = n_bins[j]
        if nb < 2:
            continue
        # bin 0 = node total minus the feature's other bins
        s0 = 0.0
        s2 = 0.0
        s3 = 0.0
        for k in range(nb - 1):
            slot = gather[j, k]
            if slot < n_slots:
                s0 += flat[slot, 0]
                s2 += flat[slot, 2]
                s3 += flat[slot, 3]
        gl = totals[0] - s0
        nl = totals[2] - s2
        cl = totals[3] - s3
        for d in range(nb - 1):
            if d > 0:
                slot = gather[j, d - 1]
                if slot < n_slots:
                    gl += flat[slot, 0]
                    nl += flat[slot, 2]
                    cl += flat[slot, 3]
            cr = totals[3] - cl
            if cl < min_samples or cr < min_samples or cl <= 0 or cr <= 0:
                continue
            gr = totals[0] - gl
            nr = totals[2] - nl
            if squared:
                gain = (gl * gl / nl + gr * gr / nr) / n_total
            else:
                gain = (gl / nl + gr / nr) / n_total
            imp = gain - parent
            if imp > best:
                best, best_j, best_d = imp, j, d
    return best, best_j, best_d


@dataclass
class Tree:
    """Flat array tree. Internal nodes have ``feature >= 0``; leaves carry ``value``."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    gain: np.ndarray
    count: np.ndarray

    @property
    def n_leaves(self) -> int:
        return int((self.feature == LEAF).sum())

    def predict_binned(self, binned: np.ndarray) -> np.ndarray:
        """Leaf values for feature-major binned rows (F, n)."""
        return _predict_binned(binned, self.feature, self.threshold, self.left, self.right, self.value)

    def apply_binned(self, binned: np.ndarray) -> np.ndarray:
        return _apply_binned(binned, self.feature, self.threshold, self.left, self.right)

    def to_nested(self, columns: list[str] | None = None, thresholds: list | None = None, node: int = 0) -> dict:
        if self.feature[node] == LEAF:
            return {"leaf": float(self.value[node]), "count": int(self.count[node])}
        j = int(self.feature[node])
        d = int(self.threshold[node])
        out = {"feature": j, "threshold_bin": d, "gain": float(self.gain[node]), "count": int(self.count[node])}
        if columns is not None:
            out["column"] = columns[j]
        if thresholds is not None:
            out["threshold"] = float(thresholds[j][d])
        out["left"] = self.to_nested(columns, thresholds, int(self.left[node]))
        out["right"] = self.to_nested(columns, thresholds, int(self.right[node]))
        return out

    @classmethod
    def from_nested(cls, root: dict) -> Tree:
        nodes: list[dict] = []
        children: list[tuple[int, int]] = []
        stack = [(root, -1, False)]
        while stack:
            node, parent, is_right = stack.pop()
            idx = len(nodes)
            nodes.append(node)
            children.append((LEAF, LEAF))
            if parent >= 0:
                l, r = children[parent]
                children[parent] = (l, idx) if is_right else (idx, r)
            if "leaf" not in node:
                stack.append((node["right"], idx, True))
                stack.append((node["left"], idx, False))
        n = len(nodes)
        tree = _empty_tree(n)
        for i, node in enumerate(nodes):
            tree.count[i] = node.get("count", 0)
            if "leaf" in node:
                tree.value[i] = node["leaf"]
            else:
                tree.feature[i] = node["feature"]
                tree.threshold[i] = node["threshold_bin"]
                tree.gain[i] = node["gain"]
                tree.left[i], tree.right[i] = children[i]
        return tree


def _empty_tree(n: int) -> Tree:
    return Tree(
        feature=np.full(n, LEAF, dtype=np.int64),
        threshold=np.zeros(n, dtype=np.int64),
        left=np.full(n, LEAF, dtype=np.int64),
        right=np.full(n, LEAF, dtype=np.int64),
        value=np.zeros(n),
        gain=np.zeros(n),
        count=np.zeros(n, dtype=np.int64),
    )


@dataclass(order=True)
class SplitInfo:
    improvement: float
    feature: int = field(compare=False)
    bin: int = field(compare=False)


class HistogramLayout:
    """Index tables turning bundle histograms into per-feature histograms."""

    def __init__(self, bundles: list[FeatureBundle], n_bins: list[int]):
        self.n_features = len(n_bins)
        self.n_bins = np.asarray(n_bins, dtype=np.int64)
        sizes = np.array([b.n_bins for b in bundles], dtype=np.int64)
        self.bundle_start = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
        self.max_feature_bins = int(self.n_bins.max()) if self.n_features else 1
        bundle_of, offset = feature_layout(bundles, self.n_features)
        self.bundle_of, self.offset = bundle_of, offset
        zero_slot = int(self.bundle_start[-1])
        width = max(self.max_feature_bins - 1, 1)
        gather = np.full((self.n_features, width), zero_slot, dtype=np.int64)
        for j in range(self.n_features):
            k = np.arange(1, self.n_bins[j])
            gather[j, : len(k)] = self.bundle_start[bundle_of[j]] + offset[j] + k - 1
        self.gather = gather
        # threshold d is usable when d < n_bins - 1
        self.valid_bin = np.arange(self.max_feature_bins)[None, :] < (self.n_bins[:, None] - 1)

    def feature_histograms(self, hist: np.ndarray, totals: np.ndarray) -> np.ndarray:
        flat = np.vstack([hist, np.zeros((1, 4))])
        nonzero = flat[self.gather]
        if self.max_feature_bins == 1:
            nonzero = nonzero[:, :0]
        bin0 = totals[None, :] - nonzero.sum(axis=1)
        return np.concatenate([bin0[:, None, :], nonzero], axis=1)

    def feature_bins(self, bundled_rows: np.ndarray, j: int, rows: np.ndarray) -> np.ndarray:
        """Bins of feature ``j`` for ``rows``, read back from row-major bundle data."""
        col = bundled_rows[rows, self.bundle_of[j]].astype(np.int64)
        off = self.offset[j]
        hit = (col >= off) & (col < off + self.n_bins[j] - 1)
        return np.where(hit, col - off + 1, 0)


def best_split(feature_hist: np.ndarray, totals: np.ndarray, layout: HistogramLayout,
               n_total: float, min_samples: int, gain_form: str = "squared") -> SplitInfo | None:
    """Best (feature, bin) by improvement over the unsplit node.

    Ties go to the lowest feature index, then the lowest bin.
    """
    cum = np.cumsum(feature_hist, axis=1)
    gl, nl, cl = cum[:, :, G], cum[:, :, AMP], cum[:, :, CNT]
    gr, nr, cr = totals[G] - gl, totals[AMP] - nl, totals[CNT] - cl
    ok = layout.valid_bin & (cl >= min_samples) & (cr >= min_samples) & (cl > 0) & (cr > 0)
    if not ok.any():
        return None
    form = variance_gain if gain_form == "squared" else literal_gain
    with np.errstate(divide="ignore", invalid="ignore"):
        gain = form(gl, nl, gr, nr, n_total)
        parent = node_score(totals[G], totals[AMP], n_total, gain_form)
    improvement = np.where(ok, gain - parent, -np.inf)
    flat = int(np.argmax(improvement))
    j, d = divmod(flat, improvement.shape[1])
    return SplitInfo(float(improvement[j, d]), j, d)


@dataclass
class GrowParams:
    max_leaves: int = 120
    min_samples_per_leaf: int = 20
    learning_rate: float = 0.1
    lambda_l2: float = 0.0
    min_split_gain: float = 1e-15
    gain_form: str = "squared"


def leaf_output(totals: np.ndarray, params: GrowParams) -> float:
    denom = totals[H] + params.lambda_l2
    if denom <= 1e-300:
        return 0.0
    return -params.learning_rate * totals[G] / denom


def grow_tree(
    bundled_rows: np.ndarray,
    layout: HistogramLayout,
    g: np.ndarray,
    h: np.ndarray,
    amp: np.ndarray,
    rows: np.ndarray,
    params: GrowParams,
    n_total: float | None = None,
) -> Tree:
    """Grow one tree best-first until ``max_leaves`` or no positive improvement.

    ``bundled_rows`` is the row-major (n, n_bundles) bundle matrix. ``g`` and
    ``h`` are already weighted and amplified per sample; ``amp`` is the
    sampling amplification; ``rows`` the selected samples in ascending order.
    """
    rows = np.asarray(rows, dtype=np.int64)
    if n_total is None:
        n_total = float(amp[rows].sum())
    n_total = float(n_total)
    squared = params.gain_form == "squared"
    min_leaf = params.min_samples_per_leaf
    cap = 2 * params.max_leaves - 1
    tree = _empty_tree(cap)
    node_rows = {0: rows}
    node_hist = {}
    n_nodes = 1
    heap: list[tuple[float, int, SplitInfo]] = []

    def splittable(r) -> bool:
        return len(r) >= max(2 * min_leaf, 2)

    def consider(node: int, hist):
        r = node_rows[node]
        tot = _node_totals(r, g, h, amp)
        tree.count[node] = len(r)
        tree.value[node] = leaf_output(tot, params)
        if not splittable(r):
            return
        imp, j, d = _scan_splits(hist, tot, layout.gather, layout.n_bins, n_total, float(min_leaf), squared)
        if j >= 0 and imp > params.min_split_gain:
            node_hist[node] = hist
            heapq.heappush(heap, (-imp, node, SplitInfo(float(imp), int(j), int(d))))

    consider(0, _build_histogram(bundled_rows, rows, g, h, amp, layout.bundle_start) if splittable(rows) else None)
    n_leaves = 1
    while heap and n_leaves < params.max_leaves:
        _, node, info = heapq.heappop(heap)
        r = node_rows.pop(node)
        parent_hist = node_hist.pop(node)
        go_left = layout.feature_bins(bundled_rows, info.feature, r) <= info.bin
        left, right = n_nodes, n_nodes + 1
        n_nodes += 2
        tree.feature[node] = info.feature
        tree.threshold[node] = info.bin
        tree.gain[node] = info.improvement
        tree.left[node], tree.right[node] = left, right
        node_rows[left], node_rows[right] = r[go_left], r[~go_left]
        small, large = (left, right) if len(node_rows[left]) <= len(node_rows[right]) else (right, left)
        hists = {small: None, large: None}
        if splittable(node_rows[large]) or splittable(node_rows[small]):
            hists[small] = _build_histogram(bundled_rows, node_rows[small], g, h, amp, layout.bundle_start)
            hists[large] = parent_hist - hists[small]
        for child in (left, right):
            consider(child, hists[child])
        n_leaves += 1

    return _compact(tree, n_nodes)


def _compact(tree: Tree, n: int) -> Tree:
    return Tree(*(getattr(tree, f)[:n].copy() for f in
                  ("feature", "threshold", "left", "right", "value", "gain", "count")))
