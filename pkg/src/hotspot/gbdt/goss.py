"""Gradient-based one-side sampling and the sampled split gain.

Each boosting round keeps the ``ceil(a * n)`` samples with the largest
gradient norm (set A), draws ``ceil(b * n)`` of the remaining samples
uniformly (set B) and up-weights B by ``(1 - a) / b`` so gradient sums stay
unbiased estimates of the full-data sums.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import DegenerateSplit

GAIN_FORMS = ("squared", "paper_literal")


def _ceil_count(fraction: float, n: int) -> int:
    # round first so 0.7 * 10 = 7.000000000000001 does not become 8
    return int(math.ceil(round(fraction * n, 9)))


@dataclass
class GossSplitContext:
    top: np.ndarray
    rest: np.ndarray
    coef: float
    n_samples: int
    gradients: np.ndarray | None = None

    @property
    def rows(self) -> np.ndarray:
        """Selected sample indices in ascending order."""
        return np.sort(np.concatenate([self.top, self.rest]))

    @property
    def weights(self) -> np.ndarray:
        """Amplification per sample: 1 for A, coef for B, 0 if not selected."""
        w = np.zeros(self.n_samples)
        w[self.top] = 1.0
        w[self.rest] = self.coef
        return w

    @property
    def n_total(self) -> float:
        return len(self.top) + self.coef * len(self.rest)

    def with_gradients(self, g) -> GossSplitContext:
        return GossSplitContext(self.top, self.rest, self.coef, self.n_samples, np.asarray(g, dtype=np.float64))


def full_context(n: int, gradients=None) -> GossSplitContext:
    """Context selecting every sample with weight 1 (sampling disabled)."""
    return GossSplitContext(np.arange(n), np.array([], dtype=np.int64), 1.0, n,
                            None if gradients is None else np.asarray(gradients, dtype=np.float64))


def goss_sample(gradients, a: float, b: float, rng: np.random.Generator | int | None = None) -> GossSplitContext:
    """Select the large-gradient set A and the random small-gradient set B.

    ``gradients`` is (n,) or (n, K); with K columns the per-sample magnitude is
    the L2 norm over classes. Ties in magnitude go to the lower sample index.
    """
    g = np.asarray(gradients, dtype=np.float64)
    mag = np.abs(g) if g.ndim == 1 else np.sqrt((g * g).sum(axis=1))
    n = len(mag)
    if not 0 < a <= 1 or b < 0:
        raise ValueError(f"need 0 < a <= 1 and b >= 0, got a={a}, b={b}")
    n_top, n_rest = _ceil_count(a, n), _ceil_count(b, n)
    if n_top + n_rest > n:
        raise ValueError(f"ceil(a*n) + ceil(b*n) = {n_top + n_rest} exceeds n = {n}")

    order = np.argsort(-mag, kind="stable")
    top = np.sort(order[:n_top])
    remaining = np.sort(order[n_top:])
    if n_rest:
        if not isinstance(rng, np.random.Generator):
            rng = np.random.default_rng(rng)
        rest = np.sort(rng.choice(remaining, size=n_rest, replace=False))
        coef = (1.0 - a) / b
    else:
        rest = np.array([], dtype=np.int64)
        coef = 1.0
    return GossSplitContext(top, rest, coef, n, g if g.ndim == 1 else None)


def variance_gain(gl, nl, gr, nr, n):
    """(gl^2 / nl + gr^2 / nr) / n; shared by the histogram search and the reference path."""
    return (gl * gl / nl + gr * gr / nr) / n


def literal_gain(gl, nl, gr, nr, n):
    """The unsquared variant, kept only for comparison runs."""
    return (gl / nl + gr / nr) / n


def node_score(g, n_node, n, gain_form: str = "squared"):
    """Score of the unsplit node; split improvement = gain - node_score."""
    if gain_form == "squared":
        return g * g / n_node / n
    return g / n_node / n


def split_gain(
    ctx: GossSplitContext,
    column,
    threshold: int,
    rows=None,
    min_samples: int = 1,
    gain_form: str = "squared",
) -> float:
    """Sampled variance gain of splitting ``rows`` on ``column <= threshold``.

    Computed sample by sample from the A/B partition, without histograms.
    ``column`` holds the binned values of feature j for all n samples and
    ``ctx.gradients`` the gradients of the tree being grown. Child sizes are
    amplified counts (|A_side| + coef * |B_side|); ``n`` is ``ctx.n_total``.
    """
    if ctx.gradients is None:
        raise ValueError("context carries no gradients")
    column = np.asarray(column)
    in_a = np.zeros(ctx.n_samples, dtype=bool)
    in_a[ctx.top] = True
    in_b = np.zeros(ctx.n_samples, dtype=bool)
    in_b[ctx.rest] = True
    node = np.zeros(ctx.n_samples, dtype=bool)
    node[ctx.rows if rows is None else np.asarray(rows)] = True
    node &= in_a | in_b

    g_al = g_ar = g_bl = g_br = 0.0
    c_al = c_ar = c_bl = c_br = 0
    for i in np.flatnonzero(node):
        left = column[i] <= threshold
        if in_a[i]:
            if left:
                g_al += ctx.gradients[i]
                c_al += 1
            else:
                g_ar += ctx.gradients[i]
                c_ar += 1
        else:
            if left:
                g_bl += ctx.gradients[i]
                c_bl += 1
            else:
                g_br += ctx.gradients[i]
                c_br += 1
    if c_al + c_bl < min_samples or c_ar + c_br < min_samples or c_al + c_bl == 0 or c_ar + c_br == 0:
        raise DegenerateSplit(f"split at bin {threshold} leaves a child below {max(min_samples, 1)} samples")

    gl = g_al + ctx.coef * g_bl
    gr = g_ar + ctx.coef * g_br
    nl = c_al + ctx.coef * c_bl
    nr = c_ar + ctx.coef * c_br
    form = variance_gain if gain_form == "squared" else literal_gain
    return form(gl, nl, gr, nr, ctx.n_total)
