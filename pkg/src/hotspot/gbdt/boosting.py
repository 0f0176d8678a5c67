"""Multiclass softmax boosting with class weighting, GOSS and EFB."""
from __future__ import annotations

import json
import logging
import os
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from ..errors import ColumnMismatch, InvalidConfig, NonFiniteInput, SingleClassData
from .binning import BinMapper, apply_mappers, bin_features
from .efb import FeatureBundle, bundle_columns, efb_bundle, singleton_bundles
from .goss import GAIN_FORMS, full_context, goss_sample
from .loss import class_weights, gradients_hessians, log_loss, one_hot_labels, softmax_proba
from .tree import GrowParams, HistogramLayout, Tree, grow_tree

logger = logging.getLogger(__name__)

MODEL_FORMAT = "hotspot-gbdt/1"


@dataclass
class TrainParams:
    num_classes: int = 2
    max_leaves: int = 120
    learning_rate: float = 0.1
    max_iterations: int = 500
    early_stopping_rounds: int = 20
    positive_class_weight: float = 5.0
    goss_enabled: bool = True
    goss_a: float = 0.2
    goss_b: float = 0.1
    efb_enabled: bool = True
    efb_conflict_budget: float = 0.0
    efb_sample_rows: int = 50_000
    histogram_bins: int = 255
    min_samples_per_leaf: int = 20
    lambda_l2: float = 0.0
    gain_form: str = "squared"
    seed: int = 0

    def validate(self) -> TrainParams:
        problems = []
        if self.num_classes < 2:
            problems.append("num_classes must be >= 2")
        if self.max_leaves < 2:
            problems.append("max_leaves must be >= 2")
        if not self.learning_rate > 0:
            problems.append("learning_rate must be > 0")
        if self.max_iterations < 0:
            problems.append("max_iterations must be >= 0")
        if not self.positive_class_weight > 0:
            problems.append("positive_class_weight must be > 0")
        if not 0 < self.goss_a <= 1:
            problems.append("goss_a must be in (0, 1]")
        if not 0 <= self.goss_b <= 1 - self.goss_a + 1e-12:
            problems.append("goss_b must be in [0, 1 - goss_a]")
        if self.goss_b == 0 and self.goss_a < 1:
            problems.append("goss_b = 0 requires goss_a = 1")
        if not 2 <= self.histogram_bins <= 255:
            problems.append("histogram_bins must be in [2, 255]")
        if not 0 <= self.efb_conflict_budget < 1:
            problems.append("efb_conflict_budget must be in [0, 1)")
        if self.min_samples_per_leaf < 1:
            problems.append("min_samples_per_leaf must be >= 1")
        if self.gain_form not in GAIN_FORMS:
            problems.append(f"gain_form must be one of {GAIN_FORMS}")
        if problems:
            raise InvalidConfig("; ".join(problems))
        return self

    @classmethod
    def from_dict(cls, d: dict) -> TrainParams:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise InvalidConfig(f"unknown training parameters: {sorted(unknown)}")
        return cls(**d)

    def grow_params(self) -> GrowParams:
        return GrowParams(self.max_leaves, self.min_samples_per_leaf, self.learning_rate,
                          self.lambda_l2, gain_form=self.gain_form)


@dataclass
class Ensemble:
    params: TrainParams
    columns: list[str]
    mappers: list[BinMapper]
    bundles: list[FeatureBundle]
    trees: list[tuple[int, int, Tree]] = field(default_factory=list)
    best_iteration: int | None = None
    log: list[dict] = field(default_factory=list)

    @property
    def num_classes(self) -> int:
        return self.params.num_classes

    @property
    def n_iterations(self) -> int:
        return len(self.trees) // self.num_classes

    def _aligned(self, X, columns: list[str] | None) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2:
            raise ColumnMismatch("expected a 2-d feature array")
        if columns is None:
            if X.shape[1] != len(self.columns):
                raise ColumnMismatch(f"expected {len(self.columns)} columns, got {X.shape[1]}")
            return X
        columns = list(columns)
        if len(columns) != X.shape[1] or set(columns) != set(self.columns) or len(set(columns)) != len(columns):
            missing = sorted(set(self.columns) - set(columns))[:5]
            extra = sorted(set(columns) - set(self.columns))[:5]
            raise ColumnMismatch(f"column set differs from training (missing {missing}, extra {extra})")
        pos = {c: i for i, c in enumerate(columns)}
        return X[:, [pos[c] for c in self.columns]]

    def raw_scores(self, X, columns: list[str] | None = None) -> np.ndarray:
        X = self._aligned(X, columns)
        if not np.isfinite(X).all():
            raise NonFiniteInput("feature matrix contains NaN or infinite values")
        binned = apply_mappers(X, self.mappers)
        scores = np.zeros((X.shape[0], self.num_classes))
        for m, _, tree in self.trees:
            scores[:, m] += tree.predict_binned(binned)
        return scores

    def predict_proba(self, X, columns: list[str] | None = None) -> np.ndarray:
        return softmax_proba(self.raw_scores(X, columns))

    def to_dict(self) -> dict:
        thresholds = [m.thresholds for m in self.mappers]
        return {
            "format": MODEL_FORMAT,
            "params": asdict(self.params),
            "columns": list(self.columns),
            "bin_thresholds": [[float(t) for t in th] for th in thresholds],
            "bundles": [b.to_dict() for b in self.bundles],
            "best_iteration": self.best_iteration,
            "trees": [
                {"class": m, "iteration": t, "tree": tree.to_nested(self.columns, thresholds)}
                for m, t, tree in self.trees
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> Ensemble:
        if doc.get("format") != MODEL_FORMAT:
            raise ColumnMismatch(f"unsupported model format {doc.get('format')!r}")
        return cls(
            params=TrainParams.from_dict(doc["params"]),
            columns=list(doc["columns"]),
            mappers=[BinMapper(np.asarray(th, dtype=np.float64)) for th in doc["bin_thresholds"]],
            bundles=[FeatureBundle.from_dict(b) for b in doc["bundles"]],
            trees=[(int(t["class"]), int(t["iteration"]), Tree.from_nested(t["tree"])) for t in doc["trees"]],
            best_iteration=doc.get("best_iteration"),
        )

    def save(self, path: str | os.PathLike) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True, separators=(",", ":"))
            fh.write("\n")

    @classmethod
    def load(cls, path: str | os.PathLike) -> Ensemble:
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def predict(ensemble: Ensemble, X, columns: list[str] | None = None) -> np.ndarray:
    """Per-class probabilities; with ``columns`` given, inputs are aligned by name."""
    return ensemble.predict_proba(X, columns)


def _check_inputs(X, y, num_classes: int) -> tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 2 or len(X) != len(y):
        raise ColumnMismatch("X must be 2-d with one label per row")
    if not np.isfinite(X).all():
        raise NonFiniteInput("feature matrix contains NaN or infinite values")
    if y.min(initial=0) < 0 or y.max(initial=0) >= num_classes:
        raise SingleClassData(f"labels must lie in [0, {num_classes})")
    if len(np.unique(y)) < 2:
        raise SingleClassData("training labels contain a single class")
    return X, y


def train(
    X,
    y,
    params: TrainParams | None = None,
    columns: list[str] | None = None,
    valid: tuple | None = None,
) -> Ensemble:
    """Fit K trees per round on softmax gradients.

    ``valid`` is an optional (X_valid, y_valid) pair used for early stopping on
    multiclass log-loss; the returned ensemble is cut back to the best round.
    """
    params = (params or TrainParams()).validate()
    K = params.num_classes
    X, y = _check_inputs(X, y, K)
    n, n_features = X.shape
    columns = list(columns) if columns is not None else [f"f{j}" for j in range(n_features)]

    binned, mappers = bin_features(X, params.histogram_bins)
    n_bins = [m.n_bins for m in mappers]
    if params.efb_enabled:
        bundles = efb_bundle(binned, n_bins, params.efb_conflict_budget, sample_rows=params.efb_sample_rows)
        bundled = bundle_columns(binned, bundles)
    else:
        bundles = singleton_bundles(n_bins)
        bundled = binned
    layout = HistogramLayout(bundles, n_bins)
    bundled_rows = np.ascontiguousarray(bundled.T)
    logger.debug("%d features in %d bundles", n_features, len(bundles))

    q = one_hot_labels(y, K)
    w = class_weights(y, params.positive_class_weight)
    scores = np.zeros((n, K))
    grow = params.grow_params()
    rng = np.random.default_rng(params.seed)

    valid_binned = q_valid = valid_scores = None
    if valid is not None:
        Xv, yv = np.asarray(valid[0], dtype=np.float64), np.asarray(valid[1], dtype=np.int64)
        if len(Xv) == 0:
            valid = None
        else:
            valid_binned = apply_mappers(Xv, mappers)
            q_valid = one_hot_labels(yv, K)
            valid_scores = np.zeros((len(Xv), K))

    ensemble = Ensemble(params, columns, mappers, bundles)
    best_loss, best_iter = np.inf, -1
    for it in range(params.max_iterations):
        probs = softmax_proba(scores)
        g, h = gradients_hessians(q, probs, w)
        if params.goss_enabled:
            ctx = goss_sample(g, params.goss_a, params.goss_b, rng)
        else:
            ctx = full_context(n)
        rows, amp = ctx.rows, ctx.weights
        for m in range(K):
            tree = grow_tree(bundled_rows, layout, g[:, m] * amp, h[:, m] * amp, amp, rows, grow, ctx.n_total)
            scores[:, m] += tree.predict_binned(binned)
            if valid is not None:
                valid_scores[:, m] += tree.predict_binned(valid_binned)
            ensemble.trees.append((m, it, tree))

        entry = {"iteration": it + 1, "train_loss": log_loss(q, softmax_proba(scores))}
        if valid is not None:
            entry["valid_loss"] = log_loss(q_valid, softmax_proba(valid_scores))
        ensemble.log.append(entry)

        if valid is not None and params.early_stopping_rounds > 0:
            if entry["valid_loss"] < best_loss:
                best_loss, best_iter = entry["valid_loss"], it
            elif it - best_iter >= params.early_stopping_rounds:
                logger.info("early stop at round %d, best round %d", it + 1, best_iter + 1)
                break

    if valid is not None and params.early_stopping_rounds > 0 and best_iter >= 0:
        ensemble.trees = [t for t in ensemble.trees if t[1] <= best_iter]
        ensemble.best_iteration = best_iter + 1
    return ensemble


def feature_importance(ensemble: Ensemble) -> list[tuple[str, float, int]]:
    """(column, total split gain, split count), by decreasing gain then name."""
    gain = np.zeros(len(ensemble.columns))
    splits = np.zeros(len(ensemble.columns), dtype=np.int64)
    for _, _, tree in ensemble.trees:
        internal = tree.feature >= 0
        np.add.at(gain, tree.feature[internal], tree.gain[internal])
        np.add.at(splits, tree.feature[internal], 1)
    rows = [(c, float(gain[j]), int(splits[j])) for j, c in enumerate(ensemble.columns)]
    return sorted(rows, key=lambda r: (-r[1], r[0]))


def train_matrix(matrix, params: TrainParams | None = None, validation=None) -> Ensemble:
    """:func:`train` on a labelled :class:`~hotspot.featurize.FeatureMatrix`."""
    if matrix.y is None:
        raise SingleClassData("feature matrix carries no labels")
    valid = None
    if validation is not None and len(validation):
        valid = (validation.X, validation.y)
    return train(matrix.X, matrix.y, params, matrix.columns, valid)
