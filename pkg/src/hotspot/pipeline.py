"""Pipeline steps shared by the command line and the test-suite.

Each step reads and writes plain CSV/JSON artifacts so the commands compose
through the file system.
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import pandas as pd

from . import metrics
from .errors import ConfigError, InvalidConfig, MissingLabel
from .featurize import DEFAULT_WINDOW_S, FeatureMatrix, build_matrix, write_columns_json
from .gbdt.boosting import Ensemble, TrainParams, feature_importance, train_matrix
from .ingest import ingest_dir, read_clean
from .schema import Plane, SchemaRegistry, default_schema
from .synth import SynthConfig, generate, preset, read_labels

logger = logging.getLogger(__name__)

HOUR_MS = 3_600_000


@dataclass
class PipelineConfig:
    window_s: int = DEFAULT_WINDOW_S
    split_ratio: float = 0.7
    valid_ratio: float = 0.2
    split_seed: int = 0
    threshold: float = metrics.DEFAULT_THRESHOLD
    sweep_weights: list = field(default_factory=list)
    min_flagged: int = 1
    train: TrainParams = field(default_factory=TrainParams)
    synth: SynthConfig = field(default_factory=SynthConfig)

    def validate(self) -> PipelineConfig:
        problems = []
        if not 0 < self.split_ratio < 1:
            problems.append("split_ratio must be in (0, 1)")
        if not 0 <= self.valid_ratio < 1:
            problems.append("valid_ratio must be in [0, 1)")
        if self.window_s <= 0:
            problems.append("window_s must be > 0")
        if not 0 <= self.threshold <= 1:
            problems.append("threshold must be in [0, 1]")
        if self.min_flagged < 0:
            problems.append("min_flagged must be >= 0")
        if any(not float(w) > 0 for w in self.sweep_weights):
            problems.append("sweep weights must be > 0")
        if problems:
            raise InvalidConfig("; ".join(problems))
        self.train.validate()
        self.synth.validate()
        return self

    @classmethod
    def from_dict(cls, d: dict) -> PipelineConfig:
        d = dict(d)
        synth = preset(d.pop("preset")) if "preset" in d else SynthConfig()
        if "synth" in d:
            synth = replace(synth, **_known(SynthConfig, d.pop("synth"), "synth"))
        train = TrainParams.from_dict(d.pop("train", {}))
        return cls(**_known(cls, d, "pipeline"), train=train, synth=synth)

    @classmethod
    def load(cls, path: str | os.PathLike | None) -> PipelineConfig:
        if path is None:
            return cls()
        try:
            with open(path) as fh:
                doc = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise InvalidConfig(f"cannot read config {path}: {exc}") from None
        if not isinstance(doc, dict):
            raise InvalidConfig("config must be a JSON object")
        return cls.from_dict(doc)

    def with_seed(self, seed: int) -> PipelineConfig:
        """``seed`` replaces every stochastic seed."""
        return replace(self, split_seed=seed, train=replace(self.train, seed=seed),
                       synth=replace(self.synth, seed=seed))

    def to_dict(self) -> dict:
        return asdict(self)


def _known(cls, d: dict, what: str) -> dict:
    if not isinstance(d, dict):
        raise InvalidConfig(f"{what} section must be an object")
    names = {f.name for f in fields(cls)} - {"train", "synth"}
    unknown = set(d) - names
    if unknown:
        raise InvalidConfig(f"unknown {what} keys: {sorted(unknown)}")
    return d


def _user_key(user_id: str, seed: int, salt: str) -> str:
    return hashlib.sha256(f"{salt}:{seed}:{user_id}".encode()).hexdigest()


def split_users(user_ids, ratio: float, seed: int = 0, salt: str = "test") -> set[str]:
    """Users on the first side of a hash-ordered cut at ``round(ratio * n)``."""
    users = sorted(set(user_ids), key=lambda u: (_user_key(u, seed, salt), u))
    return set(users[: int(round(ratio * len(users)))])


def split_matrix(matrix: FeatureMatrix, ratio: float, seed: int = 0, salt: str = "test"):
    """(first, second) row subsets; all windows of a user land on one side."""
    first = split_users(matrix.user_id, ratio, seed, salt)
    mask = np.array([u in first for u in matrix.user_id], dtype=bool)
    return matrix.take(np.flatnonzero(mask)), matrix.take(np.flatnonzero(~mask))


# steps

def run_generate(config: SynthConfig, out_dir, registry: SchemaRegistry | None = None):
    dataset = generate(config, registry)
    dataset.write(out_dir, registry)
    return dataset


def run_ingest(raw_dir, out_dir, registry: SchemaRegistry | None = None):
    return ingest_dir(raw_dir, out_dir, registry or default_schema())


def run_featurize(clean_dir, out_path, labels_path=None, window_s: int = DEFAULT_WINDOW_S,
                  registry: SchemaRegistry | None = None) -> FeatureMatrix:
    registry = registry or default_schema()
    clean_dir = Path(clean_dir)
    cp = read_clean(clean_dir / "cp.csv", registry, Plane.CP)
    up = read_clean(clean_dir / "up.csv", registry, Plane.UP)
    labels = read_labels(labels_path) if labels_path else None
    matrix = build_matrix(cp, up, registry, window_s, labels)
    matrix.write_csv(out_path)
    write_columns_json(registry, Path(out_path).with_name("columns.json"))
    return matrix


def fit(train_part: FeatureMatrix, config: PipelineConfig, params: TrainParams | None = None) -> Ensemble:
    """Train with early stopping on a user-level validation cut of ``train_part``."""
    params = params or config.train
    if train_part.y is None:
        raise MissingLabel("training features carry no labels")
    if config.valid_ratio > 0 and params.early_stopping_rounds > 0:
        fit_part, valid_part = split_matrix(train_part, 1 - config.valid_ratio, config.split_seed, "valid")
        if len(valid_part) == 0 or len(np.unique(fit_part.y)) < 2:
            fit_part, valid_part = train_part, None
    else:
        fit_part, valid_part = train_part, None
    return train_matrix(fit_part, params, valid_part)


def write_train_log(ensemble: Ensemble, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "train_loss", "valid_loss"])
        for e in ensemble.log:
            w.writerow([e["iteration"], repr(e["train_loss"]), repr(e["valid_loss"]) if "valid_loss" in e else ""])


def run_train(features_path, out_dir, config: PipelineConfig) -> Ensemble:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    matrix = FeatureMatrix.read_csv(features_path)
    if matrix.y is None:
        raise MissingLabel(f"{features_path} has no label column")
    train_part, test_part = split_matrix(matrix, config.split_ratio, config.split_seed)
    t0 = time.perf_counter()
    ensemble = fit(train_part, config)
    elapsed = time.perf_counter() - t0
    ensemble.save(out / "model.json")
    write_train_log(ensemble, out / "train_log.csv")
    train_part.write_csv(out / "train_features.csv")
    test_part.write_csv(out / "test_features.csv")
    _record_timing(out, "train", elapsed)
    return ensemble


def write_importance(ensemble: Ensemble, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["rank", "feature", "gain", "splits"])
        for rank, (col, gain, splits) in enumerate(feature_importance(ensemble), 1):
            w.writerow([rank, col, repr(gain), splits])


def evaluation_report(ensemble: Ensemble, matrix: FeatureMatrix, threshold: float) -> dict:
    if matrix.y is None:
        raise MissingLabel("evaluation features carry no labels")
    p = ensemble.predict_proba(matrix.X, matrix.columns)[:, 1]
    counts = metrics.confusion(matrix.y, p, threshold)
    precision, recall, f1 = metrics.prf1(counts)
    report = {
        "threshold": threshold,
        "rows": len(matrix),
        "positives": int(matrix.y.sum()),
        "users": len(set(matrix.user_id)),
        "confusion": asdict(counts),
        "precision": precision,
        "recall": recall,
        "f1": f1,
        "best_iteration": ensemble.best_iteration,
        "trees": len(ensemble.trees),
    }
    two_classes = 0 < report["positives"] < len(matrix)
    report["roc_auc"] = metrics.roc_curve(matrix.y, p).area if two_classes else None
    report["pr_auc"] = metrics.pr_curve(matrix.y, p).area if report["positives"] else None
    return report, p


def sweep(train_part: FeatureMatrix, eval_part: FeatureMatrix, config: PipelineConfig,
          weights=None) -> metrics.WeightSweep:
    """Retrain per positive-class weight, everything else fixed, and score ``eval_part``."""
    weights = list(weights if weights is not None else config.sweep_weights)

    def train_fn(weight: float):
        ens = fit(train_part, config, replace(config.train, positive_class_weight=weight))
        return lambda X: ens.predict_proba(X, eval_part.columns)[:, 1]

    return metrics.weight_sweep(train_fn, eval_part.y, eval_part.X, weights, config.threshold)


def run_evaluate(model_path, features_path, out_dir, config: PipelineConfig,
                 train_features_path=None, sweep_on: str = "test") -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ensemble = Ensemble.load(model_path)
    matrix = FeatureMatrix.read_csv(features_path)
    report, p = evaluation_report(ensemble, matrix, config.threshold)
    if report["roc_auc"] is not None:
        metrics.roc_curve(matrix.y, p).write_csv(out / "roc.csv")
    if report["pr_auc"] is not None:
        metrics.pr_curve(matrix.y, p).write_csv(out / "pr.csv")
    write_importance(ensemble, out / "importance.csv")
    if config.sweep_weights:
        if train_features_path is None:
            raise ConfigError("a weight sweep needs the training features")
        train_part = FeatureMatrix.read_csv(train_features_path)
        target = train_part if sweep_on == "train" else matrix
        result = sweep(train_part, target, config)
        result.write_csv(out / "weight_sweep.csv")
        report["weight_sweep"] = {"split": sweep_on, "best_weight": result.best_weight}
    with open(out / "eval.json", "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return report


def affected_users(predictions: pd.DataFrame, min_flagged: int) -> pd.DataFrame:
    """Users with more than ``min_flagged`` flagged windows starting in the last hour of input."""
    cols = ["user_id", "flagged_windows", "max_p_affected"]
    if predictions.empty:
        return pd.DataFrame(columns=cols)
    latest = int(predictions["window_start"].max())
    recent = predictions[predictions["window_start"] > latest - HOUR_MS]
    recent = recent[recent["flag"] == 1]
    grouped = recent.groupby("user_id").agg(flagged_windows=("flag", "size"), max_p_affected=("p_affected", "max"))
    grouped = grouped[grouped["flagged_windows"] > min_flagged].reset_index()
    return grouped.sort_values("user_id", kind="mergesort")[cols].reset_index(drop=True)


def run_predict(model_path, features_path, out_dir, config: PipelineConfig) -> pd.DataFrame:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ensemble = Ensemble.load(model_path)
    matrix = FeatureMatrix.read_csv(features_path)
    if len(matrix):
        p = ensemble.predict_proba(matrix.X, matrix.columns)[:, 1]
    else:
        p = np.zeros(0)
    preds = pd.DataFrame({
        "user_id": matrix.user_id,
        "window_start": matrix.window_start,
        "p_affected": p,
        "flag": (p >= config.threshold).astype(np.int64),
    })
    preds.to_csv(out / "predictions.csv", index=False, lineterminator="\n", float_format="%.17g")
    users = affected_users(preds, config.min_flagged)
    users.to_csv(out / "affected_users.csv", index=False, lineterminator="\n", float_format="%.17g")
    return preds


def _record_timing(out: Path, step: str, seconds: float) -> None:
    # wall-clock lives apart from the deterministic artifacts
    path = out / "timing.json"
    doc = json.loads(path.read_text()) if path.exists() else {}
    doc[step] = round(seconds, 3)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def run_all(out_dir, config: PipelineConfig, registry: SchemaRegistry | None = None) -> dict:
    """generate, ingest, featurize, train, evaluate and predict under ``out_dir``."""
    registry = registry or default_schema()
    out = Path(out_dir)
    timings = {}

    def timed(name, fn, *args, **kw):
        t0 = time.perf_counter()
        result = fn(*args, **kw)
        timings[name] = round(time.perf_counter() - t0, 3)
        logger.info("%s done in %.1f s", name, timings[name])
        return result

    timed("generate", run_generate, config.synth, out / "raw", registry)
    timed("ingest", run_ingest, out / "raw", out / "clean", registry)
    timed("featurize", run_featurize, out / "clean", out / "features.csv", out / "raw" / "labels.csv",
          config.window_s, registry)
    timed("train", run_train, out / "features.csv", out / "model", config)
    report = timed("evaluate", run_evaluate, out / "model" / "model.json", out / "model" / "test_features.csv",
                   out / "eval", config, out / "model" / "train_features.csv")
    timed("predict", run_predict, out / "model" / "model.json", out / "model" / "test_features.csv",
          out / "predict", config)
    (out / "timing.json").write_text(json.dumps(timings, indent=2, sort_keys=True) + "\n")
    return report
