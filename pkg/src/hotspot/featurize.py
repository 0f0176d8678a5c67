"""Per-(user, window) feature extraction.

Every row of the feature matrix describes one user during one tumbling,
epoch-aligned window. The row holds

* per-code counts of each enumerated and derived field (sums of one-hot
  vectors) plus the number of records per plane,
* max/min/mean/std/median/sum of each numeric field,
* backward first and second differences of all of the above against the
  user's previous windows.

Absent windows between two observed windows of the same user count as empty
(all-zero aggregates) when differencing; they do not produce rows.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from .errors import DomainViolation, MissingLabel, TooShort
from .schema import DerivedFieldSpec, FieldSpec, Plane, SchemaRegistry

STATS = ("max", "min", "mean", "std", "median", "sum")
DIFFS = ("d1", "d2")
DEFAULT_WINDOW_S = 300


def one_hot(spec: FieldSpec | DerivedFieldSpec, value) -> np.ndarray:
    """Indicator vector over ``spec.domain``; missing values encode as all zeros."""
    if not spec.is_enumerated:
        raise TypeError(f"{spec.name} is not enumerated")
    vec = np.zeros(len(spec.domain), dtype=np.int64)
    if value is None or (isinstance(value, float) and np.isnan(value)):
        return vec
    try:
        vec[spec.domain.index(str(value))] = 1
    except ValueError:
        raise DomainViolation(f"{value!r} not in domain of {spec.name}") from None
    return vec


def window_start(timestamp_ms, length_s: int):
    """Start (epoch ms) of the tumbling window containing ``timestamp_ms``."""
    length_ms = int(length_s) * 1000
    return (np.asarray(timestamp_ms, dtype=np.int64) // length_ms) * length_ms


# -- column naming ---------------------------------------------------------------

def count_column(plane: Plane | str, field: str, code: str) -> str:
    return f"{Plane(plane).value}_{field}={code}"


def record_count_column(plane: Plane | str) -> str:
    return f"{Plane(plane).value}_record_count"


def stat_column(plane: Plane | str, field: str, stat: str) -> str:
    return f"{Plane(plane).value}_{field}__{stat}"


def _categorical_specs(registry: SchemaRegistry, plane: Plane | str) -> list:
    return registry.enumerated(plane) + registry.derived_for(plane)


def plane_columns(registry: SchemaRegistry, plane: Plane | str) -> list[str]:
    """Aggregate columns for one plane, before differencing."""
    cols = [count_column(plane, s.name, c) for s in _categorical_specs(registry, plane) for c in s.domain]
    cols.append(record_count_column(plane))
    cols += [stat_column(plane, s.name, st) for s in registry.numeric(plane) for st in STATS]
    return cols


def base_columns(registry: SchemaRegistry) -> list[str]:
    return plane_columns(registry, Plane.CP) + plane_columns(registry, Plane.UP)


def feature_columns(registry: SchemaRegistry) -> list[str]:
    base = base_columns(registry)
    return base + [f"{c}__{d}" for d in DIFFS for c in base]


def column_provenance(registry: SchemaRegistry) -> list[dict]:
    """One entry per feature column: source field, transform and difference order."""
    base = []
    for plane in Plane:
        for spec in _categorical_specs(registry, plane):
            for code in spec.domain:
                base.append({"name": count_column(plane, spec.name, code), "plane": plane.value,
                             "source": spec.name, "transform": "count", "code": code})
        base.append({"name": record_count_column(plane), "plane": plane.value,
                     "source": None, "transform": "record_count"})
        for spec in registry.numeric(plane):
            for st in STATS:
                base.append({"name": stat_column(plane, spec.name, st), "plane": plane.value,
                             "source": spec.name, "transform": st})
    out = [{**entry, "diff": 0} for entry in base]
    for order, d in enumerate(DIFFS, start=1):
        out += [{**entry, "name": f"{entry['name']}__{d}", "diff": order} for entry in base]
    return out


# -- per-window reference path ---------------------------------------------------

@dataclass
class Window:
    user_id: str
    window_start: int
    length_s: int
    plane: Plane
    records: pd.DataFrame


def slice_windows(records: pd.DataFrame, length_s: int = DEFAULT_WINDOW_S, plane: Plane | str = Plane.UP) -> list[Window]:
    """Group one plane's records into (user, window) buckets, sorted by key."""
    if length_s <= 0:
        raise ValueError("window length must be positive")
    starts = window_start(records["timestamp"].to_numpy(), length_s)
    windows = []
    groups = records.groupby([records["user_id"].to_numpy(), starts], sort=True).groups
    for (uid, ws), idx in sorted(groups.items()):
        windows.append(Window(uid, int(ws), length_s, Plane(plane), records.loc[idx]))
    return windows


def aggregate_categorical(window: Window, registry: SchemaRegistry) -> dict[str, float]:
    """Summed one-hot vectors of every enumerated/derived field plus the record count."""
    out: dict[str, float] = {}
    for spec in _categorical_specs(registry, window.plane):
        total = np.zeros(len(spec.domain), dtype=np.int64)
        if spec.name in window.records:
            for value in window.records[spec.name]:
                total += one_hot(spec, value)
        for code, n in zip(spec.domain, total):
            out[count_column(window.plane, spec.name, code)] = float(n)
    out[record_count_column(window.plane)] = float(len(window.records))
    return out


def six_stats(values: Sequence[float]) -> tuple[float, ...]:
    """(max, min, mean, population std, median, sum); all zeros for no values."""
    v = np.sort(np.asarray(values, dtype=np.float64))
    n = len(v)
    if n == 0:
        return (0.0,) * 6
    mean = v.mean()
    mid = n // 2
    median = v[mid] if n % 2 else (v[mid - 1] + v[mid]) / 2
    return (float(v[-1]), float(v[0]), float(mean), float(np.sqrt(np.mean((v - mean) ** 2))),
            float(median), float(v.sum()))


def aggregate_numeric(window: Window, registry: SchemaRegistry) -> dict[str, float]:
    out: dict[str, float] = {}
    for spec in registry.numeric(window.plane):
        values = window.records[spec.name].to_numpy(dtype=np.float64) if len(window.records) else []
        for st, val in zip(STATS, six_stats(values)):
            out[stat_column(window.plane, spec.name, st)] = val
    return out


# -- bulk path -------------------------------------------------------------------

def aggregate_plane(records: pd.DataFrame, registry: SchemaRegistry, plane: Plane | str,
                    length_s: int = DEFAULT_WINDOW_S) -> pd.DataFrame:
    """All per-window aggregates of one plane, indexed by (user_id, window_start)."""
    plane = Plane(plane)
    columns = plane_columns(registry, plane)
    if len(records) == 0:
        index = pd.MultiIndex.from_arrays([[], np.array([], dtype=np.int64)], names=["user_id", "window_start"])
        return pd.DataFrame(np.zeros((0, len(columns))), index=index, columns=columns)

    starts = window_start(records["timestamp"].to_numpy(), length_s)
    keys = pd.DataFrame({"user_id": records["user_id"].to_numpy(), "window_start": starts})
    grouper = keys.groupby(["user_id", "window_start"], sort=True)
    gid = grouper.ngroup().to_numpy()
    index = pd.MultiIndex.from_frame(grouper.size().reset_index()[["user_id", "window_start"]])
    n_groups = len(index)

    blocks = []
    for spec in _categorical_specs(registry, plane):
        col = records[spec.name]
        codes = pd.Categorical(col, categories=list(spec.domain)).codes.astype(np.int64)
        outside = (codes < 0) & col.notna().to_numpy()
        if outside.any():
            raise DomainViolation(f"{spec.name}: value {col[outside].iloc[0]!r} outside domain")
        d = len(spec.domain)
        ok = codes >= 0
        counts = np.bincount(gid[ok] * d + codes[ok], minlength=n_groups * d).reshape(n_groups, d)
        blocks.append(counts.astype(np.float64))
    blocks.append(np.bincount(gid, minlength=n_groups).astype(np.float64)[:, None])

    numeric = [s.name for s in registry.numeric(plane)]
    if numeric:
        g = records[numeric].groupby(gid, sort=True)
        per_stat = [g.max(), g.min(), g.mean(), g.std(ddof=0), g.median(), g.sum()]
        stacked = np.stack([s.to_numpy(dtype=np.float64) for s in per_stat], axis=2)
        blocks.append(stacked.reshape(n_groups, len(numeric) * len(STATS)))

    return pd.DataFrame(np.hstack(blocks), index=index, columns=columns)


def join_planes(cp_rows: pd.DataFrame, up_rows: pd.DataFrame) -> pd.DataFrame:
    """Full outer join on (user_id, window_start); a missing side is zero-filled."""
    joined = pd.concat([cp_rows, up_rows], axis=1, join="outer").fillna(0.0)
    return joined.sort_index(kind="mergesort")


# -- differencing ----------------------------------------------------------------

def diff1(series) -> np.ndarray:
    """First difference: out[t] = y[t+1] - y[t]."""
    y = np.asarray(series, dtype=np.float64)
    if len(y) < 2:
        raise TooShort("first difference needs at least 2 points")
    return y[1:] - y[:-1]


def diff2(series) -> np.ndarray:
    """Second difference, the first difference applied twice."""
    y = np.asarray(series, dtype=np.float64)
    if len(y) < 3:
        raise TooShort("second difference needs at least 3 points")
    return diff1(diff1(y))


def gap_fill(window_index: Sequence[int], values: Sequence[float]) -> np.ndarray:
    """Dense series over consecutive window indices; absent windows become 0."""
    idx = np.asarray(window_index, dtype=np.int64)
    out = np.zeros(idx.max() - idx.min() + 1 if len(idx) else 0)
    out[idx - idx.min()] = values
    return out


def _history_rows(user_ids: np.ndarray, window_idx: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Row positions of each row's window t-1 and t-2 (``n`` when absent) and its age."""
    n = len(window_idx)
    lookup = pd.Series(np.arange(n), index=pd.MultiIndex.from_arrays([user_ids, window_idx]))

    def position(k):
        pos = lookup.reindex(pd.MultiIndex.from_arrays([user_ids, window_idx - k])).to_numpy()
        return np.where(np.isnan(pos), n, pos).astype(np.int64)

    first = pd.Series(window_idx).groupby(pd.Series(user_ids)).transform("min").to_numpy()
    return position(1), position(2), window_idx - first


def backward_diffs(user_ids: np.ndarray, window_idx: np.ndarray, values: np.ndarray,
                   out: np.ndarray | None = None, block: int = 32) -> tuple[np.ndarray, np.ndarray]:
    """Row-aligned first and second differences of each user's gap-filled series.

    Rows must be sorted by (user, window). The value at row t is
    y[t] - y[t-1] (first) and (y[t] - y[t-1]) - (y[t-1] - y[t-2]) (second),
    zero where the user has no earlier window to difference against. With
    ``out`` of shape (n, 2p) the results are written into it column block by
    column block, which bounds temporary memory on large inputs.
    """
    n, p = values.shape
    if out is None:
        out = np.zeros((n, 2 * p))
    d1, d2 = out[:, :p], out[:, p:]
    if n == 0:
        return d1, d2
    pos1, pos2, age = _history_rows(user_ids, window_idx)
    has1, has2 = age >= 1, age >= 2
    for lo in range(0, p, block):
        cols = slice(lo, min(lo + block, p))
        v = values[:, cols]
        padded = np.vstack([v, np.zeros((1, v.shape[1]))])
        prev1, prev2 = padded[pos1], padded[pos2]
        step = v - prev1
        d1[:, cols] = np.where(has1[:, None], step, 0.0)
        d2[:, cols] = np.where(has2[:, None], step - (prev1 - prev2), 0.0)
    return d1, d2


# -- feature matrix ---------------------------------------------------------------

@dataclass
class WindowRow:
    user_id: str
    window_start: int
    values: np.ndarray
    label: int | None = None


@dataclass
class FeatureMatrix:
    columns: list[str]
    user_id: np.ndarray
    window_start: np.ndarray
    X: np.ndarray
    y: np.ndarray | None = None

    def __post_init__(self):
        self.user_id = np.asarray(self.user_id, dtype=object)
        self.window_start = np.asarray(self.window_start, dtype=np.int64)
        self.X = np.asarray(self.X, dtype=np.float64).reshape(len(self.user_id), len(self.columns))
        if self.y is not None:
            self.y = np.asarray(self.y, dtype=np.int64)
            if len(self.y) != len(self.X):
                raise ValueError("label count differs from row count")

    def __len__(self) -> int:
        return len(self.X)

    def row(self, i: int) -> WindowRow:
        label = None if self.y is None else int(self.y[i])
        return WindowRow(self.user_id[i], int(self.window_start[i]), self.X[i], label)

    def take(self, rows) -> FeatureMatrix:
        rows = np.asarray(rows)
        return FeatureMatrix(
            list(self.columns), self.user_id[rows], self.window_start[rows], self.X[rows],
            None if self.y is None else self.y[rows],
        )

    def to_frame(self) -> pd.DataFrame:
        df = pd.DataFrame(self.X, columns=self.columns)
        df.insert(0, "window_start", self.window_start)
        df.insert(0, "user_id", self.user_id)
        if self.y is not None:
            df["label"] = self.y
        return df

    @classmethod
    def from_frame(cls, df: pd.DataFrame) -> FeatureMatrix:
        columns = [c for c in df.columns if c not in ("user_id", "window_start", "label")]
        y = None
        if "label" in df.columns and df["label"].notna().all():
            y = df["label"].to_numpy(dtype=np.int64)
        return cls(columns, df["user_id"].astype(str).to_numpy(dtype=object),
                   df["window_start"].to_numpy(dtype=np.int64), df[columns].to_numpy(dtype=np.float64), y)

    def write_csv(self, path: str | os.PathLike, chunk_rows: int = 4096) -> None:
        """Shortest round-trip repr per float; integral columns print as integers."""
        header = ["user_id", "window_start", *self.columns] + (["label"] if self.y is not None else [])
        integral = np.all((self.X == np.round(self.X)) & (np.abs(self.X) < 2**53), axis=0)
        with open(path, "w", newline="") as fh:
            fh.write(",".join(header) + "\n")
            for lo in range(0, len(self), chunk_rows):
                part = slice(lo, lo + chunk_rows)
                X = self.X[part]
                cols = [list(map(str, self.user_id[part])), list(map(str, self.window_start[part].tolist()))]
                for j in range(X.shape[1]):
                    col = X[:, j]
                    cols.append(list(map(str, col.astype(np.int64).tolist())) if integral[j]
                                else list(map(repr, col.tolist())))
                if self.y is not None:
                    cols.append(list(map(str, self.y[part].tolist())))
                fh.writelines(",".join(row) + "\n" for row in zip(*cols))

    @classmethod
    def read_csv(cls, path: str | os.PathLike) -> FeatureMatrix:
        df = pd.read_csv(path, dtype={"user_id": str}, float_precision="round_trip")
        return cls.from_frame(df)


def build_matrix(
    cp_records: pd.DataFrame,
    up_records: pd.DataFrame,
    registry: SchemaRegistry,
    window_s: int = DEFAULT_WINDOW_S,
    labels: Mapping[str, int] | None = None,
) -> FeatureMatrix:
    """Feature matrix from cleaned (imputed, derived) record tables of both planes."""
    joined = join_planes(
        aggregate_plane(cp_records, registry, Plane.CP, window_s),
        aggregate_plane(up_records, registry, Plane.UP, window_s),
    )
    base = base_columns(registry)
    user_ids = joined.index.get_level_values("user_id").to_numpy(dtype=object)
    starts = joined.index.get_level_values("window_start").to_numpy(dtype=np.int64)
    X = np.empty((len(joined), 3 * len(base)))
    X[:, : len(base)] = joined[base].to_numpy(dtype=np.float64)
    del joined
    backward_diffs(user_ids, starts // (int(window_s) * 1000), X[:, : len(base)], out=X[:, len(base):])

    y = None
    if labels is not None:
        missing = sorted(set(user_ids) - set(labels))
        if missing:
            raise MissingLabel(f"no label for users {missing[:5]}{'...' if len(missing) > 5 else ''}")
        y = np.array([int(labels[u]) for u in user_ids], dtype=np.int64)
    return FeatureMatrix(feature_columns(registry), user_ids, starts, X, y)


def write_columns_json(registry: SchemaRegistry, path: str | os.PathLike) -> None:
    with open(path, "w") as fh:
        json.dump(column_provenance(registry), fh, indent=2)
        fh.write("\n")
