"""Reading and cleaning of per-plane record CSVs.

A record table is a :class:`pandas.DataFrame` holding the records of one plane:
``user_id`` (str), ``timestamp`` (int64 epoch ms), then one column per schema
field of that plane in schema order. Enumerated cells are strings (``None`` when
missing); numeric cells are float64 (``NaN`` when missing).
"""
from __future__ import annotations

import csv
import io
import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import DomainViolation, HeaderMismatch
from .schema import SEPARATOR, FieldSpec, Plane, SchemaRegistry

KEY_COLUMNS = ("user_id", "timestamp")


@dataclass(frozen=True)
class ParseError:
    line_no: int
    reason: str


@dataclass
class IngestReport:
    rows_read: int = 0
    rows_invalid: int = 0
    rows_erroneous: int = 0
    rows_duplicate: int = 0
    rows_kept: int = 0
    imputation_means: dict = field(default_factory=dict)
    all_missing_columns: list = field(default_factory=list)
    parse_errors: int = 0

    def reconciles(self) -> bool:
        return self.rows_read == self.rows_kept + self.rows_invalid + self.rows_erroneous + self.rows_duplicate

    def merge(self, other: IngestReport) -> IngestReport:
        return IngestReport(
            rows_read=self.rows_read + other.rows_read,
            rows_invalid=self.rows_invalid + other.rows_invalid,
            rows_erroneous=self.rows_erroneous + other.rows_erroneous,
            rows_duplicate=self.rows_duplicate + other.rows_duplicate,
            rows_kept=self.rows_kept + other.rows_kept,
            imputation_means={**self.imputation_means, **other.imputation_means},
            all_missing_columns=self.all_missing_columns + other.all_missing_columns,
            parse_errors=self.parse_errors + other.parse_errors,
        )

    def to_dict(self) -> dict:
        return asdict(self)


def plane_columns(registry: SchemaRegistry, plane: Plane | str) -> list[str]:
    return list(KEY_COLUMNS) + [f.name for f in registry.fields(plane)]


def _typed_frame(data: dict, registry: SchemaRegistry, plane: Plane | str) -> pd.DataFrame:
    n = len(data.get("user_id", ()))
    out = {
        "user_id": pd.Series(data.get("user_id", []), dtype=object),
        "timestamp": pd.Series(data.get("timestamp", []), dtype=np.int64),
    }
    for spec in registry.fields(plane):
        raw = data.get(spec.name)
        if spec.is_enumerated:
            if raw is None:
                out[spec.name] = pd.Series([None] * n, dtype=object)
            else:
                out[spec.name] = pd.Series([v if v != "" else None for v in raw], dtype=object)
        else:
            if raw is None:
                out[spec.name] = pd.Series(np.full(n, np.nan))
            else:
                out[spec.name] = pd.to_numeric(pd.Series(raw, dtype=object), errors="coerce").astype(np.float64)
    return pd.DataFrame(out)


def empty_records(registry: SchemaRegistry, plane: Plane | str) -> pd.DataFrame:
    return _typed_frame({}, registry, plane)


def records_from_rows(rows: list[dict], registry: SchemaRegistry, plane: Plane | str) -> pd.DataFrame:
    """Build a record table from dicts; absent keys are missing values."""
    data: dict[str, list] = {c: [] for c in plane_columns(registry, plane)}
    specs = {f.name: f for f in registry.fields(plane)}
    for row in rows:
        unknown = set(row) - set(data)
        if unknown:
            raise HeaderMismatch(f"fields {sorted(unknown)} not in {Plane(plane).value} schema")
        data["user_id"].append(str(row["user_id"]))
        data["timestamp"].append(int(row["timestamp"]))
        for name, spec in specs.items():
            v = row.get(name)
            if spec.is_enumerated:
                data[name].append("" if v is None else str(v))
            else:
                data[name].append(np.nan if v is None else v)
    return _typed_frame(data, registry, plane)


def _open_text(source):
    if isinstance(source, (str, os.PathLike)):
        return open(source, newline="", encoding="utf-8")
    if isinstance(source, bytes):
        return io.StringIO(source.decode("utf-8"), newline="")
    if isinstance(source, io.TextIOBase):
        return source
    return io.TextIOWrapper(source, encoding="utf-8", newline="")


def parse_csv(source, registry: SchemaRegistry, plane: Plane | str) -> tuple[pd.DataFrame, list[ParseError]]:
    """Parse one plane's CSV.

    Unparseable cells become missing values; rows with the wrong number of
    columns, an empty user id or a non-integer timestamp are skipped and
    reported with their line number.
    """
    plane = Plane(plane)
    stream = _open_text(source)
    try:
        reader = csv.reader(stream)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise HeaderMismatch("empty input, header row missing") from None
        missing = [c for c in KEY_COLUMNS if c not in header]
        if missing:
            raise HeaderMismatch(f"required columns absent: {missing}")
        plane_fields = {f.name for f in registry.fields(plane)}
        unknown = [h for h in header if h not in KEY_COLUMNS and h not in plane_fields]
        if unknown:
            raise HeaderMismatch(f"columns not in the {plane.value} schema: {unknown}")
        if len(set(header)) != len(header):
            raise HeaderMismatch("duplicate column names in header")

        width = len(header)
        columns: list[list[str]] = [[] for _ in header]
        errors: list[ParseError] = []
        uid_pos, ts_pos = header.index("user_id"), header.index("timestamp")
        timestamps: list[int] = []
        for row in reader:
            line_no = reader.line_num
            if not row:
                continue
            if len(row) != width:
                errors.append(ParseError(line_no, f"expected {width} columns, got {len(row)}"))
                continue
            try:
                ts = int(row[ts_pos].strip())
            except ValueError:
                errors.append(ParseError(line_no, f"bad timestamp {row[ts_pos]!r}"))
                continue
            if not row[uid_pos].strip():
                errors.append(ParseError(line_no, "empty user_id"))
                continue
            timestamps.append(ts)
            for col, cell in zip(columns, row):
                col.append(cell.strip())
    finally:
        if stream is not source:
            stream.close()

    data = {name: col for name, col in zip(header, columns)}
    data["timestamp"] = timestamps
    return _typed_frame(data, registry, plane), errors


def _invalid_mask(df: pd.DataFrame, specs: list[FieldSpec]) -> np.ndarray:
    bad = np.zeros(len(df), dtype=bool)
    for spec in specs:
        col = df[spec.name]
        bad |= (col.notna() & ~col.isin(spec.domain)).to_numpy()
    return bad


def _erroneous_mask(df: pd.DataFrame, specs: list[FieldSpec]) -> np.ndarray:
    bad = np.zeros(len(df), dtype=bool)
    for spec in specs:
        v = df[spec.name].to_numpy(dtype=np.float64)
        present = ~np.isnan(v)
        bad |= present & ~np.isfinite(v)
        if spec.nonnegative:
            with np.errstate(invalid="ignore"):
                bad |= present & (v < 0)
    return bad


def consistency_check(
    df: pd.DataFrame, registry: SchemaRegistry, plane: Plane | str
) -> tuple[pd.DataFrame, IngestReport]:
    """Drop invalid, erroneous and duplicate records; order of survivors is kept.

    A record failing several checks is counted once, in the order
    invalid > erroneous > duplicate.
    """
    invalid = _invalid_mask(df, registry.enumerated(plane))
    erroneous = _erroneous_mask(df, registry.numeric(plane)) & ~invalid
    ok = ~(invalid | erroneous)
    dup = np.zeros(len(df), dtype=bool)
    if ok.any():
        dup[ok] = df[ok].duplicated(keep="first").to_numpy()
    kept = df[ok & ~dup].reset_index(drop=True)
    report = IngestReport(
        rows_read=len(df),
        rows_invalid=int(invalid.sum()),
        rows_erroneous=int(erroneous.sum()),
        rows_duplicate=int(dup.sum()),
        rows_kept=len(kept),
    )
    return kept, report


def impute_numeric(
    df: pd.DataFrame,
    registry: SchemaRegistry,
    plane: Plane | str,
    means: dict[str, float] | None = None,
) -> tuple[pd.DataFrame, dict[str, float], list[str]]:
    """Fill missing numeric cells with the column mean.

    When ``means`` is given (persisted from training data) those values are
    used instead of recomputing. Columns with no present value at all are
    filled with 0 and returned in the third element.
    """
    out = df.copy()
    used: dict[str, float] = {}
    all_missing: list[str] = []
    for spec in registry.numeric(plane):
        v = out[spec.name].to_numpy(dtype=np.float64)
        missing = np.isnan(v)
        if means is not None and spec.name in means:
            fill = float(means[spec.name])
        elif missing.all():
            fill = 0.0
            all_missing.append(spec.name)
        else:
            fill = float(v[~missing].mean())
        used[spec.name] = fill
        if missing.any():
            v = v.copy()
            v[missing] = fill
            out[spec.name] = v
    return out, used, all_missing


def derive_fields(df: pd.DataFrame, registry: SchemaRegistry, plane: Plane | str) -> pd.DataFrame:
    """Append derived concatenated-code columns for the plane's derived specs."""
    out = df.copy()
    for spec in registry.derived_for(plane):
        a, b = out[spec.source_a], out[spec.source_b]
        both = (a.notna() & b.notna()).to_numpy()
        codes = np.full(len(out), None, dtype=object)
        if both.any():
            joined = a[both].astype(str) + SEPARATOR + b[both].astype(str)
            outside = ~joined.isin(spec.domain)
            if outside.any():
                raise DomainViolation(
                    f"{spec.name}: codes {sorted(set(joined[outside]))[:5]} outside domain"
                )
            codes[both] = joined.to_numpy()
        out[spec.name] = codes
    return out


def clean(
    df: pd.DataFrame,
    registry: SchemaRegistry,
    plane: Plane | str,
    means: dict[str, float] | None = None,
) -> tuple[pd.DataFrame, IngestReport]:
    """Consistency check, imputation and derivation in one pass."""
    kept, report = consistency_check(df, registry, plane)
    kept, used, all_missing = impute_numeric(kept, registry, plane, means)
    report.imputation_means = used
    report.all_missing_columns = all_missing
    return derive_fields(kept, registry, plane), report


def write_records(df: pd.DataFrame, path: str | os.PathLike, registry: SchemaRegistry, plane: Plane | str) -> None:
    """Write a record table in the input layout (derived columns are not written)."""
    df[plane_columns(registry, plane)].to_csv(path, index=False, lineterminator="\n")


def read_clean(path: str | os.PathLike, registry: SchemaRegistry, plane: Plane | str) -> pd.DataFrame:
    """Load a cleaned CSV and re-materialize derived fields."""
    df, errors = parse_csv(path, registry, plane)
    if errors:
        first = errors[0]
        raise HeaderMismatch(f"{path}: line {first.line_no}: {first.reason}")
    return derive_fields(df, registry, plane)


def ingest_dir(
    src: str | os.PathLike,
    dst: str | os.PathLike,
    registry: SchemaRegistry,
    means: dict[str, float] | None = None,
) -> IngestReport:
    """Clean ``cp.csv`` and ``up.csv`` from ``src`` into ``dst``."""
    src, dst = Path(src), Path(dst)
    dst.mkdir(parents=True, exist_ok=True)
    total = IngestReport()
    errors_out = []
    for plane in Plane:
        raw, errors = parse_csv(src / f"{plane.value}.csv", registry, plane)
        cleaned, report = clean(raw, registry, plane, means)
        report.parse_errors = len(errors)
        errors_out += [{"file": f"{plane.value}.csv", "line": e.line_no, "reason": e.reason} for e in errors]
        write_records(cleaned, dst / f"{plane.value}.csv", registry, plane)
        total = total.merge(report)
    (dst / "ingest_report.json").write_text(
        json.dumps({**total.to_dict(), "errors": errors_out}, indent=2, sort_keys=True) + "\n"
    )
    (dst / "imputation_means.json").write_text(json.dumps(total.imputation_means, indent=2, sort_keys=True) + "\n")
    return total
