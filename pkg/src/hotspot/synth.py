"""Seeded generator of labelled CP/UP record streams.

Normal users produce control-plane procedures and user-plane sessions at a
steady rate. Affected users, inside the event interval, fail and time out
more often, see longer TCP handshake and transaction times, upload less and
go silent on the control plane for whole windows. All parameters below are
constructed for testing; none are measured values.
"""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import InvalidConfig, UnknownPreset
from .ingest import empty_records, plane_columns
from .schema import Plane, SchemaRegistry, default_schema

# 2020-01-01T00:00:00Z
DEFAULT_START_MS = 1_577_836_800_000

_PROBABILITIES = (
    "affected_fraction", "complaint_fraction", "failure_prob", "timeout_prob", "paging_failure_prob",
    "erab_release_prob", "affected_failure_prob", "affected_timeout_prob",
    "affected_paging_failure_prob", "affected_erab_release_prob", "cp_silence_prob",
    "complaint_failure_prob", "complaint_timeout_prob", "dirty_rate", "missing_rate",
)


@dataclass(frozen=True)
class SynthConfig:
    n_users: int = 1000
    affected_fraction: float = 0.08
    complaint_fraction: float = 0.0
    start_ms: int = DEFAULT_START_MS
    span_s: int = 7200
    window_s: int = 300
    event_start_s: int = 0
    event_end_s: int | None = None
    cp_rate: float = 3.0
    up_rate: float = 4.0
    failure_prob: float = 0.03
    timeout_prob: float = 0.01
    paging_failure_prob: float = 0.02
    erab_release_prob: float = 0.1
    affected_failure_prob: float = 0.12
    affected_timeout_prob: float = 0.06
    affected_paging_failure_prob: float = 0.3
    affected_erab_release_prob: float = 0.35
    cp_silence_prob: float = 0.8
    complaint_failure_prob: float = 0.08
    complaint_timeout_prob: float = 0.03
    latency_mean_ms: float = 60.0
    latency_shift_ms: float = 40.0
    spendtime_mean_ms: float = 400.0
    spendtime_shift_ms: float = 250.0
    gamma_shape: float = 4.0
    upload_traffic_mean: float = 20_000.0
    download_traffic_mean: float = 250_000.0
    affected_upload_factor: float = 0.6
    dirty_rate: float = 0.0
    missing_rate: float = 0.0
    seed: int = 0

    @property
    def n_windows(self) -> int:
        return self.span_s // self.window_s

    @property
    def event_end(self) -> int:
        return self.span_s if self.event_end_s is None else self.event_end_s

    @property
    def n_affected(self) -> int:
        return int(np.floor(self.affected_fraction * self.n_users + 1e-9))

    def validate(self) -> SynthConfig:
        problems = []
        for name in _PROBABILITIES:
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                problems.append(f"{name}={v} outside [0, 1]")
        if self.affected_fraction + self.complaint_fraction > 1:
            problems.append("affected_fraction + complaint_fraction exceeds 1")
        if self.failure_prob + self.timeout_prob > 1 or self.affected_failure_prob + self.affected_timeout_prob > 1:
            problems.append("failure + timeout probability exceeds 1")
        if self.n_users < 1:
            problems.append("n_users must be >= 1")
        if self.window_s <= 0 or self.span_s < self.window_s:
            problems.append("need window_s > 0 and span_s >= window_s")
        if not 0 <= self.event_start_s <= self.event_end <= self.span_s:
            problems.append("event interval must lie within the span")
        if self.latency_shift_ms <= 0 or self.spendtime_shift_ms < 0:
            problems.append("affected latency must exceed normal latency")
        if self.cp_rate < 0 or self.up_rate < 0 or self.gamma_shape <= 0:
            problems.append("rates must be >= 0 and gamma_shape > 0")
        if problems:
            raise InvalidConfig("; ".join(problems))
        return self

    @classmethod
    def from_dict(cls, d: dict) -> SynthConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise InvalidConfig(f"unknown synth parameters: {sorted(unknown)}")
        return cls(**d)


_PRESETS = {
    "separable": SynthConfig(),
    "hard": SynthConfig(
        complaint_fraction=0.05,
        affected_failure_prob=0.08,
        affected_timeout_prob=0.03,
        affected_paging_failure_prob=0.06,
        affected_erab_release_prob=0.15,
        cp_silence_prob=0.2,
        latency_shift_ms=15.0,
        spendtime_shift_ms=80.0,
        affected_upload_factor=0.85,
    ),
    # 10093 users x 25 windows = 252325 feature rows
    "paper-scale": SynthConfig(n_users=10_093, span_s=7500),
}


def preset(name: str) -> SynthConfig:
    try:
        return _PRESETS[name]
    except KeyError:
        raise UnknownPreset(f"unknown preset {name!r}; choose from {sorted(_PRESETS)}") from None


def preset_names() -> list[str]:
    return sorted(_PRESETS)


@dataclass
class LabeledDataset:
    cp: pd.DataFrame
    up: pd.DataFrame
    labels: dict[str, int]
    config: SynthConfig

    def write(self, out_dir: str | os.PathLike, registry: SchemaRegistry | None = None) -> None:
        registry = registry or default_schema()
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        self.cp[plane_columns(registry, Plane.CP)].to_csv(out / "cp.csv", index=False, lineterminator="\n")
        self.up[plane_columns(registry, Plane.UP)].to_csv(out / "up.csv", index=False, lineterminator="\n")
        pd.DataFrame({"user_id": list(self.labels), "label": list(self.labels.values())}).to_csv(
            out / "labels.csv", index=False, lineterminator="\n")
        (out / "truth.json").write_text(json.dumps(asdict(self.config), indent=2, sort_keys=True) + "\n")


def read_labels(path: str | os.PathLike) -> dict[str, int]:
    df = pd.read_csv(path, dtype={"user_id": str})
    return dict(zip(df["user_id"], df["label"].astype(int)))


def _gamma(rng, mean, shape, size):
    return rng.gamma(shape, np.asarray(mean, dtype=np.float64) / shape, size=size)


def _status_codes(rng, fail_p, timeout_p):
    u = rng.random(len(fail_p))
    return np.where(u < fail_p, "1", np.where(u < fail_p + timeout_p, "255", "0"))


def _user_records(cfg: SynthConfig, uid: str, kind: str, rng: np.random.Generator) -> tuple[dict, dict]:
    """Column dicts of one user's CP and UP records. ``kind`` is normal/affected/complaint."""
    n_w = cfg.n_windows
    window_ms = cfg.window_s * 1000
    w_start = np.arange(n_w) * cfg.window_s
    in_event = (w_start >= cfg.event_start_s) & (w_start < cfg.event_end)
    degraded = in_event & (kind == "affected")

    n_cp = rng.poisson(cfg.cp_rate, size=n_w)
    silent = degraded & (rng.random(n_w) < cfg.cp_silence_prob)
    n_cp[silent] = 0
    n_up = 1 + rng.poisson(cfg.up_rate, size=n_w)

    # control plane
    w_cp = np.repeat(np.arange(n_w), n_cp)
    m = len(w_cp)
    deg = degraded[w_cp]
    fail_p = np.full(m, cfg.complaint_failure_prob if kind == "complaint" else cfg.failure_prob)
    to_p = np.full(m, cfg.complaint_timeout_prob if kind == "complaint" else cfg.timeout_prob)
    fail_p[deg] = cfg.affected_failure_prob
    to_p[deg] = cfg.affected_timeout_prob
    status = _status_codes(rng, fail_p, to_p)
    cause_when_failed = np.where(
        deg, rng.choice(["1", "2", "3"], size=m, p=[0.5, 0.2, 0.3]), rng.choice(["1", "2", "3"], size=m, p=[0.2, 0.4, 0.4])
    )
    cp = {
        "user_id": np.full(m, uid, dtype=object),
        "timestamp": cfg.start_ms + w_cp.astype(np.int64) * window_ms + rng.integers(0, window_ms, size=m),
        "procedure_type": rng.choice(["1", "2", "3"], size=m, p=[0.15, 0.65, 0.2]),
        "procedure_status": status,
        "request_cause": rng.choice(["0", "1", "2", "3"], size=m, p=[0.5, 0.3, 0.19, 0.01]),
        "failure_cause": np.where(status == "0", "0", cause_when_failed),
        "paging_result": np.where(
            rng.random(m) < np.where(deg, cfg.affected_paging_failure_prob, cfg.paging_failure_prob), "1", "0"),
        "erab_release_flag": np.where(
            rng.random(m) < np.where(deg, cfg.affected_erab_release_prob, cfg.erab_release_prob), "1", "0"),
    }

    # user plane
    w_up = np.repeat(np.arange(n_w), n_up)
    k = len(w_up)
    deg = degraded[w_up]
    slow = np.where(deg, 1.0, 0.0)
    shape = cfg.gamma_shape
    ack = _gamma(rng, cfg.latency_mean_ms + slow * cfg.latency_shift_ms, shape, k)
    spend = _gamma(rng, cfg.spendtime_mean_ms + slow * cfg.spendtime_shift_ms, shape, k)
    up_factor = np.where(deg, cfg.affected_upload_factor, 1.0)
    upload = _gamma(rng, cfg.upload_traffic_mean * up_factor, 2.0, k)
    download = _gamma(rng, cfg.download_traffic_mean * up_factor, 2.0, k)
    up = {
        "user_id": np.full(k, uid, dtype=object),
        "timestamp": cfg.start_ms + w_up.astype(np.int64) * window_ms + rng.integers(0, window_ms, size=k),
        "app_type_code": rng.choice([str(i) for i in range(1, 9)], size=k),
        "app_type_whole": rng.choice([str(i) for i in range(1, 16, 2)], size=k),
        "l4_protocol": rng.choice(["1", "2"], size=k, p=[0.8, 0.2]),
        "upload_traffic": np.round(upload),
        "download_traffic": np.round(download),
        "tcp_link_ack_time": np.round(ack, 1),
        "spendtime": np.round(spend, 1),
        "window_size": np.round(_gamma(rng, 48_000.0, 3.0, k)),
        "tcp_syn_num": 1.0 + rng.poisson(0.2, size=k),
        "upload_ip_packets": np.round(upload / 900.0) + 1,
        "download_ip_packets": np.round(download / 1200.0) + 1,
        "tcp_response_time": np.round(_gamma(rng, 40.0, shape, k), 1),
        "first_packet_time": np.round(_gamma(rng, 120.0, shape, k), 1),
        "dns_response_time": np.round(_gamma(rng, 30.0, shape, k), 1),
        "http_response_time": np.round(_gamma(rng, 200.0, shape, k), 1),
        "upload_rtt": np.round(_gamma(rng, 45.0, shape, k), 1),
        "download_rtt": np.round(_gamma(rng, 40.0, shape, k), 1),
        "upload_retrans_packets": rng.poisson(1.0, size=k).astype(np.float64),
        "download_retrans_packets": rng.poisson(2.0, size=k).astype(np.float64),
        "upload_disorder_packets": rng.poisson(0.5, size=k).astype(np.float64),
        "download_disorder_packets": rng.poisson(0.8, size=k).astype(np.float64),
        "tcp_syn_ack_num": rng.poisson(1.0, size=k).astype(np.float64),
        "tcp_rst_num": rng.poisson(0.1, size=k).astype(np.float64),
        "session_duration": np.round(_gamma(rng, 15_000.0, 2.0, k), 1),
    }
    return cp, up


def _frame(parts: list[dict], registry: SchemaRegistry, plane: Plane) -> pd.DataFrame:
    parts = [p for p in parts if len(p["user_id"])]
    if not parts:
        return empty_records(registry, plane)
    cols = plane_columns(registry, plane)
    data = {c: np.concatenate([p[c] for p in parts]) for c in cols}
    df = pd.DataFrame(data)
    df["timestamp"] = df["timestamp"].astype(np.int64)
    for spec in registry.numeric(plane):
        df[spec.name] = df[spec.name].astype(np.float64)
    return df.sort_values(["timestamp", "user_id"], kind="mergesort").reset_index(drop=True)


def _make_dirty(df: pd.DataFrame, registry: SchemaRegistry, plane: Plane, cfg: SynthConfig,
                rng: np.random.Generator) -> pd.DataFrame:
    df = df.copy()
    n = len(df)
    if n == 0:
        return df
    if cfg.missing_rate > 0:
        for spec in registry.fields(plane):
            hole = rng.random(n) < cfg.missing_rate
            df.loc[hole, spec.name] = None if spec.is_enumerated else np.nan
    if cfg.dirty_rate > 0:
        hit = np.flatnonzero(rng.random(n) < cfg.dirty_rate)
        kinds = rng.integers(0, 3, size=len(hit))
        enum_spec = registry.enumerated(plane)[1 if plane is Plane.CP else 2]
        numeric = registry.numeric(plane)
        # 0: out-of-domain code, 1: negative volume (CP has none), 2: duplicate
        for row, kind in zip(hit, kinds):
            if kind == 1 and numeric:
                df.at[row, numeric[0].name] = -5.0
            elif kind != 2:
                df.at[row, enum_spec.name] = "7" if "7" not in enum_spec.domain else "99"
        dup_rows = hit[kinds == 2]
        if len(dup_rows):
            df = pd.concat([df, df.iloc[dup_rows]], ignore_index=True)
            df = df.sort_values(["timestamp", "user_id"], kind="mergesort").reset_index(drop=True)
    return df


def generate(config: SynthConfig, registry: SchemaRegistry | None = None) -> LabeledDataset:
    """Deterministic dataset for ``config``; every user gets a substream of the seed."""
    cfg = config.validate()
    registry = registry or default_schema()
    master = np.random.SeedSequence(cfg.seed)
    pick_seq, dirty_seq, user_seq = master.spawn(3)
    pick = np.random.default_rng(pick_seq)

    user_ids = [f"U{i:06d}" for i in range(cfg.n_users)]
    order = pick.permutation(cfg.n_users)
    n_aff = cfg.n_affected
    n_comp = int(np.floor(cfg.complaint_fraction * cfg.n_users + 1e-9))
    kinds = np.full(cfg.n_users, "normal", dtype=object)
    kinds[order[:n_aff]] = "affected"
    kinds[order[n_aff:n_aff + n_comp]] = "complaint"

    cp_parts, up_parts = [], []
    for uid, kind, seq in zip(user_ids, kinds, user_seq.spawn(cfg.n_users)):
        cp, up = _user_records(cfg, uid, kind, np.random.default_rng(seq))
        cp_parts.append(cp)
        up_parts.append(up)

    cp_df = _frame(cp_parts, registry, Plane.CP)
    up_df = _frame(up_parts, registry, Plane.UP)
    if cfg.dirty_rate > 0 or cfg.missing_rate > 0:
        dirty_rng = np.random.default_rng(dirty_seq)
        cp_df = _make_dirty(cp_df, registry, Plane.CP, cfg, dirty_rng)
        up_df = _make_dirty(up_df, registry, Plane.UP, cfg, dirty_rng)
    labels = {uid: int(kind == "affected") for uid, kind in zip(user_ids, kinds)}
    return LabeledDataset(cp_df, up_df, labels, cfg)


def with_overrides(config: SynthConfig, **overrides) -> SynthConfig:
    overrides = {k: v for k, v in overrides.items() if v is not None}
    try:
        return replace(config, **overrides)
    except TypeError as exc:
        raise InvalidConfig(str(exc)) from None
