import hashlib

import numpy as np
import pytest

from hotspot.errors import InvalidConfig, UnknownPreset
from hotspot.ingest import consistency_check
from hotspot.schema import Plane
from hotspot.synth import SynthConfig, generate, preset, preset_names, read_labels


def _digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def test_presets():
    assert preset("separable").affected_fraction == 0.08
    assert set(preset_names()) == {"separable", "hard", "paper-scale"}
    big = preset("paper-scale")
    assert big.n_users * big.n_windows == 252_325
    with pytest.raises(UnknownPreset):
        preset("nope")


@pytest.mark.parametrize("bad", [
    {"affected_fraction": 1.5},
    {"n_users": 0},
    {"window_s": 0},
    {"event_start_s": 100, "event_end_s": 50},
    {"latency_shift_ms": -1.0},
])
def test_invalid_config(bad):
    with pytest.raises(InvalidConfig):
        SynthConfig(**bad).validate()


def test_same_seed_identical_files(tmp_path):
    cfg = SynthConfig(n_users=40, span_s=1800, seed=3)
    generate(cfg).write(tmp_path / "a")
    generate(cfg).write(tmp_path / "b")
    for name in ("cp.csv", "up.csv", "labels.csv", "truth.json"):
        assert _digest(tmp_path / "a" / name) == _digest(tmp_path / "b" / name)
    generate(SynthConfig(n_users=40, span_s=1800, seed=4)).write(tmp_path / "c")
    assert _digest(tmp_path / "a" / "up.csv") != _digest(tmp_path / "c" / "up.csv")


def test_label_count_and_read_back(tmp_path):
    ds = generate(SynthConfig(n_users=100, span_s=600))
    assert sum(ds.labels.values()) == 8
    ds.write(tmp_path)
    assert read_labels(tmp_path / "labels.csv") == ds.labels


def test_every_window_has_up_records():
    cfg = SynthConfig(n_users=30, span_s=1500)
    ds = generate(cfg)
    starts = (ds.up["timestamp"] - cfg.start_ms) // (cfg.window_s * 1000)
    per_user = ds.up.assign(w=starts).groupby("user_id")["w"].nunique()
    assert (per_user == cfg.n_windows).all()


def test_clean_output_passes_checks(registry):
    ds = generate(SynthConfig(n_users=50, span_s=1200))
    for plane, df in ((Plane.CP, ds.cp), (Plane.UP, ds.up)):
        _, report = consistency_check(df, registry, plane)
        assert report.rows_kept == len(df)


def test_dirty_mode_injects_defects(registry):
    ds = generate(SynthConfig(n_users=60, span_s=1200, dirty_rate=0.05, missing_rate=0.02))
    _, cp_report = consistency_check(ds.cp, registry, Plane.CP)
    _, up_report = consistency_check(ds.up, registry, Plane.UP)
    assert cp_report.rows_invalid > 0 and cp_report.rows_duplicate > 0
    assert up_report.rows_erroneous > 0
    assert ds.up["spendtime"].isna().any()


def test_no_affected_users_identical_populations():
    ds = generate(SynthConfig(n_users=600, affected_fraction=0.0, span_s=1800))
    assert sum(ds.labels.values()) == 0
    cfg = SynthConfig()
    assert abs(ds.up["tcp_link_ack_time"].mean() - cfg.latency_mean_ms) < 0.05 * cfg.latency_mean_ms


def test_latency_shift_during_event():
    cfg = SynthConfig(n_users=500, span_s=3600)
    ds = generate(cfg)
    affected = ds.up["user_id"].map(ds.labels) == 1
    gap = ds.up.loc[affected, "tcp_link_ack_time"].mean() - ds.up.loc[~affected, "tcp_link_ack_time"].mean()
    assert abs(gap - cfg.latency_shift_ms) <= 0.1 * cfg.latency_shift_ms


def test_degradation_only_inside_event():
    cfg = SynthConfig(n_users=300, span_s=3600, event_start_s=1800, affected_fraction=0.2)
    ds = generate(cfg)
    affected = ds.up["user_id"].map(ds.labels) == 1
    before = ds.up["timestamp"] < cfg.start_ms + 1_800_000
    early_gap = (ds.up.loc[affected & before, "tcp_link_ack_time"].mean()
                 - ds.up.loc[~affected & before, "tcp_link_ack_time"].mean())
    late_gap = (ds.up.loc[affected & ~before, "tcp_link_ack_time"].mean()
                - ds.up.loc[~affected & ~before, "tcp_link_ack_time"].mean())
    assert abs(early_gap) < 5.0
    assert late_gap > 0.8 * cfg.latency_shift_ms


def test_cp_silence_rate():
    cfg = SynthConfig(n_users=400, span_s=3600, cp_rate=50.0)  # high rate: nearly every non-silent window has CP
    ds = generate(cfg)
    w = (ds.cp["timestamp"] - cfg.start_ms) // (cfg.window_s * 1000)
    active = ds.cp.assign(w=w).groupby("user_id")["w"].nunique()
    aff = [u for u, lab in ds.labels.items() if lab]
    silent_share = 1 - active.reindex(aff, fill_value=0).mean() / cfg.n_windows
    assert silent_share == pytest.approx(cfg.cp_silence_prob, abs=0.05)


def test_sorted_output():
    ds = generate(SynthConfig(n_users=20, span_s=900))
    for df in (ds.cp, ds.up):
        keys = list(zip(df["timestamp"], df["user_id"]))
        assert keys == sorted(keys)
