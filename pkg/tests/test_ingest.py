import json

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import T0, cp_row, csv_text, records, up_row
from hotspot.errors import HeaderMismatch
from hotspot.ingest import (
    clean,
    consistency_check,
    derive_fields,
    impute_numeric,
    ingest_dir,
    parse_csv,
    read_clean,
    write_records,
)
from hotspot.schema import Plane


def test_parse_well_formed(registry):
    rows = [up_row(ts=T0 + i) for i in range(3)]
    df, errors = parse_csv(csv_text(rows, Plane.UP).encode(), registry, Plane.UP)
    assert len(df) == 3
    assert errors == []
    assert df["timestamp"].dtype == np.int64
    assert df["upload_traffic"].tolist() == [1.0, 1.0, 1.0]


def test_parse_empty_numeric_cell(registry):
    df, errors = parse_csv(csv_text([up_row(download_traffic=None)], Plane.UP).encode(), registry, Plane.UP)
    assert not errors
    assert np.isnan(df.loc[0, "download_traffic"])


def test_parse_bad_timestamp(registry):
    text = csv_text([up_row(), up_row(ts="abc"), up_row()], Plane.UP)
    df, errors = parse_csv(text.encode(), registry, Plane.UP)
    assert len(df) == 2
    assert len(errors) == 1
    assert errors[0].line_no == 3


def test_parse_wrong_width(registry):
    text = csv_text([cp_row()], Plane.CP) + "u2,1,2\n"
    df, errors = parse_csv(text.encode(), registry, Plane.CP)
    assert len(df) == 1 and len(errors) == 1


@pytest.mark.parametrize("header", [
    "timestamp,procedure_type\n",
    "user_id,timestamp,upload_traffic\n",
    "user_id,timestamp,procedure_type,procedure_type\n",
    "",
])
def test_parse_bad_header(registry, header):
    with pytest.raises(HeaderMismatch):
        parse_csv(header.encode(), registry, Plane.CP)


def test_partial_header_leaves_fields_missing(registry):
    df, _ = parse_csv(b"user_id,timestamp,procedure_type\nu1,5,2\n", registry, Plane.CP)
    assert df.loc[0, "procedure_type"] == "2"
    assert df.loc[0, "procedure_status"] is None


def test_invalid_code_rejected(registry):
    df = records([cp_row(procedure_status="7"), cp_row(ts=T0 + 1)], Plane.CP)
    kept, report = consistency_check(df, registry, Plane.CP)
    assert report.rows_invalid == 1
    assert len(kept) == 1 and kept.loc[0, "timestamp"] == T0 + 1


def test_negative_traffic_rejected(registry):
    df = records([up_row(upload_traffic=-5.0), up_row(ts=T0 + 1)], Plane.UP)
    kept, report = consistency_check(df, registry, Plane.UP)
    assert report.rows_erroneous == 1
    assert len(kept) == 1


def test_duplicate_keeps_first(registry):
    df = records([cp_row(), cp_row(ts=T0 + 5), cp_row()], Plane.CP)
    kept, report = consistency_check(df, registry, Plane.CP)
    assert report.rows_duplicate == 1
    assert kept["timestamp"].tolist() == [T0, T0 + 5]


def test_rejection_priority(registry):
    # invalid and erroneous at once counts as invalid only
    df = records([up_row(l4_protocol="9", upload_traffic=-1.0)], Plane.UP)
    _, report = consistency_check(df, registry, Plane.UP)
    assert (report.rows_invalid, report.rows_erroneous) == (1, 0)


def test_impute_forced_mean(registry):
    df = records([up_row(ts=T0, upload_traffic=1.0), up_row(ts=T0 + 1, upload_traffic=None),
                  up_row(ts=T0 + 2, upload_traffic=3.0)], Plane.UP)
    out, means, all_missing = impute_numeric(df, registry, Plane.UP)
    assert out["upload_traffic"].tolist() == [1.0, 2.0, 3.0]
    assert means["upload_traffic"] == 2.0
    assert all_missing == []


def test_impute_all_present_unchanged(registry):
    df = records([up_row(ts=T0 + i, spendtime=float(i)) for i in range(4)], Plane.UP)
    out, means, _ = impute_numeric(df, registry, Plane.UP)
    pd.testing.assert_frame_equal(out, df)
    assert means["spendtime"] == 1.5


def test_impute_all_missing(registry):
    df = records([up_row(ts=T0 + i, spendtime=None) for i in range(3)], Plane.UP)
    out, means, all_missing = impute_numeric(df, registry, Plane.UP)
    assert out["spendtime"].tolist() == [0.0, 0.0, 0.0]
    assert all_missing == ["spendtime"]


def test_impute_with_persisted_means(registry):
    df = records([up_row(upload_traffic=None)], Plane.UP)
    out, used, _ = impute_numeric(df, registry, Plane.UP, {"upload_traffic": 42.0})
    assert out.loc[0, "upload_traffic"] == 42.0
    assert used["upload_traffic"] == 42.0


def test_derive_attach_success(registry):
    out = derive_fields(records([cp_row(procedure_type="1", procedure_status="0")], Plane.CP), registry, Plane.CP)
    assert out.loc[0, "procedure_type_x_procedure_status"] == "1|0"


def test_derive_missing_source(registry):
    out = derive_fields(records([cp_row(failure_cause=None)], Plane.CP), registry, Plane.CP)
    assert out.loc[0, "procedure_type_x_failure_cause"] is None
    assert out.loc[0, "procedure_type_x_request_cause"] == "1|0"


def test_derive_up_untouched(registry):
    df = records([up_row()], Plane.UP)
    out = derive_fields(df, registry, Plane.UP)
    assert list(out.columns) == list(df.columns)


def test_report_reconciles(registry):
    rows = [cp_row(ts=T0 + i % 4, procedure_status=["0", "7"][i % 5 == 0]) for i in range(20)]
    _, report = clean(records(rows, Plane.CP), registry, Plane.CP)
    assert report.reconciles()
    assert report.rows_kept + report.rows_invalid + report.rows_duplicate == 20


def test_write_read_round_trip(registry, tmp_path):
    df = records([up_row(ts=T0 + i, spendtime=0.1 * i) for i in range(5)], Plane.UP)
    write_records(df, tmp_path / "up.csv", registry, Plane.UP)
    again = read_clean(tmp_path / "up.csv", registry, Plane.UP)
    pd.testing.assert_frame_equal(again, df)


def test_ingest_dir(registry, tmp_path):
    raw = tmp_path / "raw"
    raw.mkdir()
    (raw / "cp.csv").write_text(csv_text([cp_row(), cp_row(), cp_row(procedure_status="7")], Plane.CP))
    (raw / "up.csv").write_text(csv_text([up_row(), up_row(ts=T0 + 1, spendtime=None)], Plane.UP))
    report = ingest_dir(raw, tmp_path / "clean", registry)
    assert (report.rows_read, report.rows_kept, report.rows_invalid, report.rows_duplicate) == (5, 3, 1, 1)
    doc = json.loads((tmp_path / "clean" / "ingest_report.json").read_text())
    assert doc["rows_kept"] == 3
    means = json.loads((tmp_path / "clean" / "imputation_means.json").read_text())
    assert means["spendtime"] == 4.0  # spendtime is the 4th numeric field in the fixture row
    up = read_clean(tmp_path / "clean" / "up.csv", registry, Plane.UP)
    assert up["spendtime"].tolist() == [4.0, 4.0]


codes = st.sampled_from(["0", "1", "255", "7", None])


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 3), codes), max_size=30))
def test_consistency_properties(registry, items):
    rows = [cp_row(ts=T0 + t, procedure_status=c) for t, c in items]
    df = records(rows, Plane.CP)
    kept, report = consistency_check(df, registry, Plane.CP)
    assert report.reconciles()
    assert not kept.duplicated().any()
    assert kept["procedure_status"].dropna().isin(["0", "1", "255"]).all()
    # idempotent
    again, report2 = consistency_check(kept, registry, Plane.CP)
    assert report2.rows_kept == len(kept)
