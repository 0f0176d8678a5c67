import numpy as np
import pytest

from hotspot.ingest import plane_columns, records_from_rows
from hotspot.schema import Plane, default_schema

T0 = 1_577_836_800_000  # 2020-01-01T00:00:00Z


@pytest.fixture(scope="session")
def registry():
    return default_schema()


def cp_row(user="u1", ts=T0, **kw):
    row = {"user_id": user, "timestamp": ts, "procedure_type": "1", "procedure_status": "0",
           "request_cause": "0", "failure_cause": "0", "paging_result": "0", "erab_release_flag": "0"}
    row.update(kw)
    return row


def up_row(user="u1", ts=T0, **kw):
    reg = default_schema()
    row = {"user_id": user, "timestamp": ts, "app_type_code": "1", "app_type_whole": "1", "l4_protocol": "1"}
    for i, spec in enumerate(reg.numeric(Plane.UP)):
        row[spec.name] = float(i + 1)
    row.update(kw)
    return row


def records(rows, plane):
    return records_from_rows(rows, default_schema(), plane)


def csv_text(rows, plane):
    cols = plane_columns(default_schema(), plane)
    lines = [",".join(cols)]
    for r in rows:
        lines.append(",".join("" if r.get(c) is None or (isinstance(r.get(c), float) and np.isnan(r[c]))
                              else str(r[c]) for c in cols))
    return "\n".join(lines) + "\n"


# -- acceptance summary -----------------------------------------------------------

ACCEPTANCE: dict[int, tuple[str, str, str]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        detail = dict(item.user_properties).get("detail", "")
        if rep.failed and not detail:
            detail = str(call.excinfo.value).splitlines()[0] if call.excinfo else "error"
        ACCEPTANCE[number] = (title, "PASS" if rep.passed else "FAIL", detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        title, status, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"[{status}] {number:>2}. {title}: {detail}")
