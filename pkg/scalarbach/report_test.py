import json

import numpy as np

from scalarbach.report import (
    SCHEMA_VERSION,
    CheckResult,
    RunReport,
    RunStatus,
    field_rows,
    schema,
    write_csv,
    write_json,
)


def test_check_result_compares_against_tolerance():
    assert CheckResult.of("a", 1e-9, 1e-8).passed
    assert not CheckResult.of("b", np.float64(2e-8), 1e-8).passed
    assert isinstance(CheckResult.of("c", np.float64(0.5), 1).residual, float)


def test_field_rows_lists_coordinates_first():
    nodes = np.array([[0.0, 1.0, 2.0, 3.0], [4.0, 5.0, 6.0, 7.0]])
    rows = field_rows(nodes, phi=np.array([0.5, 0.25]))
    assert list(rows[0]) == ["x1", "x2", "x3", "x4", "phi"]
    assert rows[1]["x3"] == 6.0 and rows[1]["phi"] == 0.25


def test_csv_is_skipped_without_rows(tmp_path):
    assert write_csv([], tmp_path / "empty.csv") is None
    assert not (tmp_path / "empty.csv").exists()
    path = write_csv([{"x1": 1.0, "u": 2.0}], tmp_path / "nested" / "rows.csv")
    assert path.read_text(encoding="utf-8").splitlines() == ["x1,u", "1.0,2.0"]


def test_json_report(tmp_path):
    report = RunReport(command="curvature", status=RunStatus.HYPOTHESIS_FAILED, exit_code=2)
    data = json.loads(write_json(report, tmp_path / "out" / "curvature.json").read_text(encoding="utf-8"))
    assert data["schema_version"] == SCHEMA_VERSION
    assert data["status"] == "hypothesis-failed"
    assert "bach" in data["conventions"]


def test_schema_lists_report_fields():
    properties = schema()["properties"]
    assert {"schema_version", "command", "status", "exit_code", "error", "result"} <= set(properties)
