import json

import pytest
from pydantic import ValidationError

from scalarbach.chart import GridSpec
from scalarbach.config import Command, DeformReport, get_config
from scalarbach.runner import MetricSpec, RunConfig, load_run_config, run
from scalarbach.utils import ConfigParseError


def _read(outcome):
    return json.loads(outcome.json_path.read_text(encoding="utf-8"))


def test_curvature_run_is_deterministic(tmp_path):
    config = RunConfig(command=Command.CURVATURE, at=[0.1, 0.2, 0.3, 0.4], output_dir=str(tmp_path))
    first = run(config)
    text = first.json_path.read_text(encoding="utf-8")
    second = run(config)
    assert first.exit_code == 0
    assert first.json_path == tmp_path / "curvature.json"
    assert second.json_path.read_text(encoding="utf-8") == text
    data = json.loads(text)
    assert data["status"] == "ok"
    assert data["result"]["scalar"] == pytest.approx(0.0, abs=1e-12)
    assert data["result"]["bach_cross_residual"] is not None


def test_unknown_metric_is_reported(tmp_path):
    outcome = run(RunConfig(command=Command.CURVATURE, metric=MetricSpec(name="nope"), output_dir=str(tmp_path)))
    assert outcome.exit_code == 1
    assert _read(outcome)["error"]["code"] == "unknown-metric"


def test_tolerance_overrides_are_validated(tmp_path):
    outcome = run(RunConfig(command=Command.CURVATURE, tolerances={"alg_tol": -1.0}, output_dir=str(tmp_path)))
    assert outcome.exit_code == 1
    assert outcome.report.error.code == "config-parse-error"
    with pytest.raises(ValidationError):
        RunConfig(command=Command.CURVATURE, tolerances={"made_up_tol": 1.0})


def test_settings_are_restored_after_a_run(tmp_path):
    before = get_config()
    run(RunConfig(command=Command.CURVATURE, tolerances={"alg_tol": 1e-3}, output_dir=str(tmp_path)))
    assert get_config() is before


def test_load_run_config(tmp_path):
    good = tmp_path / "good.json"
    good.write_text(json.dumps({"command": "eigen", "metric": {"name": "bach-wave"}, "t": 1.0}), encoding="utf-8")
    config = load_run_config(good)
    assert config.command == Command.EIGEN and config.metric.name == "bach-wave"
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"command": "fly"}), encoding="utf-8")
    with pytest.raises(ConfigParseError):
        load_run_config(bad)
    with pytest.raises(ConfigParseError):
        load_run_config(tmp_path / "missing.json")


def test_failed_construction_keeps_the_partial_report(tmp_path):
    config = RunConfig(
        command=Command.CONSTRUCT,
        metric=MetricSpec(name="flat-ball"),
        t=0.0,
        nu=0.0,
        polar_resolution=[4, 4, 4, 4],
        output_dir=str(tmp_path),
    )
    outcome = run(config)
    assert outcome.exit_code == 2
    data = _read(outcome)
    assert data["status"] == "hypothesis-failed"
    assert data["error"]["code"] == "phi-not-negative"
    assert data["result"]["coverage"]["balls"] == 0


def test_unresolved_construction_exits_with_an_error(tmp_path):
    config = RunConfig(
        command=Command.CONSTRUCT,
        metric=MetricSpec(name="flat-ball"),
        t=0.0,
        k_candidates=[50.0],
        polar_resolution=[4, 4, 4, 4],
        output_dir=str(tmp_path),
    )
    outcome = run(config)
    assert outcome.exit_code == 1
    data = _read(outcome)
    assert data["status"] == "error"
    assert data["error"]["code"] == "phi-unresolved"
    assert data["result"]["phi_residual"] > get_config().phi_tol
    assert data["result"]["success"] is False


def test_deform_identity_on_flat_torus(tmp_path):
    config = RunConfig(
        command=Command.DEFORM,
        report=DeformReport.IDENTITY,
        grid=GridSpec(resolution=[24, 24, 4, 4]),
        output_dir=str(tmp_path),
    )
    outcome = run(config)
    assert outcome.exit_code == 0
    assert outcome.report.result.residual < 1e-8


def test_eigen_writes_one_csv_row_per_node(tmp_path):
    config = RunConfig(command=Command.EIGEN, grid=GridSpec(resolution=[4, 4, 4, 4]), csv=True, output_dir=str(tmp_path))
    outcome = run(config)
    assert outcome.exit_code == 0
    assert outcome.report.result.sign == "zero"
    lines = outcome.csv_path.read_text(encoding="utf-8").splitlines()
    assert lines[0] == "x1,x2,x3,x4,phi,normalized_potential"
    assert len(lines) == 1 + 4 ** 4
