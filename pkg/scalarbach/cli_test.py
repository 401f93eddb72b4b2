import json

import pytest
from typer.testing import CliRunner

from scalarbach import cli


runner = CliRunner()


@pytest.fixture(autouse=True)
def quiet_logging(monkeypatch):
    monkeypatch.setattr(cli, "_configure_logging", lambda: None)


def test_catalog_and_schema():
    listing = runner.invoke(cli.app, ["catalog"])
    assert listing.exit_code == 0
    assert "bach-wave" in listing.output
    result = runner.invoke(cli.app, ["schema"])
    assert result.exit_code == 0
    assert "schema_version" in result.output


def test_curvature_of_round_sphere(tmp_path):
    result = runner.invoke(cli.app, ["curvature", "--metric", "round-s4", "--at", "0.1,0,0,0", "--output-dir", str(tmp_path)])
    assert result.exit_code == 0, result.output
    data = json.loads((tmp_path / "curvature.json").read_text(encoding="utf-8"))
    assert data["result"]["scalar"] == pytest.approx(12.0, rel=1e-9)


@pytest.mark.parametrize(
    "args",
    [
        ["curvature", "--metric", "nope"],
        ["curvature", "--param", "epsilon"],
        ["curvature", "--at", "1,2"],
        ["eigen", "--grid", "4xfour"],
    ],
)
def test_bad_arguments_exit_with_one(tmp_path, args):
    result = runner.invoke(cli.app, [*args, "--output-dir", str(tmp_path)])
    assert result.exit_code == 1


def test_failed_hypothesis_exits_with_two(tmp_path):
    args = ["construct", "--metric", "flat-ball", "--t", "0", "--nu", "0", "--polar", "4x4x4x4", "--output-dir", str(tmp_path)]
    result = runner.invoke(cli.app, args)
    assert result.exit_code == 2
    assert "phi-not-negative" in result.output


def test_verify_profile_suite(tmp_path):
    result = runner.invoke(cli.app, ["verify", "--suite", "profile", "--output-dir", str(tmp_path)])
    assert result.exit_code == 0, result.output
    assert json.loads((tmp_path / "verify.json").read_text(encoding="utf-8"))["result"]["suite"] == "profile"


def test_run_from_config_file(tmp_path):
    config = tmp_path / "run.json"
    config.write_text(
        json.dumps({"command": "curvature", "metric": {"name": "s2xs2"}, "at": [0.2, 0, 0, 0], "output_dir": str(tmp_path)}),
        encoding="utf-8",
    )
    result = runner.invoke(cli.app, ["run", str(config)])
    assert result.exit_code == 0, result.output
    data = json.loads((tmp_path / "curvature.json").read_text(encoding="utf-8"))
    assert data["result"]["scalar"] == pytest.approx(4.0, rel=1e-9)
    assert runner.invoke(cli.app, ["run", str(tmp_path / "missing.json")]).exit_code == 1
