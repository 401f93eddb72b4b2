from __future__ import annotations

import json
import logging
import sys
from pathlib import Path
from typing import Optional

import typer
from dotenv import load_dotenv
from rich.console import Console
from rich.table import Table
from pydantic import ValidationError

from .catalog import CATALOG
from .chart import GridSpec
from .config import (
    BachFormula,
    Command,
    ConformalCheck,
    ConformalConvention,
    CurvatureKind,
    DeformReport,
    Suite,
)
from .report import RunStatus, schema as report_schema
from .runner import MetricSpec, RunConfig, RunOutcome, load_run_config, run
from .utils import GeometryError, InvalidSpecError, parse_floats


console = Console()
app = typer.Typer(help="scalarbach - Bach tensor and scalar-Bach curvature engine", no_args_is_help=True)


def _configure_logging() -> None:
    root = logging.getLogger()
    if not root.handlers:
        handler = logging.StreamHandler(stream=sys.stdout)
        formatter = logging.Formatter("%(asctime)s %(levelname)s %(name)s - %(message)s")
        handler.setFormatter(formatter)
        root.addHandler(handler)
    root.setLevel(logging.INFO)


def _ensure_env_loaded() -> None:
    load_dotenv()
    _configure_logging()


def _parse_params(raw: Optional[list[str]]) -> dict[str, float]:
    params: dict[str, float] = {}
    for item in raw or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise InvalidSpecError(f"param '{item}' must look like name=value")
        params[key.strip()] = parse_floats(value, name=key)[0]
    return params


def _parse_grid(raw: str) -> list[int]:
    parts = [p for p in raw.lower().split("x") if p]
    try:
        resolution = [int(p) for p in parts]
    except ValueError as exc:
        raise InvalidSpecError("grid must look like 16 or 16x16x16x16") from exc
    return resolution * 4 if len(resolution) == 1 else resolution


def _base(
    command: Command,
    metric: str,
    params: Optional[list[str]],
    grid: str = "8",
    **fields,
) -> RunConfig:
    try:
        return RunConfig(
            command=command,
            metric=MetricSpec(name=metric, params=_parse_params(params)),
            grid=GridSpec(resolution=_parse_grid(grid)),
            **fields,
        )
    except (GeometryError, ValidationError) as exc:
        typer.secho(f"Invalid arguments: {exc}", fg=typer.colors.RED)
        raise typer.Exit(code=1)


def _execute(config: RunConfig) -> RunOutcome:
    outcome = run(config)
    report = outcome.report
    if report.status == RunStatus.OK:
        console.print(f"[green]{config.command.value}: ok -> {outcome.json_path}")
    elif report.status == RunStatus.HYPOTHESIS_FAILED:
        typer.secho(
            f"{config.command.value}: hypothesis failed ({report.error.code}): {report.error.message}",
            fg=typer.colors.YELLOW,
        )
    else:
        typer.secho(f"{config.command.value}: {report.error.code}: {report.error.message}", fg=typer.colors.RED)
    if outcome.csv_path is not None:
        console.print(f"[cyan]CSV: {outcome.csv_path}")
    if outcome.exit_code:
        raise typer.Exit(code=outcome.exit_code)
    return outcome


def _point(raw: str) -> list[float]:
    try:
        return parse_floats(raw, name="at")
    except GeometryError as exc:
        typer.secho(str(exc), fg=typer.colors.RED)
        raise typer.Exit(code=1)


MetricOption = typer.Option("euclidean", "--metric", help="Catalog metric name (see 'scalarbach catalog')")
ParamOption = typer.Option(None, "--param", help="Metric parameter name=value; repeatable")
OutputOption = typer.Option(None, "--output-dir", help="Directory for JSON/CSV artifacts (defaults from config)")


@app.command(name="curvature")
def curvature(
    metric: str = MetricOption,
    param: Optional[list[str]] = ParamOption,
    at: str = typer.Option("0,0,0,0", help="Chart point, comma separated"),
    bach: BachFormula = typer.Option(BachFormula.BOTH, help="weyl | ricci | both"),
    output_dir: Optional[str] = OutputOption,
) -> None:
    """Curvature bundle and Bach tensor at a point."""
    _ensure_env_loaded()
    _execute(_base(Command.CURVATURE, metric, param, at=_point(at), bach=bach, output_dir=output_dir))


@app.command(name="deform")
def deform(
    metric: str = MetricOption,
    param: Optional[list[str]] = ParamOption,
    f: str = typer.Option("0.3*sin(x1+x2)", "--f", help="Deforming function in x1..x4"),
    k: float = typer.Option(1.0, help="Scale of the deforming function"),
    report: DeformReport = typer.Option(DeformReport.CURVATURE, help="curvature | bach-error | identity"),
    at: str = typer.Option("0,0,0,0", help="Chart point, comma separated"),
    grid: str = typer.Option("8", help="Grid resolution N or NxNxNxN (identity report)"),
    output_dir: Optional[str] = OutputOption,
) -> None:
    """Aubin deformation g + df (x) df: closed forms, Bach error, integral identity."""
    _ensure_env_loaded()
    _execute(
        _base(Command.DEFORM, metric, param, grid, f=f, k=k, report=report, at=_point(at), output_dir=output_dir)
    )


@app.command(name="conformal")
def conformal(
    metric: str = MetricOption,
    param: Optional[list[str]] = ParamOption,
    factor: str = typer.Option("0.1*sin(x1)", help="Conformal factor expression"),
    convention: ConformalConvention = typer.Option(ConformalConvention.EXPONENTIAL, help="exponential | power"),
    t: float = typer.Option(0.0, help="Weight of the Bach (or Weyl) term"),
    check: ConformalCheck = typer.Option(ConformalCheck.LAWS, help="laws | covariance | bach"),
    phi: str = typer.Option("1 + 0.2*cos(x2)", help="Test function for the covariance check"),
    kind: CurvatureKind = typer.Option(CurvatureKind.SCALAR_BACH, help="scalar-bach | scalar-weyl"),
    at: str = typer.Option("0,0,0,0", help="Chart point, comma separated"),
    output_dir: Optional[str] = OutputOption,
) -> None:
    """Conformal transformation laws and covariance residuals."""
    _ensure_env_loaded()
    _execute(
        _base(
            Command.CONFORMAL,
            metric,
            param,
            factor=factor,
            convention=convention,
            t=t,
            check=check,
            phi=phi,
            kind=kind,
            at=_point(at),
            output_dir=output_dir,
        )
    )


@app.command(name="eigen")
def eigen(
    metric: str = MetricOption,
    param: Optional[list[str]] = ParamOption,
    t: float = typer.Option(0.0, help="Weight of the Bach term"),
    grid: str = typer.Option("8", help="Grid resolution N or NxNxNxN"),
    csv: bool = typer.Option(False, "--csv", help="Also write the eigenfunction as CSV"),
    threads: int = typer.Option(1, help="Thread budget"),
    output_dir: Optional[str] = OutputOption,
) -> None:
    """Principal eigenvalue of -6 Delta + F and its sign class."""
    _ensure_env_loaded()
    _execute(
        _base(Command.EIGEN, metric, param, grid, t=t, csv=csv, output_dir=output_dir, tolerances={"threads": threads})
    )


@app.command(name="normalize")
def normalize(
    metric: str = MetricOption,
    param: Optional[list[str]] = ParamOption,
    t: float = typer.Option(0.0, help="Weight of the Bach term"),
    grid: str = typer.Option("8", help="Grid resolution N or NxNxNxN"),
    csv: bool = typer.Option(False, "--csv", help="Also write u, v and the normalized curvature as CSV"),
    output_dir: Optional[str] = OutputOption,
) -> None:
    """Conformal metric with constant scalar-Bach curvature -1 on a negative class."""
    _ensure_env_loaded()
    _execute(_base(Command.NORMALIZE, metric, param, grid, t=t, csv=csv, output_dir=output_dir))


@app.command(name="construct")
def construct(
    metric: str = typer.Option("bach-wave", "--metric", help="Base metric"),
    param: Optional[list[str]] = ParamOption,
    t: float = typer.Option(1.0, help="Weight of the Bach term"),
    balls: int = typer.Option(1, help="Number of balls requested"),
    radius: float = typer.Option(0.5, help="Ball radius"),
    nu: float = typer.Option(1.0, help="Coverage level"),
    delta: float = typer.Option(0.3, help="Floor of the bump profile"),
    k_candidates: str = typer.Option("0.05", help="Comma separated k candidates"),
    bound_k: str = typer.Option("", help="Comma separated k values for the bound sampler"),
    polar: str = typer.Option("24x6x8x8", help="Polar resolution: radial per panel x height x angle x angle"),
    grid: str = typer.Option("8", help="Box grid for global assembly and normalization"),
    normalize: bool = typer.Option(False, "--normalize", help="Normalize the constructed metric to F = -1"),
    csv: bool = typer.Option(False, "--csv", help="Also write radial profiles as CSV"),
    threads: int = typer.Option(1, help="Thread budget for per-ball work"),
    output_dir: Optional[str] = OutputOption,
) -> None:
    """Negative scalar-Bach construction on disjoint balls."""
    _ensure_env_loaded()
    try:
        candidates = parse_floats(k_candidates, name="k-candidates")
        bounds = parse_floats(bound_k, name="bound-k")
        polar_resolution = _parse_grid(polar)
    except GeometryError as exc:
        typer.secho(f"Invalid arguments: {exc}", fg=typer.colors.RED)
        raise typer.Exit(code=1)
    _execute(
        _base(
            Command.CONSTRUCT,
            metric,
            param,
            grid,
            t=t,
            balls=balls,
            radius=radius,
            nu=nu,
            delta=delta,
            k_candidates=candidates,
            bound_k=bounds,
            polar_resolution=polar_resolution,
            normalize=normalize,
            csv=csv,
            output_dir=output_dir,
            tolerances={"threads": threads},
        )
    )


@app.command(name="verify")
def verify(
    suite: Suite = typer.Option(Suite.ALL, help="bach | covariance | aubin | identity | spectral | profile | all"),
    seed: int = typer.Option(0, help="Seed of the randomized checks"),
    samples: int = typer.Option(5, help="Sample points per metric"),
    output_dir: Optional[str] = OutputOption,
) -> None:
    """Run a verification suite and list every residual against its tolerance."""
    _ensure_env_loaded()
    config = RunConfig(command=Command.VERIFY, suite=suite, seed=seed, samples=samples, output_dir=output_dir)
    outcome = run(config)
    record = outcome.report.result
    if record is not None:
        table = Table(title=f"verify {suite.value} (seed {seed})")
        table.add_column("check")
        table.add_column("residual", justify="right")
        table.add_column("tolerance", justify="right")
        table.add_column("ok")
        for check in record.checks:
            table.add_row(
                check.name, f"{check.residual:.3e}", f"{check.tolerance:.1e}", "[green]yes" if check.passed else "[red]no"
            )
        console.print(table)
    if outcome.exit_code:
        typer.secho(f"verify: {outcome.report.error.code}: {outcome.report.error.message}", fg=typer.colors.RED)
        raise typer.Exit(code=outcome.exit_code)
    console.print(f"[green]verify: ok -> {outcome.json_path}")


@app.command(name="run")
def run_file(config_path: str = typer.Argument(..., help="Path to a JSON run config")) -> None:
    """Run a command described by a JSON config file."""
    _ensure_env_loaded()
    try:
        config = load_run_config(Path(config_path))
    except GeometryError as exc:
        typer.secho(str(exc), fg=typer.colors.RED)
        raise typer.Exit(code=1)
    _execute(config)


@app.command(name="schema")
def schema() -> None:
    """Print the JSON schema of run reports."""
    console.print_json(json.dumps(report_schema(), ensure_ascii=False))


@app.command(name="catalog")
def catalog() -> None:
    """List the catalog metrics."""
    table = Table(title="metric catalog")
    table.add_column("name")
    table.add_column("periodic")
    table.add_column("parameters")
    table.add_column("description")
    for name, entry in CATALOG.items():
        params = ", ".join(f"{k}={v:g}" for k, v in entry.defaults.items())
        table.add_row(name, "yes" if entry.periodic else "no", params, entry.description)
    console.print(table)


if __name__ == "__main__":
    app()
