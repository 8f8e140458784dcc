from __future__ import annotations

import logging
from pathlib import Path
from typing import Callable, Optional, TypeVar

import typer
from rich.console import Console
from rich.logging import RichHandler
from rich.table import Table

from .checks import fd_check, geo_equivalence, prox_check, solve_problem
from .config import (
    ExperimentConfig,
    FdCheckConfig,
    GeoEquivConfig,
    ProblemSpec,
    ProxCheckConfig,
    StrictModel,
    echo_config,
    parse_config,
    with_seed,
)
from .errors import CheckFailed, ConfigError, FetchError, GeosplitError
from .experiments import evaluate_model, run_experiment
from .geo import geo_from_json, geo_to_json
from .models import CliInvocation, Subcommand
from .report import (
    aggregate_metrics,
    geo_equiv_document,
    solve_document,
    summary_document,
    write_fd_check,
    write_json,
    write_metadata,
    write_metrics,
    write_prox_check,
    write_trajectory,
)

app = typer.Typer(add_completion=False, no_args_is_help=True)
console = Console()
logger = logging.getLogger(__name__)

Schema = TypeVar("Schema", bound=StrictModel)

EXIT_OK = 0
EXIT_CHECK = 1
EXIT_PARSE = 2
EXIT_IO = 3


def _configure_logging(quiet: bool) -> None:
    logging.basicConfig(
        level=logging.WARNING if quiet else logging.INFO,
        format="%(message)s",
        handlers=[RichHandler(console=console, show_path=False)],
        force=True,
    )


def _ensure_output_dir(out_dir: Path) -> None:
    if not out_dir.exists():
        raise typer.BadParameter("Output directory does not exist. Create it first.")
    if not out_dir.is_dir():
        raise typer.BadParameter("Output path must be a directory.")


def _load(invocation: CliInvocation, schema: type[Schema]) -> Schema:
    """Parse (or default) the subcommand's config, apply --seed and echo it."""
    if invocation.config is None:
        if invocation.subcommand.needs_config:
            raise ConfigError(f"{invocation.subcommand.value} needs --config", ["config"])
        config = schema()
    else:
        config = parse_config(invocation.config, schema)
    config = with_seed(config, invocation.seed)
    logger.info("%s: config %s, seed %s", invocation.subcommand.value, invocation.config or "defaults", config.seed)
    write_json(invocation.out_dir / "config.json", echo_config(config))
    write_metadata(invocation.out_dir, invocation.subcommand.value, config.seed, invocation.config)
    return config


def _run_prox_check(invocation: CliInvocation) -> None:
    config = _load(invocation, ProxCheckConfig)
    rows = prox_check(config)
    write_prox_check(invocation.out_dir / "prox_check.csv", rows)
    table = Table(title=f"prox-check (resolution {config.resolution:g})")
    for column in ("prox", "tau", "max error", "firm", "1-Lipschitz", "status"):
        table.add_column(column)
    for row in rows:
        status = "[green]PASS[/green]" if row.passed else "[red]FAIL[/red]"
        table.add_row(row.prox, f"{row.tau:g}", f"{row.max_error:.2e}", str(row.firm_nonexpansive), str(row.lipschitz), status)
    console.print(table)
    failed = [row for row in rows if not row.passed]
    if failed:
        raise CheckFailed(f"{len(failed)} of {len(rows)} prox rows failed")


def _run_solve(invocation: CliInvocation) -> None:
    spec = _load(invocation, ProblemSpec)
    result = solve_problem(spec)
    write_trajectory(invocation.out_dir / "trajectory.csv", result)
    write_json(invocation.out_dir / "solve.json", solve_document(result))
    console.print(f"{result.trajectory.scheme.value} scheme, L={result.schedule.L}: final gap {result.final_gap:.3e}")
    if result.trajectory.diverged:
        raise CheckFailed("the iteration diverged")
    if spec.gap_tolerance is not None and not result.final_gap <= spec.gap_tolerance:
        raise CheckFailed(f"final gap {result.final_gap:.3e} above tolerance {spec.gap_tolerance:g}")


def _run_fd_check(invocation: CliInvocation) -> None:
    config = _load(invocation, FdCheckConfig)
    result = fd_check(config)
    write_fd_check(invocation.out_dir / "fd_check.csv", result)
    table = Table(title="fd-check")
    for column in ("R", "delta", "in-rank error", "error", "bound"):
        table.add_column(column)
    for row in result.rows:
        table.add_row(str(row.R), f"{row.delta:g}", f"{row.in_rank_error:.2e}", f"{row.error:.2e}", f"{row.bound:.2e}")
    console.print(table)
    for rank, slope in result.slopes.items():
        console.print(f"R={rank}: delta slope {slope:.3f}")
    if not result.passed:
        raise CheckFailed(f"divided-difference error outside slope [{config.slope_lo}, {config.slope_hi}] or bound")


def _run_geo_equiv(invocation: CliInvocation) -> None:
    config = _load(invocation, GeoEquivConfig)
    result = geo_equivalence(config)
    write_json(invocation.out_dir / "geo_equiv.json", geo_equiv_document(result))
    if result.passed:
        console.print(f"max_dev {result.max_dev:.3e} <= {config.tolerance:g}, [green]PASS[/green]")
        return
    console.print(f"max_dev {result.max_dev:.3e} > {config.tolerance:g}, [red]FAIL[/red]")
    raise CheckFailed("theoretical weights do not reproduce the projected scheme")


def _run_train(invocation: CliInvocation) -> None:
    config = _load(invocation, ExperimentConfig)
    result = run_experiment(config)
    write_metrics(invocation.out_dir / "metrics.csv", result.metrics)
    (invocation.out_dir / "model.json").write_text(geo_to_json(result.params), encoding="utf-8")
    write_json(invocation.out_dir / "results.json", result.to_dict())
    console.print(f"trained {config.family.value} for {config.epochs} epochs: final train MSE {result.metrics[-1].train_mse:.4e}")


def _run_eval(invocation: CliInvocation) -> None:
    config = _load(invocation, ExperimentConfig)
    text = (invocation.out_dir / "model.json").read_text(encoding="utf-8")
    try:
        params = geo_from_json(text)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"model.json is not a model document ({exc})", ["model.json"]) from exc
    summary = evaluate_model(params, config)
    write_json(invocation.out_dir / "eval.json", summary.to_dict())
    console.print(f"test MSE {summary.mse:.4e}, hit rate {summary.hit_rate():.2%}")


def _run_report(invocation: CliInvocation) -> None:
    write_metadata(invocation.out_dir, invocation.subcommand.value, invocation.seed)
    summaries = aggregate_metrics(invocation.out_dir)
    write_json(invocation.out_dir / "summary.json", summary_document(summaries))
    table = Table(title="runs")
    for column in ("run", "epochs", "final train MSE", "final test MSE"):
        table.add_column(column)
    for s in summaries:
        test = "-" if s.final_test_mse is None else f"{s.final_test_mse:.4e}"
        table.add_row(s.run, str(s.epochs), f"{s.final_train_mse:.4e}", test)
    console.print(table)


_HANDLERS: dict[Subcommand, Callable[[CliInvocation], None]] = {
    Subcommand.PROX_CHECK: _run_prox_check,
    Subcommand.SOLVE: _run_solve,
    Subcommand.FD_CHECK: _run_fd_check,
    Subcommand.GEO_EQUIV: _run_geo_equiv,
    Subcommand.TRAIN: _run_train,
    Subcommand.EVAL: _run_eval,
    Subcommand.REPORT: _run_report,
}


def dispatch(invocation: CliInvocation) -> int:
    """Run one subcommand and map its outcome to an exit status."""
    _configure_logging(invocation.quiet)
    try:
        _ensure_output_dir(invocation.out_dir)
        _HANDLERS[invocation.subcommand](invocation)
    except typer.BadParameter as exc:
        console.print(f"[red]{exc}[/red]")
        return EXIT_IO
    except ConfigError as exc:
        console.print(f"[red]{exc}[/red]")
        return EXIT_PARSE
    except CheckFailed as exc:
        console.print(f"[red]{exc}[/red]")
        return EXIT_CHECK
    except (FetchError, OSError) as exc:
        console.print(f"[red]{exc}[/red]")
        return EXIT_IO
    except GeosplitError as exc:
        console.print(f"[red]{exc}[/red]")
        return EXIT_PARSE if isinstance(exc, ValueError) else EXIT_CHECK
    return EXIT_OK


ConfigOption = typer.Option(None, "--config", "-c", help="Path or URL to a JSON or YAML config")
OutOption = typer.Option(Path("."), "--out", "-o", help="Output directory")
SeedOption = typer.Option(None, "--seed", help="Override the config's root seed")
QuietOption = typer.Option(False, "--quiet", "-q", help="Only log warnings and errors")


def _exit(subcommand: Subcommand, config: Optional[str], out: Path, seed: Optional[int], quiet: bool) -> None:
    raise typer.Exit(code=dispatch(CliInvocation(subcommand, config, out, seed, quiet)))


@app.command("prox-check")
def prox_check_command(
    config: Optional[str] = ConfigOption,
    out: Path = OutOption,
    seed: Optional[int] = SeedOption,
    quiet: bool = QuietOption,
) -> None:
    """Compare closed-form proximal maps against brute-force minimisation."""
    _exit(Subcommand.PROX_CHECK, config, out, seed, quiet)


@app.command("solve")
def solve_command(
    config: Optional[str] = ConfigOption,
    out: Path = OutOption,
    seed: Optional[int] = SeedOption,
    quiet: bool = QuietOption,
) -> None:
    """Run a splitting scheme on a problem spec and write its trajectory."""
    _exit(Subcommand.SOLVE, config, out, seed, quiet)


@app.command("fd-check")
def fd_check_command(
    config: Optional[str] = ConfigOption,
    out: Path = OutOption,
    seed: Optional[int] = SeedOption,
    quiet: bool = QuietOption,
) -> None:
    """Sweep the divided-difference gradient error over (delta, R)."""
    _exit(Subcommand.FD_CHECK, config, out, seed, quiet)


@app.command("geo-equiv")
def geo_equiv_command(
    config: Optional[str] = ConfigOption,
    out: Path = OutOption,
    seed: Optional[int] = SeedOption,
    quiet: bool = QuietOption,
) -> None:
    """Check that theoretical weights reproduce the projected scheme."""
    _exit(Subcommand.GEO_EQUIV, config, out, seed, quiet)


@app.command("train")
def train_command(
    config: Optional[str] = ConfigOption,
    out: Path = OutOption,
    seed: Optional[int] = SeedOption,
    quiet: bool = QuietOption,
) -> None:
    """Train an operator on a min-op or pde-rd experiment."""
    _exit(Subcommand.TRAIN, config, out, seed, quiet)


@app.command("eval")
def eval_command(
    config: Optional[str] = ConfigOption,
    out: Path = OutOption,
    seed: Optional[int] = SeedOption,
    quiet: bool = QuietOption,
) -> None:
    """Score the model.json in --out on the config's test set."""
    _exit(Subcommand.EVAL, config, out, seed, quiet)


@app.command("report")
def report_command(
    out: Path = OutOption,
    seed: Optional[int] = SeedOption,
    quiet: bool = QuietOption,
) -> None:
    """Aggregate every metrics.csv under --out into summary.json."""
    _exit(Subcommand.REPORT, None, out, seed, quiet)


if __name__ == "__main__":
    app()
