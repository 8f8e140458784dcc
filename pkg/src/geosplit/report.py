from __future__ import annotations

import csv
import json
import math
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Iterable, Sequence

from ruamel.yaml import YAML

from . import __version__
from .checks import FdCheckResult, SolveResult
from .models import GeoEquivResult, MetricsRow, ProxCheckRow, RunSummary
from .util import format_float, normalize_run_name

METRICS_HEADER = ("epoch", "train_mse", "test_mse")


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
    with path.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow(row)


def write_json(path: Path, data: Any) -> None:
    path.write_text(json.dumps(data, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def write_yaml(path: Path, data: dict) -> None:
    yaml = YAML()
    yaml.default_flow_style = False
    yaml.indent(mapping=2, sequence=4, offset=2)
    with path.open("w", encoding="utf-8") as handle:
        yaml.dump(data, handle)


def write_metadata(out_dir: Path, subcommand: str, seed: int | None, source: str | None = None) -> Path:
    """The meta.yaml sidecar; the only output that differs between identical runs."""
    path = out_dir / "meta.yaml"
    write_yaml(
        path,
        {
            "generator": "geosplit",
            "version": __version__,
            "subcommand": subcommand,
            "seed": seed,
            "config_source": source,
            "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        },
    )
    return path


def write_prox_check(path: Path, rows: list[ProxCheckRow]) -> None:
    write_csv(
        path,
        ("prox", "tau", "max_error", "firm_nonexpansive", "lipschitz", "passed"),
        (
            (r.prox, format_float(r.tau), format_float(r.max_error), r.firm_nonexpansive, r.lipschitz, r.passed)
            for r in rows
        ),
    )


def write_fd_check(path: Path, result: FdCheckResult) -> None:
    write_csv(
        path,
        ("delta", "R", "in_rank_error", "tail", "error", "bound", "slope"),
        (
            (
                format_float(r.delta),
                r.R,
                format_float(r.in_rank_error),
                format_float(r.tail),
                format_float(r.error),
                format_float(r.bound),
                format_float(result.slopes[r.R]),
            )
            for r in result.rows
        ),
    )


def geo_equiv_document(result: GeoEquivResult) -> dict:
    return {
        "max_dev": result.max_dev,
        "tolerance": result.tolerance,
        "status": "PASS" if result.passed else "FAIL",
        "instances": [
            {"instance": r.instance, "prox": r.prox, "L": r.L, "R": r.R, "max_dev": r.max_dev} for r in result.rows
        ],
    }


def write_trajectory(path: Path, result: SolveResult) -> None:
    trajectory = result.trajectory
    rank = trajectory.final.rank
    header = ("iteration", "loss", "gap", "norm") + tuple(f"c{j}" for j in range(rank))
    rows = (
        (l, format_float(loss), format_float(loss - result.optimum), format_float(x.norm()))
        + tuple(format_float(v) for v in x.coeffs)
        for l, (x, loss) in enumerate(zip(trajectory.iterates, trajectory.losses))
    )
    write_csv(path, header, rows)


def solve_document(result: SolveResult) -> dict:
    schedule = result.schedule
    return {
        "scheme": result.trajectory.scheme.value,
        "schedule": schedule.kind,
        "L": schedule.L,
        "R": schedule.R,
        "iterations": len(result.trajectory.iterates) - 1,
        "diverged": result.trajectory.diverged,
        "optimum": result.optimum,
        "final_loss": result.trajectory.losses[-1],
        "final_gap": result.final_gap,
        "final": result.trajectory.final.coeffs.tolist(),
    }


def write_metrics(path: Path, metrics: list[MetricsRow]) -> None:
    write_csv(
        path,
        METRICS_HEADER,
        ((m.epoch, format_float(m.train_mse), format_float(m.test_mse)) for m in metrics),
    )


def read_metrics(path: Path) -> list[MetricsRow]:
    with path.open("r", encoding="utf-8", newline="") as handle:
        reader = csv.DictReader(handle)
        if tuple(reader.fieldnames or ()) != METRICS_HEADER:
            raise ValueError(f"{path} does not carry the metrics header {','.join(METRICS_HEADER)}")
        return [
            MetricsRow(int(r["epoch"]), float(r["train_mse"]), float(r["test_mse"]) if r["test_mse"] else None)
            for r in reader
        ]


def summarize_run(name: str, metrics: list[MetricsRow]) -> RunSummary:
    if not metrics:
        raise ValueError(f"run {name} has no metrics rows")
    tests = [m.test_mse for m in metrics if m.test_mse is not None]
    final_tests = [m.test_mse for m in reversed(metrics) if m.test_mse is not None]
    return RunSummary(
        run=name,
        epochs=metrics[-1].epoch,
        final_train_mse=metrics[-1].train_mse,
        min_train_mse=min(m.train_mse for m in metrics),
        final_test_mse=final_tests[0] if final_tests else None,
        min_test_mse=min(tests) if tests else None,
    )


def aggregate_metrics(root: Path) -> list[RunSummary]:
    summaries = []
    for path in sorted(root.rglob("metrics.csv")):
        relative = path.parent.relative_to(root).as_posix()
        name = normalize_run_name(relative) if relative != "." else "root"
        summaries.append(summarize_run(name, read_metrics(path)))
    return summaries


def summary_document(summaries: list[RunSummary]) -> dict:
    def clean(value: float | None) -> float | None:
        return value if value is None or math.isfinite(value) else None

    return {
        "runs": [
            {
                "run": s.run,
                "epochs": s.epochs,
                "final_train_mse": clean(s.final_train_mse),
                "min_train_mse": clean(s.min_train_mse),
                "final_test_mse": clean(s.final_test_mse),
                "min_test_mse": clean(s.min_test_mse),
            }
            for s in summaries
        ]
    }
