import csv
import json
from pathlib import Path
from unittest.mock import Mock, patch

import httpx
from typer.testing import CliRunner

from geosplit.cli import app

runner = CliRunner()

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

TINY_TRAIN = {
    "family": "min-op",
    "seed": 0,
    "R": 2,
    "L": 2,
    "M": 3,
    "epochs": 2,
    "n_train": 6,
    "n_test": 3,
    "batch_size": 3,
    "eval_interval": 1,
    "minop": {"test_horizon": 500},
}


def _write(path: Path, data: dict) -> str:
    path.write_text(json.dumps(data), encoding="utf-8")
    return str(path)


def _invoke(*args: str):
    return runner.invoke(app, list(args))


def test_prox_check_writes_csv(tmp_path):
    result = _invoke("prox-check", "--out", str(tmp_path), "--quiet")
    assert result.exit_code == 0, result.output
    with (tmp_path / "prox_check.csv").open(encoding="utf-8") as handle:
        rows = list(csv.DictReader(handle))
    assert len(rows) == 18
    assert all(row["passed"] == "True" for row in rows)
    assert (tmp_path / "config.json").exists()
    assert (tmp_path / "meta.yaml").exists()


def test_geo_equiv_passes(tmp_path):
    result = _invoke("geo-equiv", "--config", str(CONFIGS / "geo_equiv.json"), "--out", str(tmp_path))
    assert result.exit_code == 0, result.output
    assert "PASS" in result.output
    document = json.loads((tmp_path / "geo_equiv.json").read_text(encoding="utf-8"))
    assert document["status"] == "PASS"
    assert document["max_dev"] <= 1e-12
    assert len(document["instances"]) == 20


def test_solve_shipped_problem(tmp_path):
    result = _invoke("solve", "-c", str(CONFIGS / "box_quadratic.json"), "-o", str(tmp_path))
    assert result.exit_code == 0, result.output
    document = json.loads((tmp_path / "solve.json").read_text(encoding="utf-8"))
    assert document["final_gap"] <= 1e-6
    assert document["iterations"] == 200
    header = (tmp_path / "trajectory.csv").read_text(encoding="utf-8").splitlines()[0]
    assert header == "iteration,loss,gap,norm,c0,c1,c2"


def test_solve_below_tolerance_fails_the_check(tmp_path):
    config = json.loads((CONFIGS / "box_quadratic.json").read_text(encoding="utf-8"))
    config["schedule"] = {"kind": "constant", "L": 1}
    config["gap_tolerance"] = 1e-12
    result = _invoke("solve", "-c", _write(tmp_path / "solve.json", config), "-o", str(tmp_path))
    assert result.exit_code == 1


def test_fd_check(tmp_path):
    result = _invoke("fd-check", "-o", str(tmp_path), "-q")
    assert result.exit_code == 0, result.output
    lines = (tmp_path / "fd_check.csv").read_text(encoding="utf-8").splitlines()
    assert lines[0] == "delta,R,in_rank_error,tail,error,bound,slope"
    assert len(lines) == 1 + 9


def test_train_eval_report(tmp_path):
    config = _write(tmp_path / "tiny.json", TINY_TRAIN)
    run = tmp_path / "run-a"
    run.mkdir()
    result = _invoke("train", "-c", config, "-o", str(run), "--seed", "5", "-q")
    assert result.exit_code == 0, result.output
    for name in ("metrics.csv", "model.json", "results.json", "config.json", "meta.yaml"):
        assert (run / name).exists()
    assert json.loads((run / "config.json").read_text(encoding="utf-8"))["seed"] == 5
    assert (run / "metrics.csv").read_text(encoding="utf-8").splitlines()[0] == "epoch,train_mse,test_mse"

    result = _invoke("eval", "-c", config, "-o", str(run), "--seed", "5", "-q")
    assert result.exit_code == 0, result.output
    evaluation = json.loads((run / "eval.json").read_text(encoding="utf-8"))
    results = json.loads((run / "results.json").read_text(encoding="utf-8"))
    assert evaluation["test_mse"] == results["evaluation"]["test_mse"]

    result = _invoke("report", "-o", str(tmp_path), "-q")
    assert result.exit_code == 0, result.output
    summary = json.loads((tmp_path / "summary.json").read_text(encoding="utf-8"))
    assert [r["run"] for r in summary["runs"]] == ["run-a"]
    assert summary["runs"][0]["epochs"] == 2
    assert not (tmp_path / "config.json").exists()


def test_identical_runs_are_byte_identical(tmp_path):
    config = _write(tmp_path / "tiny.json", TINY_TRAIN)
    outputs = []
    for name in ("one", "two"):
        out = tmp_path / name
        out.mkdir()
        assert _invoke("train", "-c", config, "-o", str(out), "-q").exit_code == 0
        outputs.append(out)
    for name in ("metrics.csv", "model.json", "results.json", "config.json"):
        assert (outputs[0] / name).read_bytes() == (outputs[1] / name).read_bytes()


def test_missing_output_dir(tmp_path):
    result = _invoke("prox-check", "-o", str(tmp_path / "absent"))
    assert result.exit_code == 3


def test_missing_config_file(tmp_path):
    result = _invoke("train", "-c", str(tmp_path / "absent.json"), "-o", str(tmp_path))
    assert result.exit_code == 3


def test_train_needs_a_config(tmp_path):
    result = _invoke("train", "-o", str(tmp_path))
    assert result.exit_code == 2


def test_invalid_config_exits_with_parse_status(tmp_path):
    config = _write(tmp_path / "bad.json", dict(TINY_TRAIN, lr=-1.0))
    result = _invoke("train", "-c", config, "-o", str(tmp_path))
    assert result.exit_code == 2
    assert "lr" in result.output


def test_eval_without_model(tmp_path):
    config = _write(tmp_path / "tiny.json", TINY_TRAIN)
    result = _invoke("eval", "-c", config, "-o", str(tmp_path))
    assert result.exit_code == 3


def test_eval_with_a_corrupt_model(tmp_path):
    config = _write(tmp_path / "tiny.json", TINY_TRAIN)
    (tmp_path / "model.json").write_text('{"layers": []}', encoding="utf-8")
    result = _invoke("eval", "-c", config, "-o", str(tmp_path))
    assert result.exit_code == 2


def test_config_from_a_github_url(tmp_path):
    response = Mock()
    response.text = "L: 4\nR: 3\ninstances: 2\n"
    with patch("geosplit.fetch.httpx.get", return_value=response) as get:
        result = _invoke("geo-equiv", "-c", "https://github.com/geosplit/configs/blob/main/geo.yaml", "-o", str(tmp_path))
    assert result.exit_code == 0, result.output
    assert get.call_args.args == ("https://raw.githubusercontent.com/geosplit/configs/main/geo.yaml",)
    echoed = json.loads((tmp_path / "config.json").read_text(encoding="utf-8"))
    assert (echoed["L"], echoed["R"], echoed["instances"]) == (4, 3, 2)


def test_unreachable_config_url(tmp_path):
    with patch("geosplit.fetch.httpx.get", side_effect=httpx.ConnectError("unreachable")):
        result = _invoke("geo-equiv", "-c", "https://example.org/geo.json", "-o", str(tmp_path))
    assert result.exit_code == 3


def test_yaml_config_file(tmp_path):
    path = tmp_path / "tiny.yaml"
    path.write_text("family: min-op\nseed: 0\nepochs: 2\nn_train: 6\nn_test: 3\nbatch_size: 3\n", encoding="utf-8")
    result = _invoke("eval", "-c", str(path), "-o", str(tmp_path))
    # no model.json yet, so the config parsed and the run reached the model read
    assert result.exit_code == 3
    assert json.loads((tmp_path / "config.json").read_text(encoding="utf-8"))["epochs"] == 2


def test_non_string_family_exits_with_parse_status(tmp_path):
    config = _write(tmp_path / "bad.json", dict(TINY_TRAIN, family=["min-op"]))
    result = _invoke("train", "-c", config, "-o", str(tmp_path))
    assert result.exit_code == 2
    assert "family" in result.output
