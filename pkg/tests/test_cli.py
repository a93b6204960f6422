"""Tests for the ``iplearn`` command-line interface."""

from __future__ import annotations

import json
from pathlib import Path

import pytest

from iplearn.harness.cli import main

CONFIG = {
    "name": "cli",
    "seed": 0,
    "method": "ipl-xql",
    "environment": {"kind": "random", "n_states": 4, "n_actions": 2, "gamma": 0.9},
    "dataset": {"n_trajectories": 3, "horizon": 8, "k": 2, "n_pairs": 6},
    "algorithm": {"total_steps": 10, "eval_interval": 5, "pref_batch_size": 4, "offline_batch_size": 8},
}


@pytest.fixture
def config_file(tmp_path):
    def write(**overrides):
        path = tmp_path / "run.json"
        path.write_text(json.dumps({**CONFIG, **overrides}))
        return str(path)

    return write


def _run_dir(capsys) -> Path:
    return Path(capsys.readouterr().out.strip())


@pytest.mark.parametrize(
    ("command", "files"),
    [
        ("gen-env", {"config.json", "env.json"}),
        ("gen-data", {"config.json", "env.json", "dataset.jsonl"}),
        ("oracle", {"config.json", "env.json", "dataset.jsonl", "oracle.json"}),
    ],
)
def test_generation_commands(command, files, config_file, tmp_path, capsys):
    assert main([command, "--config", config_file(), "--out", str(tmp_path / "runs")]) == 0
    run_dir = _run_dir(capsys)
    assert run_dir.parent == tmp_path / "runs"
    assert {p.name for p in run_dir.iterdir()} == files


def test_train(config_file, tmp_path, capsys):
    assert main(["train", "--config", config_file(), "--out", str(tmp_path)]) == 0
    run_dir = _run_dir(capsys)
    assert (run_dir / "summary.json").is_file()
    assert (run_dir / "metrics.csv").read_text().startswith("# config_hash: ")


def test_train_overrides(config_file, tmp_path, capsys):
    argv = ["train", "--config", config_file(), "--out", str(tmp_path), "--seed", "3", "--variant", "ipl-iql"]
    assert main(argv) == 0
    summary = json.loads((_run_dir(capsys) / "summary.json").read_text())
    assert summary["seed"] == 3
    assert summary["method"] == "ipl-iql"


def test_out_defaults_to_config(config_file, tmp_path, capsys):
    assert main(["gen-env", "--config", config_file(out=str(tmp_path / "configured"))]) == 0
    assert _run_dir(capsys).parent == tmp_path / "configured"


def test_divergence_exit_code(config_file, tmp_path, capsys):
    path = config_file(algorithm={**CONFIG["algorithm"], "divergence_bound": 1e-9})
    assert main(["train", "--config", path, "--out", str(tmp_path)]) == 3
    assert "error: [train] TrainingDivergenceError" in capsys.readouterr().err


@pytest.mark.parametrize(
    ("content", "match"),
    [
        ('{"colour": "red"}', "unknown top-level"),
        ("{not json", "invalid JSON"),
        (None, "cannot read"),
    ],
)
def test_configuration_errors_exit_2(content, match, tmp_path, capsys):
    path = tmp_path / "bad.json"
    if content is not None:
        path.write_text(content)
    assert main(["gen-env", "--config", str(path)]) == 2
    assert match in capsys.readouterr().err


def test_sweep(config_file, tmp_path, capsys):
    path = config_file(sweep={"divergence_bound": [1e-9, 1e4]})
    assert main(["sweep", "--config", path, "--out", str(tmp_path)]) == 3
    lines = capsys.readouterr().out.splitlines()
    assert [line.split("\t")[0] for line in lines] == ["3", "0"]
    assert all(Path(line.split("\t")[1]).parent == tmp_path for line in lines)


def test_compare(config_file, tmp_path, capsys):
    run_dirs = []
    for seed in ("0", "1"):
        assert main(["train", "--config", config_file(), "--out", str(tmp_path), "--seed", seed]) == 0
        run_dirs.append(str(_run_dir(capsys)))
    table = tmp_path / "table.csv"
    assert main(["compare", *run_dirs, str(tmp_path / "missing"), "--out", str(table)]) == 0
    captured = capsys.readouterr()
    assert "ipl-xql" in captured.out
    assert f"missing: {tmp_path / 'missing'}" in captured.err
    header = table.read_text().splitlines()[0]
    assert header == "environment,method,n_pairs,mean,std,n_runs,seeds"


def test_command_is_required():
    with pytest.raises(SystemExit) as info:
        main([])
    assert info.value.code == 2
