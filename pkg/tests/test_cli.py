import json
import os
import subprocess
import sys

import pytest

from iekf_slam.cli import load_config, main, parse_filters
from iekf_slam.exceptions import ConfigError
from iekf_slam.sim import SimConfig


def small_config(path, **extra):
    d = SimConfig(n_loops=1, n_runs=2).to_dict()
    del d["loop_radius"]
    d.update(extra)
    path.write_text(json.dumps(d))
    return path


def test_load_config_requires_every_field(tmp_path):
    p = small_config(tmp_path / "c.json")
    d = json.loads(p.read_text())
    del d["obs_sigma"]
    p.write_text(json.dumps(d))
    with pytest.raises(ConfigError, match="obs_sigma"):
        load_config(p)


def test_load_config_extras(tmp_path):
    config, extra = load_config(small_config(tmp_path / "c.json", filters=["iekf"], audit=False))
    assert config.n_steps == 40 and extra == {"filters": ["iekf"], "audit": False}


def test_load_config_bad_json(tmp_path):
    p = tmp_path / "c.json"
    p.write_text("{\n  \"dt\": 1,,\n}")
    with pytest.raises(ConfigError, match=":2:"):
        load_config(p)


def test_parse_filters():
    assert parse_filters("ekf, iekf") == ["ekf", "iekf"]
    with pytest.raises(ConfigError, match="ukf"):
        parse_filters("iekf,ukf")


def test_simulate_run_check(tmp_path, capsys):
    cfg = small_config(tmp_path / "c.json")
    data = tmp_path / "data"
    assert main(["simulate", "--config", str(cfg), "--out", str(data)]) == 0
    assert sorted(p.name for p in data.iterdir()) == ["config.json", "run_000000.jsonl", "run_000001.jsonl"]
    out = tmp_path / "out"
    assert main(["run", "--dataset", str(data), "--out", str(out)]) == 0
    assert sorted(p.name for p in out.iterdir()) == ["audit.csv", "ellipses.json", "metrics.csv", "summary.json"]
    summary = json.loads((out / "summary.json").read_text())
    assert set(summary) == {"ekf", "iekf", "ideal-ekf"}
    metrics = (out / "metrics.csv").read_text().splitlines()
    assert len(metrics) == 1 + 3 * 40
    audit = (out / "audit.csv").read_text().splitlines()
    assert len(audit) == 1 + 2 * 3 * 40 * 3
    capsys.readouterr()
    report_path = tmp_path / "report.json"
    assert main(["check", "--dataset", str(data), "--out", str(report_path)]) == 0
    report = json.loads(report_path.read_text())
    assert report["passed"] and {c["check"] for c in report["checks"]} == {
        "kernel_residual", "information_nonincreasing", "numerical_failures"}


def test_check_fails_for_ekf(tmp_path, capsys):
    cfg = small_config(tmp_path / "c.json")
    assert main(["check", "--config", str(cfg), "--filters", "ekf"]) == 1
    report = json.loads(capsys.readouterr().out)
    failed = {c["check"] for c in report["checks"] if not c["pass"]}
    assert "kernel_residual" in failed


def test_run_replay_matches_in_memory(tmp_path):
    cfg = small_config(tmp_path / "c.json")
    data = tmp_path / "data"
    main(["simulate", "--config", str(cfg), "--out", str(data)])
    main(["run", "--dataset", str(data), "--out", str(tmp_path / "a"), "--filters", "iekf"])
    main(["run", "--config", str(cfg), "--out", str(tmp_path / "b"), "--filters", "iekf"])
    for name in ("metrics.csv", "audit.csv", "summary.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_errors_exit_2(tmp_path, capsys):
    cfg = small_config(tmp_path / "c.json")
    assert main(["run", "--config", str(cfg), "--filters", "ukf", "--out", str(tmp_path / "o")]) == 2
    assert "ukf" in capsys.readouterr().err
    d = json.loads(cfg.read_text())
    del d["speed"]
    cfg.write_text(json.dumps(d))
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "d")]) == 2
    assert "speed" in capsys.readouterr().err


def test_truncated_dataset_exit_2(tmp_path, capsys):
    cfg = small_config(tmp_path / "c.json", n_runs=1)
    data = tmp_path / "data"
    main(["simulate", "--config", str(cfg), "--out", str(data)])
    run = data / "run_000000.jsonl"
    run.write_text("\n".join(run.read_text().splitlines()[:11]) + "\n")
    assert main(["check", "--dataset", str(data)]) == 2
    assert "step 10" in capsys.readouterr().err


def test_entry_point_subprocess(tmp_path):
    cfg = small_config(tmp_path / "c.json", n_runs=1)
    env = {**os.environ, "IEKF_SLAM_WORKERS": "2"}
    proc = subprocess.run([sys.executable, "-m", "iekf_slam", "check", "--config", str(cfg)],
                          capture_output=True, text=True, env=env)
    assert proc.returncode == 0, proc.stderr
    assert json.loads(proc.stdout)["passed"]
