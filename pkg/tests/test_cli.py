import json

import numpy as np
import pytest
import yaml
from helpers import raw_config

from mfed.cli import main


def write_config(tmp_path, raw, name="config.yaml"):
    path = tmp_path / name
    with open(path, "w") as fh:
        yaml.safe_dump(raw, fh)
    return str(path)


def test_missing_field_t_exits_2(tmp_path, capsys):
    raw = raw_config()
    del raw["T"]
    code = main(["run", "--config", write_config(tmp_path, raw),
                 "--out", str(tmp_path / "out")])
    assert code == 2
    assert "T" in capsys.readouterr().err


def test_unknown_key_rejected(tmp_path, capsys):
    raw = raw_config(bogus_knob=3)
    code = main(["run", "--config", write_config(tmp_path, raw),
                 "--out", str(tmp_path / "out")])
    assert code == 2
    assert "bogus_knob" in capsys.readouterr().err


def test_bad_mode_rejected(tmp_path, capsys):
    raw = raw_config(mode="centralized")
    code = main(["run", "--config", write_config(tmp_path, raw),
                 "--out", str(tmp_path / "out")])
    assert code == 2
    assert "mode" in capsys.readouterr().err


def test_missing_config_file_exits_2(tmp_path, capsys):
    code = main(["run", "--config", str(tmp_path / "nope.yaml"),
                 "--out", str(tmp_path / "out")])
    assert code == 2


def test_tiny_run_writes_t_lines(tmp_path, capsys):
    cfg = write_config(tmp_path, raw_config())
    code = main(["run", "--config", cfg, "--out", str(tmp_path / "out")])
    assert code == 0
    lines = (tmp_path / "out" / "rounds.jsonl").read_text().strip().splitlines()
    assert len(lines) == 3
    rec = json.loads(lines[0])
    assert set(rec) == {"round", "lambda", "task_metrics",
                        "per_client_loss", "per_client_drift"}
    out = capsys.readouterr().out
    assert "mse" in out and "accuracy" in out


def test_rerun_byte_identical(tmp_path):
    cfg = write_config(tmp_path, raw_config())
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "a")]) == 0
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "b")]) == 0
    assert (tmp_path / "a" / "rounds.jsonl").read_bytes() == \
        (tmp_path / "b" / "rounds.jsonl").read_bytes()


def test_threads_flag_does_not_change_output(tmp_path):
    cfg = write_config(tmp_path, raw_config())
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "t1"),
                 "--threads", "1"]) == 0
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "t8"),
                 "--threads", "8"]) == 0
    assert (tmp_path / "t1" / "rounds.jsonl").read_bytes() == \
        (tmp_path / "t8" / "rounds.jsonl").read_bytes()


def test_seed_override_changes_output(tmp_path):
    cfg = write_config(tmp_path, raw_config())
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "s0")]) == 0
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "s9"),
                 "--seed", "9"]) == 0
    assert (tmp_path / "s0" / "rounds.jsonl").read_bytes() != \
        (tmp_path / "s9" / "rounds.jsonl").read_bytes()


def test_compare_run_with_itself(tmp_path, capsys):
    cfg = write_config(tmp_path, raw_config())
    main(["run", "--config", cfg, "--out", str(tmp_path / "base")])
    capsys.readouterr()
    code = main(["compare", str(tmp_path / "base"), str(tmp_path / "base")])
    assert code == 0
    out = capsys.readouterr().out
    assert out.count("+0.00") == 2


def test_compare_hand_built_summaries(tmp_path, capsys):
    for name, metric_value in (("a", 10.0), ("b", 11.0)):
        d = tmp_path / name
        d.mkdir()
        (d / "summary.csv").write_text(
            "task_id,mode,best_metric,final_metric,delta_m_percent\n"
            f"1,local,{metric_value},{metric_value},0.0\n")
        (d / "config.yaml").write_text(yaml.safe_dump({
            "mode": "local",
            "tasks": [{"task_id": 1, "kind": "categorical",
                       "metric": "accuracy", "classes": 4, "positions": 1}],
        }))
    code = main(["compare", str(tmp_path / "a"), str(tmp_path / "b")])
    assert code == 0
    out = capsys.readouterr().out
    assert "+10.00" in out
    assert "11.000000*" in out  # best per task marked


def test_compare_requires_two_dirs(tmp_path, capsys):
    code = main(["compare", str(tmp_path)])
    assert code == 2


def test_compare_rejects_mismatched_tasks(tmp_path, capsys):
    cfg_a = write_config(tmp_path, raw_config(), "a.yaml")
    main(["run", "--config", cfg_a, "--out", str(tmp_path / "a")])
    raw_b = raw_config()
    raw_b["tasks"] = [{"task_id": 1, "kind": "regression", "metric": "mse"}]
    cfg_b = write_config(tmp_path, raw_b, "b.yaml")
    main(["run", "--config", cfg_b, "--out", str(tmp_path / "b")])
    capsys.readouterr()
    code = main(["compare", str(tmp_path / "a"), str(tmp_path / "b")])
    assert code == 2
    assert "task set" in capsys.readouterr().err


def test_rate_check_passes_and_writes_report(tmp_path, capsys):
    cfg = write_config(tmp_path, {"seed": 0, "T": 120, "num_tasks": 2,
                                  "dim": 3, "noise": 0.3, "draws": 40})
    code = main(["rate-check", "--config", cfg, "--out", str(tmp_path / "rate")])
    assert code == 0
    assert (tmp_path / "rate" / "rate_deterministic.csv").exists()
    assert (tmp_path / "rate" / "rate_stochastic.csv").exists()
    assert (tmp_path / "rate" / "rate_deterministic.png").stat().st_size > 0
    assert (tmp_path / "rate" / "rate_stochastic.png").stat().st_size > 0
    lines = (tmp_path / "rate" / "rate_stochastic.csv").read_text().splitlines()
    assert len(lines) == 121


def test_rate_check_rejects_short_horizon(tmp_path, capsys):
    cfg = write_config(tmp_path, {"T": 49})
    code = main(["rate-check", "--config", cfg, "--out", str(tmp_path / "rate")])
    assert code == 2
    assert "T" in capsys.readouterr().err


def test_rate_check_detects_divergence(tmp_path, capsys):
    # eta = 10/mu violates step-size sanity for mu = 1
    cfg = write_config(tmp_path, {"seed": 0, "T": 120, "num_tasks": 2,
                                  "dim": 3, "noise": 0.0, "eta": 10.0})
    code = main(["rate-check", "--config", cfg, "--out", str(tmp_path / "rate")])
    assert code == 3


def test_plotdata_outputs(tmp_path, capsys):
    cfg = write_config(tmp_path, raw_config())
    main(["run", "--config", cfg, "--out", str(tmp_path / "run")])
    code = main(["plotdata", str(tmp_path / "run")])
    assert code == 0
    metrics = (tmp_path / "run" / "metrics.dat").read_text().strip().splitlines()
    drift = (tmp_path / "run" / "drift.dat").read_text().strip().splitlines()
    assert metrics[0].startswith("#")
    assert len(metrics) == 4 and len(drift) == 4  # header + T rows
    # drift column 3 equals the mean per-client drift from rounds.jsonl
    records = [json.loads(line) for line in
               (tmp_path / "run" / "rounds.jsonl").read_text().splitlines()]
    for row, rec in zip(drift[1:], records):
        assert float(row.split()[2]) == float(np.mean(rec["per_client_drift"]))
    assert (tmp_path / "run" / "metrics.png").stat().st_size > 0
    assert (tmp_path / "run" / "drift.png").stat().st_size > 0


def test_plotdata_separate_out_dir(tmp_path):
    cfg = write_config(tmp_path, raw_config())
    main(["run", "--config", cfg, "--out", str(tmp_path / "run")])
    code = main(["plotdata", str(tmp_path / "run"), "--out", str(tmp_path / "plots")])
    assert code == 0
    assert (tmp_path / "plots" / "metrics.dat").exists()


def test_plotdata_missing_rounds_file(tmp_path, capsys):
    (tmp_path / "empty").mkdir()
    code = main(["plotdata", str(tmp_path / "empty")])
    assert code == 2
    assert "rounds.jsonl" in capsys.readouterr().err


def test_run_without_out_dir_rejected(tmp_path, capsys):
    raw = raw_config()
    code = main(["run", "--config", write_config(tmp_path, raw)])
    assert code == 2
    assert "out_dir" in capsys.readouterr().err


def test_baseline_dir_flows_into_summary(tmp_path, capsys):
    raw_local = raw_config(mode="local")
    main(["run", "--config", write_config(tmp_path, raw_local, "local.yaml"),
          "--out", str(tmp_path / "local")])
    raw_mfed = raw_config(baseline_dir=str(tmp_path / "local"))
    code = main(["run", "--config", write_config(tmp_path, raw_mfed, "mfed.yaml"),
                 "--out", str(tmp_path / "mfed")])
    assert code == 0
    summary = (tmp_path / "mfed" / "summary.csv").read_text()
    deltas = [float(line.split(",")[4]) for line in summary.strip().splitlines()[1:]]
    assert any(d != 0.0 for d in deltas)
