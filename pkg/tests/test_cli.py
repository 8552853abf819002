import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from lipgan import metrics as mx
from lipgan.cli import analyze_trace, run_cli
from lipgan import losses
from lipgan.losses import LossSpec

CONFIG = Path(__file__).parent.parent / "configs" / "ring_ns.json"
TINY = ["--set", "iterations=12", "--set", "eval_every=6", "--set", "eval_samples=64",
        "--set", "gen.widths=[4,8,2]", "--set", "disc.widths=[2,8,1]"]


def test_verify_passes(capsys):
    assert run_cli(["verify"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert len(out) == 6 and all(line.startswith("PASS") for line in out)


def test_train_creates_trace_of_configured_length(tmp_path):
    out = tmp_path / "run"
    code = run_cli(["train", "--config", str(CONFIG), "--set", "loss.alpha=1e-9", *TINY,
                    "--out", str(out), "--quiet"])
    assert code == 0
    assert len((out / "trace.jsonl").read_text().splitlines()) == 12
    assert json.loads((out / "config.json").read_text())["loss"]["alpha"] == 1e-9
    for name in ("omega_vs_iter.svg", "metric_vs_param.svg", "samples_scatter.svg"):
        assert (out / name).exists()


def test_analyze_matches_recomputation(tmp_path, capsys):
    out = tmp_path / "run"
    assert run_cli(["train", *TINY, "--out", str(out), "--quiet"]) == 0
    report_path = tmp_path / "report.json"
    assert run_cli(["analyze", str(out / "trace.jsonl"), "--loss", "NS", "--window", "4",
                    "--out", str(report_path)]) == 0
    report = json.loads(report_path.read_text())
    records = mx.DomainTrace.from_jsonl(out / "trace.jsonl").records
    assert len(report["records"]) == len(records)
    spec = LossSpec("NS")
    for row, rec in zip(report["records"], records):
        assert row["psi"] == mx.attained_gradient_interval(spec, "real", np.array(rec["omega"]))
        assert row["psi_bound"] >= row["psi"][1] - row["psi"][0] - 1e-12
        assert row["psi_interval"] == losses.slope_range(spec, rec["omega"], "real")
    assert report["omega_union"] == mx.DomainTrace(records).omega_union
    assert analyze_trace(records, spec, window=4) == report


def test_sweep_command(tmp_path, capsys):
    out = tmp_path / "sw"
    code = run_cli(["sweep", *TINY, "--k-sn", "0.5,1", "--loss", "NS", "--seeds", "0",
                    "--workers", "1", "--out", str(out)])
    assert code == 0
    lines = (out / "sweep.csv").read_text().splitlines()
    assert lines[0] == "loss,alpha,k_sn,seed,frechet,coverage,hq_fraction,status"
    assert len(lines) == 3
    assert (out / "metric_vs_param.svg").exists()


def test_failed_run_exit_code(tmp_path):
    code = run_cli(["train", *TINY, "--set", "loss.kind=EXP", "--set", "loss.alpha=1e10",
                    "--set", "regularizer.k_sn=50", "--out", str(tmp_path), "--quiet"])
    assert code == 1


@pytest.mark.parametrize("argv", [
    ["train", "--bogus"],
    [],
    ["sweep", "--k-sn", "a,b"],
    ["train", "--set", "loss.beta=1", "--quiet"],
    ["train", "--set", "iterations=0", "--quiet"],
])
def test_usage_errors(argv, tmp_path, capsys):
    assert run_cli(argv + (["--out", str(tmp_path)] if argv[:1] == ["train"] else [])) == 2
    assert capsys.readouterr().err


def test_unknown_flag_prints_help(capsys):
    assert run_cli(["verify", "--nope"]) == 2
    err = capsys.readouterr().err
    assert "--nope" in err and "usage:" in err


def test_unreadable_config_names_path(tmp_path, capsys):
    missing = tmp_path / "nowhere.json"
    assert run_cli(["train", "--config", str(missing)]) == 2
    assert str(missing) in capsys.readouterr().err
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert run_cli(["train", "--config", str(bad)]) == 2
    assert str(bad) in capsys.readouterr().err


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "lipgan.cli", "verify", "--quiet"], capture_output=True)
    assert proc.returncode == 0
