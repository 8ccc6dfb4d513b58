import json
import shutil
import subprocess
import sys
from pathlib import Path

import pytest

from orbitcert.cli import EXIT_ERROR, EXIT_OK, EXIT_PARTIAL, main

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def run(tmp_path: Path, config: str | Path, *flags: str, out: str = "out") -> tuple[int, Path]:
    dest = tmp_path / out
    code = main(["run", str(config), "--out", str(dest), *flags])
    return code, dest


def write(tmp_path: Path, text: str, name: str = "cfg.toml") -> Path:
    p = tmp_path / name
    p.write_text(text)
    return p


def test_weakmix_smoke_run(tmp_path):
    code, out = run(tmp_path, CONFIGS / "odometer-weakmix.toml")
    assert code == EXIT_OK
    rep = json.loads((out / "report.json").read_text())
    assert rep["pipeline"] == "weakmix" and rep["seed"] == 7
    assert len(rep["stages"]) == 2
    assert rep["failures"] == [] and rep["aborted"] is None
    assert rep["designated_stages"][0] == 1
    for tag in ("alpha_1", "beta_1", "alpha_-1", "beta_-1"):
        assert (out / f"ledger_{tag}.csv").read_text().startswith("stage,mass,size")


def test_reruns_are_byte_identical(tmp_path):
    _, a = run(tmp_path, CONFIGS / "odometer-weakmix.toml", out="a")
    _, b = run(tmp_path, CONFIGS / "odometer-weakmix.toml", out="b")
    names = sorted(p.name for p in a.iterdir())
    assert names == sorted(p.name for p in b.iterdir())
    for n in names:
        assert (a / n).read_bytes() == (b / n).read_bytes()


def test_stage_and_sigma_flags(tmp_path):
    code, out = run(tmp_path, CONFIGS / "odometer-weakmix.toml", "--stages", "1", "--sigma", "iid", "--seed", "3")
    rep = json.loads((out / "report.json").read_text())
    assert code == EXIT_OK
    assert len(rep["stages"]) == 1
    assert rep["stages"][0]["sigma"]["mode"] == "seeded-iid"
    assert rep["config"]["sigma"]["mode"] == "seeded-iid" and rep["seed"] == 3


@pytest.mark.parametrize("name,pipeline", [("ztile.toml", "ztile"), ("entropy-only.toml", "entropy-only")])
def test_other_pipelines(tmp_path, name, pipeline):
    code, out = run(tmp_path, CONFIGS / name)
    rep = json.loads((out / "report.json").read_text())
    assert code == EXIT_OK and rep["pipeline"] == pipeline
    assert any(p.name.startswith("ledger_") for p in out.iterdir())


def test_epsilon_above_schedule_is_rejected(tmp_path, capsys):
    cfg = write(tmp_path, 'pipeline = "weakmix"\n[schedule]\nstages = 1\nepsilons = ["1/2"]\n')
    code, out = run(tmp_path, cfg)
    err = capsys.readouterr().err
    assert code == EXIT_ERROR
    assert "schedule invariant" in err and "schedule.epsilons" in err
    assert not out.exists()


def test_unknown_key_reports_its_path(tmp_path, capsys):
    cfg = write(tmp_path, '[sigma]\nmode = "exact"\nwobble = 3\n')
    assert run(tmp_path, cfg)[0] == EXIT_ERROR
    assert "sigma.wobble" in capsys.readouterr().err


def test_float_rationals_are_rejected(tmp_path, capsys):
    cfg = write(tmp_path, 'pipeline = "entropy-only"\n[schedule]\neps_ratio = 0.5\n')
    assert run(tmp_path, cfg)[0] == EXIT_ERROR
    assert "schedule.eps_ratio" in capsys.readouterr().err


def test_json_config_and_budget_abort(tmp_path):
    cfg = write(tmp_path, json.dumps({
        "pipeline": "weakmix", "base": {"depth": 8},
        "schedule": {"stages": 1, "K1": 2, "L": [32], "M": [128], "partition_sizes": [2]},
        "sigma": {"mode": "exact"}, "budgets": {"cells": 4},
    }), name="cfg.json")
    code, out = run(tmp_path, cfg)
    assert code == EXIT_PARTIAL
    assert "budget" in json.loads((out / "report.json").read_text())["aborted"]


def test_console_entry_point(tmp_path):
    exe = shutil.which("orbitcert")
    cmd = [exe] if exe else [sys.executable, "-m", "orbitcert.cli"]
    proc = subprocess.run([*cmd, "run", str(CONFIGS / "ztile.toml"), "--out", str(tmp_path / "z")],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "z" / "report.json").exists()
