import json
import subprocess
import sys
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from irslab.cli import main, moving_average
from irslab.config import dump_config
from irslab.train import read_metrics

from test_train import tiny


@pytest.fixture()
def cfg_path(tmp_path):
    p = tmp_path / "cfg.json"
    dump_config(tiny(), p)
    return p


@pytest.fixture()
def run_dir(tmp_path, cfg_path):
    out = tmp_path / "run"
    assert main(["train", "--config", str(cfg_path), "--out", str(out)]) == 0
    return out


def test_train_seed_and_env_fallback(tmp_path, cfg_path, monkeypatch):
    monkeypatch.setenv("IRSLAB_SEED", "9")
    assert main(["train", "--config", str(cfg_path), "--out", str(tmp_path / "a")]) == 0
    assert json.loads((tmp_path / "a" / "manifest.json").read_text())["seed"] == 9
    assert main(["train", "--config", str(cfg_path), "--seed", "4", "--algo", "il",
                 "--out", str(tmp_path / "b")]) == 0
    man = json.loads((tmp_path / "b" / "manifest.json").read_text())
    assert (man["seed"], man["algorithm"]) == (4, "il")


def test_train_usage_errors(tmp_path, cfg_path, run_dir):
    assert main(["train", "--config", str(tmp_path / "nope.json"), "--out",
                 str(tmp_path / "x")]) == 2
    assert main(["train", "--config", str(cfg_path), "--out", str(run_dir)]) == 2
    zero = tmp_path / "zero.json"
    data = json.loads(cfg_path.read_text())
    data["env"]["num_irs"] = 0
    zero.write_text(json.dumps(data))
    assert main(["train", "--config", str(zero), "--out", str(tmp_path / "z")]) == 2
    with pytest.raises(SystemExit) as exc:
        main(["train", "--config", str(cfg_path), "--algo", "bogus", "--out", "x"])
    assert exc.value.code == 2


def test_eval_writes_sidecar(tmp_path, run_dir, capsys):
    side = tmp_path / "e.json"
    ck = str(run_dir / "checkpoint.json")
    assert main(["eval", "--checkpoint", ck, "--episodes", "2", "--seed", "3",
                 "--json", str(side)]) == 0
    first = side.read_text()
    assert json.loads(first)["episodes"] == 2
    assert "reward=" in capsys.readouterr().out
    assert main(["eval", "--checkpoint", ck, "--episodes", "2", "--seed", "3",
                 "--json", str(side)]) == 0
    assert side.read_text() == first


def test_eval_errors(tmp_path, run_dir):
    ck = str(run_dir / "checkpoint.json")
    assert main(["eval", "--checkpoint", ck, "--episodes", "0"]) == 2
    bad = tmp_path / "bad.json"
    data = json.loads((run_dir / "checkpoint.json").read_text())
    data["version"] = -1
    bad.write_text(json.dumps(data))
    assert main(["eval", "--checkpoint", str(bad), "--episodes", "1"]) == 1
    bad.write_text("{trunc")
    assert main(["eval", "--checkpoint", str(bad), "--episodes", "1"]) == 1
    assert main(["eval", "--checkpoint", str(tmp_path / "missing.json"), "--episodes", "1"]) == 2


def test_moving_average_constant_and_trailing():
    np.testing.assert_allclose(moving_average(np.full(250, 3.5)), 3.5)
    np.testing.assert_allclose(moving_average([1.0, 2.0, 3.0], window=2), [1.0, 1.5, 2.5])


def test_plotdata_outputs(tmp_path, run_dir):
    out = tmp_path / "plots"
    assert main(["plotdata", "--runs", str(run_dir), "--out", str(out),
                 "--curves", "reward", "satisfaction"]) == 0
    raw = np.loadtxt(out / "run_reward.dat")
    np.testing.assert_allclose(raw[:, 1], read_metrics(run_dir / "metrics.csv")["mean_reward"],
                               rtol=1e-9)
    ma = np.loadtxt(out / "run_reward_ma100.dat")
    np.testing.assert_allclose(ma[:, 1], moving_average(raw[:, 1]), rtol=1e-9)
    for curve in ("reward", "satisfaction"):
        root = ET.parse(out / f"{curve}.svg").getroot()
        assert root.tag.endswith("svg")
        assert any(el.tag.endswith("polyline") for el in root.iter())
    assert main(["plotdata", "--runs", str(run_dir), "--out", str(out)]) == 2
    assert main(["plotdata", "--runs", str(tmp_path), "--out", str(tmp_path / "p2")]) == 2


def test_inspect_is_deterministic(cfg_path, capsys):
    assert main(["inspect", "--config", str(cfg_path)]) == 0
    first = capsys.readouterr().out
    assert main(["inspect", "--config", str(cfg_path)]) == 0
    assert capsys.readouterr().out == first
    assert "counts agree" in first


def test_console_entry_point(cfg_path):
    proc = subprocess.run([sys.executable, "-m", "irslab.cli", "inspect", "--config",
                           str(cfg_path)], capture_output=True, text=True)
    assert proc.returncode == 0 and "counts agree" in proc.stdout
