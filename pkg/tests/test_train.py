import json

import numpy as np
import pytest

from irslab.agents import Dims, make_agent, observe
from irslab.config import ALGORITHMS, RunConfig, load_config
from irslab.env import Environment, compute_sinr
from irslab.nn import CheckpointError
from irslab.train import (METRICS_HEADER, TrainingAborted, evaluate_policy, load_checkpoint,
                          random_policy_rewards, rate_upper_bound, read_metrics, rng_streams,
                          run_training)

from oracles import random_instance


def tiny(**over):
    data = {"epochs": 3, "steps": 6, "seed": 1,
            "env": {"num_irs": 2, "num_elements": 2, "num_users": 2, "num_antennas": 2},
            "agent": {"hidden": [8], "mixer_hidden": 4, "batch_size": 4, "warmup": 4,
                      "buffer_size": 50, "wolpertinger_k": 3, "target_period": 5,
                      "estimator_every": 2}}
    for k, v in over.items():
        if isinstance(v, dict):
            data[k] = {**data.get(k, {}), **v}
        else:
            data[k] = v
    return RunConfig.from_dict(data)


@pytest.mark.parametrize("algo", ALGORITHMS)
def test_every_algorithm_runs(tmp_path, algo):
    out = run_training(tiny(algorithm=algo), tmp_path / algo)
    m = read_metrics(out / "metrics.csv")
    assert len(m["epoch"]) == 3
    assert (out / "metrics.csv").read_text().splitlines()[0] == ",".join(METRICS_HEADER)
    assert m["learn_steps"][-1] == 18 - 4 + 1
    assert np.all(m["power_violations"] == 0) and np.all(m["energy_violations"] == 0)
    assert np.all(m["rate_bound_violations"] == 0)
    assert len((out / "timing.csv").read_text().splitlines()) == 4
    assert json.loads((out / "checkpoint.json").read_text())["algorithm"] == algo


def test_single_slot_single_epoch(tmp_path):
    out = run_training(tiny(epochs=1, steps=1), tmp_path / "r")
    m = read_metrics(out / "metrics.csv")
    assert m["learn_steps"][0] == 0 and np.isnan(m["loss_high"][0])


def test_single_irs_baseline(tmp_path):
    run_training(tiny(algorithm="il", env={"num_irs": 1}), tmp_path / "r")


def test_runs_are_byte_identical(tmp_path):
    a = run_training(tiny(), tmp_path / "a")
    b = run_training(tiny(), tmp_path / "b")
    c = run_training(tiny(seed=2), tmp_path / "c")
    for name in ("metrics.csv", "checkpoint.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    assert (a / "metrics.csv").read_bytes() != (c / "metrics.csv").read_bytes()


def test_manifest_reproduces_run(tmp_path):
    a = run_training(tiny(algorithm="maq-wp"), tmp_path / "a")
    cfg = load_config(a / "manifest.json")
    b = run_training(cfg, tmp_path / "b")
    assert (a / "metrics.csv").read_bytes() == (b / "metrics.csv").read_bytes()


def test_refuses_existing_directory(tmp_path):
    (tmp_path / "r").mkdir()
    with pytest.raises(FileExistsError):
        run_training(tiny(), tmp_path / "r")


def test_checkpoint_round_trip_and_eval(tmp_path):
    out = run_training(tiny(), tmp_path / "r")
    cfg, agent = load_checkpoint(out / "checkpoint.json")
    saved = json.loads((out / "checkpoint.json").read_text())["networks"]
    assert json.dumps(agent.state_dict(), sort_keys=True) == json.dumps(saved, sort_keys=True)
    s1 = evaluate_policy(out / "checkpoint.json", 2, 5)
    s2 = evaluate_policy(out / "checkpoint.json", 2, 5)
    s3 = evaluate_policy(out / "checkpoint.json", 2, 6)
    assert s1 == s2 and s1["mean_reward"] != s3["mean_reward"]
    assert s1["exploration_steps"] == 0 and s1["episodes"] == 2
    with pytest.raises(ValueError):
        evaluate_policy(out / "checkpoint.json", 0, 5)


def test_checkpoint_version_mismatch(tmp_path):
    out = run_training(tiny(), tmp_path / "r")
    data = json.loads((out / "checkpoint.json").read_text())
    data["version"] = 999
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(data))
    with pytest.raises(CheckpointError, match="version"):
        load_checkpoint(bad)
    bad.write_text("garbage")
    with pytest.raises(CheckpointError, match="version"):
        load_checkpoint(bad)


def test_non_finite_loss_aborts_with_diagnostic(tmp_path, monkeypatch):
    from irslab.agents import MaqAgent
    monkeypatch.setattr(MaqAgent, "learn", lambda self, batch, rng: {"loss_high": float("nan")})
    with pytest.raises(TrainingAborted, match="loss_high"):
        run_training(tiny(), tmp_path / "r")
    diag = json.loads((tmp_path / "r" / "diagnostic_checkpoint.json").read_text())
    assert "loss_high" in diag["note"]


def test_random_policy_rewards_deterministic():
    cfg = tiny()
    a = random_policy_rewards(cfg, episodes=3)
    assert np.array_equal(a, random_policy_rewards(cfg, episodes=3))
    assert a.shape == (3,) and np.all(np.isfinite(a))


def test_rate_upper_bound_dominates_random_actions():
    rng = np.random.default_rng(0)
    cfg = tiny()
    env = Environment.from_seed(cfg.env, cfg.channel, rng)
    dims = Dims.from_env(env)
    agent = make_agent("random", dims, cfg.agent, rng)
    for _ in range(200):
        state = env.reset(rng)
        action, _ = agent.act(observe(env, state, np.ones(dims.L)), rng)
        rate = np.sum(np.log2(1 + compute_sinr(state.channels, action, env.noise_power)))
        assert rate <= rate_upper_bound(env, state.channels) * (1 + 1e-9)


def test_streams_are_independent_and_reproducible():
    a, b = rng_streams(3), rng_streams(3)
    assert a["env"].random() == b["env"].random()
    x = rng_streams(3)
    assert x["env"].random() != x["replay"].random()
