"""Episode loop, experience flow, metrics and checkpoints for every algorithm."""

from __future__ import annotations

import csv
import io
import json
import subprocess
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .agents import Dims, make_agent, make_buffer, observe
from .config import MANIFEST_KIND, RunConfig
from .env import Environment
from .maq import epsilon_at
from .nn import CHECKPOINT_VERSION, CheckpointError, NonFiniteError

CHECKPOINT_KIND = "irslab-checkpoint"

METRICS_HEADER = (
    "epoch", "mean_reward", "mean_rate", "satisfaction_rate", "power_violations",
    "energy_violations", "rate_bound_violations", "energy_shortfalls", "mean_irs_power",
    "loss_high", "loss_low", "loss_policy", "epsilon", "learn_steps",
)

STREAMS = ("geometry", "init", "env", "explore", "replay", "learn")


class TrainingAborted(RuntimeError):
    """A loss went non-finite; a diagnostic checkpoint was written."""


@dataclass
class EpochMetrics:
    epoch: int
    mean_reward: float
    mean_rate: float
    satisfaction_rate: float
    power_violations: int
    energy_violations: int
    rate_bound_violations: int
    energy_shortfalls: int
    mean_irs_power: float
    loss_high: float = float("nan")
    loss_low: float = float("nan")
    loss_policy: float = float("nan")
    epsilon: float = 0.0
    learn_steps: int = 0

    def row(self):
        out = []
        for name in METRICS_HEADER:
            v = getattr(self, name)
            out.append(str(v) if isinstance(v, (int, np.integer)) else f"{v:.10g}")
        return out


def rng_streams(seed: int) -> dict:
    """Independent Philox generators per concern, all derived from one seed."""
    children = np.random.SeedSequence(int(seed)).spawn(len(STREAMS))
    return {name: np.random.Generator(np.random.Philox(ss)) for name, ss in zip(STREAMS, children)}


def reward_scale(env: Environment) -> float:
    return env.cfg.num_users * np.log2(1.0 + env.p_max / env.noise_power)


def rate_upper_bound(env: Environment, channels) -> float:
    """Sum-rate ceiling valid for any action: unit-modulus reflections, full power to one user."""
    g = np.linalg.norm(channels.bs_user, axis=1)
    for l in range(env.cfg.num_irs):
        g = g + np.linalg.norm(channels.irs_user[l], axis=1) * np.linalg.norm(
            channels.bs_irs[l], ord=2)
    return float(np.sum(np.log2(1.0 + env.p_max * g ** 2 / env.noise_power)))


def build(cfg: RunConfig, streams):
    env = Environment.from_seed(cfg.env, cfg.channel, streams["geometry"])
    dims = Dims.from_env(env)
    agent = make_agent(cfg.algorithm, dims, cfg.agent, streams["init"])
    return env, dims, agent


class _EpochStats:
    def __init__(self):
        self.rewards, self.rates, self.sat, self.irs_power = [], [], [], []
        self.pv = self.ev = self.rb = self.short = 0
        self.losses = {"loss_high": [], "loss_low": [], "loss_policy": []}

    def add(self, r, diag, bound):
        self.rewards.append(r)
        self.rates.append(diag["sum_rate"])
        self.sat.extend(diag["satisfied"])
        self.irs_power.append(float(np.sum(diag["irs_power"])))
        self.pv += diag["power_violation"]
        self.ev += diag["energy_violation"]
        self.rb += int(diag["sum_rate"] > bound * (1 + 1e-9))
        self.short += int(np.sum(diag["energy_shortfall"]))

    def add_losses(self, info):
        for k in self.losses:
            if k in info:
                self.losses[k].append(info[k])

    def metrics(self, epoch, eps, learn_steps):
        def mean(xs):
            xs = [x for x in xs if np.isfinite(x)]
            return float(np.mean(xs)) if xs else float("nan")
        return EpochMetrics(epoch, float(np.mean(self.rewards)), float(np.mean(self.rates)),
                            float(np.mean(self.sat)), self.pv, self.ev, self.rb, self.short,
                            float(np.mean(self.irs_power)), mean(self.losses["loss_high"]),
                            mean(self.losses["loss_low"]), mean(self.losses["loss_policy"]),
                            float(eps), int(learn_steps))


def rollout_epoch(env, agent, dims, steps, rngs):
    """One frozen-policy episode of ``steps`` slots (no exploration, no learning)."""
    stats = _EpochStats()
    state = env.reset(rngs["env"])
    prev_bits = np.full(dims.L, dims.resolutions[0] / dims.max_bits)
    for _ in range(steps):
        obs = observe(env, state, prev_bits)
        action, rec = agent.act(obs, rngs["explore"], eps=0.0, explore=False)
        bound = rate_upper_bound(env, state.channels)
        state, r, diag = env.step(state, action, rngs["env"])
        stats.add(r, diag, bound)
        prev_bits = rec["bits"]
    return stats


def git_revision() -> str:
    try:
        out = subprocess.run(["git", "rev-parse", "HEAD"], capture_output=True, text=True,
                             cwd=Path(__file__).resolve().parent, timeout=5)
    except (OSError, subprocess.SubprocessError):
        return "unknown"
    return out.stdout.strip() if out.returncode == 0 else "unknown"


def checkpoint_dict(cfg: RunConfig, agent, epoch: int, note: str = "") -> dict:
    return {"kind": CHECKPOINT_KIND, "version": CHECKPOINT_VERSION, "algorithm": cfg.algorithm,
            "epoch": int(epoch), "note": note, "config": cfg.to_dict(),
            "networks": agent.state_dict()}


def save_checkpoint(path, cfg, agent, epoch, note=""):
    Path(path).write_text(json.dumps(checkpoint_dict(cfg, agent, epoch, note), sort_keys=True))


def load_checkpoint(path):
    """Returns (RunConfig, agent); raises CheckpointError on a malformed or foreign file."""
    if not Path(path).is_file():
        raise FileNotFoundError(f"{path}: no such checkpoint")
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable checkpoint ({exc}); expected "
                              f"{CHECKPOINT_KIND} format version {CHECKPOINT_VERSION}") from exc
    if not isinstance(data, dict) or data.get("kind") != CHECKPOINT_KIND:
        raise CheckpointError(f"{path}: not an {CHECKPOINT_KIND} file")
    if data.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: format version {data.get('version')!r} unsupported; "
                              f"expected {CHECKPOINT_VERSION}")
    try:
        cfg = RunConfig.from_dict(data["config"])
        streams = rng_streams(cfg.seed)
        _, _, agent = build(cfg, streams)
        agent.load_state_dict(data["networks"])
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"{path}: {exc}") from exc
    return cfg, agent


def write_metrics(path, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRICS_HEADER)
    for m in rows:
        w.writerow(m.row())
    Path(path).write_text(buf.getvalue())


def read_metrics(path) -> dict:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return {name: np.array([float(r[name]) for r in rows]) for name in METRICS_HEADER}


def run_training(cfg: RunConfig, out_dir, algorithm=None) -> Path:
    """Train one algorithm; writes metrics.csv, manifest.json, timing.csv, checkpoint.json."""
    if algorithm is not None:
        cfg = RunConfig.from_dict({**cfg.to_dict(), "algorithm": algorithm})
    cfg.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=False)
    manifest = {"kind": MANIFEST_KIND, "config": cfg.to_dict(), "seed": cfg.seed,
                "algorithm": cfg.algorithm, "git_revision": git_revision()}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")

    rngs = rng_streams(cfg.seed)
    env, dims, agent = build(cfg, rngs)
    a = cfg.agent
    buffer = make_buffer(dims, a.buffer_size)
    total = cfg.epochs * cfg.steps
    start_learning = max(a.warmup, a.batch_size)
    counter = {"step": 0}
    rows, timing = [], []

    def learn():
        counter["step"] += 1
        if len(buffer) < start_learning:
            return None
        info = agent.learn(buffer.sample(a.batch_size, rngs["replay"]), rngs["learn"])
        bad = [k for k, v in info.items() if k.startswith("loss") and v is not None
               and not np.isfinite(v) and not (k == "loss_high" and agent.name == "maddpg")]
        if bad:
            save_checkpoint(out / "diagnostic_checkpoint.json", cfg, agent, len(rows),
                            note=f"non-finite {', '.join(bad)} at step {counter['step']}")
            write_metrics(out / "metrics.csv", rows)
            raise TrainingAborted(f"non-finite {', '.join(bad)} at step {counter['step']}")
        return info

    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        eps = epsilon_at(counter["step"], total, a.eps_start, a.eps_end)
        try:
            stats = _train_epoch(env, agent, dims, cfg.steps, rngs, buffer, learn, counter,
                                 total, a)
        except NonFiniteError as exc:
            save_checkpoint(out / "diagnostic_checkpoint.json", cfg, agent, epoch,
                            note=f"non-finite update: {exc}")
            write_metrics(out / "metrics.csv", rows)
            raise TrainingAborted(str(exc)) from exc
        rows.append(stats.metrics(epoch, eps, agent.learn_steps))
        timing.append((epoch, time.perf_counter() - t0))

    write_metrics(out / "metrics.csv", rows)
    (out / "timing.csv").write_text(
        "epoch,wall_seconds\n" + "".join(f"{e},{s:.6f}\n" for e, s in timing))
    save_checkpoint(out / "checkpoint.json", cfg, agent, cfg.epochs)
    return out


def _train_epoch(env, agent, dims, steps, rngs, buffer, learn, counter, total, a):
    stats = _EpochStats()
    state = env.reset(rngs["env"])
    prev_bits = np.full(dims.L, dims.resolutions[0] / dims.max_bits)
    scale = reward_scale(env) if a.normalize_reward else 1.0
    for _ in range(steps):
        eps = epsilon_at(counter["step"], total, a.eps_start, a.eps_end)
        obs = observe(env, state, prev_bits)
        action, rec = agent.act(obs, rngs["explore"], eps=eps, explore=True)
        bound = rate_upper_bound(env, state.channels)
        nxt, r, diag = env.step(state, action, rngs["env"])
        stats.add(r, diag, bound)
        obs2 = observe(env, nxt, rec["bits"])
        buffer.push(local=obs.local, prev_bits=obs.prev_bits, bs=obs.bs, reward=r / scale,
                    local2=obs2.local, bs2=obs2.bs, **rec)
        info = learn()
        if info:
            stats.add_losses(info)
        state, prev_bits = nxt, rec["bits"]
    return stats


def run_baseline_il(cfg: RunConfig, out_dir) -> Path:
    return run_training(cfg, out_dir, algorithm="il")


def run_baseline_maddpg(cfg: RunConfig, out_dir) -> Path:
    return run_training(cfg, out_dir, algorithm="maddpg")


def summarize(rows) -> dict:
    out = {"episodes": len(rows)}
    for name in ("mean_reward", "mean_rate", "satisfaction_rate", "mean_irs_power"):
        vals = np.array([getattr(m, name) for m in rows])
        out[name] = float(vals.mean())
        out[name + "_std"] = float(vals.std())
    for name in ("power_violations", "energy_violations", "rate_bound_violations"):
        out[name] = int(sum(getattr(m, name) for m in rows))
    out["exploration_steps"] = 0
    return out


def _evaluate(cfg, env, dims, agent, episodes, seed):
    rngs = rng_streams(seed)
    rows = []
    for ep in range(episodes):
        stats = rollout_epoch(env, agent, dims, cfg.steps, rngs)
        rows.append(stats.metrics(ep, 0.0, agent.learn_steps))
    return rows


def evaluate_policy(checkpoint, episodes: int, seed: int) -> dict:
    """Frozen-policy rollouts (no exploration, no learning); mean and std over episodes."""
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    cfg, agent = load_checkpoint(checkpoint)
    env, dims, _ = build(cfg, rng_streams(cfg.seed))
    summary = summarize(_evaluate(cfg, env, dims, agent, episodes, seed))
    summary["algorithm"] = cfg.algorithm
    summary["seed"] = int(seed)
    return summary


def random_policy_rewards(cfg: RunConfig, episodes=None, seed=None) -> np.ndarray:
    """Per-episode mean reward of the uniform random policy on the run's geometry."""
    rngs = rng_streams(cfg.seed)
    env = Environment.from_seed(cfg.env, cfg.channel, rngs["geometry"])
    dims = Dims.from_env(env)
    agent = make_agent("random", dims, cfg.agent, rngs["init"])
    eval_rngs = rng_streams(cfg.seed + 7919 if seed is None else seed)
    n = cfg.epochs if episodes is None else episodes
    return np.array([rollout_epoch(env, agent, dims, cfg.steps, eval_rngs).rewards
                     for _ in range(n)]).mean(axis=1)
