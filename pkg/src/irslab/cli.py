"""Command-line entry point: train, eval, plotdata, inspect.

Exit codes: 0 ok, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .config import ALGORITHMS, ConfigError, RunConfig, load_config
from .nn import Architecture, CheckpointError, count_parameters
from .train import (TrainingAborted, evaluate_policy, read_metrics, run_baseline_il,
                    run_baseline_maddpg, run_training)

CURVES = {"reward": "mean_reward", "rate": "mean_rate", "satisfaction": "satisfaction_rate"}
MA_WINDOW = 100


class UsageError(Exception):
    pass


def _seed(arg):
    if arg is not None:
        return arg
    env = os.environ.get("IRSLAB_SEED")
    if env is None:
        return None
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"IRSLAB_SEED: expected an integer, got {env!r}")


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    data = cfg.to_dict()
    seed = _seed(args.seed)
    if seed is not None:
        data["seed"] = seed
    if args.algo is not None:
        data["algorithm"] = args.algo
    cfg = RunConfig.from_dict(data)
    out = Path(args.out)
    if out.exists():
        raise UsageError(f"{out}: already exists; runs are written to fresh directories")
    runner = {"il": run_baseline_il, "maddpg": run_baseline_maddpg}.get(cfg.algorithm)
    path = runner(cfg, out) if runner else run_training(cfg, out)
    print(f"run written to {path}")
    return 0


def cmd_eval(args) -> int:
    if args.episodes < 1:
        raise UsageError("--episodes must be >= 1")
    seed = _seed(args.seed)
    seed = 0 if seed is None else seed
    summary = evaluate_policy(args.checkpoint, args.episodes, seed)
    print(f"algorithm={summary['algorithm']} episodes={summary['episodes']} seed={seed} "
          f"reward={summary['mean_reward']:.6f}+-{summary['mean_reward_std']:.6f} "
          f"rate={summary['mean_rate']:.6f} satisfaction={summary['satisfaction_rate']:.6f}")
    sidecar = Path(args.json) if args.json else Path(
        f"eval_{Path(args.checkpoint).stem}_seed{seed}.json")
    sidecar.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return 0


def moving_average(values, window=MA_WINDOW):
    """Trailing mean over up to ``window`` points (shorter at the start)."""
    v = np.asarray(values, dtype=float)
    c = np.concatenate([[0.0], np.cumsum(v)])
    idx = np.arange(1, len(v) + 1)
    lo = np.maximum(idx - window, 0)
    return (c[idx] - c[lo]) / (idx - lo)


def write_dat(path, x, y):
    lines = ["# epoch value"] + [f"{int(a)} {b:.10g}" for a, b in zip(x, y)]
    Path(path).write_text("\n".join(lines) + "\n")


def svg_chart(series, title, width=640, height=400):
    """Minimal line chart; ``series`` is a list of (label, x, y)."""
    pad = 50
    xs = np.concatenate([np.asarray(s[1], float) for s in series])
    ys = np.concatenate([np.asarray(s[2], float) for s in series])
    ys = ys[np.isfinite(ys)]
    x0, x1 = float(xs.min()), float(xs.max())
    y0, y1 = (float(ys.min()), float(ys.max())) if len(ys) else (0.0, 1.0)
    x1 = x1 if x1 > x0 else x0 + 1
    y1 = y1 if y1 > y0 else y0 + 1

    def sx(x):
        return pad + (x - x0) / (x1 - x0) * (width - 2 * pad)

    def sy(y):
        return height - pad - (y - y0) / (y1 - y0) * (height - 2 * pad)

    colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
             f'<rect width="{width}" height="{height}" fill="white"/>',
             f'<text x="{width / 2}" y="20" text-anchor="middle">{escape(title)}</text>',
             f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" '
             'stroke="black"/>',
             f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
             f'<text x="{pad}" y="{height - pad + 15}">{x0:g}</text>',
             f'<text x="{width - pad}" y="{height - pad + 15}" text-anchor="end">{x1:g}</text>',
             f'<text x="{pad - 5}" y="{height - pad}" text-anchor="end">{y0:.3g}</text>',
             f'<text x="{pad - 5}" y="{pad}" text-anchor="end">{y1:.3g}</text>']
    for i, (label, x, y) in enumerate(series):
        pts = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in zip(x, y) if np.isfinite(b))
        color = colors[i % len(colors)]
        parts.append(f'<polyline fill="none" stroke="{color}" points="{pts}"/>')
        parts.append(f'<text x="{width - pad}" y="{pad + 15 * i}" text-anchor="end" '
                     f'fill="{color}">{escape(label)}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def cmd_plotdata(args) -> int:
    out = Path(args.out)
    if out.exists() and any(out.iterdir()):
        raise UsageError(f"{out}: exists and is not empty")
    runs = []
    for run in args.runs:
        path = Path(run) / "metrics.csv"
        if not path.is_file():
            raise UsageError(f"{run}: no metrics.csv")
        runs.append((Path(run).name, read_metrics(path)))
    names = [n for n, _ in runs]
    if len(set(names)) != len(names):
        names = [f"run{i}_{n}" for i, n in enumerate(names)]
    out.mkdir(parents=True, exist_ok=True)
    for curve in args.curves:
        col = CURVES[curve]
        series = []
        for name, (_, m) in zip(names, runs):
            x, y = m["epoch"], m[col]
            ma = moving_average(y)
            write_dat(out / f"{name}_{curve}.dat", x, y)
            write_dat(out / f"{name}_{curve}_ma{MA_WINDOW}.dat", x, ma)
            series.append((name, x, ma))
        (out / f"{curve}.svg").write_text(svg_chart(series, f"{curve} (moving average "
                                                            f"{MA_WINDOW})"))
    print(f"plot data written to {out}")
    return 0


def inspect_report(cfg: RunConfig) -> str:
    e, a = cfg.env, cfg.agent
    arch = Architecture.uniform(a.hidden, a.mixer_hidden)
    rep = count_parameters(arch, e.num_irs, e.num_users, e.num_elements, e.num_antennas)
    lines = [f"L={e.num_irs} K={e.num_users} N={e.num_elements} M={e.num_antennas} "
             f"hidden={list(a.hidden)} mixer_hidden={a.mixer_hidden}",
             f"{'term':<14}{'formula':>12}{'constructed':>14}"]
    for term, value in rep["formula"].items():
        lines.append(f"{term:<14}{value:>12}{rep['constructed'][term]:>14}")
    lines.append(f"{'total':<14}{rep['formula_total']:>12}{rep['constructed_total']:>14}")
    lines.append("counts agree" if rep["match"] else "MISMATCH between formula and constructed")
    return "\n".join(lines)


def cmd_inspect(args) -> int:
    print(inspect_report(load_config(args.config)))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="irslab", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train one algorithm into a fresh run directory")
    t.add_argument("--config", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--out", required=True)
    t.add_argument("--algo", choices=ALGORITHMS)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint with exploration off")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--episodes", type=int, required=True)
    e.add_argument("--seed", type=int)
    e.add_argument("--json", help="sidecar path (default: eval_<checkpoint>_seed<S>.json)")
    e.set_defaults(func=cmd_eval)

    d = sub.add_parser("plotdata", help="emit curve data files and SVG charts")
    d.add_argument("--runs", nargs="+", required=True)
    d.add_argument("--out", required=True)
    d.add_argument("--curves", nargs="+", choices=tuple(CURVES), default=["reward"])
    d.set_defaults(func=cmd_plotdata)

    i = sub.add_parser("inspect", help="weight-count report for a config")
    i.add_argument("--config", required=True)
    i.set_defaults(func=cmd_inspect)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"irslab {args.command}: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"irslab {args.command}: {exc}", file=sys.stderr)
        return 2
    except (CheckpointError, TrainingAborted, OSError) as exc:
        print(f"irslab {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
