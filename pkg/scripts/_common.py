"""Helpers shared by the experiment scripts."""

from __future__ import annotations

import argparse
import csv
from dataclasses import replace
from pathlib import Path

import numpy as np

from formatlab.diagnostics import format_report
from formatlab.env import SimEnv
from formatlab.rewards import RewardConfig
from formatlab.trainer import TrainerConfig, evaluate_policy, train


def base_parser(description: str, out: str) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(description=description)
    p.add_argument("--seeds", type=int, default=3, help="number of seeds (0..n-1)")
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--eval-samples", type=int, default=1000)
    p.add_argument("--out-dir", default=out)
    return p


def run(cfg: RewardConfig, seed: int, steps: int, eval_samples: int, env: SimEnv | None = None):
    """Train one seed and evaluate it; returns (result, env, {class: FormatReport})."""
    cfg = replace(cfg, T=max(steps, 1))
    env = env or SimEnv(seed=seed)
    res = train(cfg, TrainerConfig(steps=steps, seed=seed), env)
    rollouts = evaluate_policy(res.params, env, cfg, eval_samples, seed=seed)
    return res, env, {name: format_report(rows) for name, rows in rollouts.items()}


def write_csv(path: Path, header, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def mean_sd(values) -> str:
    v = np.asarray(values, dtype=float)
    return f"{v.mean():.3f} ± {v.std():.3f}"
