"""Sensitivity of accuracy and token cost to L and to the format bonuses.

Grids: L in {200, 300, 400, 500} with default bonuses, and four bonus
triples with L = 300. Accuracy is reported for the perception-intensive and
reasoning-intensive classes, tokens as the mean over all classes.
"""

from dataclasses import replace
from pathlib import Path

import numpy as np
from _common import base_parser, mean_sd, run, write_csv

from formatlab.diagnostics import format_table
from formatlab.rewards import RewardConfig

L_GRID = (200, 300, 400, 500)
F_GRID = ((0.0, 0.1, 0.2), (0.0, 0.2, 0.4), (0.0, 0.3, 0.4), (0.0, 0.3, 0.5))


def evaluate(cfg, args):
    perc, reas, tok = [], [], []
    for seed in range(args.seeds):
        _, _, reports = run(cfg, seed, args.steps, args.eval_samples)
        perc.append(reports["perception_intensive"].overall_accuracy * 100)
        reas.append(reports["reasoning_intensive"].overall_accuracy * 100)
        tok.append(np.mean([r.overall_mean_tokens for r in reports.values()]))
    return perc, reas, tok


def main():
    args = base_parser(__doc__.splitlines()[0], "runs/sensitivity").parse_args()
    base = RewardConfig()
    rows = []
    for L in L_GRID:
        rows.append(["L", L, *map(mean_sd, evaluate(replace(base, L=L), args))])
    for f in F_GRID:
        rows.append(["f", "/".join(map(str, f)), *map(mean_sd, evaluate(replace(base, f=f), args))])
    header = ["grid", "value", "perception acc %", "reasoning acc %", "tokens"]
    write_csv(Path(args.out_dir) / "sensitivity.csv", header, rows)
    print(format_table(header, rows))


if __name__ == "__main__":
    main()
