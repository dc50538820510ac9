"""Training with reduced format sets: full only, perception-only + full,
direct + full, and all three formats."""

from pathlib import Path

import numpy as np
from _common import base_parser, mean_sd, run, write_csv

from formatlab.diagnostics import format_table
from formatlab.rewards import format_ablation_configs


def main():
    args = base_parser(__doc__.splitlines()[0], "runs/format_ablation").parse_args()
    rows = []
    for name, cfg in format_ablation_configs().items():
        acc, tok = [], []
        for seed in range(args.seeds):
            _, _, reports = run(cfg, seed, args.steps, args.eval_samples)
            acc.append(np.mean([r.overall_accuracy for r in reports.values()]) * 100)
            tok.append(np.mean([r.overall_mean_tokens for r in reports.values()]))
        rows.append([name, mean_sd(acc), mean_sd(tok)])
    header = ["formats", "accuracy %", "tokens"]
    write_csv(Path(args.out_dir) / "format_ablation.csv", header, rows)
    print(format_table(header, rows))


if __name__ == "__main__":
    main()
