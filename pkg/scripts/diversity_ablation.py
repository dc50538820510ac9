"""Format usage over training with and without the diversity term.

Writes one usage CSV per (seed, setting) and prints, per run, the detected
collapse (threshold 0.9, window 10), the minimum per-format usage over the
first half of training and the peak usage of each format.
"""

from pathlib import Path

import numpy as np
from _common import base_parser, run, write_csv

from formatlab.diagnostics import detect_collapse, format_table
from formatlab.rewards import RewardConfig


def main():
    args = base_parser(__doc__.splitlines()[0], "runs/diversity_ablation").parse_args()
    out = Path(args.out_dir)
    rows = []
    for seed in range(args.seeds):
        for diversity in (True, False):
            res, _, _ = run(RewardConfig(diversity_enabled=diversity), seed, args.steps, 10)
            u = res.history.usage()
            tag = "on" if diversity else "off"
            write_csv(out / f"usage_seed{seed}_{tag}.csv", ["step", "full", "perception_only", "direct"],
                      [[t, *row] for t, row in enumerate(u.tolist())])
            c = detect_collapse(res.history)
            rows.append([seed, tag, "-" if c is None else f"{c[0].label}@{c[1]}",
                         np.round(u[: len(u) // 2].min(axis=0), 3).tolist(),
                         np.round(u.max(axis=0), 3).tolist()])
    print(format_table(["seed", "diversity", "collapse", "min usage, first half", "peak usage"], rows))


if __name__ == "__main__":
    main()
