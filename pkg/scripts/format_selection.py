"""Per-class format distribution after training, against the reward oracle.

For each seed, prints the sampled format frequencies of every task class
next to the oracle's best format at the end of training, and the selection
ratios measured for the reference model (context only).
"""

from pathlib import Path

from _common import base_parser, run, write_csv

from formatlab.diagnostics import format_table
from formatlab.env import REFERENCE_RATIO, expected_reward_oracle, oracle_best_format
from formatlab.formats import ResponseFormat
from formatlab.rewards import RewardConfig


def main():
    args = base_parser(__doc__.splitlines()[0], "runs/format_selection").parse_args()
    cfg = RewardConfig(T=max(args.steps, 1))
    rows, matches = [], 0
    for seed in range(args.seeds):
        _, env, reports = run(cfg, seed, args.steps, args.eval_samples)
        ok = True
        for spec in env.specs:
            usage = [reports[spec.name].usage[k.label] for k in ResponseFormat]
            best = oracle_best_format(spec, cfg)
            chosen = ResponseFormat(max(range(3), key=usage.__getitem__) + 1)
            ok &= chosen == best
            rows.append([seed, spec.name, *[round(x, 3) for x in usage], chosen.label, best.label,
                         *REFERENCE_RATIO[spec.name]])
        matches += ok
    header = ["seed", "class", "full", "perception_only", "direct", "chosen", "oracle",
              "ref_full", "ref_po", "ref_direct"]
    write_csv(Path(args.out_dir) / "format_selection.csv", header, rows)
    print(format_table(header, rows))
    print(f"\nseeds with every class on its oracle format: {matches}/{args.seeds}")
    spec_rows = [[s.name, *[round(expected_reward_oracle(s, k, cfg, cfg.T), 4) for k in ResponseFormat]]
                 for s in env.specs]
    print("\nexpected reward at the final step\n" + format_table(["class", "full", "po", "direct"], spec_rows))


if __name__ == "__main__":
    main()
