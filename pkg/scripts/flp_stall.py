"""Constant-coin strawman versus the real coin under the stall adversary."""

import argparse

import numpy as np

from ckacoin.agreement import bivalent_start, run_flp_demo, stallable_configs
from ckacoin.rng import split


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=3)
    ap.add_argument("--t", type=int, default=1)
    ap.add_argument("--budget", type=int, default=50)
    ap.add_argument("--seeds", type=int, default=200)
    args = ap.parse_args()

    print(f"stallable configurations for n={args.n}, t={args.t}: {len(stallable_configs(args.n, args.t))}")
    print(f"crafted start: {bivalent_start(args.n, args.t)}")
    for strawman in (True, False):
        reps = [run_flp_demo(args.n, strawman, args.budget, split(1, s), t=args.t) for s in range(args.seeds)]
        decided = [r.decision_phase for r in reps if r.decided]
        label = "constant coin" if strawman else "shared coin"
        mean = f"{np.mean(decided):.2f}" if decided else "-"
        print(f"{label:>13}: decided {len(decided)}/{args.seeds} within {args.budget} phases, mean phase {mean}")


if __name__ == "__main__":
    main()
