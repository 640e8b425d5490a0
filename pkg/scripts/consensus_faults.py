"""Block agreement under share corruption and node faults: rounds used and property checks."""

import argparse
from collections import Counter

from ckacoin.consensus import FLIP_B3, RANDOM_D2, SILENT, MaskMode, NodeBehavior, check_properties, run_block_agreement
from ckacoin.netsim import RandomDelay
from ckacoin.rng import split
from ckacoin.server import FaultSpec

SCENARIOS = {
    "honest": ({}, None),
    "corrupt-b1": ({}, (FaultSpec(corrupt_shares={1}), FaultSpec())),
    "corrupt-both": ({}, (FaultSpec(corrupt_shares={1}), FaultSpec(corrupt_shares={1}))),
    "silent": ({2: SILENT}, None),
    "crash@4": ({2: NodeBehavior.crash_at(4)}, None),
    "flip-b3": ({0: FLIP_B3}, None),
    "random-d2": ({0: RANDOM_D2}, None),
}


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=5)
    ap.add_argument("--seeds", type=int, default=50)
    ap.add_argument("--mask-mode", choices=[m.value for m in MaskMode], default="replicate")
    ap.add_argument("--max-delay", type=int, default=3)
    args = ap.parse_args()

    for name, (beh, faults) in SCENARIOS.items():
        rounds, ok = Counter(), 0
        sched = lambda r, f=faults: f if r == 1 else None
        for s in range(args.seeds):
            o = run_block_agreement(
                args.n, beh, mask_mode=MaskMode(args.mask_mode), faults=sched,
                scheduler=RandomDelay(args.max_delay), rng=split(0, s), max_rounds=30,
            )
            rounds[o.rounds_used] += 1
            ok += check_properties(o, beh).all_hold
        print(f"{name:>13}: properties held {ok}/{args.seeds}, rounds used {dict(sorted(rounds.items()))}")


if __name__ == "__main__":
    main()
