"""Fairness of the GHZ coin across sizes and noise levels; prints one row per setting."""

import argparse

from ckacoin.coin import estimate_fairness
from ckacoin.quantum import NoiseChannel, NoiseKind
from ckacoin.server import FaultSpec, ServerMode


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--sizes", default="2,4,8,16")
    ap.add_argument("--noise", default="0,0.01,0.05,0.1")
    ap.add_argument("--trials", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--mode", choices=[m.value for m in ServerMode], default="oracle")
    args = ap.parse_args()

    print(f"{'n':>3} {'p':>6} {'p0':>7} {'p1':>7} {'common':>7} {'all-eq@.5':>9}")
    for n in map(int, args.sizes.split(",")):
        for p in map(float, args.noise.split(",")):
            ch = NoiseChannel(NoiseKind.BIT_FLIP, p) if p else NoiseChannel()
            est = estimate_fairness(n, 0, FaultSpec(channel=ch), args.trials, args.seed, ServerMode(args.mode))
            floor = 2 * 0.5**n
            print(f"{n:>3} {p:>6.3f} {est.p_hat_zero:>7.4f} {est.p_hat_one:>7.4f} {est.common_rate:>7.4f} {floor:>9.5f}")


if __name__ == "__main__":
    main()
