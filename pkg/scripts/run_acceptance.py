"""Run the acceptance checks and optionally dump the deterministic reports as JSON."""

import argparse
import json
import sys

from ckacoin.acceptance import verify_all


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--criteria", default="")
    ap.add_argument("--json", help="write per-criterion details here")
    args = ap.parse_args()
    ids = [int(c) for c in args.criteria.split(",") if c] or None
    results = verify_all(args.seed, ids, echo=print)
    if args.json:
        with open(args.json, "w") as fh:
            json.dump([{**r.report(), "passed": r.passed, "elapsed": r.elapsed} for r in results], fh, indent=2)
    sys.exit(0 if all(r.passed for r in results) else 1)


if __name__ == "__main__":
    main()
