#!/usr/bin/env python3
"""Ablation direction sweep: MVTT vs no-attention vs separated single-task
variants on a fixed-seed phantom benchmark.

Usage: python3 scripts/ablation_sweep.py --count 20 --epochs 25 --seed 0
"""

import argparse
import json
import sys
import time

from mvtt.experiments import ablation_directions, ablation_spec, benchmark_volumes


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--count", type=int, default=20)
    ap.add_argument("--epochs", type=int, default=25)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", help="optional JSON report path")
    args = ap.parse_args()

    volumes = benchmark_volumes(args.count, ablation_spec(), seed=args.seed)
    t0 = time.monotonic()
    report = ablation_directions(volumes, epochs=args.epochs, seed=args.seed)
    report["runtime_s"] = round(time.monotonic() - t0, 1)
    print(json.dumps(report, indent=2, sort_keys=True))
    if args.out:
        with open(args.out, "w") as f:
            json.dump(report, f, indent=2, sort_keys=True)
    ok = report["attention_direction"] and report["simultaneous_direction"]
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
