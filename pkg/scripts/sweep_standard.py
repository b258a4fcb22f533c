"""Short-budget sweep across the twelve standard kinds with a bar chart.

Uses a reduced epoch budget by default so the whole sweep stays near ten
minutes; pass --epochs 500 for the full-length version.
"""

import argparse
import sys

from euv_ilt import harness, optimizer, patterns


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="runs/sweep")
    ap.add_argument("--epochs", type=int, default=40)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--kinds", nargs="*", default=list(patterns.STANDARD_KINDS))
    args = ap.parse_args(argv)

    base = optimizer.TrainConfig(epochs=args.epochs, seed=args.seed)
    _, rows = harness.run_sweep(base, tuple(args.kinds), args.out)
    for row in rows:
        print(f"{row['kind']:<18} final={row['final_epe_nm']:8.4f} nm  "
              f"improvement={row['improvement_pct']:6.1f}%")
    print(f"\nchart and per-kind run directories under {args.out}/")
    return 0


if __name__ == "__main__":
    sys.exit(main())
