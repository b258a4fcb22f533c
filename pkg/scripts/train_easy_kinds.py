"""Full-length training on the six easy kinds; prints a summary table.

Roughly 20-30 minutes total on a desktop CPU. Run directories land under
--out (default runs/easy), one per kind, each renderable afterwards with
`euv-ilt render <dir>`.
"""

import argparse
import sys

from euv_ilt import harness, optimizer, patterns


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="runs/easy")
    ap.add_argument("--epochs", type=int, default=500)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    finals = []
    for kind in patterns.EASY_KINDS:
        cfg = optimizer.TrainConfig(kind=kind, epochs=args.epochs,
                                    seed=args.seed)
        _, result = harness.run_train(cfg, f"{args.out}/{kind}")
        finals.append(result.final_epe_nm)
        print(f"{kind:<18} final={result.final_epe_nm:8.4f} nm  "
              f"best={result.best_epe_nm:8.4f} nm  "
              f"wall={result.wall_seconds/60:5.1f} min", flush=True)

    worst = max(finals)
    print(f"\nworst final EPE: {worst:.4f} nm (baseline reference 4.5 nm)")
    return 0 if worst < 4.5 else 1


if __name__ == "__main__":
    sys.exit(main())
