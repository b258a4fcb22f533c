"""Stage-attribution ablations on the three reference kinds.

dram_arrays shows the blur-dominated improvement ladder (around 70% EPE
reduction, almost all of it from the blur stage); euv_contacts sits in the
corner-rounding regime where the uncompensated baseline is already near the
best reachable EPE; finfet_3nm is the hard-pattern boundary where full
physics barely helps. A few minutes per kind on a desktop CPU.
"""

import argparse
import sys

from euv_ilt import harness, optimizer

DEFAULT_KINDS = ("dram_arrays", "euv_contacts", "finfet_3nm")


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="runs/ablation")
    ap.add_argument("--kinds", nargs="*", default=list(DEFAULT_KINDS))
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    for kind in args.kinds:
        cfg = optimizer.ablation_config(kind, seed=args.seed)
        _, result = harness.run_ablate(cfg, f"{args.out}/{kind}")
        print(f"== {kind} ({result.wall_seconds/60:.1f} min)")
        for row in result.rows:
            print(f"  {row.stage:<14} {row.epe_nm:8.4f} nm  "
                  f"{row.improvement_pct_vs_no_physics:+7.2f}%", flush=True)
    return 0


if __name__ == "__main__":
    sys.exit(main())
