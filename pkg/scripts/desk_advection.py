"""Desk-scale advection study: meta-train on fresh 2x20 networks, then compare
the learned optimizer with Adam on an unseen initialization.

    python3 scripts/desk_advection.py --seeds 0 1 2 --out runs/desk_advection
"""

import argparse
import math
import os

import numpy as np

from metapinn import harness as hs


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    parser.add_argument("--out", default="runs/desk_advection")
    parser.add_argument("--alpha", type=float, help="override the meta learning rate")
    args = parser.parse_args()
    overrides = {} if args.alpha is None else {"alpha": args.alpha}

    ratios, fractions = [], []
    for seed in args.seeds:
        report = hs.desk_comparison("reinit_only", "advection", seed, os.path.join(args.out, f"seed{seed}"), **overrides)
        adam, learned = report.histories["adam"], report.histories["learned"]
        ratio = learned.final.total / adam.final.total
        hit = hs.epochs_to_reach(learned, adam.final.total)
        frac = math.inf if hit is None else hit / hs.DESK_SIZES["epochs"]
        ratios.append(ratio)
        fractions.append(frac)
        print(f"seed {seed}: Adam {adam.final.total:.3e}  learned {learned.final.total:.3e}  ratio {ratio:.3f}  reach fraction {frac:.3f}")
    print(f"median ratio {np.median(ratios):.3f} (target <= 0.5), median reach fraction {np.median(fractions):.3f} (target <= 0.6)")


if __name__ == "__main__":
    main()
