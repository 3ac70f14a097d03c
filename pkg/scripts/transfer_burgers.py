"""Transfer check: meta-train on advection tasks with random velocity c in [-1, 1],
then train a Burgers network with the learned optimizer and with Adam.

    python3 scripts/transfer_burgers.py --seeds 0 1 2 --out runs/transfer
"""

import argparse
import os

import numpy as np

from metapinn import harness as hs


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    parser.add_argument("--out", default="runs/transfer")
    args = parser.parse_args()

    ratios = []
    for seed in args.seeds:
        report = hs.desk_comparison("advection_velocity_family", "burgers", seed, os.path.join(args.out, f"seed{seed}"))
        adam, learned = report.histories["adam"], report.histories["learned"]
        ratio = learned.final.total / adam.final.total
        ratios.append(ratio)
        print(f"seed {seed}: Adam {adam.final.total:.3e}  learned {learned.final.total:.3e} ({learned.status})  ratio {ratio:.3f}")
    print(f"median ratio {np.median(ratios):.3f} (target <= 1.5)")


if __name__ == "__main__":
    main()
