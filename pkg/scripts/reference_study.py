"""Grid-refinement and timing study for the spectral reference solver.

Doubles n for KdV and Burgers and reports the max-norm change at the final time,
which is how the default resolutions in ``refsolve.DEFAULT_N`` were chosen.

    python3 scripts/reference_study.py --problem kdv --sizes 128 256 512
"""

import argparse
import time

import numpy as np

from metapinn import problems as pr
from metapinn import refsolve as rs


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--problem", choices=("kdv", "burgers"), default="kdv")
    parser.add_argument("--sizes", type=int, nargs="+", default=[128, 256, 512])
    parser.add_argument("--dealias", action="store_true")
    args = parser.parse_args()

    problem = pr.make_problem(args.problem)
    times = np.linspace(0.0, problem.domain.t_final, 5)[1:]
    prev = None
    for n in sorted(args.sizes):
        start = time.perf_counter()
        fields = rs.solve_reference(problem, times, n=n, dealias=args.dealias)
        elapsed = time.perf_counter() - start
        drift = max(abs(f.values.mean() - fields[0].values.mean()) for f in fields)
        line = f"n={n:5d}  {elapsed:7.1f}s  mean drift {drift:.1e}"
        if prev is not None:
            coarse = prev[-1].values
            fine = fields[-1].values[:: n // prev[-1].grid.n]
            line += f"  change vs n={prev[-1].grid.n}: {np.max(np.abs(fine - coarse)):.2e}"
        print(line, flush=True)
        prev = fields


if __name__ == "__main__":
    main()
