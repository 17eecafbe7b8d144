#!/usr/bin/env python3
"""Sample-size scaling study: error of the factored fit as n grows, at x=0.

    python scripts/error_scaling.py --reps 24 --jobs 2 --out scaling.csv
"""

import argparse
import math

import numpy as np

from isingfed.harness import ExperimentConfig, run_grid
from isingfed.optimize import OptimizerConfig


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--reps", type=int, default=24)
    parser.add_argument("--jobs", type=int, default=2)
    parser.add_argument("--out", default="scaling.csv")
    args = parser.parse_args()
    cfg = ExperimentConfig(
        p_list=[50],
        n_list=[1000, 5000, 10000, 20000],
        x_list=[0.0],
        methods=["DANIEL"],
        reps=args.reps,
        base_seed=0,
        d=5,
        burn_in=200,
        optimizer=OptimizerConfig(eta=0.1, lam=math.sqrt(50 * math.log(50) / 1000)),
        output_path=args.out,
    )
    rows = run_grid(cfg, jobs=args.jobs, output_path=args.out)
    print("n        mean err   sd")
    for n in cfg.n_list:
        errs = np.array([r.frob_err for r in rows if r.n == n])
        print(f"{n:<8d} {errs.mean():>8.3f} {errs.std():>6.3f}")


if __name__ == "__main__":
    main()
