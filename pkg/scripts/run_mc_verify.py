"""Covariance error against Monte Carlo truth as the training set grows.

    python3 scripts/run_mc_verify.py --seeds 0 1 2
"""
import argparse
from dataclasses import replace

import numpy as np

from predvo.experiments import ConvergenceConfig, covariance_convergence


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--sizes", type=int, nargs="+", default=list(ConvergenceConfig.sizes))
    p.add_argument("--seeds", type=int, nargs="+", default=[0])
    p.add_argument("--rho", type=float, default=ConvergenceConfig.rho)
    args = p.parse_args()

    config = replace(ConvergenceConfig(), sizes=tuple(args.sizes), rho=args.rho)
    table = np.array([[covariance_convergence(config, s)[n] for n in config.sizes] for s in args.seeds])
    print(f"{'n':>8} {'mean frobenius':>15} {'spread':>8}")
    for n, col in zip(config.sizes, table.T):
        print(f"{n:>8} {col.mean():>15.3f} {col.std():>8.3f}")


if __name__ == "__main__":
    main()
