"""Train on a 30 s drive, test on a 60 s drive, for each weighting scheme.

    python3 scripts/run_benchmark.py --trials 5 --out results/benchmark.csv
"""
import argparse
import csv
import logging
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from predvo.experiments import BenchmarkConfig, run_benchmark, summarize


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--trials", type=int, default=5)
    p.add_argument("--out", default="results/benchmark.csv")
    p.add_argument("--rho", type=float, default=BenchmarkConfig.rho)
    p.add_argument("--R-scale", type=float, default=1.0, help="baseline covariance is this times I")
    p.add_argument("--dof", type=float, default=BenchmarkConfig.dof)
    p.add_argument("--em-iters", type=int, default=BenchmarkConfig.em_iters)
    p.add_argument("--no-em", action="store_true")
    p.add_argument("--train-seed", type=int, default=BenchmarkConfig.train_seed)
    p.add_argument("--test-seed", type=int, default=BenchmarkConfig.test_seed)
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    config = replace(
        BenchmarkConfig(),
        rho=args.rho,
        R=args.R_scale * np.eye(4),
        dof=args.dof,
        em_iters=args.em_iters,
        include_em=not args.no_em,
        train_seed=args.train_seed,
        test_seed=args.test_seed,
    )
    results = run_benchmark(range(args.trials), config)

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(asdict(results[0])), lineterminator="\n")
        w.writeheader()
        w.writerows(asdict(r) for r in results)

    print(f"{'scheme':<10} {'trans (m)':>10} {'rot (rad)':>10}")
    for scheme, (t, r) in summarize(results).items():
        print(f"{scheme:<10} {t:>10.3f} {r:>10.4f}")
    print(f"wrote {out}")


if __name__ == "__main__":
    main()
