"""One seed of the synthetic two-stream benchmark.

Trains the skeleton branch, the JFP branch and the JAP branch, fuses the
first two, and prints per-class accuracy. Takes about two minutes on one
core.

    python3 demos/benchmark.py [seed]
"""
import sys
import time

from jologcn.bench import BenchmarkConfig, class_names, run_benchmark
from jologcn.twostream import per_class_table


def main(seed=0):
    t0 = time.time()
    res = run_benchmark(seed, BenchmarkConfig())
    print(f"seed {seed}, {time.time() - t0:.0f}s")
    print(per_class_table(res.per_class, class_names(6)))
    for variant, acc in res.top1.items():
        print(f"{variant:>8}: top-1 {acc:.3f}")
    print(f"skeleton-twin pairs: S {res.pair_top1('joints', [2, 3, 4, 5]):.3f}, "
          f"JFP {res.pair_top1('jfp', [2, 3, 4, 5]):.3f}")


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 0)
