"""Time the compiled and pure-Python forest backends on the same fits.

    python3 benchmarks/bench_forest.py
    python3 benchmarks/bench_forest.py --sizes 1000x2 2000x20 --num-trees 50 --repeats 3

Each row fits one forest per backend with identical data and parameters,
checks that both produce bitwise-identical trees, and reports the median
wall time of fitting and of predicting on the training rows.
"""

from __future__ import annotations

import argparse
import statistics
import sys
import time

import numpy as np

from aipwlab.forest import ForestParams, available_backends, fit_forest


def parse_size(text: str) -> tuple[int, int]:
    n, p = text.lower().split("x")
    return int(n), int(p)


def timed(fn, repeats: int):
    times, result = [], None
    for _ in range(repeats):
        start = time.perf_counter()
        result = fn()
        times.append(time.perf_counter() - start)
    return statistics.median(times), result


def identical(a, b) -> bool:
    keys = ("offsets", "feature", "threshold", "left", "right", "value", "count")
    return all(getattr(a, k).tobytes() == getattr(b, k).tobytes() for k in keys)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0],
                                     formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    parser.add_argument("--sizes", nargs="+", type=parse_size, default=[(1000, 2), (2000, 20), (1000, 200)],
                        metavar="NxP", help="training set shapes")
    parser.add_argument("--num-trees", type=int, default=20, help="trees per forest")
    parser.add_argument("--min-leaf", type=int, default=5, help="minimum structure rows per leaf")
    parser.add_argument("--repeats", type=int, default=1, help="timings per backend; the median is reported")
    parser.add_argument("--seed", type=int, default=0, help="data and forest seed")
    args = parser.parse_args(argv)

    if "compiled" not in available_backends():
        print("compiled backend not built; reinstall with 'pip install -e . --no-build-isolation'", file=sys.stderr)
        return 1

    print(f"{'n':>6} {'p':>4} {'python fit s':>13} {'compiled fit s':>15} {'speedup':>8} "
          f"{'python pred s':>14} {'compiled pred s':>16} {'identical':>9}")
    for n, p in args.sizes:
        rng = np.random.default_rng(args.seed)
        X = rng.normal(size=(n, p))
        y = X[:, 0] + np.sin(X[:, min(1, p - 1)]) + rng.normal(size=n)
        params = ForestParams(num_trees=args.num_trees, min_leaf=args.min_leaf, seed=args.seed)
        fit = {}
        pred = {}
        for backend in ("python", "compiled"):
            fit[backend] = timed(lambda: fit_forest(X, y, params, backend=backend), args.repeats)
            forest = fit[backend][1]
            pred[backend] = timed(lambda: forest.predict(X, backend=backend), args.repeats)[0]
        same = identical(fit["python"][1], fit["compiled"][1])
        print(f"{n:>6} {p:>4} {fit['python'][0]:>13.3f} {fit['compiled'][0]:>15.3f} "
              f"{fit['python'][0] / fit['compiled'][0]:>7.1f}x {pred['python']:>14.3f} "
              f"{pred['compiled']:>16.3f} {str(same):>9}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
