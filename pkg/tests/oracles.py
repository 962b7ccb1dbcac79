"""Independent reference implementations shared by the test modules."""

import numpy as np


def brute_force_split(X, y, features, min_leaf):
    """Score every midpoint directly from the definition of variance reduction."""
    X, y = np.asarray(X, dtype=float), np.asarray(y, dtype=float)
    n = len(y)
    best = None
    base = np.var(y)
    for f in features:
        vals = np.unique(X[:, f])
        for a, b in zip(vals[:-1], vals[1:]):
            thr = (a + b) / 2  # correctly rounded midpoint for finite, non-overflowing values
            left = X[:, f] <= thr
            nl = int(left.sum())
            if nl < min_leaf or n - nl < min_leaf:
                continue
            score = base - (nl * np.var(y[left]) + (n - nl) * np.var(y[~left])) / n
            if best is None or score > best[2] + 1e-9 * max(1.0, base):
                best = (f, thr, score)
    if best is None or best[2] <= 1e-9 * max(1.0, base):
        return None
    return best
