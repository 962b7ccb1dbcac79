"""NumPy fallback for the honest-tree kernels.

Used when the compiled ``_tree`` extension is unavailable. Every step matches
the compiled kernel: the splitmix64 stream, the (x, row id) orderings and the
order of floating-point accumulation, so both backends produce the same trees.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
TOL_SCALE = 1e-12


class SplitMix64:
    """splitmix64 generator; ``next()`` returns a uint64 as a Python int."""

    __slots__ = ("state",)

    def __init__(self, state: int):
        self.state = state & MASK64

    def next(self) -> int:
        self.state = (self.state + GOLDEN) & MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        return z ^ (z >> 31)


def tree_rng(seed: int, t: int) -> SplitMix64:
    state = (seed + (t + 1) * GOLDEN) & MASK64
    return SplitMix64(SplitMix64(state).next())


def _find_split(X, y, rows, features, min_leaf):
    m = len(rows)
    if m < 2:
        return None
    yr = y[rows]
    total = 0.0
    for v in yr.tolist():
        total += v
    sq = 0.0
    for v in yr.tolist():
        sq += v * v
    mean = total / m
    tol = TOL_SCALE * (sq / m)
    yc = yr - mean

    lo, hi = min_leaf - 1, m - min_leaf - 1  # candidate positions i in [lo, hi]
    if lo > hi:
        return None
    nl = np.arange(1, m, dtype=np.float64)
    nr = m - nl
    best = None
    best_score = -1.0
    for f in features:
        xs = X[rows, f]
        # ascending x, ties broken by row id
        order = np.lexsort((rows, xs))
        xs = xs[order]
        ys = yc[order]
        cs = np.cumsum(ys)
        tot = cs[-1]
        sl = cs[:-1]
        sr = tot - sl
        score = (sl * sl / nl + sr * sr / nr - tot * tot / m) / m
        ok = np.zeros(m - 1, dtype=bool)
        ok[lo : hi + 1] = True
        ok &= xs[:-1] < xs[1:]
        ok &= score > tol
        cand = np.flatnonzero(ok)
        start = 0
        while start < len(cand):
            sc = score[cand[start:]]
            if best is None:
                hit = 0
            else:
                above = np.flatnonzero(sc > best_score + tol)
                if len(above) == 0:
                    break
                hit = above[0]
            i = cand[start + hit]
            a, b = xs[i], xs[i + 1]
            thr = 0.5 * (a + b)
            if thr >= b:
                thr = a
            best_score = score[i]
            best = (int(f), float(thr), float(best_score), int(i + 1))
            start = start + hit + 1
    return best


def best_split(X, y, features, min_leaf):
    """Return ``(feature, threshold, score)`` over all rows of ``X`` or None."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    feats = np.sort(np.asarray(features, dtype=np.int64))
    res = _find_split(X, y, np.arange(X.shape[0]), feats, min_leaf)
    if res is None:
        return None
    return res[:3]


def _grow_tree(X, y, rows, p, mtry, min_leaf, max_depth, rng):
    feature, threshold, left, right, parent = [-1], [0.0], [-1], [-1], [-1]
    stack = [(0, 0, len(rows), 0)]
    while stack:
        node, start, end, depth = stack.pop()
        m = end - start
        if m < 2 * min_leaf or (max_depth >= 0 and depth >= max_depth):
            continue
        fperm = list(range(p))
        for i in range(mtry):
            j = i + rng.next() % (p - i)
            fperm[i], fperm[j] = fperm[j], fperm[i]
        chosen = sorted(fperm[:mtry])
        res = _find_split(X, y, rows[start:end], chosen, min_leaf)
        if res is None:
            continue
        f, thr, _, _ = res
        seg = rows[start:end]
        go_left = X[seg, f] <= thr
        nl = int(go_left.sum())
        rows[start:end] = np.concatenate([seg[go_left], seg[~go_left]])
        feature[node] = f
        threshold[node] = thr
        n_nodes = len(feature)
        left[node] = n_nodes
        right[node] = n_nodes + 1
        for _ in range(2):
            feature.append(-1)
            threshold.append(0.0)
            left.append(-1)
            right.append(-1)
            parent.append(node)
        stack.append((n_nodes + 1, start + nl, end, depth + 1))
        stack.append((n_nodes, start, start + nl, depth + 1))
    return (
        np.array(feature, dtype=np.int64),
        np.array(threshold, dtype=np.float64),
        np.array(left, dtype=np.int64),
        np.array(right, dtype=np.int64),
        np.array(parent, dtype=np.int64),
    )


def _route(X, feature, threshold, left, right, rows):
    """Node path bookkeeping: yields (depth-level node ids) for ``rows``."""
    cur = np.zeros(len(rows), dtype=np.int64)
    active = np.arange(len(rows))
    while len(active):
        yield active, cur[active]
        nodes = cur[active]
        f = feature[nodes]
        internal = f >= 0
        active = active[internal]
        nodes = nodes[internal]
        go_left = X[rows[active], f[internal]] <= threshold[nodes]
        cur[active] = np.where(go_left, left[nodes], right[nodes])


def fit_trees(X, y, num_trees, seed, subsample_fraction, honesty_fraction,
              mtry, min_leaf, max_depth, record_provenance=False):
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    n, p = X.shape
    n_sub = min(max(int(subsample_fraction * n), 2), n)
    n_struct = min(max(int(honesty_fraction * n_sub), 1), n_sub - 1)

    parts = {k: [] for k in ("feature", "threshold", "left", "right", "value", "count")}
    offsets = [0]
    empty = np.zeros(num_trees, dtype=np.int64)
    provenance = [] if record_provenance else None
    for t in range(num_trees):
        rng = tree_rng(seed, t)
        perm = list(range(n))
        for i in range(n_sub):
            j = i + rng.next() % (n - i)
            perm[i], perm[j] = perm[j], perm[i]
        perm = np.array(perm[:n_sub], dtype=np.int64)
        rows = perm[:n_struct].copy()
        est = perm[n_struct:]
        if record_provenance:
            provenance.append((perm[:n_struct].copy(), est.copy()))
        feature, threshold, left, right, parent = _grow_tree(
            X, y, rows, p, mtry, min_leaf, max_depth, rng
        )
        n_nodes = len(feature)
        sums = np.zeros(n_nodes)
        counts = np.zeros(n_nodes, dtype=np.int64)
        for active, nodes in _route(X, feature, threshold, left, right, est):
            sums += np.bincount(nodes, weights=y[est[active]], minlength=n_nodes)
            counts += np.bincount(nodes, minlength=n_nodes)
        value = np.empty(n_nodes)
        for i in range(n_nodes):
            if counts[i] > 0:
                value[i] = sums[i] / counts[i]
            else:
                value[i] = value[parent[i]]
                if feature[i] < 0:
                    empty[t] += 1
        for k, arr in zip(parts, (feature, threshold, left, right, value, counts)):
            parts[k].append(arr)
        offsets.append(offsets[-1] + n_nodes)

    out = {k: np.concatenate(v) if v else np.empty(0) for k, v in parts.items()}
    out["offsets"] = np.array(offsets, dtype=np.int64)
    out["empty_leaves"] = empty
    out["provenance"] = provenance
    return out


def predict_trees(X, offsets, feature, threshold, left, right, value):
    X = np.ascontiguousarray(X, dtype=np.float64)
    n = X.shape[0]
    rows = np.arange(n)
    acc = np.zeros(n)
    num_trees = len(offsets) - 1
    for t in range(num_trees):
        a, b = offsets[t], offsets[t + 1]
        f, th, lf, rt = feature[a:b], threshold[a:b], left[a:b], right[a:b]
        leaf = np.zeros(n, dtype=np.int64)
        for active, nodes in _route(X, f, th, lf, rt, rows):
            leaf[active] = nodes
        acc += value[a:b][leaf]
    return acc / num_trees
