# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled honest-tree kernels.

Mirrors ``_pure.py`` operation for operation (same RNG stream, same row
orderings, same floating-point evaluation order) so both backends grow
identical trees.
"""

import numpy as np
cimport numpy as cnp
from libc.stdint cimport int64_t, uint64_t
from libc.stdlib cimport free, malloc

cnp.import_array()

cdef uint64_t GOLDEN = 0x9E3779B97F4A7C15ULL
cdef double TOL_SCALE = 1e-12


cdef struct Pair:
    double x
    double y
    int64_t pos


cdef struct SplitResult:
    int64_t feature
    double threshold
    double score
    int64_t n_left


cdef inline uint64_t splitmix_next(uint64_t* state) noexcept nogil:
    state[0] += GOLDEN
    cdef uint64_t z = state[0]
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL
    return z ^ (z >> 31)


# pos carries the row id, so equal x values are ordered by row
cdef inline bint pair_lt(const Pair* a, const Pair* b) noexcept nogil:
    return a.x < b.x or (a.x == b.x and a.pos < b.pos)


cdef inline void pair_swap(Pair* a, Pair* b) noexcept nogil:
    cdef Pair t = a[0]
    a[0] = b[0]
    b[0] = t


cdef void sort_pairs(Pair* v, int64_t n) noexcept nogil:
    """In-place sort by (x, pos); a total order, so any correct sort agrees."""
    cdef int64_t i, j, lo, hi, mid
    cdef Pair pivot, t
    while n > 16:
        mid = n // 2
        if pair_lt(&v[mid], &v[0]):
            pair_swap(&v[mid], &v[0])
        if pair_lt(&v[n - 1], &v[0]):
            pair_swap(&v[n - 1], &v[0])
        if pair_lt(&v[n - 1], &v[mid]):
            pair_swap(&v[n - 1], &v[mid])
        pivot = v[mid]
        i = 0
        j = n - 1
        while True:
            while pair_lt(&v[i], &pivot):
                i += 1
            while pair_lt(&pivot, &v[j]):
                j -= 1
            if i >= j:
                break
            pair_swap(&v[i], &v[j])
            i += 1
            j -= 1
        # recurse on the smaller side, loop on the larger
        if j + 1 < n - j - 1:
            sort_pairs(v, j + 1)
            v = v + j + 1
            n = n - j - 1
        else:
            sort_pairs(v + j + 1, n - j - 1)
            n = j + 1
    for i in range(1, n):
        t = v[i]
        j = i - 1
        while j >= 0 and pair_lt(&t, &v[j]):
            v[j + 1] = v[j]
            j -= 1
        v[j + 1] = t


cdef void find_split(const double[:, ::1] XT, const double[::1] y,
                     const int64_t* rows, int64_t m,
                     const int64_t* features, int64_t n_features,
                     int64_t min_leaf, Pair* pairs, double* yc,
                     const int64_t* sorted_rows, int64_t stride, double* ycr,
                     SplitResult* out) noexcept nogil:
    """Best variance-reduction split of ``rows``; out.feature = -1 if none.

    Rows are scanned in (x, row id) order. When ``sorted_rows`` is given,
    feature ``f`` of this node is read in that order from
    ``sorted_rows[f * stride : f * stride + m]`` instead of being sorted
    here; both paths see the same sequence.
    """
    cdef int64_t i, k, f, r, nl, nr
    cdef double total = 0.0, sq = 0.0, mean, tol, cs, tot, sr, score, a, b, thr
    cdef double best = -1.0
    cdef bint have = False
    cdef const int64_t* seg

    out.feature = -1
    out.threshold = 0.0
    out.score = 0.0
    out.n_left = 0
    if m < 2:
        return
    for i in range(m):
        total += y[rows[i]]
    for i in range(m):
        sq += y[rows[i]] * y[rows[i]]
    mean = total / m
    tol = TOL_SCALE * (sq / m)
    for i in range(m):
        yc[i] = y[rows[i]] - mean
    if sorted_rows != NULL:
        for i in range(m):
            ycr[rows[i]] = yc[i]

    for k in range(n_features):
        f = features[k]
        if sorted_rows == NULL:
            for i in range(m):
                r = rows[i]
                pairs[i].x = XT[f, r]
                pairs[i].y = yc[i]
                pairs[i].pos = r
            sort_pairs(pairs, m)
        else:
            seg = sorted_rows + f * stride
            for i in range(m):
                r = seg[i]
                pairs[i].x = XT[f, r]
                pairs[i].y = ycr[r]
        tot = 0.0
        for i in range(m):
            tot += pairs[i].y
        cs = 0.0
        for i in range(m - 1):
            cs += pairs[i].y
            nl = i + 1
            nr = m - nl
            if nl < min_leaf:
                continue
            if nr < min_leaf:
                break
            if not (pairs[i].x < pairs[i + 1].x):
                continue
            sr = tot - cs
            score = (cs * cs / <double>nl + sr * sr / <double>nr - tot * tot / <double>m) / <double>m
            if score > tol and ((not have) or score > best + tol):
                have = True
                best = score
                a = pairs[i].x
                b = pairs[i + 1].x
                thr = 0.5 * (a + b)
                if thr >= b:
                    thr = a
                out.feature = f
                out.threshold = thr
                out.score = score
                out.n_left = nl


def best_split(const double[:, ::1] X, const double[::1] y,
               const int64_t[::1] features, int64_t min_leaf):
    """Return ``(feature, threshold, score)`` over all rows of ``X`` or None."""
    cdef int64_t m = X.shape[0]
    cdef SplitResult res
    cdef int64_t[::1] rows = np.arange(m, dtype=np.int64)
    cdef int64_t[::1] feats = np.sort(np.asarray(features, dtype=np.int64))
    cdef const double[:, ::1] XT = np.ascontiguousarray(np.asarray(X).T)
    cdef Pair* pairs = <Pair*>malloc(max(m, 1) * sizeof(Pair))
    cdef double* yc = <double*>malloc(max(m, 1) * sizeof(double))
    try:
        find_split(XT, y, &rows[0] if m > 0 else NULL, m,
                   &feats[0] if feats.shape[0] > 0 else NULL, feats.shape[0],
                   min_leaf, pairs, yc, NULL, 0, NULL, &res)
    finally:
        free(pairs)
        free(yc)
    if res.feature < 0:
        return None
    return int(res.feature), float(res.threshold), float(res.score)


cdef int64_t grow_tree(const double[:, ::1] XT, const double[::1] y,
                       int64_t* rows, int64_t n_struct,
                       int64_t p, int64_t mtry, int64_t min_leaf, int64_t max_depth,
                       uint64_t* rng, int64_t* fperm, int64_t* chosen,
                       Pair* pairs, double* yc, int64_t* tmp,
                       int64_t* sidx, double* ycr, unsigned char* side,
                       const int64_t* order, int64_t n_all,
                       int64_t* feature, double* threshold, int64_t* left,
                       int64_t* right, int64_t* parent) noexcept nogil:
    """Grow one tree on ``rows[:n_struct]``; returns the node count.

    With ``sidx`` non-NULL the per-feature sorted lists of the structure
    rows are cut from ``order`` (each column of the full data sorted by
    (x, row id)) and stably partitioned alongside ``rows`` at each split.
    """
    cdef int64_t stack_top = 0, n_nodes = 1
    cdef int64_t node, start, end, depth, m, i, j, t, r, nl, nr_, f, k
    cdef int64_t* seg
    cdef int64_t* st_node = tmp + n_struct
    cdef int64_t* st_start = st_node + 2 * n_struct + 1
    cdef int64_t* st_end = st_start + 2 * n_struct + 1
    cdef int64_t* st_depth = st_end + 2 * n_struct + 1
    cdef SplitResult res

    feature[0] = -1
    parent[0] = -1
    st_node[0] = 0
    st_start[0] = 0
    st_end[0] = n_struct
    st_depth[0] = 0
    stack_top = 1
    if sidx != NULL:
        # the forest-wide column orders restricted to this tree's rows
        for i in range(n_struct):
            side[rows[i]] = 1
        for f in range(p):
            k = 0
            for i in range(n_all):
                r = order[f * n_all + i]
                if side[r]:
                    sidx[f * n_struct + k] = r
                    k += 1
        for i in range(n_struct):
            side[rows[i]] = 0
    while stack_top > 0:
        stack_top -= 1
        node = st_node[stack_top]
        start = st_start[stack_top]
        end = st_end[stack_top]
        depth = st_depth[stack_top]
        m = end - start
        feature[node] = -1
        threshold[node] = 0.0
        left[node] = -1
        right[node] = -1
        if m < 2 * min_leaf or (max_depth >= 0 and depth >= max_depth):
            continue
        for i in range(p):
            fperm[i] = i
        for i in range(mtry):
            j = i + <int64_t>(splitmix_next(rng) % <uint64_t>(p - i))
            t = fperm[i]
            fperm[i] = fperm[j]
            fperm[j] = t
        # insertion sort of the chosen features: ascending index order
        for i in range(mtry):
            chosen[i] = fperm[i]
        for i in range(1, mtry):
            t = chosen[i]
            j = i - 1
            while j >= 0 and chosen[j] > t:
                chosen[j + 1] = chosen[j]
                j -= 1
            chosen[j + 1] = t
        find_split(XT, y, rows + start, m, chosen, mtry, min_leaf, pairs, yc,
                   sidx + start if sidx != NULL else NULL, n_struct, ycr, &res)
        if res.feature < 0:
            continue
        if sidx != NULL:
            for i in range(start, end):
                r = rows[i]
                side[r] = XT[res.feature, r] <= res.threshold
            for f in range(p):
                seg = sidx + f * n_struct + start
                k = 0
                for i in range(m):
                    r = seg[i]
                    if side[r]:
                        seg[k] = r
                        k += 1
                    else:
                        tmp[i - k] = r
                for i in range(m - k):
                    seg[k + i] = tmp[i]
        # stable partition: left rows keep their order, then right rows
        nl = 0
        for i in range(start, end):
            r = rows[i]
            if XT[res.feature, r] <= res.threshold:
                rows[start + nl] = r
                nl += 1
            else:
                tmp[i - start - nl] = r
        nr_ = m - nl
        for i in range(nr_):
            rows[start + nl + i] = tmp[i]
        feature[node] = res.feature
        threshold[node] = res.threshold
        left[node] = n_nodes
        right[node] = n_nodes + 1
        parent[n_nodes] = node
        parent[n_nodes + 1] = node
        # right pushed first so the left subtree is grown first
        st_node[stack_top] = n_nodes + 1
        st_start[stack_top] = start + nl
        st_end[stack_top] = end
        st_depth[stack_top] = depth + 1
        stack_top += 1
        st_node[stack_top] = n_nodes
        st_start[stack_top] = start
        st_end[stack_top] = start + nl
        st_depth[stack_top] = depth + 1
        stack_top += 1
        n_nodes += 2
    if sidx != NULL:
        for i in range(n_struct):
            side[rows[i]] = 0
    return n_nodes


def fit_trees(const double[:, ::1] X, const double[::1] y, int64_t num_trees,
              uint64_t seed, double subsample_fraction, double honesty_fraction,
              int64_t mtry, int64_t min_leaf, int64_t max_depth,
              bint record_provenance=False):
    """Grow ``num_trees`` honest trees; returns flat node arrays."""
    cdef int64_t n = X.shape[0], p = X.shape[1]
    cdef int64_t n_sub = <int64_t>(subsample_fraction * n)
    if n_sub < 2:
        n_sub = 2
    if n_sub > n:
        n_sub = n
    cdef int64_t n_struct = <int64_t>(honesty_fraction * n_sub)
    if n_struct < 1:
        n_struct = 1
    if n_struct > n_sub - 1:
        n_struct = n_sub - 1
    cdef int64_t n_est = n_sub - n_struct
    cdef int64_t cap = 2 * n_struct + 1
    cdef int64_t t, i, j, tmpi, node, n_nodes, r, offset = 0, empty = 0
    cdef uint64_t state
    cdef double yv
    # feature-major copy keeps each column contiguous for the split scans
    cdef const double[:, ::1] XT = np.ascontiguousarray(np.asarray(X).T)

    cdef int64_t[::1] perm = np.empty(n, dtype=np.int64)
    cdef int64_t[::1] rows = np.empty(n_struct, dtype=np.int64)
    cdef int64_t[::1] fperm = np.empty(p, dtype=np.int64)
    cdef int64_t[::1] chosen = np.empty(max(mtry, 1), dtype=np.int64)
    cdef int64_t[::1] tmp = np.empty(n_struct + 4 * cap, dtype=np.int64)
    cdef double[::1] yc = np.empty(n_struct, dtype=np.float64)
    cdef Pair* pairs = <Pair*>malloc(n_struct * sizeof(Pair))
    # presorting pays off once sorting mtry features per node costs more
    # than partitioning all p sorted lists
    cdef bint presort = mtry * np.log2(max(n_struct, 2)) >= p
    cdef int64_t[::1] sidx = np.empty(p * n_struct if presort else 1, dtype=np.int64)
    cdef double[::1] ycr = np.empty(n if presort else 1, dtype=np.float64)
    cdef unsigned char[::1] side = np.zeros(n if presort else 1, dtype=np.uint8)
    cdef int64_t[:, ::1] order = (np.argsort(np.asarray(XT), axis=1, kind="stable")
                                  if presort else np.zeros((1, 1), dtype=np.int64))

    cdef int64_t[::1] feat_all = np.empty(num_trees * cap, dtype=np.int64)
    cdef double[::1] thr_all = np.empty(num_trees * cap, dtype=np.float64)
    cdef int64_t[::1] left_all = np.empty(num_trees * cap, dtype=np.int64)
    cdef int64_t[::1] right_all = np.empty(num_trees * cap, dtype=np.int64)
    cdef int64_t[::1] parent_all = np.empty(num_trees * cap, dtype=np.int64)
    cdef double[::1] value_all = np.empty(num_trees * cap, dtype=np.float64)
    cdef double[::1] sums = np.empty(cap, dtype=np.float64)
    cdef int64_t[::1] count_all = np.empty(num_trees * cap, dtype=np.int64)
    cdef int64_t[::1] offsets = np.empty(num_trees + 1, dtype=np.int64)
    cdef int64_t[::1] empty_per_tree = np.zeros(num_trees, dtype=np.int64)
    provenance = [] if record_provenance else None

    try:
        offsets[0] = 0
        for t in range(num_trees):
            state = seed + <uint64_t>(t + 1) * GOLDEN
            state = splitmix_next(&state)
            for i in range(n):
                perm[i] = i
            for i in range(n_sub):
                j = i + <int64_t>(splitmix_next(&state) % <uint64_t>(n - i))
                tmpi = perm[i]
                perm[i] = perm[j]
                perm[j] = tmpi
            for i in range(n_struct):
                rows[i] = perm[i]
            if record_provenance:
                provenance.append((np.asarray(perm[:n_struct]).copy(),
                                   np.asarray(perm[n_struct:n_sub]).copy()))
            with nogil:
                n_nodes = grow_tree(XT, y, &rows[0], n_struct, p, mtry, min_leaf,
                                    max_depth, &state, &fperm[0], &chosen[0],
                                    pairs, &yc[0], &tmp[0],
                                    &sidx[0] if presort else NULL, &ycr[0], &side[0],
                                    &order[0, 0], n,
                                    &feat_all[offset], &thr_all[offset],
                                    &left_all[offset], &right_all[offset],
                                    &parent_all[offset])
                for i in range(n_nodes):
                    sums[i] = 0.0
                    count_all[offset + i] = 0
                for i in range(n_struct, n_sub):
                    r = perm[i]
                    yv = y[r]
                    node = 0
                    while True:
                        sums[node] += yv
                        count_all[offset + node] += 1
                        if feat_all[offset + node] < 0:
                            break
                        if X[r, feat_all[offset + node]] <= thr_all[offset + node]:
                            node = left_all[offset + node]
                        else:
                            node = right_all[offset + node]
                for i in range(n_nodes):
                    if count_all[offset + i] > 0:
                        value_all[offset + i] = sums[i] / count_all[offset + i]
                    else:
                        value_all[offset + i] = value_all[offset + parent_all[offset + i]]
                        if feat_all[offset + i] < 0:
                            empty_per_tree[t] += 1
            offset += n_nodes
            offsets[t + 1] = offset
    finally:
        free(pairs)

    return {
        "offsets": np.asarray(offsets).copy(),
        "feature": np.asarray(feat_all[:offset]).copy(),
        "threshold": np.asarray(thr_all[:offset]).copy(),
        "left": np.asarray(left_all[:offset]).copy(),
        "right": np.asarray(right_all[:offset]).copy(),
        "value": np.asarray(value_all[:offset]).copy(),
        "count": np.asarray(count_all[:offset]).copy(),
        "empty_leaves": np.asarray(empty_per_tree).copy(),
        "provenance": provenance,
    }


def predict_trees(const double[:, ::1] X, const int64_t[::1] offsets,
                  const int64_t[::1] feature, const double[::1] threshold,
                  const int64_t[::1] left, const int64_t[::1] right,
                  const double[::1] value):
    """Mean over trees of the leaf value each row of ``X`` lands in."""
    cdef int64_t n = X.shape[0], num_trees = offsets.shape[0] - 1
    cdef int64_t i, t, base, node
    cdef double acc
    cdef double[::1] out = np.empty(n, dtype=np.float64)
    with nogil:
        for i in range(n):
            acc = 0.0
            for t in range(num_trees):
                base = offsets[t]
                node = 0
                while feature[base + node] >= 0:
                    if X[i, feature[base + node]] <= threshold[base + node]:
                        node = left[base + node]
                    else:
                        node = right[base + node]
                acc += value[base + node]
            out[i] = acc / num_trees
    return np.asarray(out)
