"""Compiled CART kernels used by :mod:`progspace.forest`.

Trees are stored as flat parallel arrays. Leaves have ``feature == -1``.
"""

import numba
import numpy as np

# a split must lower weighted impurity by more than this to be accepted
MIN_DECREASE = 1e-12


@numba.njit(cache=True)
def _gini(counts, class_weight):
    total = 0.0
    for c in range(counts.shape[0]):
        total += counts[c] * class_weight[c]
    if total <= 0.0:
        return 0.0, 0.0
    s = 0.0
    for c in range(counts.shape[0]):
        p = counts[c] * class_weight[c] / total
        s += p * p
    return 1.0 - s, total


@numba.njit(cache=True)
def build_tree(X, y, w, class_weight, n_classes, mtry, max_depth, min_samples_leaf, seed):
    """Grow one tree on the rows with positive multiplicity ``w``.

    Returns (feature, threshold, left, right, counts, decrease) trimmed to
    the grown nodes; ``decrease`` is the weighted Gini decrease of each split, normalised by
    the root's weight.
    """
    np.random.seed(seed)
    n, p = X.shape
    idx = np.empty(n, dtype=np.int64)
    m = 0
    for i in range(n):
        if w[i] > 0:
            idx[m] = i
            m += 1
    idx = idx[:m]

    cap = 2 * m + 1
    feature = np.full(cap, -1, dtype=np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    counts = np.zeros((cap, n_classes))
    decrease = np.zeros(cap)

    # stack entries: node id, start, end, depth
    stack = np.empty((cap, 4), dtype=np.int64)
    stack[0, 0] = 0
    stack[0, 1] = 0
    stack[0, 2] = m
    stack[0, 3] = 0
    top = 1
    n_nodes = 1
    root_weight = -1.0
    feats = np.arange(p)
    node_counts = np.zeros(n_classes)
    left_counts = np.zeros(n_classes)
    right_counts = np.zeros(n_classes)

    while top > 0:
        top -= 1
        node = stack[top, 0]
        start = stack[top, 1]
        end = stack[top, 2]
        depth = stack[top, 3]

        node_counts[:] = 0.0
        n_weight = 0.0
        for t in range(start, end):
            i = idx[t]
            node_counts[y[i]] += w[i]
            n_weight += w[i]
        counts[node, :] = node_counts
        imp, wt = _gini(node_counts, class_weight)
        if root_weight < 0:
            root_weight = wt
        if imp <= 0.0 or (max_depth >= 0 and depth >= max_depth) or n_weight < 2 * min_samples_leaf:
            continue

        # partial Fisher-Yates: first mtry entries become the candidate set
        for a in range(mtry):
            b = a + np.random.randint(0, p - a)
            tmp = feats[a]
            feats[a] = feats[b]
            feats[b] = tmp
        cand = np.sort(feats[:mtry])

        best_gain = MIN_DECREASE
        best_f = -1
        best_thr = 0.0
        for ci in range(mtry):
            f = cand[ci]
            vals = np.empty(end - start)
            for t in range(start, end):
                vals[t - start] = X[idx[t], f]
            order = np.argsort(vals, kind="mergesort")
            left_counts[:] = 0.0
            right_counts[:] = node_counts
            n_left = 0.0
            for r in range(end - start - 1):
                i = idx[start + order[r]]
                left_counts[y[i]] += w[i]
                right_counts[y[i]] -= w[i]
                n_left += w[i]
                v0 = vals[order[r]]
                v1 = vals[order[r + 1]]
                if v1 <= v0:
                    continue
                if n_left < min_samples_leaf or n_weight - n_left < min_samples_leaf:
                    continue
                gl, wl = _gini(left_counts, class_weight)
                gr, wr = _gini(right_counts, class_weight)
                gain = (wt * imp - wl * gl - wr * gr) / root_weight
                if gain > best_gain:
                    best_gain = gain
                    best_f = f
                    thr = 0.5 * (v0 + v1)
                    if thr >= v1:
                        thr = v0
                    best_thr = thr
        if best_f < 0:
            continue

        # partition [start, end) so that x <= threshold comes first
        lo = start
        hi = end - 1
        while lo <= hi:
            if X[idx[lo], best_f] <= best_thr:
                lo += 1
            else:
                tmp = idx[lo]
                idx[lo] = idx[hi]
                idx[hi] = tmp
                hi -= 1
        feature[node] = best_f
        threshold[node] = best_thr
        decrease[node] = best_gain
        lc = n_nodes
        rc = n_nodes + 1
        n_nodes += 2
        left[node] = lc
        right[node] = rc
        stack[top, 0] = rc
        stack[top, 1] = lo
        stack[top, 2] = end
        stack[top, 3] = depth + 1
        top += 1
        stack[top, 0] = lc
        stack[top, 1] = start
        stack[top, 2] = lo
        stack[top, 3] = depth + 1
        top += 1

    return (
        feature[:n_nodes].copy(),
        threshold[:n_nodes].copy(),
        left[:n_nodes].copy(),
        right[:n_nodes].copy(),
        counts[:n_nodes].copy(),
        decrease[:n_nodes].copy(),
    )


@numba.njit(cache=True)
def apply_tree(feature, threshold, left, right, X):
    out = np.empty(X.shape[0], dtype=np.int64)
    for i in range(X.shape[0]):
        node = 0
        while feature[node] >= 0:
            if X[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = node
    return out
