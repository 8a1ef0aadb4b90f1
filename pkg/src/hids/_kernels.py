"""Compiled inner loops for tree building and scoring.

Trees are stored flat: ``feature[i] < 0`` marks a leaf, children are global
node indices, and a forest is the concatenation of its trees plus a
``roots`` array.
"""

from __future__ import annotations

import numba
import numpy as np

_JIT = dict(nopython=True, cache=True, nogil=True)


@numba.jit(**_JIT)
def build_cart(X, y, w, order, n_classes, max_features, max_depth, min_leaf, seed):
    """Greedy Gini CART on the rows with ``w > 0`` (``w`` = bootstrap multiplicity).

    ``order[j]`` is the argsort of ``X[:, j]`` over all rows. Per node the
    first ``max_features`` non-constant features of a random permutation are
    searched; thresholds are midpoints between consecutive distinct values
    and ``x <= threshold`` goes left. Ties in the split criterion keep the
    lowest feature index, then the lowest threshold.
    """
    np.random.seed(seed)
    n_feat = X.shape[1]
    m = 0
    for i in range(w.shape[0]):
        if w[i] > 0:
            m += 1
    S = np.empty((n_feat, m), dtype=np.int64)
    for j in range(n_feat):
        k = 0
        for r in range(order.shape[1]):
            i = order[j, r]
            if w[i] > 0:
                S[j, k] = i
                k += 1

    cap = 2 * m + 1
    feature = np.full(cap, -1, dtype=np.int64)
    threshold = np.zeros(cap, dtype=np.float64)
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    value = np.zeros((cap, n_classes), dtype=np.float64)

    st_node = np.empty(cap, dtype=np.int64)
    st_start = np.empty(cap, dtype=np.int64)
    st_end = np.empty(cap, dtype=np.int64)
    st_depth = np.empty(cap, dtype=np.int64)
    top = 0
    st_node[0] = 0
    st_start[0] = 0
    st_end[0] = m
    st_depth[0] = 0
    top = 1
    n_nodes = 1

    counts = np.zeros(n_classes, dtype=np.float64)
    lc = np.zeros(n_classes, dtype=np.float64)
    rc = np.zeros(n_classes, dtype=np.float64)
    perm = np.arange(n_feat)
    goes_left = np.zeros(X.shape[0], dtype=np.bool_)
    tmp = np.empty(m, dtype=np.int64)

    while top > 0:
        top -= 1
        node = st_node[top]
        start = st_start[top]
        end = st_end[top]
        depth = st_depth[top]

        counts[:] = 0.0
        for r in range(start, end):
            i = S[0, r]
            counts[y[i]] += w[i]
        total = 0.0
        n_nonzero = 0
        sq = 0.0
        for c in range(n_classes):
            value[node, c] = counts[c]
            total += counts[c]
            sq += counts[c] * counts[c]
            if counts[c] > 0:
                n_nonzero += 1
        if n_nonzero <= 1 or (max_depth >= 0 and depth >= max_depth) or total < 2 * min_leaf:
            continue

        # Fisher-Yates shuffle of the candidate feature order
        for a in range(n_feat - 1, 0, -1):
            b = np.random.randint(0, a + 1)
            t = perm[a]
            perm[a] = perm[b]
            perm[b] = t

        best_f = -1
        best_pos = -1
        best_score = -np.inf
        tried = 0
        for q in range(n_feat):
            if tried >= max_features:
                break
            f = perm[q]
            if X[S[f, start], f] == X[S[f, end - 1], f]:
                continue
            tried += 1
            lc[:] = 0.0
            for c in range(n_classes):
                rc[c] = counts[c]
            ln = 0.0
            rn = total
            sl2 = 0.0
            sr2 = sq
            f_score = -np.inf
            f_pos = -1
            for r in range(start, end - 1):
                i = S[f, r]
                c = y[i]
                wi = float(w[i])
                sl2 += 2.0 * lc[c] * wi + wi * wi
                sr2 += -2.0 * rc[c] * wi + wi * wi
                lc[c] += wi
                rc[c] -= wi
                ln += wi
                rn -= wi
                if X[S[f, r + 1], f] <= X[i, f]:
                    continue
                if ln < min_leaf or rn < min_leaf:
                    continue
                s = sl2 / ln + sr2 / rn
                if f_pos < 0 or s > f_score + 1e-12 * abs(f_score):
                    f_score = s
                    f_pos = r
            if f_pos < 0:
                continue
            tol = 1e-12 * abs(best_score) if best_f >= 0 else 0.0
            if best_f < 0 or f_score > best_score + tol or (f_score >= best_score - tol and f < best_f):
                best_f = f
                best_pos = f_pos
                best_score = f_score

        if best_f < 0:
            continue

        lo = X[S[best_f, best_pos], best_f]
        hi = X[S[best_f, best_pos + 1], best_f]
        thr = 0.5 * (lo + hi)
        if thr >= hi:
            thr = lo
        n_left = best_pos + 1 - start
        for r in range(start, end):
            goes_left[S[best_f, r]] = r <= best_pos
        for j in range(n_feat):
            a = 0
            b = n_left
            for r in range(start, end):
                i = S[j, r]
                if goes_left[i]:
                    tmp[a] = i
                    a += 1
                else:
                    tmp[b] = i
                    b += 1
            for r in range(end - start):
                S[j, start + r] = tmp[r]

        feature[node] = best_f
        threshold[node] = thr
        li = n_nodes
        ri = n_nodes + 1
        n_nodes += 2
        left[node] = li
        right[node] = ri
        # push right first so the left subtree is expanded first
        st_node[top] = ri
        st_start[top] = start + n_left
        st_end[top] = end
        st_depth[top] = depth + 1
        top += 1
        st_node[top] = li
        st_start[top] = start
        st_end[top] = start + n_left
        st_depth[top] = depth + 1
        top += 1

    return (feature[:n_nodes].copy(), threshold[:n_nodes].copy(), left[:n_nodes].copy(),
            right[:n_nodes].copy(), value[:n_nodes].copy())


@numba.jit(**_JIT)
def forest_proba(X, feature, threshold, left, right, leaf_proba, roots):
    n = X.shape[0]
    n_trees = roots.shape[0]
    out = np.zeros((n, leaf_proba.shape[1]), dtype=np.float64)
    for i in range(n):
        for t in range(n_trees):
            node = roots[t]
            while feature[node] >= 0:
                if X[i, feature[node]] <= threshold[node]:
                    node = left[node]
                else:
                    node = right[node]
            for c in range(leaf_proba.shape[1]):
                out[i, c] += leaf_proba[node, c]
        for c in range(leaf_proba.shape[1]):
            out[i, c] /= n_trees
    return out


@numba.jit(**_JIT)
def build_random_tree(X, max_depth, seed):
    """Random-split tree on a small subsample (isolation-forest style).

    Each internal node splits a uniformly chosen non-constant feature at a
    uniform point of the node's value range; ``x < threshold`` goes left.
    Every node records the bounding box of the rows that reached it.
    """
    np.random.seed(seed)
    n, n_feat = X.shape
    cap = 2 * n + 1
    feature = np.full(cap, -1, dtype=np.int64)
    threshold = np.zeros(cap, dtype=np.float64)
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    size = np.zeros(cap, dtype=np.int64)
    depth_of = np.zeros(cap, dtype=np.int64)
    box_lo = np.zeros((cap, n_feat), dtype=np.float64)
    box_hi = np.zeros((cap, n_feat), dtype=np.float64)

    rows = np.arange(n)
    tmp = np.empty(n, dtype=np.int64)
    st_node = np.empty(cap, dtype=np.int64)
    st_start = np.empty(cap, dtype=np.int64)
    st_end = np.empty(cap, dtype=np.int64)
    st_node[0] = 0
    st_start[0] = 0
    st_end[0] = n
    top = 1
    n_nodes = 1
    candidates = np.empty(n_feat, dtype=np.int64)

    while top > 0:
        top -= 1
        node = st_node[top]
        start = st_start[top]
        end = st_end[top]
        size[node] = end - start
        for j in range(n_feat):
            lo = np.inf
            hi = -np.inf
            for r in range(start, end):
                v = X[rows[r], j]
                if v < lo:
                    lo = v
                if v > hi:
                    hi = v
            box_lo[node, j] = lo
            box_hi[node, j] = hi
        if end - start <= 1 or depth_of[node] >= max_depth:
            continue
        n_cand = 0
        for j in range(n_feat):
            if box_hi[node, j] > box_lo[node, j]:
                candidates[n_cand] = j
                n_cand += 1
        if n_cand == 0:
            continue
        f = candidates[np.random.randint(0, n_cand)]
        lo = box_lo[node, f]
        hi = box_hi[node, f]
        u = np.random.random()
        while u == 0.0:
            u = np.random.random()
        p = lo + u * (hi - lo)
        if p <= lo or p > hi:
            p = 0.5 * (lo + hi)
        a = start
        b = end
        for r in range(start, end):
            i = rows[r]
            if X[i, f] < p:
                tmp[a - start] = i
                a += 1
        k = a - start
        for r in range(start, end):
            i = rows[r]
            if not X[i, f] < p:
                tmp[k] = i
                k += 1
        for r in range(end - start):
            rows[start + r] = tmp[r]

        feature[node] = f
        threshold[node] = p
        li = n_nodes
        ri = n_nodes + 1
        n_nodes += 2
        left[node] = li
        right[node] = ri
        depth_of[li] = depth_of[node] + 1
        depth_of[ri] = depth_of[node] + 1
        st_node[top] = ri
        st_start[top] = a
        st_end[top] = b
        top += 1
        st_node[top] = li
        st_start[top] = start
        st_end[top] = a
        top += 1

    return (feature[:n_nodes].copy(), threshold[:n_nodes].copy(), left[:n_nodes].copy(),
            right[:n_nodes].copy(), size[:n_nodes].copy(), depth_of[:n_nodes].copy(),
            box_lo[:n_nodes].copy(), box_hi[:n_nodes].copy())


@numba.jit(**_JIT)
def isolation_path_lengths(X, feature, threshold, left, right, size, roots, c_table):
    """Mean over trees of edges-to-leaf plus c(leaf size)."""
    n = X.shape[0]
    out = np.zeros(n, dtype=np.float64)
    for i in range(n):
        acc = 0.0
        for t in range(roots.shape[0]):
            node = roots[t]
            e = 0
            while feature[node] >= 0:
                if X[i, feature[node]] < threshold[node]:
                    node = left[node]
                else:
                    node = right[node]
                e += 1
            acc += e + c_table[size[node]]
        out[i] = acc / roots.shape[0]
    return out


@numba.jit(**_JIT)
def usfad_scores(X, feature, threshold, left, right, size, box_lo, box_hi, roots, psi, depth_limit):
    """Mean per-tree range-box score, each in [0, 1).

    Let w = (L + 1 - d) / (L + 1) at depth d, L the depth limit. If x stays
    inside every box down to its leaf a tree scores w/2 * (1 - leaf mass / psi).
    At the first node whose box excludes x it scores w/2 * (1 + r / (1 + r)),
    r the largest overshoot relative to that box's side length. Growing with
    r keeps out-of-range points from all tying at one value.
    """
    n, n_feat = X.shape
    out = np.zeros(n, dtype=np.float64)
    norm = 2.0 * (depth_limit + 1.0)
    for i in range(n):
        acc = 0.0
        for t in range(roots.shape[0]):
            node = roots[t]
            d = 0
            while True:
                r = 0.0
                for j in range(n_feat):
                    v = X[i, j]
                    lo = box_lo[node, j]
                    hi = box_hi[node, j]
                    over = lo - v if v < lo else (v - hi if v > hi else 0.0)
                    if over > 0.0:
                        rel = over / (hi - lo + 1e-12)
                        if rel > r:
                            r = rel
                weight = (depth_limit + 1.0 - d) / norm
                if r > 0.0:
                    acc += weight * (1.0 + r / (1.0 + r))
                    break
                if feature[node] < 0:
                    acc += weight * (1.0 - size[node] / psi[t])
                    break
                if X[i, feature[node]] < threshold[node]:
                    node = left[node]
                else:
                    node = right[node]
                d += 1
        out[i] = acc / roots.shape[0]
    return out
