"""Pure-Python/numpy versions of the hot loops.

These define the reference semantics. The Cython module ``_ckernels`` performs
the same floating-point operations in the same order, so both backends return
bit-identical results for identical inputs.
"""

import numpy as np


def gibbs_sweep(doc_ids, word_ids, z, ndk, nkw, nk, u, alpha, beta):
    """One collapsed-Gibbs pass over every token, updating counts in place.

    ``u`` holds one uniform draw per token; the new topic is the first ``k``
    whose cumulative unnormalised weight exceeds ``u[i] * total``.
    """
    n_topics = nk.shape[0]
    vbeta = nkw.shape[1] * beta
    docs = doc_ids.tolist()
    words = word_ids.tolist()
    zl = z.tolist()
    ndk_l = ndk.tolist()
    nkw_l = nkw.tolist()
    nk_l = nk.tolist()
    ul = u.tolist()
    cum = [0.0] * n_topics
    for i in range(len(zl)):
        d = docs[i]
        w = words[i]
        k = zl[i]
        row = ndk_l[d]
        row[k] -= 1
        nkw_l[k][w] -= 1
        nk_l[k] -= 1
        total = 0.0
        for j in range(n_topics):
            total += (row[j] + alpha) * (nkw_l[j][w] + beta) / (nk_l[j] + vbeta)
            cum[j] = total
        target = ul[i] * total
        k = n_topics - 1
        for j in range(n_topics):
            if cum[j] > target:
                k = j
                break
        zl[i] = k
        row[k] += 1
        nkw_l[k][w] += 1
        nk_l[k] += 1
    z[:] = zl
    ndk[:] = ndk_l
    nkw[:] = nkw_l
    nk[:] = nk_l


def _seq_sum(values):
    # np.cumsum accumulates strictly left to right, unlike np.sum (pairwise)
    if values.size == 0:
        return 0.0
    return float(np.cumsum(values)[-1])


def _sse(values):
    m = values.size
    mean = _seq_sum(values) / m
    return _seq_sum((values - mean) ** 2), mean


def grow_tree(X, y, sample_idx, max_depth, min_leaf, mtry, keys):
    """Grow one regression tree depth-first (left child first).

    Returns the tuple ``(feature, threshold, left, right, value, count, gain)``
    of node arrays, truncated to the number of nodes grown. ``feature == -1``
    marks a leaf. ``keys[node]`` ranks features for the random subset of the
    ``node``-th visited node when ``mtry`` is below the feature count.
    """
    n_features = X.shape[1]
    idx = np.array(sample_idx, dtype=np.int64)
    cap = 2 * idx.size + 1
    feature = np.full(cap, -1, dtype=np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    value = np.zeros(cap)
    count = np.zeros(cap, dtype=np.int64)
    gain = np.zeros(cap)

    stack = [(0, idx.size, 0, -1, 0)]
    n_nodes = 0
    while stack:
        start, end, depth, parent, side = stack.pop()
        node = n_nodes
        n_nodes += 1
        if parent >= 0:
            if side == 0:
                left[parent] = node
            else:
                right[parent] = node
        ids = idx[start:end]
        ys = y[ids]
        m = end - start
        node_sse, mean = _sse(ys)
        value[node] = mean
        count[node] = m
        if (max_depth >= 0 and depth >= max_depth) or m < 2 * min_leaf or ys.max() == ys.min():
            continue

        if mtry < n_features:
            cand = np.sort(np.argsort(keys[node], kind="stable")[:mtry])
        else:
            cand = np.arange(n_features)

        best_proxy = -np.inf
        best_f = -1
        best_thr = 0.0
        lo = min_leaf - 1
        hi = m - min_leaf - 1
        for f in cand:
            xcol = X[ids, f]
            order = np.lexsort((ids, xcol))
            xs = xcol[order]
            cs = np.cumsum(ys[order])
            total = cs[-1]
            pos = np.arange(lo, hi + 1)
            valid = xs[pos] < xs[pos + 1]
            if not valid.any():
                continue
            n_l = (pos + 1).astype(np.float64)
            n_r = (m - pos - 1).astype(np.float64)
            s_l = cs[pos]
            s_r = total - s_l
            proxy = s_l * s_l / n_l + s_r * s_r / n_r
            proxy = np.where(valid, proxy, -np.inf)
            i = int(np.argmax(proxy))
            if proxy[i] > best_proxy:
                best_proxy = proxy[i]
                best_f = int(f)
                a = xs[pos[i]]
                b = xs[pos[i] + 1]
                thr = 0.5 * (a + b)
                if thr >= b:
                    thr = a
                best_thr = thr

        if best_f < 0:
            continue
        goes_left = X[ids, best_f] <= best_thr
        left_ids = ids[goes_left]
        right_ids = ids[~goes_left]
        mid = start + left_ids.size
        idx[start:mid] = left_ids
        idx[mid:end] = right_ids
        sse_l, _ = _sse(y[left_ids])
        sse_r, _ = _sse(y[right_ids])
        g = node_sse - sse_l - sse_r
        feature[node] = best_f
        threshold[node] = best_thr
        gain[node] = g if g > 0.0 else 0.0
        stack.append((mid, end, depth + 1, node, 1))
        stack.append((start, mid, depth + 1, node, 0))

    n = n_nodes
    return (feature[:n].copy(), threshold[:n].copy(), left[:n].copy(), right[:n].copy(),
            value[:n].copy(), count[:n].copy(), gain[:n].copy())


def predict_tree(feature, threshold, left, right, value, X):
    node = np.zeros(X.shape[0], dtype=np.int64)
    rows = np.arange(X.shape[0])
    active = feature[node] >= 0
    while active.any():
        r = rows[active]
        nd = node[r]
        go_left = X[r, feature[nd]] <= threshold[nd]
        node[r] = np.where(go_left, left[nd], right[nd])
        active = feature[node] >= 0
    return value[node]


def row_products(x, WT):
    """``x @ WT`` accumulated strictly left to right over the inner index.

    Each output depends only on its own row, and zero inputs leave the sum
    untouched, unlike BLAS whose blocking varies with the shapes.
    """
    out = np.zeros((x.shape[0], WT.shape[1]))
    for k in range(x.shape[1]):
        out += x[:, k, None] * WT[k]
    return out
