# cython: language_level=3
"""Compiled versions of the hot loops in ``_pykernels``.

Every function mirrors its Python counterpart operation for operation so the
two backends agree bit for bit.
"""

import numpy as np
cimport numpy as cnp
from libc.stdlib cimport malloc, free, qsort

cnp.import_array()


def gibbs_sweep(const cnp.int64_t[::1] doc_ids, const cnp.int64_t[::1] word_ids,
                cnp.int64_t[::1] z, cnp.int64_t[:, ::1] ndk, cnp.int64_t[:, ::1] nkw,
                cnp.int64_t[::1] nk, const double[::1] u, double alpha, double beta):
    cdef Py_ssize_t n_tokens = z.shape[0]
    cdef Py_ssize_t n_topics = nk.shape[0]
    cdef double vbeta = nkw.shape[1] * beta
    cdef Py_ssize_t i, j
    cdef cnp.int64_t d, w, k
    cdef double total, target
    cdef double *cum = <double *> malloc(n_topics * sizeof(double))
    if cum == NULL:
        raise MemoryError()
    try:
        with nogil:
            for i in range(n_tokens):
                d = doc_ids[i]
                w = word_ids[i]
                k = z[i]
                ndk[d, k] -= 1
                nkw[k, w] -= 1
                nk[k] -= 1
                total = 0.0
                for j in range(n_topics):
                    total += (ndk[d, j] + alpha) * (nkw[j, w] + beta) / (nk[j] + vbeta)
                    cum[j] = total
                target = u[i] * total
                k = n_topics - 1
                for j in range(n_topics):
                    if cum[j] > target:
                        k = j
                        break
                z[i] = k
                ndk[d, k] += 1
                nkw[k, w] += 1
                nk[k] += 1
    finally:
        free(cum)


cdef struct KeyedIndex:
    double key
    cnp.int64_t index


cdef int _cmp_keyed(const void *a, const void *b) noexcept nogil:
    cdef KeyedIndex *pa = <KeyedIndex *> a
    cdef KeyedIndex *pb = <KeyedIndex *> b
    if pa.key < pb.key:
        return -1
    if pa.key > pb.key:
        return 1
    if pa.index < pb.index:
        return -1
    if pa.index > pb.index:
        return 1
    return 0


cdef int _cmp_int64(const void *a, const void *b) noexcept nogil:
    cdef cnp.int64_t va = (<cnp.int64_t *> a)[0]
    cdef cnp.int64_t vb = (<cnp.int64_t *> b)[0]
    return (va > vb) - (va < vb)


cdef double _node_sse(const double[::1] y, cnp.int64_t *ids, Py_ssize_t m, double *mean_out) noexcept nogil:
    cdef Py_ssize_t i
    cdef double s = 0.0
    cdef double mean, dv
    for i in range(m):
        s += y[ids[i]]
    mean = s / m
    s = 0.0
    for i in range(m):
        dv = y[ids[i]] - mean
        s += dv * dv
    mean_out[0] = mean
    return s


def grow_tree(const double[:, ::1] X, const double[::1] y, sample_idx,
              int max_depth, int min_leaf, int mtry, const double[:, ::1] keys):
    cdef Py_ssize_t n_features = X.shape[1]
    cdef cnp.int64_t[::1] idx = np.array(sample_idx, dtype=np.int64)
    cdef Py_ssize_t n = idx.shape[0]
    cdef Py_ssize_t cap = 2 * n + 1

    feature_a = np.full(cap, -1, dtype=np.int64)
    threshold_a = np.zeros(cap)
    left_a = np.full(cap, -1, dtype=np.int64)
    right_a = np.full(cap, -1, dtype=np.int64)
    value_a = np.zeros(cap)
    count_a = np.zeros(cap, dtype=np.int64)
    gain_a = np.zeros(cap)
    cdef cnp.int64_t[::1] feature = feature_a
    cdef double[::1] threshold = threshold_a
    cdef cnp.int64_t[::1] left = left_a
    cdef cnp.int64_t[::1] right = right_a
    cdef double[::1] value = value_a
    cdef cnp.int64_t[::1] count = count_a
    cdef double[::1] gain = gain_a

    # stack entries: start, end, depth, parent, side
    cdef cnp.int64_t *stack = <cnp.int64_t *> malloc(5 * cap * sizeof(cnp.int64_t))
    cdef KeyedIndex *pairs = <KeyedIndex *> malloc((n + 1) * sizeof(KeyedIndex))
    cdef KeyedIndex *fkeys = <KeyedIndex *> malloc((n_features + 1) * sizeof(KeyedIndex))
    cdef cnp.int64_t *cand = <cnp.int64_t *> malloc((n_features + 1) * sizeof(cnp.int64_t))
    cdef cnp.int64_t *buf = <cnp.int64_t *> malloc((n + 1) * sizeof(cnp.int64_t))
    if stack == NULL or pairs == NULL or fkeys == NULL or cand == NULL or buf == NULL:
        free(stack); free(pairs); free(fkeys); free(cand); free(buf)
        raise MemoryError()

    cdef Py_ssize_t sp = 0
    cdef Py_ssize_t n_nodes = 0
    cdef Py_ssize_t start, end, depth, parent, side, node, m, i, c, n_cand, nl, nr, mid, pos
    cdef cnp.int64_t f, best_f
    cdef double node_sse, mean, ymin, ymax, yv, best_proxy, best_thr, total, s_l, s_r, proxy
    cdef double a, b, thr, sse_l, sse_r, g, dummy
    cdef cnp.int64_t *ids

    try:
        with nogil:
            stack[0] = 0; stack[1] = n; stack[2] = 0; stack[3] = -1; stack[4] = 0
            sp = 1
            while sp > 0:
                sp -= 1
                start = stack[5 * sp]
                end = stack[5 * sp + 1]
                depth = stack[5 * sp + 2]
                parent = stack[5 * sp + 3]
                side = stack[5 * sp + 4]
                node = n_nodes
                n_nodes += 1
                if parent >= 0:
                    if side == 0:
                        left[parent] = node
                    else:
                        right[parent] = node
                ids = &idx[start]
                m = end - start
                node_sse = _node_sse(y, ids, m, &mean)
                value[node] = mean
                count[node] = m
                if (max_depth >= 0 and depth >= max_depth) or m < 2 * min_leaf:
                    continue
                ymin = y[ids[0]]
                ymax = ymin
                for i in range(1, m):
                    yv = y[ids[i]]
                    if yv < ymin:
                        ymin = yv
                    if yv > ymax:
                        ymax = yv
                if ymax == ymin:
                    continue

                if mtry < n_features:
                    for i in range(n_features):
                        fkeys[i].key = keys[node, i]
                        fkeys[i].index = i
                    qsort(fkeys, n_features, sizeof(KeyedIndex), _cmp_keyed)
                    for i in range(mtry):
                        cand[i] = fkeys[i].index
                    qsort(cand, mtry, sizeof(cnp.int64_t), _cmp_int64)
                    n_cand = mtry
                else:
                    for i in range(n_features):
                        cand[i] = i
                    n_cand = n_features

                best_proxy = -1.0 / 0.0
                best_f = -1
                best_thr = 0.0
                for c in range(n_cand):
                    f = cand[c]
                    for i in range(m):
                        pairs[i].key = X[ids[i], f]
                        pairs[i].index = ids[i]
                    qsort(pairs, m, sizeof(KeyedIndex), _cmp_keyed)
                    total = 0.0
                    for i in range(m):
                        total += y[pairs[i].index]
                    s_l = 0.0
                    for i in range(m - min_leaf):
                        s_l += y[pairs[i].index]
                        if i < min_leaf - 1:
                            continue
                        if not (pairs[i].key < pairs[i + 1].key):
                            continue
                        nl = i + 1
                        nr = m - i - 1
                        s_r = total - s_l
                        proxy = s_l * s_l / (<double> nl) + s_r * s_r / (<double> nr)
                        if proxy > best_proxy:
                            best_proxy = proxy
                            best_f = f
                            a = pairs[i].key
                            b = pairs[i + 1].key
                            thr = 0.5 * (a + b)
                            if thr >= b:
                                thr = a
                            best_thr = thr

                if best_f < 0:
                    continue
                nl = 0
                nr = 0
                for i in range(m):
                    if X[ids[i], best_f] <= best_thr:
                        ids[nl] = ids[i]
                        nl += 1
                    else:
                        buf[nr] = ids[i]
                        nr += 1
                for i in range(nr):
                    ids[nl + i] = buf[i]
                mid = start + nl
                sse_l = _node_sse(y, ids, nl, &dummy)
                sse_r = _node_sse(y, &ids[nl], nr, &dummy)
                g = node_sse - sse_l - sse_r
                feature[node] = best_f
                threshold[node] = best_thr
                gain[node] = g if g > 0.0 else 0.0
                stack[5 * sp] = mid; stack[5 * sp + 1] = end; stack[5 * sp + 2] = depth + 1
                stack[5 * sp + 3] = node; stack[5 * sp + 4] = 1
                sp += 1
                stack[5 * sp] = start; stack[5 * sp + 1] = mid; stack[5 * sp + 2] = depth + 1
                stack[5 * sp + 3] = node; stack[5 * sp + 4] = 0
                sp += 1
    finally:
        free(stack); free(pairs); free(fkeys); free(cand); free(buf)

    k = n_nodes
    return (feature_a[:k].copy(), threshold_a[:k].copy(), left_a[:k].copy(), right_a[:k].copy(),
            value_a[:k].copy(), count_a[:k].copy(), gain_a[:k].copy())


def predict_tree(const cnp.int64_t[::1] feature, const double[::1] threshold,
                 const cnp.int64_t[::1] left, const cnp.int64_t[::1] right,
                 const double[::1] value, const double[:, ::1] X):
    cdef Py_ssize_t n = X.shape[0]
    out_a = np.empty(n)
    cdef double[::1] out = out_a
    cdef Py_ssize_t r
    cdef cnp.int64_t node
    with nogil:
        for r in range(n):
            node = 0
            while feature[node] >= 0:
                if X[r, feature[node]] <= threshold[node]:
                    node = left[node]
                else:
                    node = right[node]
            out[r] = value[node]
    return out_a


def row_products(const double[:, ::1] x, const double[:, ::1] WT):
    cdef Py_ssize_t B = x.shape[0], K = x.shape[1], J = WT.shape[1]
    cdef Py_ssize_t b, k, j
    cdef double xv
    out = np.zeros((B, J))
    cdef double[:, ::1] o = out
    with nogil:
        for b in range(B):
            for k in range(K):
                xv = x[b, k]
                for j in range(J):
                    o[b, j] += xv * WT[k, j]
    return out
