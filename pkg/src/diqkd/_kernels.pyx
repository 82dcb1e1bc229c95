# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels. See ``_kernels_py`` for the reference semantics."""

import numpy as np
cimport numpy as cnp
from libc.stdint cimport uint8_t, uint64_t, int64_t

cnp.import_array()


def schur_block(const int64_t[::1] indptr, const int64_t[::1] ia, const int64_t[::1] ja,
                const double[::1] va, const double[:, ::1] X, const double[:, ::1] W,
                double[:, ::1] M):
    cdef Py_ssize_t m = indptr.shape[0] - 1
    cdef Py_ssize_t nnz = ia.shape[0]
    if nnz == 0:
        return
    n = X.shape[0]
    # dense rows share matrix positions; then evaluating X A_j W once per position wins
    uniq, slot = np.unique(np.asarray(ia) * n + np.asarray(ja), return_inverse=True)
    if len(uniq) * (nnz + m) < nnz * nnz // 2:
        _schur_by_position(indptr, ia, ja, va, X, W, M, uniq // n, uniq % n,
                           np.ascontiguousarray(slot, dtype=np.int64))
    else:
        _schur_pairs(indptr, ia, ja, va, X, W, M)


cdef void _schur_pairs(const int64_t[::1] indptr, const int64_t[::1] ia, const int64_t[::1] ja,
                       const double[::1] va, const double[:, ::1] X, const double[:, ::1] W,
                       double[:, ::1] M) noexcept nogil:
    cdef Py_ssize_t m = indptr.shape[0] - 1
    cdef Py_ssize_t i, j, p, q
    cdef double s, vp
    cdef int64_t a, b
    for i in range(m):
        for j in range(i, m):
            s = 0.0
            for p in range(indptr[i], indptr[i + 1]):
                a = ia[p]
                b = ja[p]
                vp = va[p]
                for q in range(indptr[j], indptr[j + 1]):
                    s += vp * va[q] * X[b, ia[q]] * W[ja[q], a]
            M[i, j] += s
            if j != i:
                M[j, i] += s


def _schur_by_position(const int64_t[::1] indptr, const int64_t[::1] ia, const int64_t[::1] ja,
                       const double[::1] va, const double[:, ::1] X, const double[:, ::1] W,
                       double[:, ::1] M, ua_arr, ub_arr, const int64_t[::1] slot):
    cdef const int64_t[::1] ua = np.ascontiguousarray(ua_arr, dtype=np.int64)
    cdef const int64_t[::1] ub = np.ascontiguousarray(ub_arr, dtype=np.int64)
    cdef Py_ssize_t m = indptr.shape[0] - 1
    cdef Py_ssize_t U = ua.shape[0]
    zbuf = np.zeros(U)
    cdef double[::1] z = zbuf
    cdef Py_ssize_t i, j, p, q, u
    cdef double s
    with nogil:
        for j in range(m):
            # z[u] = (X A_j W)[b_u, a_u] for every used position (a_u, b_u)
            for u in range(U):
                s = 0.0
                for q in range(indptr[j], indptr[j + 1]):
                    s += va[q] * X[ub[u], ia[q]] * W[ja[q], ua[u]]
                z[u] = s
            for i in range(m):
                s = 0.0
                for p in range(indptr[i], indptr[i + 1]):
                    s += va[p] * z[slot[p]]
                M[i, j] += s


def toeplitz_hash_batch(seeds, x):
    cdef const uint8_t[:, ::1] sd = np.ascontiguousarray(seeds, dtype=np.uint8)
    xa = np.asarray(x, dtype=np.uint8)
    cdef Py_ssize_t n = xa.shape[xa.ndim - 1]
    cdef Py_ssize_t S = sd.shape[0]
    cdef Py_ssize_t m = sd.shape[1] - n + 1
    cdef const uint8_t[:, ::1] xs
    cdef bint shared = xa.ndim == 1
    if shared:
        xs = np.ascontiguousarray(xa.reshape(1, n))
    else:
        xs = np.ascontiguousarray(xa)
    out = np.empty((S, m), dtype=np.uint8)
    cdef uint8_t[:, ::1] o = out
    cdef Py_ssize_t s, j, i, r
    cdef uint8_t acc
    with nogil:
        for s in range(S):
            r = 0 if shared else s
            for j in range(m):
                acc = 0
                for i in range(n):
                    acc ^= sd[s, j + n - 1 - i] & xs[r, i]
                o[s, j] = acc
    return out


cdef extern from *:
    int __builtin_ctzll(unsigned long long) nogil


cdef inline uint64_t _next_combination(uint64_t v) nogil:
    # Gosper's hack: next integer with the same popcount
    cdef uint64_t t = v | (v - 1)
    cdef uint64_t low = (~t) & (t + 1)
    return (t + 1) | (((low - 1) >> (__builtin_ctzll(v) + 1)))


cdef inline uint64_t _syndrome(const uint64_t[::1] cols, uint64_t e) nogil:
    cdef uint64_t s = 0
    while e:
        s ^= cols[__builtin_ctzll(e)]
        e &= e - 1
    return s


cdef inline uint64_t _bit_reverse_order_key(uint64_t e, int n) nogil:
    # lexicographic order on sorted bit positions == descending order on reversed masks
    cdef uint64_t r = 0
    cdef int i
    while e:
        i = __builtin_ctzll(e)
        r |= (<uint64_t>1) << (n - 1 - i)
        e &= e - 1
    return r


def decode_min_weight(cols, syndrome, r):
    cdef const uint64_t[::1] c = np.ascontiguousarray(cols, dtype=np.uint64)
    cdef int n = c.shape[0]
    cdef uint64_t target = <uint64_t>int(syndrome)
    cdef uint64_t limit, e
    cdef Py_ssize_t count, k, pick
    cdef uint64_t[::1] hits
    cdef uint64_t[::1] keys
    cdef int w
    if n > 63:
        raise ValueError("at most 63 bits supported")
    if target == 0:
        return 0, 0, 1
    limit = (<uint64_t>1) << n
    for w in range(1, n + 1):
        count = 0
        e = ((<uint64_t>1) << w) - 1
        with nogil:
            while e < limit:
                if _syndrome(c, e) == target:
                    count += 1
                e = _next_combination(e)
        if count == 0:
            continue
        # rank solutions in lexicographic order of positions, pick index r % count
        pick = int(r) % count
        hits_arr = np.empty(count, dtype=np.uint64)
        keys_arr = np.empty(count, dtype=np.uint64)
        hits = hits_arr
        keys = keys_arr
        k = 0
        e = ((<uint64_t>1) << w) - 1
        with nogil:
            while e < limit and k < count:
                if _syndrome(c, e) == target:
                    hits[k] = e
                    keys[k] = _bit_reverse_order_key(e, n)
                    k += 1
                e = _next_combination(e)
        order = np.argsort(keys_arr)[::-1]
        return int(hits_arr[order[pick]]), w, int(count)
    raise ValueError("syndrome not reachable")
