"""Pure numpy implementations of the hot kernels.

Used when the compiled ``_kernels`` extension is unavailable. Signatures
and results match the compiled versions exactly.
"""

from __future__ import annotations

import itertools
from functools import lru_cache

import numpy as np
from scipy import sparse


def schur_block(indptr, ia, ja, va, X, W, M):
    """Accumulate ``M[i, j] += tr(A_i X A_j W)`` for one block.

    Row ``i`` of the block's constraint operator is the triplet list
    ``(ia[p], ja[p], va[p])`` for ``p in indptr[i]:indptr[i+1]``; each A_i is
    symmetric.
    """
    n = X.shape[0]
    m = len(indptr) - 1
    counts = np.diff(indptr)
    rows = np.repeat(np.arange(m), counts)
    if len(rows) == 0:
        return
    if n * n <= 4096:
        A = sparse.csr_matrix((va, (rows, ia * n + ja)), shape=(m, n * n))
        K = np.kron(X, W)
        M += A @ (A @ K).T
        return
    # X A_j W as a sum of scaled outer products, one column block per row j
    XA = X[:, ia] * va  # (n, nnz)
    WB = W[ja, :]  # (nnz, n)
    P = np.zeros((m, n, n))
    for j in range(m):
        s, e = indptr[j], indptr[j + 1]
        if s != e:
            P[j] = XA[:, s:e] @ WB[s:e]
    vals = P[:, ia, ja] * va  # (m, nnz): A_i[a,b] * P_j[a,b] per triplet
    owner = sparse.csr_matrix((np.ones(len(rows)), (np.arange(len(rows)), rows)), shape=(len(rows), m))
    M += (owner.T @ vals.T)


def toeplitz_hash_batch(seeds, x):
    """Hash bit vectors with Toeplitz matrices given by their seeds.

    ``seeds`` has shape (S, n + m - 1); ``x`` has shape (n,) or (S, n).
    Row j of the matrix is ``seed[j : j + n]`` reversed.
    """
    seeds = np.ascontiguousarray(seeds, dtype=np.uint8)
    x = np.asarray(x, dtype=np.uint8)
    n = x.shape[-1]
    windows = np.lib.stride_tricks.sliding_window_view(seeds, n, axis=1)[:, :, ::-1]
    if x.ndim == 1:
        acc = windows.astype(np.int64) @ x.astype(np.int64)
    else:
        acc = np.einsum("smn,sn->sm", windows.astype(np.int64), x.astype(np.int64))
    return (acc & 1).astype(np.uint8)


@lru_cache(maxsize=256)
def _combos(n: int, w: int) -> np.ndarray:
    if w == 0:
        return np.zeros((1, 0), dtype=np.int64)
    return np.array(list(itertools.combinations(range(n), w)), dtype=np.int64)


def _masks(combos: np.ndarray) -> np.ndarray:
    if combos.shape[1] == 0:
        return np.zeros(1, dtype=np.uint64)
    return np.bitwise_or.reduce(np.left_shift(np.uint64(1), combos.astype(np.uint64)), axis=1)


def decode_min_weight(cols, syndrome, r):
    """Minimum-weight error pattern with the given syndrome.

    ``cols[i]`` is the syndrome (as an integer bit mask) of a single error on
    bit ``i``. Among all minimum-weight solutions, enumerated in
    lexicographic order of their bit positions, the ``r % count``-th is
    returned as ``(pattern_mask, weight, count)``.
    """
    cols = np.asarray(cols, dtype=np.uint64)
    n = len(cols)
    syndrome = np.uint64(syndrome)
    for w in range(n + 1):
        combos = _combos(n, w)
        if w == 0:
            syn = np.zeros(1, dtype=np.uint64)
        else:
            syn = np.bitwise_xor.reduce(cols[combos], axis=1)
        hits = np.flatnonzero(syn == syndrome)
        if len(hits):
            pick = hits[int(r) % len(hits)]
            return int(_masks(combos[pick:pick + 1])[0]), w, len(hits)
    raise ValueError("syndrome not reachable")
