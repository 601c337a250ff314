"""Hot loops with a numba implementation and a pure-numpy fallback.

Set ``ALNS_DISABLE_NUMBA=1`` before import to force the numpy versions.
Both paths accumulate in the same fixed order, so results do not depend
on the thread count.
"""
from __future__ import annotations

import logging
import os

import numpy as np

log = logging.getLogger(__name__)

_DISABLED = os.environ.get("ALNS_DISABLE_NUMBA", "0").lower() in ("1", "true", "yes")

try:
    if _DISABLED:
        raise ImportError
    # the built-in layer avoids probing for an external TBB/OpenMP runtime
    os.environ.setdefault("NUMBA_THREADING_LAYER", "workqueue")
    import numba
    from numba import njit
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised through the env flag
    numba = None
    HAVE_NUMBA = False

BACKEND = "numba" if HAVE_NUMBA else "numpy"


def set_num_threads(n: int) -> None:
    """Threads used by the parallel kernels; results do not depend on ``n``."""
    if HAVE_NUMBA:
        numba.set_num_threads(max(1, min(int(n), numba.config.NUMBA_NUM_THREADS)))


# ----------------------------------------------------------------------
# scatter-add
def _scatter_add_np(index, values, n):
    return np.bincount(index, weights=values, minlength=n)


if HAVE_NUMBA:
    @njit(cache=True)
    def _scatter_add_nb(index, values, n):
        out = np.zeros(n)
        for i in range(index.shape[0]):
            out[index[i]] += values[i]
        return out


def scatter_add(index: np.ndarray, values: np.ndarray, n: int) -> np.ndarray:
    """``out[index[i]] += values[i]`` summed sequentially in input order."""
    values = np.ascontiguousarray(values, dtype=np.float64).reshape(-1)
    index = np.ascontiguousarray(index).reshape(-1)
    if HAVE_NUMBA:
        return _scatter_add_nb(index, values, n)
    return _scatter_add_np(index, values, n)


# ----------------------------------------------------------------------
# dense sub-blocks of a CSR matrix
def _extract_np(indptr, indices, data, ptr, dofs, n):
    sizes = np.diff(ptr)
    offs = np.zeros(len(sizes) + 1, dtype=np.int64)
    np.cumsum(sizes.astype(np.int64) ** 2, out=offs[1:])
    out = np.zeros(offs[-1])
    rows = np.repeat(np.arange(len(indptr) - 1, dtype=np.int64), np.diff(indptr))
    keys = rows * n + indices
    # patches grouped to bound memory
    start = 0
    while start < len(sizes):
        stop = start
        budget = 0
        while stop < len(sizes) and budget < 4_000_000:
            budget += int(sizes[stop]) ** 2
            stop += 1
        for m in np.unique(sizes[start:stop]):
            sel = start + np.flatnonzero(sizes[start:stop] == m)
            d = dofs[ptr[sel][:, None] + np.arange(m)].astype(np.int64)
            want = (d[:, :, None] * n + d[:, None, :]).reshape(-1)
            pos = np.searchsorted(keys, want)
            pos = np.minimum(pos, len(keys) - 1)
            hit = keys[pos] == want
            vals = np.where(hit, data[pos], 0.0)
            tgt = (offs[sel][:, None] + np.arange(m * m)).reshape(-1)
            out[tgt] = vals
        start = stop
    return out, offs


if HAVE_NUMBA:
    @njit(cache=True)
    def _extract_nb(indptr, indices, data, ptr, dofs, n):
        npatch = ptr.shape[0] - 1
        offs = np.zeros(npatch + 1, dtype=np.int64)
        for p in range(npatch):
            m = ptr[p + 1] - ptr[p]
            offs[p + 1] = offs[p] + m * m
        out = np.zeros(offs[npatch])
        loc = -np.ones(n, dtype=np.int64)
        for p in range(npatch):
            m = ptr[p + 1] - ptr[p]
            for i in range(m):
                loc[dofs[ptr[p] + i]] = i
            for i in range(m):
                r = dofs[ptr[p] + i]
                for jj in range(indptr[r], indptr[r + 1]):
                    j = loc[indices[jj]]
                    if j >= 0:
                        out[offs[p] + i * m + j] = data[jj]
            for i in range(m):
                loc[dofs[ptr[p] + i]] = -1
        return out, offs


def extract_blocks(A, ptr: np.ndarray, dofs: np.ndarray):
    """Dense row-major blocks ``A[d, d]`` for each index set ``dofs[ptr[p]:ptr[p+1]]``.

    Returns the concatenated blocks and their offsets.
    """
    A = A.tocsr()
    A.sort_indices()
    args = (A.indptr.astype(np.int64), A.indices.astype(np.int64), A.data.astype(np.float64),
            np.asarray(ptr, dtype=np.int64), np.asarray(dofs, dtype=np.int64), A.shape[0])
    if HAVE_NUMBA:
        return _extract_nb(*args)
    return _extract_np(*args)


# ----------------------------------------------------------------------
# additive block application:  out = sum_p  S_p^T inv_p S_p r
def _block_apply_np(blocks, offs, ptr, dofs, order, r, n):
    sizes = np.diff(ptr)
    contrib = np.empty(len(dofs))
    for m in np.unique(sizes):
        sel = np.flatnonzero(sizes == m)
        if m == 0:
            continue
        idx = ptr[sel][:, None] + np.arange(m)
        inv = blocks[offs[sel][:, None] + np.arange(m * m)].reshape(-1, m, m)
        loc = r[dofs[idx]]
        contrib[idx] = np.einsum("pij,pj->pi", inv, loc)
    return np.bincount(dofs[order], weights=contrib[order], minlength=n)


if HAVE_NUMBA:
    @njit(cache=True, parallel=True)
    def _block_apply_nb(blocks, offs, ptr, dofs, order, r, n):
        contrib = np.empty(dofs.shape[0])
        npatch = ptr.shape[0] - 1
        # each patch product is serial, so the threads only split the patch loop
        for p in numba.prange(npatch):
            s = ptr[p]
            m = ptr[p + 1] - s
            o = offs[p]
            for i in range(m):
                acc = 0.0
                for j in range(m):
                    acc += blocks[o + i * m + j] * r[dofs[s + j]]
                contrib[s + i] = acc
        out = np.zeros(n)
        for t in range(order.shape[0]):
            k = order[t]
            out[dofs[k]] += contrib[k]
        return out


def block_apply(blocks, offs, ptr, dofs, order, r) -> np.ndarray:
    """Sum of local block products scattered back in the fixed ``order``."""
    r = np.ascontiguousarray(r, dtype=np.float64)
    if HAVE_NUMBA:
        return _block_apply_nb(blocks, offs, ptr, dofs, order, r, len(r))
    return _block_apply_np(blocks, offs, ptr, dofs, order, r, len(r))
