import json
import os
import subprocess
import sys

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from alns import _kernels

needs_numba = pytest.mark.skipif(not _kernels.HAVE_NUMBA, reason="numba not available")


def random_patches(rng, n, npatch, maxsize):
    sizes = rng.integers(1, maxsize + 1, npatch)
    ptr = np.zeros(npatch + 1, dtype=np.int64)
    np.cumsum(sizes, out=ptr[1:])
    dofs = np.concatenate([np.sort(rng.choice(n, s, replace=False)) for s in sizes]).astype(np.int64)
    return ptr, dofs


@needs_numba
@given(st.integers(0, 2 ** 31 - 1), st.integers(5, 40), st.integers(1, 12))
@settings(max_examples=25, deadline=None)
def test_extract_blocks_backends_agree(seed, n, npatch):
    rng = np.random.default_rng(seed)
    A = sp.random(n, n, 0.3, random_state=seed, format="csr")
    A.sort_indices()
    ptr, dofs = random_patches(rng, n, npatch, min(n, 6))
    args = (A.indptr.astype(np.int64), A.indices.astype(np.int64), A.data, ptr, dofs, n)
    b_np, o_np = _kernels._extract_np(*args)
    b_nb, o_nb = _kernels._extract_nb(*args)
    assert np.array_equal(o_np, o_nb) and np.array_equal(b_np, b_nb)
    D = A.toarray()
    for p in range(npatch):
        d = dofs[ptr[p]:ptr[p + 1]]
        assert np.array_equal(b_np[o_np[p]:o_np[p + 1]], D[np.ix_(d, d)].reshape(-1))


@needs_numba
@given(st.integers(0, 2 ** 31 - 1), st.integers(5, 40), st.integers(1, 12))
@settings(max_examples=25, deadline=None)
def test_block_apply_backends_agree(seed, n, npatch):
    rng = np.random.default_rng(seed)
    ptr, dofs = random_patches(rng, n, npatch, min(n, 6))
    sizes = np.diff(ptr)
    offs = np.zeros(npatch + 1, dtype=np.int64)
    np.cumsum(sizes ** 2, out=offs[1:])
    blocks = rng.standard_normal(offs[-1])
    order = np.lexsort((np.repeat(np.arange(npatch), sizes), dofs)).astype(np.int64)
    r = rng.standard_normal(n)
    a = _kernels._block_apply_np(blocks, offs, ptr, dofs, order, r, n)
    b = _kernels._block_apply_nb(blocks, offs, ptr, dofs, order, r, n)
    ref = np.zeros(n)
    for p in range(npatch):
        d = dofs[ptr[p]:ptr[p + 1]]
        ref[d] += blocks[offs[p]:offs[p + 1]].reshape(len(d), len(d)) @ r[d]
    assert np.allclose(a, ref, rtol=1e-12, atol=1e-12)
    assert np.allclose(b, ref, rtol=1e-12, atol=1e-12)


@needs_numba
def test_scatter_add_backends_agree(rng):
    idx = rng.integers(0, 30, 500)
    v = rng.standard_normal(500)
    assert np.allclose(_kernels._scatter_add_np(idx, v, 30), _kernels._scatter_add_nb(idx, v, 30),
                       rtol=1e-13, atol=1e-13)


def test_block_apply_is_repeatable(rng):
    ptr, dofs = random_patches(rng, 50, 20, 6)
    sizes = np.diff(ptr)
    offs = np.zeros(21, dtype=np.int64)
    np.cumsum(sizes ** 2, out=offs[1:])
    blocks = rng.standard_normal(offs[-1])
    order = np.lexsort((np.repeat(np.arange(20), sizes), dofs)).astype(np.int64)
    r = rng.standard_normal(50)
    first = _kernels.block_apply(blocks, offs, ptr, dofs, order, r)
    for threads in (1, 2):
        _kernels.set_num_threads(threads)
        assert np.array_equal(_kernels.block_apply(blocks, offs, ptr, dofs, order, r), first)
    _kernels.set_num_threads(1)


SCRIPT = """
import json, numpy as np
from alns import _kernels
from alns.bench.problems import ldc2d
from alns.nonlinear import Discretization, newton_solve, stokes_initial_guess
disc = Discretization(ldc2d(4), 1)
state, rec = newton_solve(disc, stokes_initial_guess(disc), 10.0)
print(json.dumps({"backend": _kernels.BACKEND, "krylov": rec.krylov,
                  "u": state.u.tolist()}))
"""


def _run(disable):
    env = dict(os.environ)
    env["ALNS_DISABLE_NUMBA"] = "1" if disable else "0"
    out = subprocess.run([sys.executable, "-c", SCRIPT], env=env, capture_output=True, text=True,
                         check=True, timeout=600)
    return json.loads(out.stdout.strip().splitlines()[-1])


@needs_numba
def test_disable_switch_gives_same_solve():
    fast, slow = _run(False), _run(True)
    assert (fast["backend"], slow["backend"]) == ("numba", "numpy")
    assert fast["krylov"] == slow["krylov"]
    u, v = np.array(fast["u"]), np.array(slow["u"])
    assert np.abs(u - v).max() <= 1e-9 * np.abs(u).max()
