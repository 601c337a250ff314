"""Compare the numba and numpy paths of the patch kernels.

Builds the star patches of the 2D cavity momentum block and times block
extraction and the additive block application with both backends.

    python benchmarks/bench_kernels.py --coarse 16 --refinements 1 --repeat 20
"""
from __future__ import annotations

import argparse
import logging
import time

import numpy as np
import scipy.sparse as sp

from alns import _kernels
from alns.assembly import NEWTON
from alns.bench.problems import ldc2d
from alns.multigrid import build_patches
from alns.nonlinear import Discretization

log = logging.getLogger("bench_kernels")


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--coarse", type=int, default=16)
    p.add_argument("--refinements", type=int, default=1)
    p.add_argument("--repeat", type=int, default=10)
    p.add_argument("--gamma", type=float, default=1e4)
    args = p.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    disc = Discretization(ldc2d(args.coarse), args.refinements)
    state = disc.zero_state()
    par = disc.params(10.0, args.gamma)
    A = sp.csr_matrix(disc.linear_system(state, par, NEWTON, 10.0).A_gamma)
    A.sort_indices()
    ps = build_patches(A, disc.fine_V, disc.bc[-1])
    r = np.random.default_rng(0).standard_normal(A.shape[0])
    log.info("%d dofs, %d patches, mean size %.1f", A.shape[0], len(ps), ps.sizes.mean())

    ext = (A.indptr.astype(np.int64), A.indices.astype(np.int64), A.data, ps.ptr, ps.dofs,
           A.shape[0])
    app = (ps.inv, ps.offs, ps.ptr, ps.dofs, ps.order, r, A.shape[0])
    rows = [("extract_blocks", "numpy", lambda: _kernels._extract_np(*ext)[0]),
            ("block_apply", "numpy", lambda: _kernels._block_apply_np(*app))]
    if _kernels.HAVE_NUMBA:
        _kernels._extract_nb(*ext)            # compile outside the timing
        _kernels._block_apply_nb(*app)
        rows += [("extract_blocks", "numba", lambda: _kernels._extract_nb(*ext)[0]),
                 ("block_apply", "numba", lambda: _kernels._block_apply_nb(*app))]
    else:
        log.info("numba unavailable or disabled: timing the numpy path only")

    results = {}
    for name, backend, fn in rows:
        t, out = best_of(fn, args.repeat)
        results[(name, backend)] = (t, out)
        log.info("%-15s %-6s %10.3f ms", name, backend, 1e3 * t)
    for name in ("extract_blocks", "block_apply"):
        if (name, "numba") in results:
            tn, on = results[(name, "numba")]
            tp, op = results[(name, "numpy")]
            dev = np.abs(on - op).max() / max(np.abs(op).max(), 1e-300)
            log.info("%-15s speed-up %.1fx, max rel deviation %.1e", name, tp / tn, dev)


if __name__ == "__main__":
    main()
