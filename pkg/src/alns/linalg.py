"""Krylov solvers, dense local factorizations and the sparse direct solve."""
from __future__ import annotations

import logging
import os
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.io
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

log = logging.getLogger(__name__)


class SingularMatrixError(np.linalg.LinAlgError):
    pass


class KrylovBreakdown(RuntimeError):
    pass


class ConvergenceError(RuntimeError):
    """Iteration limit reached; ``history`` holds the residual norms."""

    def __init__(self, msg, history=None):
        super().__init__(msg)
        self.history = list(history or [])


# ----------------------------------------------------------------------
# sparse storage
def as_csr(A) -> sp.csr_matrix:
    """Canonical CSR: sorted column indices, duplicates summed."""
    A = sp.csr_matrix(A)
    A.sum_duplicates()
    A.sort_indices()
    return A


def export_matrix_market(path, A, comment: str = "") -> None:
    """Write ``A`` in Matrix Market format (debug aid)."""
    scipy.io.mmwrite(str(path), sp.coo_matrix(A), comment=comment)


def maybe_export(name: str, A) -> None:
    """Dump ``A`` to ``$ALNS_DUMP_DIR/name.mtx`` when that variable is set."""
    out = os.environ.get("ALNS_DUMP_DIR")
    if out:
        os.makedirs(out, exist_ok=True)
        export_matrix_market(os.path.join(out, f"{name}.mtx"), A)


# ----------------------------------------------------------------------
# dense factorizations
class DenseFactor:
    """LU with partial pivoting of a small dense matrix.

    Raises :class:`SingularMatrixError` if a pivot falls below
    ``pivot_tol * max|A|``.
    """

    def __init__(self, A, pivot_tol: float = 1e-14):
        A = np.array(A, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ValueError("DenseFactor needs a square matrix")
        self.n = A.shape[0]
        scale = np.abs(A).max(initial=0.0)
        with warnings.catch_warnings():
            # singularity is reported below with our own threshold
            warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
            self.lu, self.piv = (scipy.linalg.lu_factor(A, check_finite=True) if self.n
                                 else (A, np.zeros(0, int)))
        pivots = np.abs(np.diag(self.lu))
        self.singular = bool(self.n and (scale == 0 or pivots.min() <= pivot_tol * scale))
        if self.singular:
            raise SingularMatrixError(
                f"matrix of size {self.n} is numerically singular (min pivot {pivots.min():.3e})")

    def solve(self, b):
        if self.n == 0:
            return np.zeros_like(b, dtype=float)
        return scipy.linalg.lu_solve((self.lu, self.piv), b)

    def factors(self):
        """``(P, L, U)`` with ``P @ A = L @ U``."""
        L = np.tril(self.lu, -1) + np.eye(self.n)
        U = np.triu(self.lu)
        perm = np.arange(self.n)
        for i, p in enumerate(self.piv):
            perm[i], perm[p] = perm[p], perm[i]
        P = np.eye(self.n)[perm]
        return P, L, U


class SparseLU:
    """Sparse direct factorization with a fill-reducing column ordering."""

    def __init__(self, A, pivot_tol: float = 1e-14, ordering: str = "COLAMD"):
        A = sp.csc_matrix(A, dtype=float)
        if A.shape[0] != A.shape[1]:
            raise ValueError("sparse_lu needs a square matrix")
        self.shape = A.shape
        amax = np.abs(A.data).max(initial=0.0)
        try:
            self._lu = spla.splu(A, permc_spec=ordering,
                                 options=dict(SymmetricMode=False))
        except RuntimeError as exc:  # exactly singular
            raise SingularMatrixError(str(exc)) from exc
        udiag = np.abs(self._lu.U.diagonal())
        if amax == 0 or udiag.min(initial=np.inf) <= pivot_tol * amax:
            raise SingularMatrixError(
                f"sparse matrix numerically singular (min pivot {udiag.min():.3e})")

    def solve(self, b):
        return self._lu.solve(np.asarray(b, dtype=float))


def sparse_lu(A, **kw) -> SparseLU:
    return SparseLU(A, **kw)


# ----------------------------------------------------------------------
# Krylov
@dataclass
class KrylovConfig:
    max_iterations: int = 200
    restart: int = 100
    atol: float = 1e-10
    rtol: float = 1e-6
    flexible: bool = True
    nullspace: Callable | None = None   # projector applied after each preconditioner call
    raise_on_fail: bool = False

    def __post_init__(self):
        if self.atol < 0 or self.rtol < 0:
            raise ValueError("tolerances must be non-negative")
        if self.restart < 1 or self.max_iterations < 0:
            raise ValueError("restart must be >= 1 and max_iterations >= 0")


@dataclass
class KrylovResult:
    x: np.ndarray
    history: list = field(default_factory=list)
    iterations: int = 0
    converged: bool = False


def _aslinear(op):
    if op is None:
        return lambda v: v
    if callable(op):
        return op
    return lambda v: op @ v


def gmres(operator, preconditioner, rhs, x0=None, config: KrylovConfig | None = None,
          callback=None) -> KrylovResult:
    """Right-preconditioned restarted (F)GMRES with modified Gram-Schmidt.

    With ``config.flexible`` the preconditioned directions are stored so that
    the preconditioner may change between iterations.  Setting both
    tolerances to zero runs exactly ``max_iterations`` steps (unless an
    exact solution is found first).
    """
    cfg = config or KrylovConfig()
    A = _aslinear(operator)
    M = _aslinear(preconditioner)
    proj = cfg.nullspace
    b = np.asarray(rhs, dtype=float)
    n = len(b)
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    r = b - A(x) if x0 is not None else b.copy()
    beta = float(np.linalg.norm(r))
    history = [beta]
    target = max(cfg.atol, cfg.rtol * beta)
    it = 0
    if beta == 0 or beta <= target:
        return KrylovResult(x, history, 0, True)
    m = cfg.restart
    while it < cfg.max_iterations:
        Vb = np.zeros((m + 1, n))
        Z = np.zeros((m, n)) if cfg.flexible else None
        Hm = np.zeros((m + 1, m))
        cs, sn = np.zeros(m), np.zeros(m)
        g = np.zeros(m + 1)
        g[0] = beta
        Vb[0] = r / beta
        j = 0
        done = False
        while j < m and it < cfg.max_iterations:
            z = M(Vb[j])
            if proj is not None:
                z = proj(z)
            if cfg.flexible:
                Z[j] = z
            w = A(z)
            for i in range(j + 1):
                Hm[i, j] = np.dot(w, Vb[i])
                w = w - Hm[i, j] * Vb[i]
            hnext = float(np.linalg.norm(w))
            Hm[j + 1, j] = hnext
            for i in range(j):
                t = cs[i] * Hm[i, j] + sn[i] * Hm[i + 1, j]
                Hm[i + 1, j] = -sn[i] * Hm[i, j] + cs[i] * Hm[i + 1, j]
                Hm[i, j] = t
            denom = np.hypot(Hm[j, j], Hm[j + 1, j])
            if denom == 0:
                raise KrylovBreakdown(f"zero pivot in Hessenberg at step {it + 1}")
            cs[j], sn[j] = Hm[j, j] / denom, Hm[j + 1, j] / denom
            Hm[j, j] = denom
            Hm[j + 1, j] = 0.0
            g[j + 1] = -sn[j] * g[j]
            g[j] = cs[j] * g[j]
            it += 1
            j += 1
            res = abs(g[j])
            history.append(res)
            if callback is not None:
                callback(it, res)
            happy = hnext <= 1e-14 * max(1.0, abs(denom))
            if res <= target or happy:
                done = True
                break
            Vb[j] = w / hnext
        # solve the triangular system
        R = np.triu(Hm[:j, :j])
        if np.any(np.abs(np.diag(R)) <= 1e-300):
            raise KrylovBreakdown("singular Hessenberg triangle")
        y = scipy.linalg.solve_triangular(R, g[:j])
        if cfg.flexible:
            dx = y @ Z[:j]
        else:
            dx = M(y @ Vb[:j])
            if proj is not None:
                dx = proj(dx)
        x = x + dx
        if done or it >= cfg.max_iterations:
            converged = done and history[-1] <= target or beta == 0
            if done and history[-1] > target:
                # happy breakdown: trust the true residual
                converged = float(np.linalg.norm(b - A(x))) <= max(target, 1e-12 * history[0])
            if not converged and cfg.raise_on_fail:
                raise ConvergenceError(f"GMRES did not converge in {it} iterations", history)
            return KrylovResult(x, history, it, bool(converged))
        r = b - A(x)
        beta = float(np.linalg.norm(r))
        history[-1] = beta
        if beta <= target:
            return KrylovResult(x, history, it, True)
    if cfg.raise_on_fail:
        raise ConvergenceError(f"GMRES did not converge in {it} iterations", history)
    return KrylovResult(x, history, it, False)


def fgmres(operator, preconditioner, rhs, x0=None, config: KrylovConfig | None = None,
           callback=None) -> KrylovResult:
    cfg = config or KrylovConfig()
    if not cfg.flexible:
        cfg = KrylovConfig(**{**cfg.__dict__, "flexible": True})
    return gmres(operator, preconditioner, rhs, x0, cfg, callback)
