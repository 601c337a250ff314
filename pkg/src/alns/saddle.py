"""Outer linear solver: block preconditioners and flexible GMRES."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .assembly import BlockSystem
from .linalg import ConvergenceError, KrylovConfig, fgmres, sparse_lu

log = logging.getLogger(__name__)

MODES = ("full", "diagonal", "lower", "upper")


def mean_projector(weights):
    """Velocity-pressure vectors -> pressure part with zero weighted mean."""
    w = np.asarray(weights, dtype=float)
    total = w.sum()

    def project_p(p):
        return p - np.dot(w, p) / total
    return project_p


@dataclass
class BlockPreconditioner:
    """Block-factorization preconditioner with ``S^{-1} ~ -(nu + gamma) M_p^{-1}``.

    ``momentum`` is any callable approximating ``A_gamma^{-1}``; ``schur``
    overrides the Schur action (used with exact complements in tests).
    """

    momentum: object
    B: sp.csr_matrix
    Mp_diag: np.ndarray
    nu: float
    gamma: float
    mode: str = "full"
    schur: object = None
    project: object = None      # pressure projector for enclosed flows
    calls: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown block mode {self.mode!r}")
        self.Bt = self.B.T.tocsr()

    def schur_solve(self, q):
        if self.schur is not None:
            return self.schur(q)
        return -(self.nu + self.gamma) * q / self.Mp_diag

    def apply(self, r):
        self.calls += 1
        n = self.B.shape[1]
        ru, rp = r[:n], r[n:]
        if self.mode == "diagonal":
            zu = self.momentum(ru)
            zp = self.schur_solve(rp)
        elif self.mode == "upper":
            zp = self.schur_solve(rp)
            if self.project is not None:
                zp = self.project(zp)
            zu = self.momentum(ru - self.Bt @ zp)
        else:
            zu = self.momentum(ru)
            zp = self.schur_solve(rp - self.B @ zu)
            if self.project is not None:
                zp = self.project(zp)
            if self.mode == "full":
                zu = zu - self.momentum(self.Bt @ zp)
        if self.project is not None:
            zp = self.project(zp)
        return np.concatenate([zu, zp])

    __call__ = apply


def apply_block_preconditioner(P: BlockPreconditioner, r_u, r_p):
    z = P.apply(np.concatenate([r_u, r_p]))
    n = len(r_u)
    return z[:n], z[n:]


@dataclass
class SimplePreconditioner:
    """SIMPLE: ``[I, -D^{-1}B^T; 0, I] diag(A~^{-1}, S~^{-1}) [I, 0; -B A~^{-1}, I]``.

    The surrogate ``S~ = -B D^{-1} B^T`` (``D = diag(A)``) is factorized with a
    sparse LU; for enclosed flows one pressure dof is pinned and the result
    projected to zero mean.
    """

    A: sp.csr_matrix
    B: sp.csr_matrix
    momentum: object = None
    enclosed: bool = False
    project: object = None
    calls: int = 0

    def __post_init__(self):
        self.Dinv = 1.0 / self.A.diagonal()
        self.Bt = self.B.T.tocsr()
        self.S = -(self.B @ sp.diags(self.Dinv) @ self.Bt).tocsr()
        S = self.S.tolil(copy=True)
        if self.enclosed:
            S[0, :] = 0.0
            S[:, 0] = 0.0
            S[0, 0] = 1.0
        self._pinned = self.enclosed
        self._lu = sparse_lu(S.tocsc())
        if self.momentum is None:
            lu = sparse_lu(self.A)
            self.momentum = lu.solve

    def schur_solve(self, q):
        if self._pinned:
            q = q.copy()
            q[0] = 0.0
        z = self._lu.solve(q)
        return self.project(z) if self.project is not None else z

    def apply(self, r):
        self.calls += 1
        n = self.A.shape[0]
        ru, rp = r[:n], r[n:]
        zu = self.momentum(ru)
        zp = self.schur_solve(rp - self.B @ zu)
        zu = zu - self.Dinv * (self.Bt @ zp)
        return np.concatenate([zu, zp])

    __call__ = apply


def apply_simple(P: SimplePreconditioner, r_u, r_p):
    z = P.apply(np.concatenate([r_u, r_p]))
    n = len(r_u)
    return z[:n], z[n:]


@dataclass
class LinearSolveInfo:
    iterations: int
    history: list = field(default_factory=list)
    converged: bool = True


def solve_linearized(system: BlockSystem, preconditioner, config: KrylovConfig | None = None,
                     enclosed: bool = False):
    """FGMRES on the block system; returns ``(du, dp, info)``.

    For enclosed flows the pressure of every preconditioned direction is
    projected to zero mean, so the returned update has zero mean pressure.
    Raises :class:`ConvergenceError` if the iteration limit is reached.
    """
    cfg = config or KrylovConfig()
    n = system.A_gamma.shape[0]
    rhs = system.rhs()
    nullspace = None
    if enclosed:
        proj = mean_projector(system.M_p.diagonal())

        def nullspace(z):
            z = z.copy()
            z[n:] = proj(z[n:])
            return z
    kcfg = KrylovConfig(max_iterations=cfg.max_iterations, restart=cfg.restart, atol=cfg.atol,
                        rtol=cfg.rtol, flexible=True, nullspace=nullspace)
    if np.linalg.norm(rhs) == 0:
        return np.zeros(n), np.zeros(len(rhs) - n), LinearSolveInfo(0, [0.0], True)
    res = fgmres(system.matvec, preconditioner, rhs, None, kcfg)
    if not res.converged:
        raise ConvergenceError(
            f"FGMRES stopped after {res.iterations} iterations at residual "
            f"{res.history[-1]:.3e}", res.history)
    return res.x[:n], res.x[n:], LinearSolveInfo(res.iterations, res.history, True)
