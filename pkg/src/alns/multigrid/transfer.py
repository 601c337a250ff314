"""Grid transfer for the augmented momentum block.

The prolongation is the finite-element interpolation ``E`` followed by a
local correction on every coarse cell ``T``:

    P = E_s - R_T^T A_TT^{-1} R_T A E_s

where ``E_s`` is ``E`` with the fine facet-bubble rows scaled (P1 plus
bubble in 3D) and ``R_T`` selects the fine dofs strictly inside ``T``.  The
correction makes prolonged discretely divergence-free fields stay close to
the fine kernel, which keeps the coarse-grid correction robust in gamma.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .. import _kernels
from ..fem.dofmap import DofMap, interior_dofs_of_coarse_cell, locate_in_cells

log = logging.getLogger(__name__)

# flux of the unscaled interpolant of a coarse facet bubble through the coarse
# facet, relative to the bubble itself: (1 + 3 * 1/2) / 4
BUBBLE_FLUX_RATIO = 5.0 / 8.0


class TransferError(ValueError):
    pass


def bubble_scaling_factor(V: DofMap) -> float:
    """Factor applied to fine bubble rows of the interpolation."""
    return 1.0 / BUBBLE_FLUX_RATIO if V.spec.family == "P1+FacetBubble" else 1.0


def functional_matrix(target: DofMap, source: DofMap, src_cell, src_lam) -> sp.csr_matrix:
    """Scalar matrix of the target dual functionals applied to source basis functions.

    ``src_cell[n, p]`` and ``src_lam[n, p]`` give, for target node ``n`` and
    the ``p``-th evaluation point of its functional, a source cell containing
    the point and the barycentric coordinates there.
    """
    pts, D = target.element.interpolation
    nn, npts = src_cell.shape
    vals = source.element.tabulate(src_lam.reshape(-1, src_lam.shape[-1]))
    vals = vals.reshape(nn, npts, -1)                        # (n, p, nb_src)
    weights = np.einsum("np,npb->nb", D[target.node_local], vals)
    cols = source.cell_nodes[src_cell[:, 0]]                 # every point lies in one cell
    if npts > 1 and np.any(src_cell != src_cell[:, :1]):
        raise TransferError("functional points of one node straddle source cells")
    weights[np.abs(weights) < 1e-14] = 0.0
    rows = np.repeat(np.arange(nn), weights.shape[1])
    M = sp.csr_matrix((weights.reshape(-1), (rows, cols.reshape(-1))),
                      shape=(target.num_nodes, source.num_nodes))
    M.eliminate_zeros()
    return M


def interpolation_matrix(coarse: DofMap, fine: DofMap) -> sp.csr_matrix:
    """Scalar coarse-to-fine interpolation through the fine dual functionals."""
    gen = fine.mesh.parent
    if gen is None:
        raise TransferError("fine mesh carries no genealogy")
    pts, _ = fine.element.interpolation
    owner = fine.node_owner
    xf = fine.mesh.vertices[fine.mesh.cells[owner]]          # (n, d+1, d)
    xq = np.einsum("pi,nid->npd", pts, xf)
    ccell = np.repeat(gen.parent_cell[owner][:, None], len(pts), axis=1)
    cverts = coarse.mesh.vertices[coarse.mesh.cells[ccell.reshape(-1)]]
    lam = locate_in_cells(None, cverts, xq.reshape(-1, xq.shape[-1]))
    lam = np.clip(lam, 0.0, None)
    return functional_matrix(fine, coarse, ccell, lam.reshape(len(owner), len(pts), -1))


def injection_matrix(fine: DofMap, coarse: DofMap) -> sp.csr_matrix:
    """Scalar fine-to-coarse injection: coarse functionals applied to fine fields."""
    gen = fine.mesh.parent
    if gen is None:
        raise TransferError("fine mesh carries no genealogy")
    pts, _ = coarse.element.interpolation
    owner = coarse.node_owner
    xc = coarse.mesh.vertices[coarse.mesh.cells[owner]]
    xq = np.einsum("pi,nid->npd", pts, xc)
    nchild = 2 ** fine.mesh.dim
    child0 = np.searchsorted(gen.parent_cell, owner)   # children are stored consecutively
    return _injection_pointwise(fine, coarse, xq, child0, nchild)


def _injection_pointwise(fine, coarse, xq, child0, nchild):
    _, D = coarse.element.interpolation
    n, npts, _ = xq.shape
    rows, cols, vals = [], [], []
    for p in range(npts):
        if not np.any(D[:, p]):
            continue
        best = None
        for j in range(nchild):
            cell = child0 + j
            lam = locate_in_cells(None, fine.mesh.vertices[fine.mesh.cells[cell]], xq[:, p])
            m = lam.min(axis=1)
            if best is None:
                best = (cell.copy(), lam, m)
            else:
                take = m > best[2]
                best[0][take], best[1][take], best[2][take] = cell[take], lam[take], m[take]
        cell, lam, _ = best
        phi = fine.element.tabulate(np.clip(lam, 0.0, None))
        w = D[coarse.node_local, p][:, None] * phi
        rows.append(np.repeat(np.arange(n), phi.shape[1]))
        cols.append(fine.cell_nodes[cell].reshape(-1))
        vals.append(w.reshape(-1))
    M = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(coarse.num_nodes, fine.num_nodes))
    M.data[np.abs(M.data) < 1e-14] = 0.0
    M.eliminate_zeros()
    return M


def _vectorize(M: sp.csr_matrix, vs: int) -> sp.csr_matrix:
    return sp.kron(M, sp.identity(vs, format="csr"), format="csr")


def _mask(M, rows=None, cols=None):
    M = M.tocsr(copy=True)
    if rows is not None and len(rows):
        keep = np.ones(M.shape[0])
        keep[rows] = 0.0
        M = sp.diags(keep) @ M
    if cols is not None and len(cols):
        keep = np.ones(M.shape[1])
        keep[cols] = 0.0
        M = M @ sp.diags(keep)
    M = M.tocsr()
    M.eliminate_zeros()
    return M


def check_local_solvability(fine: DofMap):
    """Count V_T and Q_T per coarse cell; reject the ill-posed [P2]^3 case."""
    VT = interior_dofs_of_coarse_cell(fine)
    dim_vt = VT.shape[1]
    dim_qt = 2 ** fine.mesh.dim - 1   # fine P0 functions with zero coarse mean
    if dim_vt < dim_qt:
        raise TransferError(
            f"local correction problem is ill-posed for {fine.spec.family}^{fine.value_size}: "
            f"dim(V_T)={dim_vt} < dim(Q_T)={dim_qt}")
    return VT, dim_vt, dim_qt


@dataclass
class TransferOperator:
    """Prolongation ``P`` (fine x coarse) and the restriction matrix ``R`` (coarse x fine)."""

    E: sp.csr_matrix            # unscaled, uncorrected interpolation
    E_scaled: sp.csr_matrix     # bubble rows scaled
    P: sp.csr_matrix            # scaled and locally corrected
    R: sp.csr_matrix
    inject: sp.csr_matrix       # fine -> coarse state transfer
    VT: np.ndarray              # (coarse cells, m) fine dofs inside each coarse cell
    scale: float

    def prolong(self, xc):
        return self.P @ xc

    def restrict(self, rf):
        return self.R @ rf

    def inject_state(self, uf):
        return self.inject @ uf


class LevelTransfer:
    """Operator-independent parts of the transfer between two levels."""

    def __init__(self, coarse: DofMap, fine: DofMap, coarse_bc=None, fine_bc=None,
                 bubble_scaling: bool = True, correction: bool = True):
        if coarse.spec != fine.spec:
            raise TransferError("coarse and fine spaces differ")
        self.coarse, self.fine = coarse, fine
        vs = fine.value_size
        self.VT = check_local_solvability(fine)[0] if correction else None
        self.correction = correction
        Es = interpolation_matrix(coarse, fine)
        self.E = _mask(_vectorize(Es, vs), fine_bc, coarse_bc)
        self.scale = bubble_scaling_factor(fine) if bubble_scaling else 1.0
        if self.scale != 1.0:
            row_scale = np.ones(fine.ndofs)
            bub = np.flatnonzero(fine.element.is_bubble[fine.node_local])
            row_scale[(bub[:, None] * vs + np.arange(vs)).reshape(-1)] = self.scale
            self.E_scaled = (sp.diags(row_scale) @ self.E).tocsr()
        else:
            self.E_scaled = self.E
        self.inject = _vectorize(injection_matrix(fine, coarse), vs)

    def operator(self, A_fine=None, restriction: str = "natural") -> "TransferOperator":
        if restriction not in ("natural", "adjoint"):
            raise TransferError(f"unknown restriction {restriction!r}")
        P = self.E_scaled
        if self.correction:
            if A_fine is None:
                raise TransferError("the local correction needs the fine operator")
            P = _corrected(self.E_scaled, sp.csr_matrix(A_fine), self.VT, self.coarse)
        R = (self.E.T if restriction == "natural" else P.T).tocsr()
        return TransferOperator(self.E, self.E_scaled, P, R, self.inject, self.VT, self.scale)


def build_transfer(coarse: DofMap, fine: DofMap, A_fine=None, coarse_bc=None, fine_bc=None,
                   bubble_scaling: bool = True, correction: bool = True,
                   restriction: str = "natural") -> TransferOperator:
    """Assemble the transfer between consecutive levels.

    ``restriction='natural'`` uses the transpose of the unscaled, uncorrected
    interpolation; ``'adjoint'`` uses ``P^T``.
    """
    static = LevelTransfer(coarse, fine, coarse_bc, fine_bc, bubble_scaling, correction)
    return static.operator(A_fine, restriction)


def _corrected(E: sp.csr_matrix, A: sp.csr_matrix, VT: np.ndarray, coarse: DofMap):
    """``E - R_T^T A_TT^{-1} R_T A E`` for all coarse cells at once."""
    nT, m = VT.shape
    K = (A @ E).tocsr()
    K.sort_indices()
    cols = coarse.cell_dofs                                     # (nT, nc)
    nc = cols.shape[1]
    # dense blocks K[VT[T], cols[T]]
    rows_k = np.repeat(np.arange(K.shape[0], dtype=np.int64), np.diff(K.indptr))
    keys = rows_k * K.shape[1] + K.indices
    want = (VT[:, :, None] * K.shape[1] + cols[:, None, :]).reshape(-1)
    pos = np.minimum(np.searchsorted(keys, want), max(len(keys) - 1, 0))
    KT = np.where(keys[pos] == want, K.data[pos], 0.0).reshape(nT, m, nc) if len(keys) else \
        np.zeros((nT, m, nc))
    ptr = np.arange(nT + 1, dtype=np.int64) * m
    blocks, _ = _kernels.extract_blocks(A, ptr, VT.reshape(-1))
    ATT = blocks.reshape(nT, m, m)
    W = np.linalg.solve(ATT, KT)                                # (nT, m, nc)
    W[np.abs(W) < 1e-15 * max(1.0, np.abs(W).max(initial=0.0))] = 0.0
    corr = sp.csr_matrix((W.reshape(-1), (np.repeat(VT.reshape(-1), nc),
                                          np.tile(cols, (1, m)).reshape(-1))), shape=E.shape)
    P = (E - corr).tocsr()
    P.eliminate_zeros()
    return P
