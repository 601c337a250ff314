"""Vertex-star patches and the additive star relaxation."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .. import _kernels
from ..fem.dofmap import DofMap
from ..linalg import KrylovConfig, gmres

log = logging.getLogger(__name__)


class PatchError(np.linalg.LinAlgError):
    pass


@dataclass
class PatchSet:
    """Free dofs supported in each vertex star and their inverted local blocks.

    ``dofs[ptr[i]:ptr[i+1]]`` is the (sorted) dof set of the patch around
    vertex ``vertex[i]``; ``inv[offs[i]:offs[i+1]]`` holds its dense inverse,
    row-major.
    """

    vertex: np.ndarray
    ptr: np.ndarray
    dofs: np.ndarray
    inv: np.ndarray
    offs: np.ndarray
    order: np.ndarray
    ndofs: int

    def __len__(self):
        return len(self.vertex)

    def patch(self, i) -> np.ndarray:
        return self.dofs[self.ptr[i]:self.ptr[i + 1]]

    @property
    def sizes(self) -> np.ndarray:
        return np.diff(self.ptr)


def star_nodes(V: DofMap):
    """(vertex, node) pairs with the node's support inside the vertex star."""
    mesh = V.mesh
    offsets, vcells = mesh.vertex_cells()
    counts = np.diff(offsets)
    nb = V.cell_nodes.shape[1]
    vert = np.repeat(np.arange(mesh.num_vertices), counts * nb)
    nodes = V.cell_nodes[vcells].reshape(-1)
    support = np.bincount(V.cell_nodes.reshape(-1), minlength=V.num_nodes)
    key = vert * V.num_nodes + nodes
    uniq, hits = np.unique(key, return_counts=True)
    v, n = np.divmod(uniq, V.num_nodes)
    keep = hits == support[n]
    return v[keep], n[keep]


def build_patches(A, V: DofMap, dirichlet=None) -> PatchSet:
    """One patch per vertex with at least one free dof; local blocks of ``A`` inverted."""
    vs = V.value_size
    v, n = star_nodes(V)
    v = np.repeat(v, vs)
    dof = (n[:, None] * vs + np.arange(vs)).reshape(-1)
    if dirichlet is not None and len(dirichlet):
        free = np.ones(V.ndofs, dtype=bool)
        free[np.asarray(dirichlet)] = False
        keep = free[dof]
        v, dof = v[keep], dof[keep]
    order = np.lexsort((dof, v))
    v, dof = v[order], dof[order]
    vertex, counts = np.unique(v, return_counts=True)
    ptr = np.zeros(len(vertex) + 1, dtype=np.int64)
    np.cumsum(counts, out=ptr[1:])
    blocks, offs = _kernels.extract_blocks(sp.csr_matrix(A), ptr, dof)
    inv = _invert_blocks(blocks, offs, np.diff(ptr))
    scatter = np.lexsort((np.repeat(vertex, counts), dof))
    return PatchSet(vertex, ptr, dof.astype(np.int64), inv, offs, scatter.astype(np.int64),
                    A.shape[0])


def _invert_blocks(blocks, offs, sizes):
    inv = np.empty_like(blocks)
    for m in np.unique(sizes):
        sel = np.flatnonzero(sizes == m)
        idx = offs[sel][:, None] + np.arange(m * m)
        mats = blocks[idx].reshape(-1, m, m)
        scale = np.abs(mats).max(axis=(1, 2))
        try:
            out = np.linalg.inv(mats)
        except np.linalg.LinAlgError as exc:
            raise PatchError(f"singular patch matrix of size {m}") from exc
        # backward check: a tiny pivot shows up as a huge inverse
        cond = np.abs(out).max(axis=(1, 2)) * scale
        if not np.all(np.isfinite(out)) or np.any(cond > 1e14):
            raise PatchError(f"numerically singular patch matrix of size {m}")
        inv[idx] = out.reshape(len(sel), -1)
    return inv


def apply_star_smoother(patches: PatchSet, r) -> np.ndarray:
    """Additive star correction ``sum_i R_i^T A_i^{-1} R_i r``."""
    return _kernels.block_apply(patches.inv, patches.offs, patches.ptr, patches.dofs,
                                patches.order, r)


def relax(A, patches: PatchSet, rhs, x0=None, k: int = 6) -> np.ndarray:
    """``k`` GMRES steps on the defect equation, preconditioned by the star smoother."""
    if k < 1:
        raise ValueError("relaxation needs at least one iteration")
    x = np.zeros(len(rhs)) if x0 is None else np.asarray(x0, dtype=float)
    r = rhs - A @ x if x0 is not None else np.asarray(rhs, dtype=float)
    cfg = KrylovConfig(max_iterations=k, restart=k, atol=0.0, rtol=0.0, flexible=True)
    res = gmres(A, lambda v: apply_star_smoother(patches, v), r, None, cfg)
    return x + res.x
