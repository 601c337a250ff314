"""Residual and Jacobian assembly for the stabilized, augmented Navier-Stokes form.

The velocity residual tested against ``v`` is

    (2 nu eps(u), grad v) + (u.grad u, v) - (p, div v) - (f, v)
      + gamma (P0 div u, div v)
      + sum_K delta_K(u) (L(u), u.grad v)_K

with the strong residual ``L(u) = -nu (lap u + grad div u) + u.grad u - f``
and ``delta = delta_d (4|u|^2/h^2 + 144 nu^2/h^4)^(-1/2)``.  The pressure
residual is ``B u`` with ``B = -(q, div u)`` on piecewise constants.

Dirichlet velocity dofs are carried by the state; their residual rows are
zero and the Jacobian rows/columns are replaced by the identity.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import _kernels
from .fem.dofmap import DofMap
from .fem.quadrature import simplex_rule

log = logging.getLogger(__name__)

NEWTON, PICARD = "newton", "picard"


class AssemblyError(ValueError):
    pass


@dataclass
class PhysicalParams:
    """Coefficients of the discrete problem.

    ``advection=False`` gives the (augmented) Stokes operator; SUPG is only
    active together with advection.
    """

    nu: float
    gamma: float = 0.0
    delta_d: float = 0.0
    re: float | None = None
    advection: bool = True
    graddiv: str = "discrete"  # or "continuous" (experimentation only)

    def __post_init__(self):
        if not self.nu > 0:
            raise AssemblyError("nu must be positive")
        if self.gamma < 0 or self.delta_d < 0:
            raise AssemblyError("gamma and delta_d must be non-negative")
        if self.graddiv not in ("discrete", "continuous"):
            raise AssemblyError(f"unknown grad-div variant {self.graddiv!r}")

    @property
    def supg(self) -> bool:
        return self.advection and self.delta_d > 0


@dataclass
class DiscreteState:
    u: np.ndarray
    p: np.ndarray
    V: DofMap
    Q: DofMap

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=float)
        self.p = np.asarray(self.p, dtype=float)
        if len(self.u) != self.V.ndofs or len(self.p) != self.Q.ndofs:
            raise AssemblyError("state length does not match its dofmaps")

    @classmethod
    def zeros(cls, V: DofMap, Q: DofMap) -> "DiscreteState":
        return cls(np.zeros(V.ndofs), np.zeros(Q.ndofs), V, Q)

    def copy(self) -> "DiscreteState":
        return DiscreteState(self.u.copy(), self.p.copy(), self.V, self.Q)


@dataclass
class BlockSystem:
    """Linearized saddle system ``[[A_gamma, B^T], [B, 0]] [du, dp] = [rhs_u, rhs_p]``.

    ``rhs_*`` hold the negated residual.  ``B`` has zero columns on the
    Dirichlet dofs, ``A_gamma`` identity rows/columns there.
    """

    A_gamma: sp.csr_matrix
    B: sp.csr_matrix
    M_p: sp.csr_matrix
    rhs_u: np.ndarray
    rhs_p: np.ndarray
    bc: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    @property
    def Bt(self) -> sp.csr_matrix:
        return self.B.T.tocsr()

    @property
    def shape(self):
        n, m = self.A_gamma.shape[0], self.B.shape[0]
        return n + m, n + m

    def matvec(self, x):
        n = self.A_gamma.shape[0]
        u, p = x[:n], x[n:]
        return np.concatenate([self.A_gamma @ u + self.B.T @ p, self.B @ u])

    def rhs(self):
        return np.concatenate([self.rhs_u, self.rhs_p])

    def to_dense(self):
        B = self.B.toarray()
        return np.block([[self.A_gamma.toarray(), B.T], [B, np.zeros((B.shape[0],) * 2)]])


def supg_delta(u_norm, h, params: PhysicalParams):
    """SUPG weight ``delta_d (4|u|^2/h^2 + 144 nu^2/h^4)^(-1/2)``."""
    u_norm, h = np.asarray(u_norm, dtype=float), np.asarray(h, dtype=float)
    if np.any(h <= 0):
        raise AssemblyError("cell size must be positive")
    nu = params.nu
    return params.delta_d / np.sqrt(4 * u_norm ** 2 / h ** 2 + 144 * nu ** 2 / h ** 4)


# ----------------------------------------------------------------------
def _bmm(X, Y):
    """einsum('cqa,cqb->cab') through batched matmul."""
    return np.matmul(X.transpose(0, 2, 1), Y)


class Assembler:
    """Cached geometry, basis tables and sparsity for one (velocity, pressure) pair."""

    def __init__(self, V: DofMap, Q: DofMap, quad_degree: int | None = None):
        if Q.spec.family != "P0" or Q.value_size != 1:
            raise AssemblyError("pressure space must be scalar P0")
        if V.value_size != V.mesh.dim or V.mesh is not Q.mesh:
            raise AssemblyError("velocity must be a vector space on the pressure mesh")
        self.V, self.Q, self.mesh = V, Q, V.mesh
        d = self.dim = self.mesh.dim
        el = V.element
        if quad_degree is None:
            quad_degree = 2 * el.degree + 1
        self.rule = simplex_rule(d, quad_degree)
        self.N, self.dN, self.HN = el.tabulate(self.rule.points, 2)
        self.nb = el.ndofs
        self.nloc = self.nb * d

        x = self.mesh.vertices[self.mesh.cells]
        J = np.swapaxes(x[:, 1:] - x[:, :1], 1, 2)          # columns x_i - x_0
        Jinv = np.linalg.inv(J)                               # rows grad lambda_i
        self.grad_lam = np.concatenate([-Jinv.sum(axis=1, keepdims=True), Jinv], axis=1)
        self.vol = self.mesh.cell_volumes()
        self.h = self.mesh.cell_diameters()
        self.xcell = x
        self.scale = math.factorial(d)
        Qn = len(self.rule.weights)
        per_cell = Qn * self.nb * d * d * 3 + self.nloc ** 2 * 3
        self.chunk = max(1, int(6_000_000 // per_cell))
        self._pattern = None
        self._B = None

    # ------------------------------------------------------------------
    @property
    def pattern(self):
        """(indptr, indices, local->data map) of the velocity matrix."""
        if self._pattern is None:
            dofs = self.V.cell_dofs
            n = self.V.ndofs
            nl = dofs.shape[1]
            rows = np.repeat(dofs, nl, axis=1).reshape(-1)
            cols = np.tile(dofs, (1, nl)).reshape(-1)
            keys = rows * n + cols
            uniq, inv = np.unique(keys, return_inverse=True)
            r, c = np.divmod(uniq, n)
            indptr = np.zeros(n + 1, dtype=np.int64)
            np.cumsum(np.bincount(r, minlength=n), out=indptr[1:])
            dtype = np.int32 if len(uniq) < 2 ** 31 else np.int64
            self._pattern = (indptr, c.astype(np.int32), inv.astype(dtype).reshape(-1))
        return self._pattern

    def _csr(self, data):
        indptr, indices, _ = self.pattern
        n = self.V.ndofs
        return sp.csr_matrix((data, indices, indptr), shape=(n, n))

    # ------------------------------------------------------------------
    def _divergence_integrals(self, sl):
        """(c, nb, d) array of int_K d_k N_a."""
        w = self.rule.weights * self.scale
        gl = self.grad_lam[sl]
        dN_int = np.einsum("q,qai->ai", w, self.dN)
        return np.einsum("ai,cik->cak", dN_int, gl) * self.vol[sl, None, None]

    def divergence_integrals(self):
        return self._divergence_integrals(slice(None))

    def _chunk(self, sl, U, P, params: PhysicalParams, forcing, mode, want_mat):
        d, nb = self.dim, self.nb
        w = self.rule.weights * self.scale
        vol = self.vol[sl]
        nc = len(vol)
        wq = w[None, :] * vol[:, None]                         # (c, Q)
        gl = self.grad_lam[sl]
        G = np.einsum("qai,cik->cqak", self.dN, gl)            # (c, Q, nb, d)
        Ue = U[self.V.cell_nodes[sl]]                          # (c, nb, d)
        N = self.N
        u = np.einsum("qa,cak->cqk", N, Ue)
        Du = np.einsum("cqal,cak->cqkl", G, Ue)                # Du[k, l] = d_l u_k
        Dv = np.einsum("cq,cqak->cak", wq, G)                  # int d_k N_a
        divu = np.einsum("cak,cak->c", Dv, Ue)
        fq = None
        if forcing is not None:
            xq = np.einsum("qi,cid->cqd", self.rule.points, self.xcell[sl])
            fq = np.asarray(forcing(xq.reshape(-1, d)), dtype=float).reshape(nc, -1, d)

        nu, gamma = params.nu, params.gamma
        # residual ---------------------------------------------------
        sym = Du + Du.transpose(0, 1, 3, 2)
        R = nu * np.einsum("cq,cqkl,cqal->cak", wq, sym, G)
        R -= P[sl, None, None] * Dv
        if params.graddiv == "discrete":
            R += (gamma / vol * divu)[:, None, None] * Dv
        else:
            divq = np.trace(Du, axis1=2, axis2=3)
            R += gamma * np.einsum("cq,cq,cqak->cak", wq, divq, G)
        conv = None
        if params.advection:
            conv = np.einsum("cql,cqkl->cqk", u, Du)
            R += np.einsum("cq,qa,cqk->cak", wq, N, conv)
        if fq is not None:
            R -= np.einsum("cq,qa,cqk->cak", wq, N, fq)

        supg = params.supg
        if supg:
            h = self.h[sl][:, None]
            X = 4 * (u ** 2).sum(-1) / h ** 2 + 144 * nu ** 2 / h ** 4
            delta = params.delta_d / np.sqrt(X)                # (c, Q)
            H = np.einsum("qaij,cik->cqajk", self.HN, gl)
            H = np.einsum("cqajk,cjl->cqakl", H, gl)           # (c, Q, nb, d, d)
            lapN = np.trace(H, axis1=3, axis2=4)               # (c, Q, nb)
            lapu = np.einsum("cqa,cak->cqk", lapN, Ue)
            graddiv_u = np.einsum("cqakl,cal->cqk", H, Ue)
            L = -nu * (lapu + graddiv_u) + conv
            if fq is not None:
                L = L - fq
            s = np.einsum("cqk,cqak->cqa", u, G)               # u . grad N_a
            R += np.einsum("cq,cq,cqa,cqk->cak", wq, delta, s, L)
        res_u = R.reshape(nc, -1)
        res_p = -divu
        if not want_mat:
            return res_u, res_p, None

        # Jacobian -----------------------------------------------------
        wG = wq[:, :, None, None] * G
        GG = np.matmul(wG.transpose(0, 2, 3, 1).reshape(nc, nb * d, -1),
                       G.reshape(nc, -1, nb * d)).reshape(nc, nb, d, nb, d)  # [a,l,b,k]
        scal = nu * np.einsum("calbl->cab", GG)
        J = nu * GG.transpose(0, 1, 4, 3, 2)                   # nu d_l N_a d_k N_b at [a,k,b,l]
        if params.advection:
            ug = np.einsum("cqk,cqbk->cqb", u, G)
            scal += _bmm(wq[:, :, None] * N[None], ug)
        newton = mode == NEWTON
        Y = None
        if params.advection and newton:
            # reaction N_a N_b d_l u_k
            Y = np.einsum("cq,qa,cqkl->cqakl", wq, N, Du)
        if supg:
            ws = (wq * delta)[:, :, None] * s                  # (c, Q, nb)
            scal += _bmm(ws, -nu * lapN + ug)
            Hb = np.matmul(ws.transpose(0, 2, 1), H.reshape(nc, H.shape[1], -1))
            J -= nu * Hb.reshape(nc, nb, nb, d, d).transpose(0, 1, 3, 2, 4)
            if newton:
                ddelta = (-4 * params.delta_d / h ** 2 * X ** -1.5)[..., None] * u  # (c, Q, d)
                Y = Y + np.einsum("cqa,cqkl->cqakl", ws, Du)
                Y += np.einsum("cq,cqa,cqk,cql->cqakl", wq, s, L, ddelta)
                Y += np.einsum("cq,cqk,cqal->cqakl", wq * delta, L, G)
        if Y is not None:
            Qn = Y.shape[1]
            YN = Y.transpose(0, 2, 3, 4, 1).reshape(-1, Qn) @ N  # (c*a*k*l, b)
            J += YN.reshape(nc, nb, d, d, nb).transpose(0, 1, 2, 4, 3)
        J += np.einsum("cab,kl->cakbl", scal, np.eye(d))
        if gamma:
            if params.graddiv == "discrete":
                J += (gamma / vol)[:, None, None, None, None] * np.einsum("cak,cbl->cakbl", Dv, Dv)
            else:
                J += gamma * np.einsum("cq,cqak,cqbl->cakbl", wq, G, G)
        return res_u, res_p, J.reshape(nc, -1)

    # ------------------------------------------------------------------
    def assemble(self, state: DiscreteState, params: PhysicalParams, forcing=None,
                 bc=None, mode: str = NEWTON, want_mat: bool = True):
        """Residual (and Jacobian) with Dirichlet rows zeroed / eliminated."""
        if mode not in (NEWTON, PICARD):
            raise AssemblyError(f"unknown linearization {mode!r}")
        if state.V is not self.V or state.Q is not self.Q:
            raise AssemblyError("state does not live on this assembler's spaces")
        d = self.dim
        U = state.u.reshape(-1, d)
        P = state.p
        C = self.mesh.num_cells
        res_u_loc = np.empty((C, self.nloc))
        res_p = np.empty(C)
        mat_loc = [] if want_mat else None
        for start in range(0, C, self.chunk):
            sl = slice(start, min(C, start + self.chunk))
            ru, rp, J = self._chunk(sl, U, P, params, forcing, mode, want_mat)
            res_u_loc[sl] = ru
            res_p[sl] = rp
            if want_mat:
                mat_loc.append(J.reshape(-1))
        dofs = self.V.cell_dofs
        res_u = _kernels.scatter_add(dofs.reshape(-1), res_u_loc.reshape(-1), self.V.ndofs)
        bc = np.zeros(0, dtype=np.int64) if bc is None else np.asarray(bc, dtype=np.int64)
        res_u[bc] = 0.0
        if not want_mat:
            return res_u, res_p, None
        data = _kernels.scatter_add(self.pattern[2], np.concatenate(mat_loc), len(self.pattern[1]))
        A = self._csr(data)
        apply_dirichlet(A, bc)
        return res_u, res_p, A

    def divergence_matrix(self, bc=None) -> sp.csr_matrix:
        """B with entries -int_K d_k N_a and zero Dirichlet columns."""
        C, n = self.mesh.num_cells, self.V.ndofs
        Dv = self.divergence_integrals().reshape(C, -1)
        dofs = self.V.cell_dofs
        order = np.argsort(dofs, axis=1, kind="stable")
        cols = np.take_along_axis(dofs, order, axis=1)
        vals = -np.take_along_axis(Dv, order, axis=1)
        indptr = np.arange(C + 1, dtype=np.int64) * dofs.shape[1]
        B = sp.csr_matrix((vals.reshape(-1), cols.reshape(-1), indptr), shape=(C, n))
        if bc is not None and len(bc):
            mask = np.zeros(n, dtype=bool)
            mask[bc] = True
            B.data[mask[B.indices]] = 0.0
        return B

    def pressure_mass(self) -> sp.csr_matrix:
        return sp.diags(self.vol).tocsr()


def apply_dirichlet(A: sp.csr_matrix, bc) -> sp.csr_matrix:
    """Zero rows and columns of ``bc`` in place and put 1 on their diagonal."""
    if len(bc) == 0:
        return A
    n = A.shape[0]
    mask = np.zeros(n, dtype=bool)
    mask[bc] = True
    rows = np.repeat(np.arange(n), np.diff(A.indptr))
    hit = mask[rows] | mask[A.indices]
    A.data[hit] = 0.0
    A.data[hit & (rows == A.indices)] = 1.0
    return A


_CACHE: dict = {}


def get_assembler(V: DofMap, Q: DofMap) -> Assembler:
    key = (id(V), id(Q))
    entry = _CACHE.get(key)
    if entry is None or entry[0] is not V or entry[1] is not Q:
        if len(_CACHE) > 16:
            _CACHE.clear()
        entry = (V, Q, Assembler(V, Q))
        _CACHE[key] = entry
    return entry[2]


def assemble_residual(state: DiscreteState, params: PhysicalParams, forcing=None, bc=None):
    """Residual ``(R_u, R_p)``; rows of Dirichlet dofs are zero."""
    asm = get_assembler(state.V, state.Q)
    res_u, res_p, _ = asm.assemble(state, params, forcing, bc, want_mat=False)
    return res_u, res_p


def assemble_jacobian(state: DiscreteState, params: PhysicalParams, linearization: str = NEWTON,
                      forcing=None, bc=None) -> BlockSystem:
    """Linearized blocks at ``state`` and the negated residual as right-hand side."""
    asm = get_assembler(state.V, state.Q)
    res_u, res_p, A = asm.assemble(state, params, forcing, bc, mode=linearization)
    bc = np.zeros(0, dtype=np.int64) if bc is None else np.asarray(bc, dtype=np.int64)
    return BlockSystem(A, asm.divergence_matrix(bc), asm.pressure_mass(), -res_u, -res_p, bc)


def project_p0_divergence(u, V: DofMap) -> np.ndarray:
    """Cell means ``(1/|K|) int_K div u``."""
    mesh = V.mesh
    d = mesh.dim
    rule = simplex_rule(d, max(1, V.element.degree - 1))
    _, dN = V.element.tabulate(rule.points, 1)
    x = mesh.vertices[mesh.cells]
    Jinv = np.linalg.inv(np.swapaxes(x[:, 1:] - x[:, :1], 1, 2))
    gl = np.concatenate([-Jinv.sum(axis=1, keepdims=True), Jinv], axis=1)
    mean_dN = np.einsum("q,qai->ai", rule.weights * math.factorial(d), dN)
    mean = np.einsum("ai,cik->cak", mean_dN, gl)
    U = np.asarray(u).reshape(-1, d)[V.cell_nodes]
    return np.einsum("cak,cak->c", mean, U)
