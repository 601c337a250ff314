"""Manufactured solution on [0, 2]^2, extended to [0, 2]^3 with zero third component."""
from __future__ import annotations

import math

import numpy as np

from ..fem.quadrature import simplex_rule

# mean of the unshifted pressure over [0, 2]^2 is -1408/33075 + 8/(5 Re)
P_SHIFT = 1408.0 / 33075.0


def velocity(x, y):
    u1 = 0.25 * (x - 2) ** 2 * x ** 2 * y * (y ** 2 - 2)
    u2 = -0.25 * x * (x ** 2 - 3 * x + 2) * y ** 2 * (y ** 2 - 4)
    return u1, u2


def pressure(x, y, re):
    visc = x * y * (3 * x ** 4 - 15 * x ** 3 + 10 * x ** 2 * y ** 2
                    - 30 * x * (y ** 2 - 2) + 20 * (y ** 2 - 2)) / (5 * re)
    conv = -(x - 2) ** 4 * x ** 4 * y ** 2 * (y ** 4 - 2 * y ** 2 + 8) / 128
    return visc + conv + P_SHIFT - 8.0 / (5 * re)


def forcing_y(x, y, re):
    """Second component of ``-nu lap u + u.grad u + grad p`` with ``nu = 2/re``.

    The first component vanishes identically.
    """
    visc = (3 * x ** 5 - 15 * x ** 4 + 60 * x ** 3 * y ** 2 - 20 * x ** 3 - 180 * x ** 2 * y ** 2
            + 120 * x ** 2 + 15 * x * y ** 4 + 60 * x * y ** 2 - 80 * x - 15 * y ** 4
            + 60 * y ** 2) / (5 * re)
    conv = -x ** 2 * y * (x - 2) ** 2 * (
        3 * x ** 4 * y ** 4 - 4 * x ** 4 * y ** 2 + 8 * x ** 4 - 12 * x ** 3 * y ** 4
        + 16 * x ** 3 * y ** 2 - 32 * x ** 3 - 4 * x ** 2 * y ** 6 + 36 * x ** 2 * y ** 4
        - 48 * x ** 2 * y ** 2 + 32 * x ** 2 + 8 * x * y ** 6 - 48 * x * y ** 4 + 64 * x * y ** 2
        - 8 * y ** 6 + 48 * y ** 4 - 64 * y ** 2) / 64
    return visc + conv


class MMSExact:
    """Exact fields for a given Reynolds number, ``nu = 2 / re``."""

    def __init__(self, re: float, dim: int = 3):
        if re <= 0:
            raise ValueError("Reynolds number must be positive")
        self.re, self.dim = float(re), dim
        self.nu = 2.0 / self.re

    def u(self, X):
        X = np.atleast_2d(X)
        u1, u2 = velocity(X[:, 0], X[:, 1])
        out = np.zeros((len(X), self.dim))
        out[:, 0], out[:, 1] = u1, u2
        return out

    def p(self, X):
        X = np.atleast_2d(X)
        return pressure(X[:, 0], X[:, 1], self.re)

    def f(self, X):
        X = np.atleast_2d(X)
        out = np.zeros((len(X), self.dim))
        out[:, 1] = forcing_y(X[:, 0], X[:, 1], self.re)
        return out


def mms_exact(re: float, dim: int = 3) -> MMSExact:
    return MMSExact(re, dim)


def compute_error_norms(state, exact, degree: int | None = None, chunk: int = 4096):
    """``(||u - u_h||_L2, ||p - p_h||_L2)`` by cell quadrature.

    The default degree 14 integrates ``|u - u_h|^2`` exactly for the
    manufactured velocity (degree 7); cells are processed in chunks.
    """
    V, Q = state.V, state.Q
    mesh = V.mesh
    d = mesh.dim
    if degree is None:
        degree = max(14, 2 * V.element.degree)
    rule = simplex_rule(d, degree)
    vals = V.element.tabulate(rule.points)                    # (q, nb)
    vol = mesh.cell_volumes()
    U_all = state.u.reshape(-1, d)
    su = sp_ = 0.0
    for lo in range(0, mesh.num_cells, chunk):
        sl = slice(lo, min(lo + chunk, mesh.num_cells))
        xq = np.einsum("qi,cid->cqd", rule.points, mesh.vertices[mesh.cells[sl]])
        uh = np.einsum("qa,cak->cqk", vals, U_all[V.cell_nodes[sl]])
        ue = exact.u(xq.reshape(-1, d)).reshape(uh.shape)
        pe = exact.p(xq.reshape(-1, d)).reshape(uh.shape[:2])
        ph = state.p[Q.cell_nodes[sl, 0]][:, None]
        w = rule.weights * math.factorial(d) * vol[sl, None]
        su += np.sum(w * ((uh - ue) ** 2).sum(-1))
        sp_ += np.sum(w * (ph - pe) ** 2)
    return float(np.sqrt(su)), float(np.sqrt(sp_))
