"""Reference elements written as polynomials in barycentric coordinates.

Every basis function is stored as coefficients over monomials
``prod_i lambda_i ** e_i``.  Derivatives are taken with respect to the
barycentric coordinates; the physical gradient of a function ``N`` on an
affine cell is then ``sum_i dN/dlambda_i * grad(lambda_i)``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np

from ..mesh import LOCAL_EDGES

FAMILIES = ("P0", "P1", "P2", "P3", "P1+FacetBubble", "P2+FacetBubble")
ALIASES = {"p1fb": "P1+FacetBubble", "p2fb": "P2+FacetBubble", "p0": "P0",
           "p1": "P1", "p2": "P2", "p3": "P3"}

# entity kinds in local and global ordering
VERTEX, EDGE, FACET, CELL = 0, 1, 2, 3


class ElementError(ValueError):
    pass


@dataclass(frozen=True)
class ElementSpec:
    family: str
    dim: int
    value_size: int = 1

    def __post_init__(self):
        fam = ALIASES.get(self.family.lower(), self.family)
        object.__setattr__(self, "family", fam)
        if fam not in FAMILIES:
            raise ElementError(f"unknown family {self.family!r}")
        if self.dim not in (2, 3):
            raise ElementError("dim must be 2 or 3")
        if "FacetBubble" in fam and self.dim != 3:
            raise ElementError("facet-bubble families are 3D only")
        if self.value_size not in (1, self.dim):
            raise ElementError("value_size must be 1 or dim")

    @property
    def scalar(self) -> "ElementSpec":
        return ElementSpec(self.family, self.dim, 1)


def _monomials(dim: int, max_degree: int) -> np.ndarray:
    exps = [e for e in itertools.product(range(max_degree + 1), repeat=dim + 1)
            if sum(e) <= max_degree]
    return np.array(sorted(exps, key=lambda e: (sum(e), tuple(-x for x in e))), dtype=int)


def _mono_eval(exps: np.ndarray, lam: np.ndarray, order: int):
    """Monomial values and barycentric derivatives at points ``lam`` (Q, d+1)."""
    lam = np.atleast_2d(lam)
    Q, n = lam.shape
    M = len(exps)

    def value(e):
        out = np.ones(Q)
        for i in range(n):
            if e[i] < 0:
                return np.zeros(Q)
            out = out * lam[:, i] ** e[i]
        return out

    val = np.stack([value(e) for e in exps], axis=1)
    if order == 0:
        return val
    grad = np.zeros((Q, M, n))
    for m, e in enumerate(exps):
        for i in range(n):
            if e[i] > 0:
                f = e.copy()
                f[i] -= 1
                grad[:, m, i] = e[i] * value(f)
    if order == 1:
        return val, grad
    hess = np.zeros((Q, M, n, n))
    for m, e in enumerate(exps):
        for i in range(n):
            for j in range(n):
                f = e.copy()
                c = f[i]
                f[i] -= 1
                c2 = f[j]
                f[j] -= 1
                if c > 0 and c2 > 0:
                    hess[:, m, i, j] = c * c2 * value(f)
    return val, grad, hess


def _entity_of_support(support: tuple, dim: int):
    """(kind, local id) of the smallest entity whose closure holds ``support``."""
    k = len(support)
    if k == 1:
        return VERTEX, support[0]
    if k == 2:
        edges = [tuple(e) for e in LOCAL_EDGES[dim]]
        return EDGE, edges.index(tuple(sorted(support)))
    if k == dim:
        missing = [i for i in range(dim + 1) if i not in support]
        return FACET, missing[0]
    return CELL, 0


class ReferenceElement:
    """Scalar reference element: basis coefficients, entity layout, interpolation."""

    def __init__(self, spec: ElementSpec):
        self.spec = spec.scalar
        d = spec.dim
        fam = self.spec.family
        degree = {"P0": 0, "P1": 1, "P2": 2, "P3": 3,
                  "P1+FacetBubble": 3, "P2+FacetBubble": 3}[fam]
        self.degree = degree
        self.exps = _monomials(d, max(degree, 1))
        lag_k = {"P1+FacetBubble": 1, "P2+FacetBubble": 2}.get(fam, degree)
        dofs = []  # (kind, local entity, node point, is_bubble)
        if lag_k == 0:
            dofs.append((CELL, 0, np.full(d + 1, 1.0 / (d + 1)), False))
        else:
            for alpha in itertools.product(range(lag_k + 1), repeat=d + 1):
                if sum(alpha) != lag_k:
                    continue
                support = tuple(i for i in range(d + 1) if alpha[i] > 0)
                kind, ent = _entity_of_support(support, d)
                dofs.append((kind, ent, np.array(alpha, float) / lag_k, False))
        if "FacetBubble" in fam:
            for i in range(d + 1):
                bary = np.array([0.0 if j == i else 1.0 / d for j in range(d + 1)])
                dofs.append((FACET, i, bary, True))

        def sort_key(item):
            kind, ent, pt, _ = item
            # two nodes on one edge: the one nearer the lower local vertex first
            edge_pos = 0.0
            if kind == EDGE:
                a, _b = LOCAL_EDGES[d][ent]
                edge_pos = -pt[a]
            return (kind, ent, edge_pos)

        dofs.sort(key=sort_key)
        self.entity_kind = np.array([k for k, *_ in dofs])
        self.entity_local = np.array([e for _, e, *_ in dofs])
        self.nodes = np.array([p for _, _, p, _ in dofs])
        self.is_bubble = np.array([b for *_, b in dofs])
        self.ndofs = len(dofs)

        # coefficients over monomials
        coefs = np.zeros((self.ndofs, len(self.exps)))
        lag = np.flatnonzero(~self.is_bubble)
        if lag_k == 0:
            coefs[lag[0], 0] = 1.0
        else:
            hom = np.flatnonzero(self.exps.sum(axis=1) == lag_k)
            V = _mono_eval(self.exps[hom], self.nodes[lag], 0)  # (nodes, monos)
            coefs[np.ix_(lag, hom)] = np.linalg.inv(V).T
        for a in np.flatnonzero(self.is_bubble):
            e = np.ones(d + 1, dtype=int)
            e[self.entity_local[a]] = 0
            m = int(np.flatnonzero((self.exps == e).all(axis=1))[0])
            coefs[a, m] = d ** d  # max value 1 at the facet barycentre
        self.coefs = coefs

        counts = []
        for kind in (VERTEX, EDGE, FACET, CELL):
            ents = self.entity_local[self.entity_kind == kind]
            counts.append(int(np.bincount(ents).max()) if len(ents) else 0)
        self.dofs_per_entity = tuple(counts)

    # ------------------------------------------------------------------
    def tabulate(self, lam, order: int = 0):
        """Values (Q, nb) and, for ``order`` >= 1/2, barycentric derivatives."""
        lam = np.atleast_2d(np.asarray(lam, dtype=float))
        res = _mono_eval(self.exps, lam, order)
        if order == 0:
            return res @ self.coefs.T
        val = res[0] @ self.coefs.T
        grad = np.einsum("qmi,am->qai", res[1], self.coefs)
        if order == 1:
            return val, grad
        hess = np.einsum("qmij,am->qaij", res[2], self.coefs)
        return val, grad, hess

    @cached_property
    def interpolation(self):
        """Evaluation points (P, d+1) and matrix D (nb, P) with coefficient = D @ g(points).

        Lagrange dofs are point values; a bubble dof is the value at its facet
        barycentre minus the Lagrange interpolant there.
        """
        pts = self.nodes
        lag = ~self.is_bubble
        D = np.zeros((self.ndofs, len(pts)))
        D[np.flatnonzero(lag), np.flatnonzero(lag)] = 1.0
        for a in np.flatnonzero(self.is_bubble):
            D[a, a] = 1.0
            vals = self.tabulate(pts[a][None, :])[0]
            D[a, lag] -= vals[lag]
        D[np.abs(D) < 1e-15] = 0.0
        return pts, D

    @cached_property
    def closure_dofs(self) -> list[np.ndarray]:
        """For each local facet, the local dofs whose basis is nonzero on it."""
        d = self.spec.dim
        out = []
        for i in range(d + 1):
            on = np.abs(self.nodes[:, i]) < 1e-14
            on &= ~self.is_bubble | (self.entity_local == i)
            out.append(np.flatnonzero(on))
        return out


@lru_cache(maxsize=None)
def reference_element(spec: ElementSpec) -> ReferenceElement:
    return ReferenceElement(spec.scalar)


def eval_basis(spec: ElementSpec, point):
    """Values and reference gradients of the scalar basis at a barycentric point.

    Gradients are with respect to the reference coordinates ``x_1..x_d``
    (``lambda_0 = 1 - sum x``).
    """
    lam = np.atleast_2d(np.asarray(point, dtype=float))
    if lam.shape[1] != spec.dim + 1:
        raise ElementError("point must have dim + 1 barycentric coordinates")
    if np.any(lam < -1e-12) or np.any(np.abs(lam.sum(axis=1) - 1) > 1e-12):
        raise ElementError("point outside the reference simplex")
    el = reference_element(spec)
    val, dlam = el.tabulate(lam, 1)
    ref = dlam[..., 1:] - dlam[..., :1]
    if np.ndim(point) == 1:
        return val[0], ref[0]
    return val, ref
