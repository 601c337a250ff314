"""Global degree-of-freedom layout for scalar and vector element spaces."""
from __future__ import annotations

import math

import numpy as np

from ..mesh import LOCAL_EDGES, MeshLevel
from .quadrature import simplex_rule
from .elements import CELL, EDGE, FACET, VERTEX, ElementError, ElementSpec, reference_element


class DofMap:
    """Numbering of the nodes of an element space on one mesh level.

    Scalar nodes are numbered vertices first, then edges, facets and cells.
    Vector spaces interleave components: ``dof = node * value_size + comp``.
    """

    def __init__(self, mesh: MeshLevel, spec: ElementSpec):
        if spec.dim != mesh.dim:
            raise ElementError(f"element dim {spec.dim} does not match mesh dim {mesh.dim}")
        self.mesh, self.spec = mesh, spec
        self.element = el = reference_element(spec)
        self.value_size = vs = spec.value_size
        nv, ne, nf, ncl = el.dofs_per_entity
        if mesh.dim == 2 and nf:
            raise ElementError("facet dofs are not supported in 2D")
        V, E, F, C = mesh.num_vertices, len(mesh.edges), len(mesh.facets), mesh.num_cells
        base = {VERTEX: 0, EDGE: V * nv, FACET: V * nv + E * ne,
                CELL: V * nv + E * ne + F * nf}
        self.num_nodes = V * nv + E * ne + F * nf + C * ncl
        self.ndofs = self.num_nodes * vs

        nodes = np.empty((C, el.ndofs), dtype=np.int64)
        edges = LOCAL_EDGES[mesh.dim]
        for a in range(el.ndofs):
            kind, ent = el.entity_kind[a], el.entity_local[a]
            same = np.flatnonzero((el.entity_kind == kind) & (el.entity_local == ent))
            pos = int(np.searchsorted(same, a))
            if kind == VERTEX:
                nodes[:, a] = mesh.cells[:, ent]
            elif kind == EDGE:
                glob = np.full(C, pos)
                if ne == 2:
                    i, j = edges[ent]
                    flip = mesh.cells[:, i] > mesh.cells[:, j]
                    glob = np.where(flip, 1 - pos, pos)
                nodes[:, a] = base[EDGE] + ne * mesh.cell_edges[:, ent] + glob
            elif kind == FACET:
                nodes[:, a] = base[FACET] + nf * mesh.cell_facets[:, ent] + pos
            else:
                nodes[:, a] = base[CELL] + ncl * np.arange(C) + pos
        self.cell_nodes = nodes
        self.cell_dofs = (nodes[:, :, None] * vs + np.arange(vs)).reshape(C, -1)

        owner = np.empty(self.num_nodes, dtype=np.int64)
        local = np.empty(self.num_nodes, dtype=np.int64)
        owner[nodes.reshape(-1)] = np.repeat(np.arange(C), el.ndofs)
        local[nodes.reshape(-1)] = np.tile(np.arange(el.ndofs), C)
        self.node_owner, self.node_local = owner, local

    # ------------------------------------------------------------------
    def node_coordinates(self) -> np.ndarray:
        """Location of each scalar node (facet barycentre for bubbles)."""
        x = self.mesh.vertices[self.mesh.cells[self.node_owner]]
        lam = self.element.nodes[self.node_local]
        return np.einsum("ni,nid->nd", lam, x)

    def boundary_nodes(self, labels=None) -> np.ndarray:
        mesh = self.mesh
        labels = list(mesh.markers) if labels is None else (
            [labels] if isinstance(labels, str) else list(labels))
        out = []
        for lab in labels:
            facets = mesh.markers[lab]
            cells = mesh.facet_cells[facets, 0]
            loc = np.argmax(mesh.cell_facets[cells] == facets[:, None], axis=1)
            for i, dofs in enumerate(self.element.closure_dofs):
                sel = loc == i
                if len(dofs) and sel.any():
                    out.append(self.cell_nodes[np.ix_(cells[sel], dofs)].reshape(-1))
        return np.unique(np.concatenate(out)) if out else np.zeros(0, dtype=np.int64)

    def boundary_dofs(self, labels=None) -> np.ndarray:
        n = self.boundary_nodes(labels)
        return (n[:, None] * self.value_size + np.arange(self.value_size)).reshape(-1)

    def interpolate(self, func) -> np.ndarray:
        """Coefficients of the interpolant of ``func(x) -> (n, value_size)``."""
        pts, D = self.element.interpolation
        x = self.mesh.vertices[self.mesh.cells[self.node_owner]]
        xq = np.einsum("pi,nid->npd", pts, x)
        g = np.asarray(func(xq.reshape(-1, self.mesh.dim)), dtype=float)
        g = g.reshape(self.num_nodes, len(pts), self.value_size)
        coef = np.einsum("np,npk->nk", D[self.node_local], g)
        return coef.reshape(-1)

    def evaluate(self, coeffs, cells, lam) -> np.ndarray:
        """Values (n, value_size) at barycentric points ``lam`` in ``cells``."""
        vals = self.element.tabulate(lam)
        c = np.asarray(coeffs).reshape(self.num_nodes, self.value_size)
        return np.einsum("na,nak->nk", vals, c[self.cell_nodes[cells]])

    def __repr__(self):
        return f"DofMap({self.spec.family}^{self.value_size}, ndofs={self.ndofs})"


def build_dofmap(mesh: MeshLevel, spec: ElementSpec) -> DofMap:
    return DofMap(mesh, spec)


def locate_in_cells(mesh_vertices, cell_vertices, x) -> np.ndarray:
    """Barycentric coordinates of points ``x`` (n, d) in cells given as (n, d+1, d)."""
    x0 = cell_vertices[:, 0]
    J = np.swapaxes(cell_vertices[:, 1:] - x0[:, None], 1, 2)
    rest = np.linalg.solve(J, (x - x0)[..., None])[..., 0]
    return np.concatenate([1 - rest.sum(axis=1, keepdims=True), rest], axis=1)


def interior_nodes_by_coarse_cell(fine: DofMap) -> np.ndarray:
    """(coarse cells, m) scalar nodes strictly inside each coarse cell."""
    gen = fine.mesh.parent
    if gen is None:
        raise ElementError("mesh has no refinement genealogy")
    coarse_cell = gen.parent_cell[fine.node_owner]
    verts = fine.mesh.vertices[gen.coarse_cells[coarse_cell]]
    lam = locate_in_cells(None, verts, fine.node_coordinates())
    inside = lam.min(axis=1) > 1e-10
    nodes = np.flatnonzero(inside)
    order = np.lexsort((nodes, coarse_cell[nodes]))
    nodes = nodes[order]
    ncoarse = len(gen.coarse_cells)
    counts = np.bincount(coarse_cell[nodes], minlength=ncoarse)
    if counts.min() != counts.max():
        raise ElementError("coarse cells have differing interior node counts")
    return nodes.reshape(ncoarse, counts[0] if ncoarse else 0)


def interior_dofs_of_coarse_cell(fine: DofMap, coarse_cell: int | None = None) -> np.ndarray:
    """Fine dofs whose basis functions vanish on the coarse cell boundary (V_T)."""
    nodes = interior_nodes_by_coarse_cell(fine)
    vs = fine.value_size
    dofs = (nodes[..., None] * vs + np.arange(vs)).reshape(len(nodes), -1)
    return dofs if coarse_cell is None else dofs[coarse_cell]


def facet_flux(V: DofMap, coeffs, facets=None, degree: int = 8) -> np.ndarray:
    """``int_F u . n_F`` per facet, ``n_F`` pointing out of ``facet_cells[F, 0]``."""
    mesh = V.mesh
    d = mesh.dim
    facets = np.arange(len(mesh.facets)) if facets is None else np.asarray(facets)
    normals, meas = mesh.facet_normals(facets)
    cells = mesh.facet_cells[facets, 0]
    loc = np.argmax(mesh.cell_facets[cells] == facets[:, None], axis=1)
    rule = simplex_rule(d - 1, degree)
    wf = rule.weights * math.factorial(d - 1)
    out = np.zeros(len(facets))
    for i in range(d + 1):
        sel = np.flatnonzero(loc == i)
        if not len(sel):
            continue
        # facet-local barycentrics -> cell barycentrics (lambda_i = 0)
        lam = np.insert(rule.points, i, 0.0, axis=1)
        vals = V.evaluate(coeffs, np.repeat(cells[sel], len(lam)),
                          np.tile(lam, (len(sel), 1))).reshape(len(sel), len(lam), d)
        out[sel] = np.einsum("q,nqk,nk->n", wf, vals, normals[sel]) * meas[sel]
    return out
