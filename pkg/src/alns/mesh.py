"""Simplicial meshes in 2D and 3D with uniform refinement and genealogy.

Local numbering conventions used throughout the package:

* local facet ``i`` of a cell is the facet opposite local vertex ``i``;
* local edges are ``(1, 2), (0, 2), (0, 1)`` in 2D (so edge ``i`` is facet
  ``i``) and ``(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)`` in 3D.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

LOCAL_EDGES = {
    2: np.array([(1, 2), (0, 2), (0, 1)]),
    3: np.array([(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]),
}


class MeshError(ValueError):
    """Invalid mesh data or query."""


@dataclass(frozen=True)
class Genealogy:
    """Link from a refined level to its parent level.

    ``vertex_coarse_vertex[v]`` is the coarse vertex coinciding with fine
    vertex ``v`` (or -1), ``vertex_coarse_edge[v]`` the coarse edge whose
    midpoint is ``v`` (or -1).
    """

    parent_cell: np.ndarray
    vertex_coarse_vertex: np.ndarray
    vertex_coarse_edge: np.ndarray
    coarse_cells: np.ndarray  # coarse cell vertices as fine vertex ids

    def children(self, coarse_cell: int) -> np.ndarray:
        return np.flatnonzero(self.parent_cell == coarse_cell)


def _unique_rows(keys: np.ndarray):
    uniq, inverse = np.unique(keys, axis=0, return_inverse=True)
    return uniq, inverse.reshape(-1)


def signed_volumes(vertices: np.ndarray, cells: np.ndarray) -> np.ndarray:
    x = vertices[cells]
    jac = x[:, 1:, :] - x[:, :1, :]
    dim = vertices.shape[1]
    return np.linalg.det(jac) / math.factorial(dim)


def _orient(vertices: np.ndarray, cells: np.ndarray) -> np.ndarray:
    cells = cells.copy()
    neg = signed_volumes(vertices, cells) < 0
    cells[neg, -2], cells[neg, -1] = cells[neg, -1], cells[neg, -2].copy()
    return cells


class MeshLevel:
    """Conforming simplicial mesh with derived topology.

    Parameters
    ----------
    vertices : (V, dim) array
    cells : (C, dim + 1) vertex indices, positively oriented
    markers : mapping label -> array of boundary facet ids
    parent : optional genealogy to the next coarser level
    """

    def __init__(self, vertices, cells, markers=None, parent: Genealogy | None = None):
        self.vertices = np.ascontiguousarray(vertices, dtype=float)
        self.cells = np.ascontiguousarray(cells, dtype=np.int64)
        self.dim = self.vertices.shape[1]
        if self.dim not in (2, 3):
            raise MeshError(f"unsupported dimension {self.dim}")
        if self.cells.ndim != 2 or self.cells.shape[1] != self.dim + 1:
            raise MeshError("cells must be simplices with dim + 1 vertices")
        self.parent = parent
        self._build_topology()
        self.markers = {} if markers is None else {
            k: np.sort(np.asarray(v, dtype=np.int64)) for k, v in markers.items()}
        for arr in self.vertices, self.cells:
            arr.flags.writeable = False

    # ------------------------------------------------------------------
    def _build_topology(self):
        d, cells = self.dim, self.cells
        nc = len(cells)
        local = np.stack([np.delete(cells, i, axis=1) for i in range(d + 1)], axis=1)
        keys = np.sort(local.reshape(-1, d), axis=1)
        self.facets, inv = _unique_rows(keys)
        self.cell_facets = inv.reshape(nc, d + 1)

        order = np.argsort(inv, kind="stable")
        first = np.ones(len(order), dtype=bool)
        first[1:] = inv[order][1:] != inv[order][:-1]
        self.facet_cells = -np.ones((len(self.facets), 2), dtype=np.int64)
        owner = order // (d + 1)
        self.facet_cells[inv[order][first], 0] = owner[first]
        self.facet_cells[inv[order][~first], 1] = owner[~first]
        counts = np.bincount(inv, minlength=len(self.facets))
        if counts.max(initial=0) > 2:
            raise MeshError("non-manifold mesh: facet shared by more than two cells")

        le = LOCAL_EDGES[d]
        ekeys = np.sort(cells[:, le].reshape(-1, 2), axis=1)
        self.edges, einv = _unique_rows(ekeys)
        self.cell_edges = einv.reshape(nc, len(le))

    # ------------------------------------------------------------------
    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    @property
    def num_cells(self) -> int:
        return len(self.cells)

    @property
    def boundary_facets(self) -> np.ndarray:
        return np.flatnonzero(self.facet_cells[:, 1] < 0)

    @property
    def interior_facets(self) -> np.ndarray:
        return np.flatnonzero(self.facet_cells[:, 1] >= 0)

    def cell_volumes(self) -> np.ndarray:
        return signed_volumes(self.vertices, self.cells)

    def cell_diameters(self) -> np.ndarray:
        x = self.vertices[self.cells]
        le = LOCAL_EDGES[self.dim]
        lengths = np.linalg.norm(x[:, le[:, 0]] - x[:, le[:, 1]], axis=-1)
        return lengths.max(axis=1)

    def facet_normals(self, facets=None) -> tuple[np.ndarray, np.ndarray]:
        """Unit normals pointing out of ``facet_cells[:, 0]`` and facet measures."""
        facets = np.arange(len(self.facets)) if facets is None else np.asarray(facets)
        x = self.vertices[self.facets[facets]]
        if self.dim == 2:
            t = x[:, 1] - x[:, 0]
            n = np.stack([t[:, 1], -t[:, 0]], axis=1)
            meas = np.linalg.norm(n, axis=1)
        else:
            n = np.cross(x[:, 1] - x[:, 0], x[:, 2] - x[:, 0])
            meas = 0.5 * np.linalg.norm(n, axis=1)
            n = 0.5 * n
        n = n / (np.linalg.norm(n, axis=1)[:, None])
        owner = self.facet_cells[facets, 0]
        centroid = self.vertices[self.cells[owner]].mean(axis=1)
        flip = np.einsum("ij,ij->i", n, x.mean(axis=1) - centroid) < 0
        n[flip] *= -1
        return n, meas

    def vertex_cells(self):
        """CSR-style vertex -> cell incidence ``(offsets, cell ids)``."""
        if not hasattr(self, "_vc"):
            flat = self.cells.reshape(-1)
            order = np.argsort(flat, kind="stable")
            counts = np.bincount(flat, minlength=self.num_vertices)
            offsets = np.concatenate([[0], np.cumsum(counts)])
            self._vc = (offsets, order // (self.dim + 1))
        return self._vc

    def facet_ids(self, facet_vertices: np.ndarray) -> np.ndarray:
        """Look up facet ids from (n, dim) vertex tuples; -1 where absent."""
        V = self.num_vertices
        enc = lambda a: np.sort(a, axis=1) @ (V ** np.arange(self.dim - 1, -1, -1))
        keys = enc(self.facets)
        q = enc(np.asarray(facet_vertices, dtype=np.int64))
        pos = np.searchsorted(keys, q)
        pos = np.minimum(pos, len(keys) - 1)
        return np.where(keys[pos] == q, pos, -1)

    def edge_ids(self, edge_vertices: np.ndarray) -> np.ndarray:
        V = self.num_vertices
        keys = self.edges[:, 0] * V + self.edges[:, 1]
        e = np.sort(np.asarray(edge_vertices, dtype=np.int64), axis=1)
        q = e[:, 0] * V + e[:, 1]
        pos = np.minimum(np.searchsorted(keys, q), len(keys) - 1)
        return np.where(keys[pos] == q, pos, -1)

    def validate(self):
        """Check orientation, vertex usage and marker coverage."""
        vol = self.cell_volumes()
        if np.any(vol <= 0):
            raise MeshError(f"inverted or degenerate cell(s): {np.flatnonzero(vol <= 0)[:5]}")
        used = np.zeros(self.num_vertices, dtype=bool)
        used[self.cells.reshape(-1)] = True
        if not used.all():
            raise MeshError(f"dangling vertex(es): {np.flatnonzero(~used)[:5]}")
        bnd = self.boundary_facets
        tagged = np.zeros(len(self.facets), dtype=np.int64)
        for ids in self.markers.values():
            np.add.at(tagged, ids, 1)
        if np.any(tagged[self.interior_facets] > 0):
            raise MeshError("marker attached to an interior facet")
        if np.any(tagged[bnd] != 1):
            raise MeshError("every boundary facet needs exactly one marker")
        return self

    def __repr__(self):
        return (f"MeshLevel(dim={self.dim}, vertices={self.num_vertices}, "
                f"cells={self.num_cells}, facets={len(self.facets)})")


# ----------------------------------------------------------------------
# construction
# ----------------------------------------------------------------------
def mark_boundary(mesh: MeshLevel, classify) -> dict[str, np.ndarray]:
    """Label boundary facets with ``classify(midpoints) -> array of labels``."""
    bnd = mesh.boundary_facets
    mid = mesh.vertices[mesh.facets[bnd]].mean(axis=1)
    labels = np.asarray(classify(mid))
    return {str(lab): bnd[labels == lab] for lab in np.unique(labels)}


def _box_classifier(extent):
    names = "xyz"

    def classify(mid):
        out = np.full(len(mid), "", dtype=object)
        for ax, (lo, hi) in enumerate(extent):
            tol = 1e-10 * (hi - lo)
            for bound, side in ((lo, "min"), (hi, "max")):
                hit = (np.abs(mid[:, ax] - bound) < tol) & (out == "")
                out[hit] = f"{names[ax]}_{side}"
        return out.astype(str)

    return classify


def build_structured_grid(extent, subdivisions, dim: int | None = None) -> MeshLevel:
    """Structured simplicial grid of a box.

    2D quads are split along the negative-slope diagonal; 3D cubes are split
    into six tetrahedra by the Kuhn triangulation.  Boundary facets carry the
    labels ``x_min``, ``x_max``, ``y_min``, ...
    """
    extent = [tuple(map(float, e)) for e in extent]
    subdivisions = [int(n) for n in subdivisions]
    d = len(extent)
    if dim is not None and dim != d:
        raise MeshError("extent/dim mismatch")
    if len(subdivisions) != d or d not in (2, 3):
        raise MeshError("need one subdivision count per axis (2D or 3D)")
    if min(subdivisions) < 1:
        raise MeshError("subdivision counts must be >= 1")
    axes = [np.linspace(lo, hi, n + 1) for (lo, hi), n in zip(extent, subdivisions)]
    grid = np.meshgrid(*axes, indexing="ij")
    vertices = np.stack([g.reshape(-1) for g in grid], axis=1)
    shape = [n + 1 for n in subdivisions]
    index = np.arange(np.prod(shape)).reshape(shape)
    if d == 2:
        nx, ny = subdivisions
        i, j = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
        i, j = i.reshape(-1), j.reshape(-1)
        a, b = index[i, j], index[i + 1, j]
        c, e = index[i + 1, j + 1], index[i, j + 1]
        cells = np.concatenate([np.stack([a, b, e], 1), np.stack([b, c, e], 1)])
        order = np.argsort(np.concatenate([2 * np.arange(len(a)), 2 * np.arange(len(a)) + 1]))
        cells = cells[order]
    else:
        nx, ny, nz = subdivisions
        i, j, k = (g.reshape(-1) for g in np.meshgrid(
            np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij"))
        tets = []
        for perm in itertools.permutations(range(3)):
            path = [np.zeros(3, dtype=int)]
            for ax in perm:
                step = path[-1].copy()
                step[ax] += 1
                path.append(step)
            tets.append(np.stack([index[i + p[0], j + p[1], k + p[2]] for p in path], 1))
        cells = np.stack(tets, axis=1).reshape(-1, 4)
    cells = _orient(vertices, cells)
    mesh = MeshLevel(vertices, cells)
    mesh.markers = mark_boundary(mesh, _box_classifier(extent))
    return mesh.validate()


def remove_cells(mesh: MeshLevel, drop: np.ndarray, classify) -> MeshLevel:
    """New mesh without the cells flagged in ``drop``; boundary relabelled."""
    keep = mesh.cells[~np.asarray(drop, dtype=bool)]
    used = np.unique(keep)
    renum = -np.ones(mesh.num_vertices, dtype=np.int64)
    renum[used] = np.arange(len(used))
    out = MeshLevel(mesh.vertices[used], renum[keep])
    out.markers = mark_boundary(out, classify)
    return out.validate()


def refine_uniform(coarse: MeshLevel) -> MeshLevel:
    """Regular (red) refinement: 4 children per triangle, 8 per tetrahedron.

    The interior octahedron of a tetrahedron is split along its shortest
    diagonal; ties are broken by the smallest pair of global vertex ids.
    """
    d = coarse.dim
    V, E = coarse.num_vertices, len(coarse.edges)
    mids = 0.5 * (coarse.vertices[coarse.edges[:, 0]] + coarse.vertices[coarse.edges[:, 1]])
    vertices = np.concatenate([coarse.vertices, mids])
    cv = coarse.cells
    ce = coarse.cell_edges + V
    if d == 2:
        m0, m1, m2 = ce[:, 0], ce[:, 1], ce[:, 2]
        v0, v1, v2 = cv.T
        kids = [(v0, m2, m1), (m2, v1, m0), (m1, m0, v2), (m0, m1, m2)]
    else:
        # ce columns: 01 02 03 12 13 23
        m = {(0, 1): ce[:, 0], (0, 2): ce[:, 1], (0, 3): ce[:, 2],
             (1, 2): ce[:, 3], (1, 3): ce[:, 4], (2, 3): ce[:, 5]}
        mm = lambda a, b: m[(min(a, b), max(a, b))]
        v = cv.T
        kids = []
        for c in range(4):
            others = [o for o in range(4) if o != c]
            tet = [None] * 4
            tet[c] = v[c]
            for o in others:
                tet[o] = mm(c, o)
            kids.append(tuple(tet))
        diags = [((0, 1), (2, 3), [(0, 2), (1, 2), (1, 3), (0, 3)]),
                 ((0, 2), (1, 3), [(0, 1), (0, 3), (2, 3), (1, 2)]),
                 ((0, 3), (1, 2), [(0, 1), (0, 2), (2, 3), (1, 3)])]
        lengths = np.stack([np.linalg.norm(vertices[m[a]] - vertices[m[b]], axis=1)
                            for a, b, _ in diags], axis=1)
        shortest = lengths.min(axis=1, keepdims=True)
        cand = lengths <= shortest * (1 + 1e-12)
        nv = len(vertices)
        tie = np.stack([np.minimum(m[a], m[b]) * nv + np.maximum(m[a], m[b])
                        for a, b, _ in diags], axis=1)
        choice = np.argmin(np.where(cand, tie, np.iinfo(np.int64).max), axis=1)
        for k in range(4):
            cols = []
            for a, b, ring in diags:
                cols.append(np.stack([m[a], m[b], m[ring[k]], m[ring[(k + 1) % 4]]], 1))
            stacked = np.stack(cols, axis=1)
            kids.append(tuple(stacked[np.arange(len(cv)), choice].T))
    nk = len(kids)
    cells = np.stack([np.stack(kid, axis=1) for kid in kids], axis=1).reshape(-1, d + 1)
    cells = _orient(vertices, cells)
    vcv = np.concatenate([np.arange(V), -np.ones(E, dtype=np.int64)])
    vce = np.concatenate([-np.ones(V, dtype=np.int64), np.arange(E)])
    parent = Genealogy(np.repeat(np.arange(coarse.num_cells), nk), vcv, vce, coarse.cells.copy())
    fine = MeshLevel(vertices, cells, parent=parent)

    markers = {}
    for label, fids in coarse.markers.items():
        fv = coarse.facets[fids]
        if d == 2:
            mid = coarse.edge_ids(fv) + V
            subs = [np.stack([fv[:, 0], mid], 1), np.stack([mid, fv[:, 1]], 1)]
        else:
            a, b, c = fv.T
            mab = coarse.edge_ids(np.stack([a, b], 1)) + V
            mac = coarse.edge_ids(np.stack([a, c], 1)) + V
            mbc = coarse.edge_ids(np.stack([b, c], 1)) + V
            subs = [np.stack(s, 1) for s in ((a, mab, mac), (mab, b, mbc),
                                              (mac, mbc, c), (mab, mbc, mac))]
        ids = np.concatenate([fine.facet_ids(s) for s in subs])
        if np.any(ids < 0):
            raise MeshError("refinement lost a boundary facet")
        markers[label] = ids
    fine.markers = {k: np.sort(v) for k, v in markers.items()}
    return fine


def vertex_star(mesh: MeshLevel, vertex_id: int) -> np.ndarray:
    """Sorted ids of the cells containing ``vertex_id``."""
    if not 0 <= vertex_id < mesh.num_vertices:
        raise MeshError(f"vertex {vertex_id} out of range")
    off, cells = mesh.vertex_cells()
    return np.sort(cells[off[vertex_id]:off[vertex_id + 1]])


@dataclass
class MeshHierarchy:
    """Meshes ordered coarse -> fine; each level is the refinement of the previous."""

    levels: list

    @classmethod
    def uniform(cls, coarse: MeshLevel, refinements: int) -> "MeshHierarchy":
        levels = [coarse]
        for _ in range(refinements):
            levels.append(refine_uniform(levels[-1]))
        return cls(levels)

    def __len__(self):
        return len(self.levels)

    def __getitem__(self, i) -> MeshLevel:
        return self.levels[i]

    @property
    def finest(self) -> MeshLevel:
        return self.levels[-1]


# ----------------------------------------------------------------------
# ASCII file format
# ----------------------------------------------------------------------
def save_mesh(mesh: MeshLevel, path) -> None:
    """Write ``dim V C F`` header, coordinates, cells and marked facets."""
    lines = ["# alns simplicial mesh", f"{mesh.dim} {mesh.num_vertices} {mesh.num_cells} "
             f"{sum(len(v) for v in mesh.markers.values())}"]
    lines += [" ".join(repr(float(c)) for c in row) for row in mesh.vertices]
    lines += [" ".join(str(int(c)) for c in row) for row in mesh.cells]
    for label in sorted(mesh.markers):
        for f in mesh.markers[label]:
            lines.append(" ".join(str(int(v)) for v in mesh.facets[f]) + f" {label}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_mesh(path) -> MeshLevel:
    """Parse the ASCII mesh format; rejects malformed or inverted input."""
    rows = []
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if line:
            rows.append(line.split())
    if not rows or len(rows[0]) != 4:
        raise MeshError("missing 'dim V C F' header")
    try:
        dim, nv, nc, nf = map(int, rows[0])
        body = rows[1:]
        if len(body) != nv + nc + nf:
            raise MeshError(f"expected {nv + nc + nf} records, found {len(body)}")
        coords = np.array([[float(t) for t in r] for r in body[:nv]])
        cells = [[int(t) for t in r] for r in body[nv:nv + nc]]
        facet_rows = body[nv + nc:]
    except (TypeError, ValueError) as exc:
        raise MeshError(f"parse failure: {exc}") from exc
    if coords.shape != (nv, dim):
        raise MeshError("coordinate rows do not match dimension")
    if any(len(c) != dim + 1 for c in cells):
        raise MeshError("non-simplicial cell")
    cells = np.array(cells, dtype=np.int64).reshape(nc, dim + 1)
    if cells.size and (cells.min() < 0 or cells.max() >= nv):
        raise MeshError("cell references unknown vertex")
    vol = signed_volumes(coords, cells)
    if np.any(vol <= 0):
        raise MeshError(f"inverted cell(s) {np.flatnonzero(vol <= 0)[:5].tolist()}")
    mesh = MeshLevel(coords, cells)
    groups: dict[str, list] = {}
    for r in facet_rows:
        if len(r) != dim + 1:
            raise MeshError("facet records need dim vertex ids and a marker")
        groups.setdefault(r[-1], []).append([int(t) for t in r[:-1]])
    markers = {}
    for label, fv in groups.items():
        ids = mesh.facet_ids(np.array(fv))
        if np.any(ids < 0):
            raise MeshError(f"marker '{label}' references a non-facet")
        markers[label] = ids
    mesh.markers = {k: np.sort(v) for k, v in markers.items()}
    return mesh.validate()
