"""Benchmark problem definitions: lid-driven cavities, backward-facing steps, MMS."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from importlib import resources
from typing import Callable

import numpy as np

from ..mesh import MeshLevel, build_structured_grid, load_mesh, remove_cells
from .mms import MMSExact

log = logging.getLogger(__name__)


class ProblemError(ValueError):
    pass


def _zero(dim):
    return lambda x: np.zeros((len(x), dim))


@dataclass
class BenchmarkProblem:
    """Geometry, boundary data and forcing of one benchmark.

    ``dirichlet`` maps boundary labels to ``g(x) -> (n, dim)``; labels in
    ``neumann`` get the natural (do-nothing) condition.  The viscosity is
    ``velocity * length / re``.
    """

    name: str
    dim: int
    coarse_mesh: Callable[[], MeshLevel]
    dirichlet: dict
    neumann: tuple = ()
    forcing: Callable | None = None          # re -> f(x) or None
    exact: Callable | None = None            # re -> MMSExact
    length: float = 2.0
    velocity: float = 1.0
    element: str = "P2"
    delta_d: float = 1.0
    notes: dict = field(default_factory=dict)

    @property
    def enclosed(self) -> bool:
        return len(self.neumann) == 0

    def nu(self, re: float) -> float:
        return self.velocity * self.length / re

    def force(self, re: float):
        return None if self.forcing is None else self.forcing(re)

    def check_markers(self, mesh: MeshLevel):
        labels = set(self.dirichlet) | set(self.neumann)
        missing = labels - set(mesh.markers)
        if missing:
            raise ProblemError(f"{self.name}: markers {sorted(missing)} not on the mesh")
        extra = set(mesh.markers) - labels
        if extra:
            raise ProblemError(f"{self.name}: boundary labels {sorted(extra)} have no condition")


# ----------------------------------------------------------------------
def regularized_lid_2d(x):
    """Lid profile ``1 - (x - 1)^4`` on the top of [0, 2]^2."""
    out = np.zeros((len(x), 2))
    out[:, 0] = 1.0 - (x[:, 0] - 1.0) ** 4
    return out


def lid_3d(x):
    out = np.zeros((len(x), 3))
    out[:, 0] = x[:, 0] ** 2 * (2 - x[:, 0]) ** 2 * x[:, 2] ** 2 * (2 - x[:, 2]) ** 2
    return out


def bfs_inflow(x):
    out = np.zeros((len(x), x.shape[1]))
    prof = 4 * (2 - x[:, 1]) * (x[:, 1] - 1)
    if x.shape[1] == 3:
        prof = prof * 4 * x[:, 2] * (1 - x[:, 2])
    out[:, 0] = prof
    return out


def _cavity_labels(dim):
    walls = ["x_min", "x_max", "y_min"] + (["z_min", "z_max"] if dim == 3 else [])
    return walls


def ldc2d(n: int = 16) -> BenchmarkProblem:
    def mesh():
        return build_structured_grid([(0, 2), (0, 2)], (n, n))
    bc = {lab: _zero(2) for lab in _cavity_labels(2)}
    bc["y_max"] = regularized_lid_2d
    return BenchmarkProblem("ldc2d", 2, mesh, bc, element="P2", delta_d=1.0)


def ldc3d(n: int = 4, element: str = "p1fb") -> BenchmarkProblem:
    def mesh():
        return build_structured_grid([(0, 2)] * 3, (n, n, n))
    bc = {lab: _zero(3) for lab in _cavity_labels(3)}
    bc["y_max"] = lid_3d
    return BenchmarkProblem("ldc3d", 3, mesh, bc, element=element, delta_d=1.0 / 20)


def _bfs_classifier(dim):
    def classify(mid):
        x = mid[:, 0]
        lab = np.full(len(mid), "wall", dtype=object)
        lab[np.isclose(x, 0.0)] = "inlet"
        lab[np.isclose(x, 10.0)] = "outlet"
        return lab
    return classify


def bfs_mesh(dim: int, nx: int = 10, ny: int = 2, nz: int = 1) -> MeshLevel:
    """Step domain ([0,10]x[1,2]) u ([1,10]x[0,1]) (x [0,1]) from a box grid."""
    if dim == 2:
        box = build_structured_grid([(0, 10), (0, 2)], (nx, ny))
    else:
        box = build_structured_grid([(0, 10), (0, 2), (0, 1)], (nx, ny, nz))
    cent = box.vertices[box.cells].mean(axis=1)
    drop = (cent[:, 0] < 1.0) & (cent[:, 1] < 1.0)
    return remove_cells(box, drop, _bfs_classifier(dim))


def bfs2d(mesh_file=None, nx: int = 20, ny: int = 4) -> BenchmarkProblem:
    def mesh():
        if mesh_file is not None:
            return load_mesh(mesh_file)
        return bfs_mesh(2, nx, ny)
    bc = {"inlet": bfs_inflow, "wall": _zero(2)}
    return BenchmarkProblem("bfs2d", 2, mesh, bc, neumann=("outlet",), element="P2",
                            delta_d=1.0)


def bfs3d(mesh_file=None, element: str = "p1fb", nx: int = 10, ny: int = 2,
          nz: int = 1) -> BenchmarkProblem:
    def mesh():
        if mesh_file is not None:
            return load_mesh(mesh_file)
        return bfs_mesh(3, nx, ny, nz)
    bc = {"inlet": bfs_inflow, "wall": _zero(3)}
    return BenchmarkProblem("bfs3d", 3, mesh, bc, neumann=("outlet",), element=element,
                            delta_d=1.0 / 20)


def mms3d(n: int = 2, element: str = "p1fb") -> BenchmarkProblem:
    def mesh():
        m = build_structured_grid([(0, 2)] * 3, (n, n, n))
        # one label for the whole boundary
        return MeshLevel(m.vertices, m.cells,
                         {"boundary": np.concatenate(list(m.markers.values()))})

    def g(x):
        return MMSExact(1.0, 3).u(x)  # the velocity does not depend on Re

    return BenchmarkProblem("mms3d", 3, mesh, {"boundary": g},
                            forcing=lambda re: MMSExact(re, 3).f,
                            exact=lambda re: MMSExact(re, 3), element=element,
                            delta_d=1.0 / 20, notes={"n": n})


def bundled_bfs_mesh():
    """Path of the packaged coarse 2D step mesh."""
    return resources.files("alns.data").joinpath("bfs2d_coarse.msh")


PROBLEMS = {"ldc2d": ldc2d, "ldc3d": ldc3d, "bfs2d": bfs2d, "bfs3d": bfs3d, "mms3d": mms3d}


def get_problem(name: str, **kw) -> BenchmarkProblem:
    try:
        factory = PROBLEMS[name]
    except KeyError:
        raise ProblemError(f"unknown benchmark {name!r}; choose from {sorted(PROBLEMS)}") from None
    return factory(**kw)
