"""Shared small meshes and spaces."""
import numpy as np
import pytest

from alns.fem import ElementSpec, build_dofmap
from alns.mesh import MeshLevel, build_structured_grid, mark_boundary, refine_uniform


def all_boundary(mesh):
    mesh.markers = mark_boundary(mesh, lambda mid: np.array(["b"] * len(mid), dtype=object))
    return mesh


def unit_tet():
    return all_boundary(MeshLevel(np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1.0]]),
                                  np.array([[0, 1, 2, 3]])))


def unit_triangle():
    return all_boundary(MeshLevel(np.array([[0, 0], [1, 0], [0, 1.0]]), np.array([[0, 1, 2]])))


def spaces(mesh, family):
    d = mesh.dim
    return build_dofmap(mesh, ElementSpec(family, d, d)), build_dofmap(mesh, ElementSpec("P0", d))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def square2():
    return build_structured_grid([(0, 1), (0, 1)], (2, 2))


@pytest.fixture
def cube1():
    return build_structured_grid([(0, 1)] * 3, (1, 1, 1))


@pytest.fixture
def tet_pair():
    """Unit tetrahedron and its uniform refinement."""
    t = unit_tet()
    return t, refine_uniform(t)


# one line per acceptance criterion, repeated in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[0][1:])):
            terminalreporter.write_line(line)
