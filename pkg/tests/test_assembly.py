import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from alns.assembly import (NEWTON, PICARD, AssemblyError, DiscreteState, PhysicalParams,
                           assemble_jacobian, assemble_residual, project_p0_divergence,
                           supg_delta)
from alns.bench.mms import MMSExact
from alns.mesh import build_structured_grid

from conftest import spaces


def forcing(x):
    return np.stack([np.sin(x[:, 0]) + x[:, 1]] + [x[:, 0] * x[:, 1]] * (x.shape[1] - 1), 1)


def random_state(V, Q, rng):
    return DiscreteState(rng.standard_normal(V.ndofs), rng.standard_normal(Q.ndofs), V, Q)


CASES = [(2, "P2", 2), (3, "p1fb", 1), (3, "p2fb", 1)]


def grid(dim, n):
    return build_structured_grid([(0, 1)] * dim, (n,) * dim)


# ---------------------------------------------------------------- SUPG weight
def test_supg_delta_values():
    p = PhysicalParams(nu=0.7, delta_d=1.0)
    assert supg_delta(0.0, 0.3, p) == pytest.approx(0.3 ** 2 / (12 * 0.7), rel=1e-14)
    assert supg_delta(1.0, 1.0, PhysicalParams(nu=1.0, delta_d=1.0)) == pytest.approx(
        148 ** -0.5, rel=1e-14)
    assert 148 ** -0.5 == pytest.approx(0.0821995, abs=1e-7)
    with pytest.raises(AssemblyError):
        supg_delta(1.0, 0.0, p)


@given(st.floats(0, 10), st.floats(1e-3, 1.0), st.floats(1e-3, 10))
@settings(max_examples=50, deadline=None)
def test_supg_delta_monotone_in_h(u, h, nu):
    p = PhysicalParams(nu=nu, delta_d=1.0)
    assert supg_delta(u, h / 2, p) < supg_delta(u, h, p)


def test_params_validation():
    with pytest.raises(AssemblyError):
        PhysicalParams(nu=0.0)
    with pytest.raises(AssemblyError):
        PhysicalParams(nu=1.0, gamma=-1)


# ---------------------------------------------------------------- residual
@pytest.mark.parametrize("dim,family,n", CASES)
def test_zero_state_zero_residual(dim, family, n):
    V, Q = spaces(grid(dim, n), family)
    ru, rp = assemble_residual(DiscreteState.zeros(V, Q), PhysicalParams(nu=1, gamma=1e4, delta_d=1))
    assert np.all(ru == 0) and np.all(rp == 0)


@pytest.mark.parametrize("dim,family,n", CASES)
@pytest.mark.parametrize("gamma", [0.0, 1.0, 1e4])
@pytest.mark.parametrize("delta_d", [0.0, 1.0])
def test_newton_jacobian_matches_finite_differences(dim, family, n, gamma, delta_d, rng):
    V, Q = spaces(grid(dim, n), family)
    bc = V.boundary_dofs("x_min")
    st_ = random_state(V, Q, rng)
    par = PhysicalParams(nu=0.3, gamma=gamma, delta_d=delta_d)
    J = assemble_jacobian(st_, par, NEWTON, forcing, bc)
    du = rng.standard_normal(V.ndofs)
    du[bc] = 0
    dp = rng.standard_normal(Q.ndofs)
    eps = 1e-7
    plus, minus = st_.copy(), st_.copy()
    plus.u += eps * du
    plus.p += eps * dp
    minus.u -= eps * du
    minus.p -= eps * dp
    rp_, rm_ = assemble_residual(plus, par, forcing, bc), assemble_residual(minus, par, forcing, bc)
    fd = np.concatenate([(rp_[0] - rm_[0]), (rp_[1] - rm_[1])]) / (2 * eps)
    Jd = J.matvec(np.concatenate([du, dp]))
    assert np.linalg.norm(fd - Jd) / np.linalg.norm(fd) < 1e-6


@pytest.mark.parametrize("dim,family,n", CASES)
@pytest.mark.parametrize("delta_d", [0.0, 1.0])
def test_picard_operator_reproduces_residual(dim, family, n, delta_d, rng):
    # without forcing, R(u, p) = A_picard(u) u + B^T p
    V, Q = spaces(grid(dim, n), family)
    st_ = random_state(V, Q, rng)
    par = PhysicalParams(nu=0.3, gamma=10.0, delta_d=delta_d)
    J = assemble_jacobian(st_, par, PICARD)
    ru, rp = assemble_residual(st_, par)
    assert np.allclose(J.A_gamma @ st_.u + J.B.T @ st_.p, ru, rtol=1e-10, atol=1e-10 * abs(ru).max())
    assert np.allclose(J.B @ st_.u, rp, atol=1e-12)


def test_newton_and_picard_agree_without_advection(rng):
    V, Q = spaces(grid(2, 2), "P2")
    st_ = random_state(V, Q, rng)
    par = PhysicalParams(nu=0.3, gamma=5.0, advection=False)
    a = assemble_jacobian(st_, par, NEWTON).A_gamma
    b = assemble_jacobian(st_, par, PICARD).A_gamma
    assert abs(a - b).max() == 0


def two_cell_2d():
    return build_structured_grid([(0, 1), (0, 1)], (1, 1))


def six_tet_3d():
    return build_structured_grid([(0, 1)] * 3, (1, 1, 1))


@pytest.mark.parametrize("mesh,family", [(two_cell_2d, "P2"), (six_tet_3d, "p1fb"),
                                         (six_tet_3d, "p2fb")])
def test_grad_div_identity(mesh, family, rng):
    V, Q = spaces(mesh(), family)
    st_ = random_state(V, Q, rng)
    gamma = 1e4
    A0 = assemble_jacobian(st_, PhysicalParams(nu=0.5, gamma=0, delta_d=1), NEWTON, forcing)
    Ag = assemble_jacobian(st_, PhysicalParams(nu=0.5, gamma=gamma, delta_d=1), NEWTON, forcing)
    G = (gamma * A0.B.T @ sp.diags(1 / A0.M_p.diagonal()) @ A0.B).toarray()
    D = (Ag.A_gamma - A0.A_gamma).toarray()
    assert np.abs(D - G).max() <= 1e-12 * np.abs(G).max()


def test_grad_div_residual_term(rng):
    V, Q = spaces(grid(2, 2), "P2")
    st_ = random_state(V, Q, rng)
    r0 = assemble_residual(st_, PhysicalParams(nu=0.5, gamma=0, delta_d=1), forcing)[0]
    r1 = assemble_residual(st_, PhysicalParams(nu=0.5, gamma=1e4, delta_d=1), forcing)[0]
    J = assemble_jacobian(st_, PhysicalParams(nu=0.5))
    expect = 1e4 * (J.B.T @ ((J.B @ st_.u) / J.M_p.diagonal()))
    assert np.allclose(r1 - r0, expect, rtol=1e-10, atol=1e-10 * abs(expect).max())


@pytest.mark.parametrize("dim,family,n", CASES)
def test_grad_div_vanishes_on_kernel(dim, family, n, rng):
    V, Q = spaces(grid(dim, n), family)
    B = assemble_jacobian(DiscreteState.zeros(V, Q), PhysicalParams(nu=1)).B.toarray()
    u = rng.standard_normal(V.ndofs)
    u -= B.T @ np.linalg.lstsq(B @ B.T, B @ u, rcond=None)[0]
    assert np.abs(project_p0_divergence(u, V)).max() < 1e-12
    st_ = DiscreteState(u, np.zeros(Q.ndofs), V, Q)
    r0 = assemble_residual(st_, PhysicalParams(nu=1, gamma=0, delta_d=1))[0]
    r1 = assemble_residual(st_, PhysicalParams(nu=1, gamma=1e4, delta_d=1))[0]
    assert np.abs(r1 - r0).max() < 1e-12 * 1e4 * np.abs(u).max()


def test_pressure_mass_two_triangles():
    V, Q = spaces(two_cell_2d(), "P2")
    M = assemble_jacobian(DiscreteState.zeros(V, Q), PhysicalParams(nu=1)).M_p
    assert np.allclose(M.toarray(), np.diag([0.5, 0.5]), atol=1e-15)


@pytest.mark.parametrize("dim,family,n", CASES)
def test_stokes_block_symmetric_positive_definite(dim, family, n, rng):
    m = grid(dim, n)
    V, Q = spaces(m, family)
    bc = V.boundary_dofs()
    st_ = random_state(V, Q, rng)
    A = assemble_jacobian(st_, PhysicalParams(nu=0.3, gamma=0, advection=False), NEWTON,
                          None, bc).A_gamma.toarray()
    assert np.abs(A - A.T).max() < 1e-12 * np.abs(A).max()
    free = np.setdiff1d(np.arange(V.ndofs), bc)
    assert len(free) > 0
    assert np.linalg.eigvalsh(A[np.ix_(free, free)]).min() > 0
    # Dirichlet rows and columns are unit vectors
    assert np.array_equal(A[np.ix_(bc, bc)], np.eye(len(bc)))
    assert np.all(A[np.ix_(bc, free)] == 0) and np.all(A[np.ix_(free, bc)] == 0)


def test_dirichlet_rows_of_residual_zero(rng):
    V, Q = spaces(grid(2, 2), "P2")
    bc = V.boundary_dofs(["x_min", "y_max"])
    ru, _ = assemble_residual(random_state(V, Q, rng), PhysicalParams(nu=1, delta_d=1), forcing, bc)
    assert np.all(ru[bc] == 0) and np.any(ru != 0)


def test_assembly_is_deterministic(rng):
    V, Q = spaces(grid(3, 1), "p1fb")
    st_ = random_state(V, Q, rng)
    par = PhysicalParams(nu=0.1, gamma=1e4, delta_d=0.05)
    a = assemble_jacobian(st_, par, NEWTON, forcing)
    b = assemble_jacobian(st_, par, NEWTON, forcing)
    assert np.array_equal(a.A_gamma.data, b.A_gamma.data) and np.array_equal(a.rhs_u, b.rhs_u)


# ---------------------------------------------------------------- divergence projection
@pytest.mark.parametrize("dim,family", [(2, "P2"), (3, "p1fb")])
def test_project_p0_divergence(dim, family):
    V, _ = spaces(grid(dim, 2), family)
    const = V.interpolate(lambda x: np.tile(np.arange(1.0, dim + 1), (len(x), 1)))
    assert np.abs(project_p0_divergence(const, V)).max() < 1e-13
    sol = V.interpolate(lambda x: np.column_stack([x[:, 0], -x[:, 1]] + [np.zeros(len(x))] * (dim - 2)))
    assert np.abs(project_p0_divergence(sol, V)).max() < 1e-13
    rad = V.interpolate(lambda x: np.column_stack([x[:, 0], x[:, 1]] + [np.zeros(len(x))] * (dim - 2)))
    assert np.allclose(project_p0_divergence(rad, V), 2.0, atol=1e-13)


def test_divergence_theorem_form(rng):
    # cell mean divergence equals boundary flux / |K|
    from alns.fem.dofmap import facet_flux
    m = grid(3, 1)
    V, _ = spaces(m, "p1fb")
    u = rng.standard_normal(V.ndofs)
    flux = facet_flux(V, u)
    sign = np.where(m.facet_cells[m.cell_facets, 0] == np.arange(m.num_cells)[:, None], 1.0, -1.0)
    net = (flux[m.cell_facets] * sign).sum(1)
    assert np.allclose(project_p0_divergence(u, V) * m.cell_volumes(), net, atol=1e-12)


# ---------------------------------------------------------------- consistency
def test_augmentation_leaves_solution_unchanged():
    m = build_structured_grid([(0, 1), (0, 1)], (2, 2))
    V, Q = spaces(m, "P2")
    bc = V.boundary_dofs(["x_min", "y_min", "y_max"])
    g = V.interpolate(lambda x: np.column_stack([x[:, 1] * (1 - x[:, 1]), 0 * x[:, 0]]))
    sols = []
    for gamma in (0.0, 1e2):
        st_ = DiscreteState.zeros(V, Q)
        st_.u[bc] = g[bc]
        par = PhysicalParams(nu=1.0, gamma=gamma, advection=False)
        S = assemble_jacobian(st_, par, NEWTON, forcing, bc)
        x = np.linalg.solve(S.to_dense(), S.rhs())
        sols.append(np.concatenate([st_.u + x[:V.ndofs], x[V.ndofs:]]))
    assert np.linalg.norm(sols[0] - sols[1]) <= 1e-10 * np.linalg.norm(sols[0])


def test_mms_residual_decreases_with_h():
    # gamma = 0: the interpolant is not discretely divergence free, so the
    # augmentation term would only measure that interpolation error
    exact = MMSExact(1.0, 3)
    norms = []
    for n in (4, 8):
        m = build_structured_grid([(0, 2)] * 3, (n,) * 3)
        V, Q = spaces(m, "p1fb")
        centroids = m.vertices[m.cells].mean(1)
        st_ = DiscreteState(V.interpolate(exact.u), exact.p(centroids), V, Q)
        ru, _ = assemble_residual(st_, PhysicalParams(nu=exact.nu, gamma=0.0, delta_d=0.05),
                                  exact.f, V.boundary_dofs())
        norms.append(np.linalg.norm(ru))
    assert norms[1] <= norms[0] / 2


def test_state_length_checked():
    V, Q = spaces(grid(2, 1), "P2")
    with pytest.raises(AssemblyError):
        DiscreteState(np.zeros(3), np.zeros(Q.ndofs), V, Q)
