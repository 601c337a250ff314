import dataclasses

import numpy as np
import pytest

from alns.bench.problems import _zero, bfs2d, ldc2d
from alns.fem.dofmap import facet_flux
from alns.linalg import KrylovConfig
from alns.nonlinear import (ContinuationPlan, Discretization, LineSearchError, NewtonConfig,
                            NonlinearError, SolverOptions, newton_solve, run_continuation,
                            stokes_initial_guess)
from alns.nonlinear import _line_search


@pytest.fixture(scope="module")
def cavity():
    return Discretization(ldc2d(4), 1)


@pytest.fixture(scope="module")
def solved_re10(cavity):
    state = stokes_initial_guess(cavity)
    return newton_solve(cavity, state, 10.0)


def test_ldc_re10_converges_quickly(solved_re10):
    state, rec = solved_re10
    assert rec.converged and rec.newton_steps <= 5
    assert rec.residuals[-1] <= max(1e-8, 1e-10 * rec.residuals[0])
    assert rec.average == pytest.approx(sum(rec.krylov) / len(rec.krylov))


def test_solved_state_needs_no_step(cavity, solved_re10):
    state, _ = solved_re10
    _, rec = newton_solve(cavity, state, 10.0)
    assert rec.converged and rec.newton_steps == 0 and rec.average == 0.0


def test_residual_decreases_every_step(cavity):
    state = stokes_initial_guess(cavity)
    _, rec = newton_solve(cavity, state, 100.0)
    assert rec.residuals[1] < rec.residuals[0]
    assert np.all(np.diff(rec.residuals) < 0)


def test_quadratic_convergence_with_exact_linear_solves(cavity):
    opts = SolverOptions(preconditioner="exact", krylov=KrylovConfig(rtol=1e-13, atol=1e-15,
                                                                       max_iterations=50))
    state = stokes_initial_guess(cavity, opts)
    _, rec = newton_solve(cavity, state, 100.0, opts, NewtonConfig(atol=1e-10, rtol=0.0))
    r = np.array(rec.residuals)
    r = r[r > 1e-11]
    orders = np.log(r[2:] / r[1:-1]) / np.log(r[1:-1] / r[:-2])
    assert len(orders) and orders.max() >= 1.8


def test_newton_failure_raises(cavity):
    state = cavity.zero_state()
    with pytest.raises(NonlinearError):
        newton_solve(cavity, state, 100.0, config=NewtonConfig(max_iterations=1))


def test_continuation_returns_partial_report(cavity):
    plan = ContinuationPlan([10.0, 1e6])
    _, rep = run_continuation(cavity, plan, config=NewtonConfig(max_iterations=5))
    assert [s.re for s in rep.stages] == [10.0, 1e6]
    assert rep.stages[0].converged and not rep.stages[1].converged
    assert rep.stages[1].message and not rep.converged


def test_continuation_restart_is_bit_identical(cavity):
    both, rep = run_continuation(cavity, ContinuationPlan([10.0, 100.0]))
    first, rep1 = run_continuation(cavity, ContinuationPlan([10.0]))
    second, rep2 = run_continuation(cavity, ContinuationPlan([100.0]), state=first)
    assert np.array_equal(both.u, second.u) and np.array_equal(both.p, second.p)
    assert rep.stages[1].krylov == rep2.stages[0].krylov
    assert rep.stages[1].residuals == rep2.stages[0].residuals


def test_stokes_guess_zero_for_zero_data():
    prob = ldc2d(4)
    prob = dataclasses.replace(prob, dirichlet={k: _zero(2) for k in prob.dirichlet})
    disc = Discretization(prob, 0)
    st_ = stokes_initial_guess(disc)
    assert not st_.u.any() and not st_.p.any()


def test_stokes_guess_conserves_mass_through_the_boundary():
    disc = Discretization(bfs2d(nx=20, ny=4), 0)
    tight = SolverOptions(krylov=KrylovConfig(rtol=1e-12, atol=1e-14, max_iterations=200))
    st_ = stokes_initial_guess(disc, tight)
    m = disc.meshes.finest
    fl = facet_flux(disc.fine_V, st_.u, m.boundary_facets)
    inflow = fl[fl < 0].sum()
    assert inflow < -0.1
    assert abs(fl.sum()) <= 1e-10 * abs(inflow)
    assert np.allclose(st_.u[disc.bc[-1]], disc.bcval[-1][disc.bc[-1]])


def test_line_search_rejects_ascent_direction(cavity, solved_re10):
    state, _ = solved_re10
    st_ = state.copy()
    par = cavity.params(10.0, 1e4)
    # perturb away from the solution and then step further away
    d_u = np.zeros_like(st_.u)
    free = np.setdiff1d(np.arange(len(d_u)), cavity.bc[-1])
    d_u[free] = 1e-2
    st_.u += d_u
    F0 = cavity.residual(st_, par, 10.0)
    sys_ = cavity.linear_system(st_, par, "newton", 10.0)
    d = np.concatenate([d_u, np.zeros_like(st_.p)])
    with pytest.raises(LineSearchError):
        _line_search(cavity, st_, d_u, np.zeros_like(st_.p), F0, sys_.matvec(d), par, 10.0)


def test_plan_and_config_validation():
    for bad in ([], [10.0, 10.0], [100.0, 10.0], [-1.0]):
        with pytest.raises(ValueError):
            ContinuationPlan(bad)
    assert ContinuationPlan.default(2, 1000).targets[:3] == [10.0, 100.0, 200.0]
    assert ContinuationPlan.default(2, 1000).targets[-1] == 1000.0
    assert ContinuationPlan.default(3, 5000).targets == [10.0, 100.0, 1000.0, 2500.0, 5000.0]
    assert ContinuationPlan.default(3, 50).targets == [10.0, 50.0]
    with pytest.raises(ValueError):
        NewtonConfig(atol=-1)
    with pytest.raises(ValueError):
        SolverOptions(linearization="secant")
    assert SolverOptions(preconditioner="simple", gamma=1e4).gamma == 0.0
    assert NewtonConfig().rtol_for(2) == 1e-10 and NewtonConfig().rtol_for(3) == 1e-8


def test_dump_dir_receives_newton_blocks(cavity, solved_re10, tmp_path, monkeypatch):
    monkeypatch.setenv("ALNS_DUMP_DIR", str(tmp_path))
    state, _ = solved_re10
    st_ = state.copy()
    st_.u *= 0.9
    newton_solve(cavity, st_, 10.0)
    assert (tmp_path / "A_gamma_re10_step0.mtx").exists()
    assert (tmp_path / "B_re10_step0.mtx").exists()
