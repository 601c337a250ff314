"""Newton's method, Reynolds continuation and the Stokes initial guess."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .assembly import (NEWTON, PICARD, DiscreteState, PhysicalParams, assemble_jacobian,
                       assemble_residual)
from .bench.problems import BenchmarkProblem
from .bench.report import SolveReport, StageRecord
from .fem.dofmap import build_dofmap
from .fem.elements import ElementSpec
from .linalg import ConvergenceError, KrylovConfig, maybe_export, sparse_lu
from .mesh import MeshHierarchy
from .multigrid import LevelTransfer, MgConfig, MultigridHierarchy
from .saddle import BlockPreconditioner, SimplePreconditioner, mean_projector, solve_linearized

log = logging.getLogger(__name__)


class NonlinearError(RuntimeError):
    pass


class LineSearchError(NonlinearError):
    pass


@dataclass
class SolverOptions:
    """Linear-solver choices shared by all Newton steps."""

    gamma: float = 1e4
    delta_d: float | None = None          # None: the benchmark default
    linearization: str = NEWTON
    preconditioner: str = "al"            # "al", "simple" or "exact"
    block_mode: str = "full"
    mg: MgConfig = field(default_factory=MgConfig)
    bubble_scaling: bool = True
    restriction: str = "natural"
    krylov: KrylovConfig | None = None

    def __post_init__(self):
        if self.preconditioner == "simple" and self.gamma != 0.0:
            # SIMPLE is defined for the un-augmented system
            log.info("SIMPLE preconditioner: using gamma = 0 instead of %g", self.gamma)
            self.gamma = 0.0
        if self.linearization not in (NEWTON, PICARD):
            raise ValueError(f"unknown linearization {self.linearization!r}")

    def krylov_for(self, dim: int) -> KrylovConfig:
        if self.krylov is not None:
            return self.krylov
        if dim == 2:
            return KrylovConfig(max_iterations=500, restart=100, atol=1e-10, rtol=1e-6)
        return KrylovConfig(max_iterations=500, restart=100, atol=1e-8, rtol=1e-5)


@dataclass
class NewtonConfig:
    atol: float = 1e-8
    rtol: float | None = None             # None: 1e-10 in 2D, 1e-8 in 3D
    max_iterations: int = 20
    line_search: str = "l2"               # or "none"

    def __post_init__(self):
        if self.atol < 0 or (self.rtol is not None and self.rtol < 0):
            raise ValueError("tolerances must be non-negative")
        if self.line_search not in ("l2", "none"):
            raise ValueError(f"unknown line search {self.line_search!r}")

    def rtol_for(self, dim: int) -> float:
        return self.rtol if self.rtol is not None else (1e-10 if dim == 2 else 1e-8)


@dataclass
class ContinuationPlan:
    targets: list
    problem: BenchmarkProblem | None = None

    def __post_init__(self):
        t = [float(r) for r in self.targets]
        if not t or any(b <= a for a, b in zip(t, t[1:])) or t[0] <= 0:
            raise ValueError("continuation targets must be positive and strictly increasing")
        self.targets = t

    @classmethod
    def default(cls, dim: int, re_max: float, problem=None) -> "ContinuationPlan":
        if dim == 2:
            grid = [10.0, 100.0] + [100.0 * k for k in range(2, 101)]
        else:
            grid = [10.0, 100.0, 1000.0, 2500.0, 5000.0]
        targets = [r for r in grid if r <= re_max + 1e-12]
        if not targets or targets[-1] < re_max:
            targets.append(float(re_max))
        return cls(targets, problem)


# ----------------------------------------------------------------------
class Discretization:
    """Level hierarchy, spaces and boundary data of one benchmark."""

    def __init__(self, problem: BenchmarkProblem, refinements: int, element: str | None = None,
                 bubble_scaling: bool = True, coarse_mesh=None):
        self.problem = problem
        self.dim = d = problem.dim
        coarse = coarse_mesh if coarse_mesh is not None else problem.coarse_mesh()
        problem.check_markers(coarse)
        self.meshes = MeshHierarchy.uniform(coarse, refinements)
        family = element or problem.element
        self.V = [build_dofmap(m, ElementSpec(family, d, d)) for m in self.meshes.levels]
        self.Q = [build_dofmap(m, ElementSpec("P0", d)) for m in self.meshes.levels]
        self.bc, self.bcval = [], []
        for V in self.V:
            dofs, vals = [], np.zeros(V.ndofs)
            for label, g in problem.dirichlet.items():
                ids = V.boundary_dofs(label)
                vals[ids] = V.interpolate(g)[ids]
                dofs.append(ids)
            self.bc.append(np.unique(np.concatenate(dofs)) if dofs else np.zeros(0, np.int64))
            self.bcval.append(vals)
        self.bubble_scaling = bubble_scaling
        self._static = {}
        self.enclosed = problem.enclosed

    @property
    def nlevels(self) -> int:
        return len(self.V)

    @property
    def fine_V(self):
        return self.V[-1]

    @property
    def fine_Q(self):
        return self.Q[-1]

    def ndofs(self) -> int:
        return self.fine_V.ndofs + self.fine_Q.ndofs

    def params(self, re: float, gamma: float, delta_d: float | None = None,
               advection: bool = True) -> PhysicalParams:
        dd = self.problem.delta_d if delta_d is None else delta_d
        return PhysicalParams(nu=self.problem.nu(re), gamma=gamma, delta_d=dd, re=re,
                              advection=advection)

    def zero_state(self, level: int = -1) -> DiscreteState:
        st = DiscreteState.zeros(self.V[level], self.Q[level])
        st.u[self.bc[level]] = self.bcval[level][self.bc[level]]
        return st

    def forcing(self, re):
        return self.problem.force(re)

    def static_transfer(self, level: int) -> LevelTransfer:
        if level not in self._static:
            self._static[level] = LevelTransfer(self.V[level - 1], self.V[level],
                                                self.bc[level - 1], self.bc[level],
                                                bubble_scaling=self.bubble_scaling)
        return self._static[level]

    def level_velocities(self, u_fine):
        """Injected velocities on every level, boundary data reimposed."""
        us = [None] * self.nlevels
        us[-1] = u_fine
        for lv in range(self.nlevels - 1, 0, -1):
            uc = self.static_transfer(lv).inject @ us[lv]
            uc[self.bc[lv - 1]] = self.bcval[lv - 1][self.bc[lv - 1]]
            us[lv - 1] = uc
        return us

    # ------------------------------------------------------------------
    def residual(self, state: DiscreteState, params: PhysicalParams, re: float):
        ru, rp = assemble_residual(state, params, self.forcing(re), self.bc[-1])
        if self.enclosed:
            # drop the component along the left null vector of B
            rp = rp - rp.mean()
        return np.concatenate([ru, rp])

    def linear_system(self, state, params, mode, re):
        sys = assemble_jacobian(state, params, mode, self.forcing(re), self.bc[-1])
        if self.enclosed:
            sys.rhs_p = sys.rhs_p - sys.rhs_p.mean()
        return sys

    def momentum_hierarchy(self, state, params, mode, options: SolverOptions, re, A_fine=None):
        """Rediscretized A_gamma on all levels, patches and corrected transfers."""
        us = self.level_velocities(state.u)
        ops = []
        for lv in range(self.nlevels):
            if lv == self.nlevels - 1 and A_fine is not None:
                ops.append(A_fine)
                continue
            st = DiscreteState(us[lv], np.zeros(self.Q[lv].ndofs), self.V[lv], self.Q[lv])
            ops.append(assemble_jacobian(st, params, mode, self.forcing(re), self.bc[lv]).A_gamma)
        transfers = [self.static_transfer(lv).operator(ops[lv], options.restriction)
                     for lv in range(1, self.nlevels)]
        return MultigridHierarchy.build(ops, self.V, self.bc, transfers, options.mg)

    def preconditioner(self, state, params, system, options: SolverOptions, mode, re):
        proj = mean_projector(system.M_p.diagonal()) if self.enclosed else None
        kind = options.preconditioner
        if kind == "simple":
            mg = self.momentum_hierarchy(state, params, mode, options, re, system.A_gamma)
            mg.config = MgConfig(relax_its=options.mg.relax_its, cycle="v")
            return SimplePreconditioner(system.A_gamma, system.B, mg.solve, self.enclosed, proj)
        if kind == "exact":
            momentum = sparse_lu(system.A_gamma).solve
        elif kind == "al":
            momentum = self.momentum_hierarchy(state, params, mode, options, re,
                                               system.A_gamma).solve
        else:
            raise ValueError(f"unknown preconditioner {kind!r}")
        return BlockPreconditioner(momentum, system.B, system.M_p.diagonal(), params.nu,
                                   params.gamma, options.block_mode, project=proj)


# ----------------------------------------------------------------------
def _line_search(disc, state, d_u, d_p, F0, Jd, params, re):
    """Quadratic-model L2 line search on 0.5*||F(x + lam d)||^2, lam in [0.1, 1]."""
    def trial(lam):
        st = state.copy()
        st.u += lam * d_u
        st.p += lam * d_p
        return st, disc.residual(st, params, re)

    phi0 = 0.5 * np.dot(F0, F0)
    dphi0 = float(np.dot(F0, Jd))
    st1, F1 = trial(1.0)
    phi1 = 0.5 * np.dot(F1, F1)
    curv = phi1 - phi0 - dphi0
    lam = 1.0 if curv <= 0 else float(np.clip(-dphi0 / (2 * curv), 0.1, 1.0))
    best = (1.0, st1, F1)
    if lam != 1.0:
        stl, Fl = trial(lam)
        if np.linalg.norm(Fl) < np.linalg.norm(F1):
            best = (lam, stl, Fl)
    if np.linalg.norm(best[2]) >= np.linalg.norm(F0):
        raise LineSearchError(
            f"no step length reduces the residual (|F0|={np.linalg.norm(F0):.3e}, "
            f"|F(1)|={np.linalg.norm(F1):.3e}, lambda*={lam:.3f})")
    return best


def newton_solve(disc: Discretization, state: DiscreteState, re: float,
                 options: SolverOptions | None = None, config: NewtonConfig | None = None,
                 params: PhysicalParams | None = None, record: StageRecord | None = None):
    """Damped Newton iteration; returns ``(state, record)``."""
    options = options or SolverOptions()
    config = config or NewtonConfig()
    params = params or disc.params(re, options.gamma, options.delta_d)
    record = record or StageRecord(re)
    mode = options.linearization
    kcfg = options.krylov_for(disc.dim)
    state = state.copy()
    F = disc.residual(state, params, re)
    norm0 = float(np.linalg.norm(F))
    record.residuals.append(norm0)
    target = max(config.atol, config.rtol_for(disc.dim) * norm0)
    log.info("Re=%g  Newton 0: |F| = %.3e", re, norm0)
    for it in range(config.max_iterations):
        if record.residuals[-1] <= target:
            record.converged = True
            return state, record
        system = disc.linear_system(state, params, mode, re)
        maybe_export(f"A_gamma_re{re:g}_step{it}", system.A_gamma)
        maybe_export(f"B_re{re:g}_step{it}", system.B)
        P = disc.preconditioner(state, params, system, options, mode, re)
        du, dp, info = solve_linearized(system, P, kcfg, disc.enclosed)
        record.krylov.append(info.iterations)
        record.linear_histories.append(info.history)
        d = np.concatenate([du, dp])
        if config.line_search == "l2":
            Jd = system.matvec(d)
            lam, state, F = _line_search(disc, state, du, dp, F, Jd, params, re)
        else:
            lam = 1.0
            state.u += du
            state.p += dp
            F = disc.residual(state, params, re)
        record.residuals.append(float(np.linalg.norm(F)))
        log.info("Re=%g  Newton %d: |F| = %.3e  (lambda=%.3f, %d Krylov)", re, it + 1,
                 record.residuals[-1], lam, info.iterations)
    record.converged = record.residuals[-1] <= target
    if not record.converged:
        raise NonlinearError(f"Newton did not converge in {config.max_iterations} steps "
                             f"at Re={re}: |F|={record.residuals[-1]:.3e}")
    return state, record


def stokes_initial_guess(disc: Discretization, options: SolverOptions | None = None,
                         re: float = 1.0) -> DiscreteState:
    """Solve the (unaugmented) Stokes problem with the boundary data of the benchmark."""
    options = options or SolverOptions()
    params = disc.params(re, 0.0, 0.0, advection=False)
    state = disc.zero_state()
    F = disc.residual(state, params, re)
    if np.linalg.norm(F) == 0:
        return state
    system = disc.linear_system(state, params, NEWTON, re)
    opts = SolverOptions(gamma=0.0, preconditioner=options.preconditioner
                         if options.preconditioner != "simple" else "al",
                         mg=options.mg, bubble_scaling=options.bubble_scaling,
                         restriction=options.restriction, krylov=options.krylov)
    P = disc.preconditioner(state, params, system, opts, NEWTON, re)
    du, dp, info = solve_linearized(system, P, opts.krylov_for(disc.dim), disc.enclosed)
    state.u += du
    state.p += dp
    log.info("Stokes guess: %d Krylov iterations", info.iterations)
    return state


def run_continuation(disc: Discretization, plan: ContinuationPlan,
                     options: SolverOptions | None = None, config: NewtonConfig | None = None,
                     state: DiscreteState | None = None, report: SolveReport | None = None):
    """Solve each Reynolds number in turn from the previous solution.

    A failing stage is recorded (``converged=False``) and ends the run; the
    report of completed stages is returned together with the last state.
    """
    options = options or SolverOptions()
    report = report or SolveReport(disc.problem.name)
    if state is None:
        state = stokes_initial_guess(disc, options)
    for re in plan.targets:
        rec = StageRecord(re)
        t0 = time.perf_counter()
        try:
            state, rec = newton_solve(disc, state, re, options, config, record=rec)
        except (NonlinearError, ConvergenceError, np.linalg.LinAlgError) as exc:
            rec.converged = False
            rec.message = str(exc)
            rec.wall_time = time.perf_counter() - t0
            report.stages.append(rec)
            log.warning("stage Re=%g failed: %s", re, exc)
            break
        rec.wall_time = time.perf_counter() - t0
        report.stages.append(rec)
        log.info("Re=%g done: %d Newton steps, avg %.2f Krylov", re, rec.newton_steps, rec.average)
    return state, report


__all__ = ["NEWTON", "PICARD", "SolverOptions", "NewtonConfig", "ContinuationPlan",
           "Discretization", "newton_solve", "stokes_initial_guess", "run_continuation",
           "NonlinearError", "LineSearchError"]
