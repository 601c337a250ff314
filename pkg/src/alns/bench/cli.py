"""Command-line driver: ``solver <benchmark> [options]``.

Writes ``report.csv`` (one row per continuation stage), ``timings.csv`` and,
for ``mms3d``, ``mms.csv``.  The exit status is 0 iff every requested stage
converged.  Log verbosity is read from ``ALNS_LOG_LEVEL`` (default WARNING).
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .. import _kernels
from ..assembly import NEWTON, PICARD
from ..multigrid import MgConfig
from ..nonlinear import (ContinuationPlan, Discretization, NewtonConfig, SolverOptions,
                         run_continuation)
from .mms import compute_error_norms
from .problems import PROBLEMS, ProblemError, get_problem
from .report import MMSRecord, SolveReport

log = logging.getLogger("alns.bench")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="solver", description=__doc__.splitlines()[0])
    p.add_argument("benchmark", choices=sorted(PROBLEMS))
    p.add_argument("--refinements", type=int, default=1, help="uniform refinements of the coarse mesh")
    p.add_argument("--re-max", type=float, default=100.0, help="last Reynolds number of the continuation")
    p.add_argument("--gamma", type=float, action="append", default=None,
                   help="augmentation parameter (repeatable for mms3d; default 1e4)")
    p.add_argument("--delta-d", type=float, default=None, help="SUPG scaling (default: 1 in 2D, 1/20 in 3D)")
    p.add_argument("--linearization", choices=[NEWTON, PICARD], default=NEWTON)
    p.add_argument("--no-bubble-scaling", action="store_true",
                   help="prolong facet bubbles without the flux-restoring factor")
    p.add_argument("--element", choices=["p1fb", "p2fb"], default=None, help="3D velocity element")
    p.add_argument("--mesh", type=Path, default=None, help="coarse mesh file (bfs benchmarks)")
    p.add_argument("--coarse", type=int, default=None, help="coarse cells per unit direction")
    p.add_argument("--preconditioner", choices=["al", "simple"], default="al")
    p.add_argument("--max-newton", type=int, default=20)
    p.add_argument("--out", type=Path, default=Path("."), help="output directory")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--seed", type=int, default=0,
                   help="seeds numpy's global generator; the solver itself draws no random numbers")
    p.add_argument("--levels", type=int, default=3, help="mms3d: number of meshes, h = 1/2, 1/4, ...")
    p.add_argument("--re", type=float, action="append", default=None,
                   help="Reynolds number (repeatable): the continuation targets, or the "
                        "mms3d Reynolds numbers (default 1)")
    return p


def _problem(args):
    kw = {}
    if args.benchmark in ("ldc3d", "bfs3d", "mms3d") and args.element:
        kw["element"] = args.element
    elif args.element:
        raise ProblemError(f"--element applies to 3D benchmarks only, not {args.benchmark}")
    if args.mesh is not None:
        if not args.benchmark.startswith("bfs"):
            raise ProblemError("--mesh is supported for the bfs benchmarks")
        if not args.mesh.is_file():
            raise ProblemError(f"mesh file {args.mesh} does not exist")
        kw["mesh_file"] = args.mesh
    if args.coarse is not None:
        if args.benchmark.startswith("bfs"):
            kw.update(nx=10 * args.coarse, ny=2 * args.coarse)
        else:
            kw["n"] = args.coarse
    return get_problem(args.benchmark, **kw)


def _options(args, gamma):
    return SolverOptions(gamma=gamma, delta_d=args.delta_d, linearization=args.linearization,
                         preconditioner=args.preconditioner, mg=MgConfig(),
                         bubble_scaling=not args.no_bubble_scaling)


def run_benchmark(args) -> SolveReport:
    """Run one benchmark as described by parsed CLI arguments and write its CSV files."""
    np.random.seed(args.seed)
    problem = _problem(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    gammas = args.gamma or [1e4]
    newton = NewtonConfig(max_iterations=args.max_newton)
    report = SolveReport(problem.name)

    if problem.exact is not None:
        for gamma in gammas:
            for re in args.re or [1.0]:
                for level in range(1, args.levels + 1):
                    disc = Discretization(problem, level, bubble_scaling=not args.no_bubble_scaling)
                    n_before = len(report.stages)
                    state, report = run_continuation(disc, ContinuationPlan([re]),
                                                     _options(args, gamma), newton, report=report)
                    h = 2.0 / (problem.notes.get("n", 2) * 2 ** level)
                    if report.stages[n_before].converged:
                        eu, ep = compute_error_norms(state, problem.exact(re))
                        report.mms.append(MMSRecord(re, gamma, h, eu, ep))
                        log.info("MMS gamma=%g re=%g h=%g: |u-u_h|=%.4e |p-p_h|=%.4e",
                                 gamma, re, h, eu, ep)
        report.write_mms_csv(out / "mms.csv")
    else:
        if len(gammas) > 1:
            raise ProblemError("several --gamma values are only meaningful for mms3d")
        disc = Discretization(problem, args.refinements,
                              bubble_scaling=not args.no_bubble_scaling)
        log.info("%s: %d dofs on %d levels", problem.name, disc.ndofs(), disc.nlevels)
        if args.re:
            plan = ContinuationPlan(sorted(args.re), problem)
        else:
            plan = ContinuationPlan.default(problem.dim, args.re_max, problem)
        _, report = run_continuation(disc, plan, _options(args, gammas[0]), newton, report=report)
    report.write_csv(out / "report.csv")
    report.write_timings(out / "timings.csv")
    return report


def main(argv=None) -> int:
    level = os.environ.get("ALNS_LOG_LEVEL", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.threads < 1:
        parser.error("--threads must be >= 1")
    # BLAS reductions split differently per thread count; keep them serial so
    # reports are bit-identical and let the numba kernels use the threads
    with threadpool_limits(limits=1, user_api="blas"):
        _kernels.set_num_threads(args.threads)
        try:
            report = run_benchmark(args)
        except ProblemError as exc:
            parser.error(str(exc))
    for s in report.stages:
        print(f"{report.benchmark} Re={s.re:g}: newton={s.newton_steps} "
              f"krylov={s.krylov} avg={s.average:.2f} converged={s.converged}")
    for r in report.mms:
        print(f"mms gamma={r.gamma:g} Re={r.re:g} h={r.h:g}: "
              f"|u-u_h|={r.error_u:.4e} |p-p_h|={r.error_p:.4e}")
    return 0 if report.converged else 1


if __name__ == "__main__":
    sys.exit(main())
