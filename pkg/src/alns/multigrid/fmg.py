"""Full multigrid and V-cycles for the augmented momentum block."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..linalg import SparseLU, sparse_lu
from .patches import PatchSet, build_patches, relax
from .transfer import TransferOperator

log = logging.getLogger(__name__)


@dataclass
class MgConfig:
    """Smoothing and cycle settings.

    ``relax_its`` GMRES steps per relaxation (None: 6 in 2D, 10 in 3D); one
    pre- and one post-relaxation per level.
    """

    relax_its: int | None = None
    cycle: str = "fmg"           # or "v"
    pre: int = 1
    post: int = 1

    def iterations(self, dim: int) -> int:
        k = self.relax_its if self.relax_its is not None else (6 if dim == 2 else 10)
        if k < 1:
            raise ValueError("relaxation iterations must be >= 1")
        return k


@dataclass
class MgLevel:
    A: object
    patches: PatchSet | None
    bc: np.ndarray


@dataclass
class MultigridHierarchy:
    """Operators on every level (coarse to fine) and transfers between them.

    ``transfers[l]`` maps level ``l - 1`` to level ``l``; ``transfers[0]``
    is unused.
    """

    levels: list
    transfers: list
    config: MgConfig = field(default_factory=MgConfig)
    dim: int = 2
    coarse_solver: SparseLU | None = None
    history: list = field(default_factory=list)

    def __post_init__(self):
        if self.coarse_solver is None:
            self.coarse_solver = sparse_lu(self.levels[0].A)

    @classmethod
    def build(cls, operators, dofmaps, bcs, transfers, config: MgConfig | None = None):
        levels = [MgLevel(operators[0], None, bcs[0])]
        for A, V, bc in zip(operators[1:], dofmaps[1:], bcs[1:]):
            levels.append(MgLevel(A, build_patches(A, V, bc), bc))
        return cls(levels, [None] + list(transfers), config or MgConfig(), dofmaps[0].mesh.dim)

    @property
    def finest(self) -> MgLevel:
        return self.levels[-1]

    # ------------------------------------------------------------------
    def vcycle(self, level: int, b, x=None):
        if level == 0:
            return self.coarse_solver.solve(b)
        lv = self.levels[level]
        k = self.config.iterations(self.dim)
        T: TransferOperator = self.transfers[level]
        for _ in range(self.config.pre):
            x = relax(lv.A, lv.patches, b, x, k)
        r = b - lv.A @ x if x is not None else np.asarray(b, dtype=float)
        ec = self.vcycle(level - 1, T.restrict(r))
        x = (x if x is not None else 0.0) + T.prolong(ec)
        for _ in range(self.config.post):
            x = relax(lv.A, lv.patches, b, x, k)
        if log.isEnabledFor(logging.DEBUG):
            log.debug("level %d residual %.3e", level, np.linalg.norm(b - lv.A @ x))
        return x

    def fmg(self, b):
        """One full multigrid cycle from a zero initial guess."""
        L = len(self.levels) - 1
        rhs = [None] * (L + 1)
        rhs[L] = np.asarray(b, dtype=float)
        for lv in range(L, 0, -1):
            rhs[lv - 1] = self.transfers[lv].restrict(rhs[lv])
        x = self.coarse_solver.solve(rhs[0])
        for lv in range(1, L + 1):
            x = self.transfers[lv].prolong(x)
            x = self.vcycle(lv, rhs[lv], x)
        return x

    def solve(self, b):
        """Preconditioner action: one FMG (or V) cycle."""
        if self.config.cycle == "fmg":
            return self.fmg(b)
        if self.config.cycle == "v":
            return self.vcycle(len(self.levels) - 1, b)
        raise ValueError(f"unknown cycle {self.config.cycle!r}")

    __call__ = solve

    def contraction(self, b, iterations: int = 4) -> float:
        """Mean residual reduction per cycle of ``x <- x + M(b - A x)`` from ``x = 0``."""
        A = self.finest.A
        b = np.asarray(b, dtype=float)
        x = np.zeros_like(b)
        r0 = np.linalg.norm(b)
        r = b
        for _ in range(iterations):
            x = x + self.solve(r)
            r = b - A @ x
        return float((np.linalg.norm(r) / r0) ** (1.0 / iterations))


def fmg_solve(hierarchy: MultigridHierarchy, rhs, config: MgConfig | None = None):
    if config is not None:
        hierarchy.config = config
    return hierarchy.solve(rhs)
