"""Robust multigrid for the augmented momentum block."""
from .fmg import MgConfig, MgLevel, MultigridHierarchy, fmg_solve
from .patches import PatchError, PatchSet, apply_star_smoother, build_patches, relax
from .transfer import (BUBBLE_FLUX_RATIO, LevelTransfer, TransferError, TransferOperator,
                       build_transfer,
                       check_local_solvability)

__all__ = ["MgConfig", "MgLevel", "MultigridHierarchy", "fmg_solve", "PatchError", "PatchSet",
           "apply_star_smoother", "build_patches", "relax", "BUBBLE_FLUX_RATIO", "TransferError",
           "TransferOperator", "LevelTransfer", "build_transfer", "check_local_solvability"]
