"""Augmented-Lagrangian Navier-Stokes solver with a robust patch multigrid."""
from __future__ import annotations

__version__ = "0.1.0"
