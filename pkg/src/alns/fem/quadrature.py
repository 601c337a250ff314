"""Collapsed-coordinate (conical product) quadrature on simplices."""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi


@dataclass(frozen=True)
class QuadratureRule:
    """Points in barycentric coordinates; weights sum to the reference volume 1/dim!."""

    points: np.ndarray
    weights: np.ndarray
    degree: int

    @property
    def dim(self) -> int:
        return self.points.shape[1] - 1

    def __len__(self):
        return len(self.weights)


def _gauss_jacobi01(n: int, alpha: int):
    # nodes on [0, 1] for the weight (1 - u)^alpha
    t, w = roots_jacobi(n, alpha, 0)
    return (1 + t) / 2, w / 2 ** (alpha + 1)


@lru_cache(maxsize=None)
def simplex_rule(dim: int, degree: int) -> QuadratureRule:
    """Rule exact for polynomials of total degree ``degree`` on the reference simplex."""
    if dim not in (1, 2, 3):
        raise ValueError(f"unsupported simplex dimension {dim}")
    n = max(1, (degree + 2) // 2)
    if dim == 1:
        x, w = _gauss_jacobi01(n, 0)
        pts = x[:, None]
    elif dim == 2:
        u, wu = _gauss_jacobi01(n, 1)
        v, wv = _gauss_jacobi01(n, 0)
        U, V = np.meshgrid(u, v, indexing="ij")
        pts = np.stack([U, V * (1 - U)], axis=-1).reshape(-1, 2)
        w = np.outer(wu, wv).reshape(-1)
    else:
        u, wu = _gauss_jacobi01(n, 2)
        v, wv = _gauss_jacobi01(n, 1)
        s, ws = _gauss_jacobi01(n, 0)
        U, V, S = np.meshgrid(u, v, s, indexing="ij")
        pts = np.stack([U, V * (1 - U), S * (1 - U) * (1 - V)], axis=-1).reshape(-1, 3)
        w = np.einsum("i,j,k->ijk", wu, wv, ws).reshape(-1)
    bary = np.concatenate([1 - pts.sum(axis=1, keepdims=True), pts], axis=1)
    assert abs(w.sum() - 1 / math.factorial(dim)) < 1e-13
    return QuadratureRule(bary, w, degree)
