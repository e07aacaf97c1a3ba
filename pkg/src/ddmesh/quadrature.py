"""Tensor-product trapezoidal quadrature on uniform node-centered grids."""

from __future__ import annotations

import numpy as np


def axis_weights(n: int, h: float) -> np.ndarray:
    """1D composite trapezoid weights for ``n`` uniformly spaced nodes."""
    w = np.full(n, h)
    w[0] = 0.5 * h
    w[-1] = 0.5 * h
    return w


def weights(counts: tuple[int, ...], spacing: tuple[float, ...]) -> np.ndarray:
    """Full tensor-product weight array, shape ``counts``."""
    w = axis_weights(counts[0], spacing[0])
    for n, h in zip(counts[1:], spacing[1:]):
        w = np.multiply.outer(w, axis_weights(n, h))
    return w


def integrate(values: np.ndarray, spacing: tuple[float, ...]) -> float:
    """Composite trapezoid integral of nodal ``values``."""
    return float(np.sum(values * weights(values.shape, spacing)))


def l2_norm(values: np.ndarray, spacing: tuple[float, ...]) -> float:
    """Trapezoid-weighted discrete L2 norm, ``sqrt(int |v|^2)``."""
    return float(np.sqrt(np.sum(values * values * weights(values.shape, spacing))))
