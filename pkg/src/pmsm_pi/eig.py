"""Eigenvalues of the small symmetric matrices of the gain certificates."""

from __future__ import annotations

import math

import numpy as np


def eigvalsh2(a: float, b: float, c: float) -> tuple[float, float]:
    """Eigenvalues of ``[[a, b], [b, c]]`` in ascending order."""
    mean = 0.5 * (a + c)
    radius = math.hypot(0.5 * (a - c), b)
    return mean - radius, mean + radius


def eigvalsh3(m) -> tuple[float, float, float]:
    """Eigenvalues of a real symmetric 3x3 matrix in ascending order (LAPACK)."""
    w = np.linalg.eigvalsh(np.asarray(m, dtype=float))
    return float(w[0]), float(w[1]), float(w[2])


def min_eig3(m) -> float:
    return eigvalsh3(m)[0]
