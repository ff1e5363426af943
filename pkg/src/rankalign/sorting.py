"""Differentiable sorting: a temperature-controlled relaxation of the
descending sort permutation, plus Sinkhorn scaling toward doubly stochastic.

Row i of the relaxation is a distribution over which response sits at rank
i. As the temperature goes to zero the matrix approaches the exact sort
permutation (ties broken toward the lower index).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffkernel as dk
from .diffkernel import Node

__all__ = [
    "SinkhornConvergenceError",
    "RelaxedPermutation",
    "ENTRY_FLOOR",
    "hard_sort_matrix",
    "neural_sort",
    "neural_sort_node",
    "sinkhorn_scale",
    "sinkhorn_node",
]

# Entries are floored here before Sinkhorn so exact zeros from saturated
# softmax rows cannot produce 0/0 column sums.
ENTRY_FLOOR = 1e-30


class SinkhornConvergenceError(RuntimeError):
    """Sinkhorn scaling did not reach the requested tolerance."""

    def __init__(self, residual: float, iterations: int):
        super().__init__(
            f"sinkhorn scaling stopped at residual {residual:.3e} "
            f"after {iterations} iterations"
        )
        self.residual = residual
        self.iterations = iterations


def _doubly_stochastic_residual(matrix: np.ndarray) -> float:
    rows = np.abs(matrix.sum(axis=1) - 1.0).max()
    cols = np.abs(matrix.sum(axis=0) - 1.0).max()
    return float(max(rows, cols))


@dataclass(frozen=True)
class RelaxedPermutation:
    """A square row-stochastic relaxation of a sort permutation.

    `residual` is the largest deviation of any row or column sum from 1;
    `scaled` records whether Sinkhorn scaling has been applied. `tau` is
    the temperature the matrix was built with (None for raw matrices fed
    straight into scaling).
    """

    matrix: np.ndarray
    tau: float | None
    scaled: bool = False
    residual: float = 0.0

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError(f"matrix must be square, got shape {m.shape}")
        if np.any(m < -1e-12) or np.any(m > 1.0 + 1e-9):
            raise ValueError("matrix entries must lie in [0, 1]")
        if np.abs(m.sum(axis=1) - 1.0).max() > 1e-9:
            raise ValueError("every row must sum to 1")
        object.__setattr__(self, "matrix", m)

    @property
    def size(self) -> int:
        return self.matrix.shape[0]


def _descending_order(scores: np.ndarray) -> np.ndarray:
    # Stable descending order: ties keep the lower original index first.
    return np.lexsort((np.arange(len(scores)), -scores))


def hard_sort_matrix(scores) -> np.ndarray:
    """Exact descending-sort permutation matrix.

    Row i has a single 1 in the column of the response ranked i-th, so
    matrix @ scores returns the scores sorted descending.
    """
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim != 1 or len(s) == 0:
        raise ValueError("scores must be a non-empty 1-d array")
    n = len(s)
    p = np.zeros((n, n))
    p[np.arange(n), _descending_order(s)] = 1.0
    return p


def _neural_sort_logits(s: np.ndarray, tau: float) -> np.ndarray:
    n = len(s)
    pairwise = np.abs(s[:, None] - s[None, :])
    rowsums = pairwise.sum(axis=1)
    coeff = (n + 1 - 2 * np.arange(1, n + 1)).astype(np.float64)
    return (coeff[:, None] * s[None, :] - rowsums[None, :]) / tau


def neural_sort(scores, tau: float) -> RelaxedPermutation:
    """Row-stochastic relaxation of the descending sort permutation.

    Each row is a softmax over responses, sharper as `tau` shrinks; at
    large `tau` rows flatten toward uniform. The input scale matters only
    relative to `tau`: neural_sort(a*s + b, a*tau) == neural_sort(s, tau).
    """
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim != 1 or len(s) == 0:
        raise ValueError("scores must be a non-empty 1-d array")
    if not np.all(np.isfinite(s)):
        raise ValueError("scores must be finite")
    if tau <= 0:
        raise ValueError("tau must be positive")
    logits = _neural_sort_logits(s, tau)
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    m = e / e.sum(axis=1, keepdims=True)
    return RelaxedPermutation(m, tau=tau, scaled=False, residual=_doubly_stochastic_residual(m))


def neural_sort_node(s: Node, tau: float) -> Node:
    """Graph version of `neural_sort`; returns the bare matrix node."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    n = len(s.data)
    coeff = (n + 1 - 2 * np.arange(1, n + 1)).astype(np.float64)
    col = s.reshape((n, 1))
    row = s.reshape((1, n))
    rowsums = dk.absolute(col - row).sum(axis=1)
    logits = (dk.constant(coeff[:, None]) * row - rowsums.reshape((1, n))) / tau
    return dk.softmax(logits, axis=1)


def sinkhorn_scale(
    relaxed: RelaxedPermutation | np.ndarray,
    max_iters: int = 50,
    tol: float = 1e-6,
    strict: bool = True,
) -> RelaxedPermutation:
    """Alternately normalize columns then rows until doubly stochastic.

    Stops early once every row and column sum is within `tol` of 1. When
    the budget runs out first, `strict=True` raises and `strict=False`
    returns the last iterate with its residual recorded. Each iteration
    ends on the row normalization, so rows of the result always sum to 1.
    """
    if max_iters < 1:
        raise ValueError("max_iters must be at least 1")
    if tol <= 0:
        raise ValueError("tol must be positive")
    tau = relaxed.tau if isinstance(relaxed, RelaxedPermutation) else None
    m = np.asarray(
        relaxed.matrix if isinstance(relaxed, RelaxedPermutation) else relaxed,
        dtype=np.float64,
    )
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"matrix must be square, got shape {m.shape}")
    if np.any(m < 0):
        raise ValueError("matrix entries must be non-negative")
    m = np.maximum(m, ENTRY_FLOOR)
    residual = np.inf
    iterations = 0
    for iterations in range(1, max_iters + 1):
        m = m / m.sum(axis=0, keepdims=True)
        m = m / m.sum(axis=1, keepdims=True)
        residual = _doubly_stochastic_residual(m)
        if residual <= tol:
            break
    if residual > tol and strict:
        raise SinkhornConvergenceError(residual, iterations)
    return RelaxedPermutation(m, tau=tau, scaled=True, residual=residual)


def sinkhorn_node(matrix: Node, iters: int = 50) -> Node:
    """Fixed-budget differentiable Sinkhorn scaling.

    Always runs exactly `iters` column/row normalizations with no early
    exit, so the output is a smooth function of the input everywhere; an
    early exit would make finite differences straddle a discontinuity at
    the iteration-count boundary.
    """
    if iters < 1:
        raise ValueError("iters must be at least 1")
    m = dk.maximum(matrix, ENTRY_FLOOR)
    for _ in range(iters):
        m = m / m.sum(axis=0, keepdims=True)
        m = m / m.sum(axis=1, keepdims=True)
    return m
