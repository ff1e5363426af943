"""Exact ranking metrics (gain, discount, DCG@k, NDCG@k) and the smooth
rank estimator behind the sigmoid-based surrogate objective.

Labels follow the list convention used everywhere in this package: sorted
non-increasing, so labels[0] belongs to the best response. Metric values
depend on scores only through the ranking they induce.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "GAIN_MODES",
    "ZeroGainError",
    "gain",
    "discount",
    "rank_assignment",
    "dcg_at_k",
    "max_dcg_at_k",
    "ndcg_at_k",
    "approx_rank",
    "validate_labels",
]

GAIN_MODES = ("power", "linear")


class ZeroGainError(ValueError):
    """Every gain in the truncation window is zero, so NDCG is undefined."""


def gain(label, mode: str = "power"):
    """Per-response gain: 2^label - 1, or the label itself in linear mode."""
    if mode not in GAIN_MODES:
        raise ValueError(f"unknown gain mode {mode!r}")
    label = np.asarray(label, dtype=np.float64)
    out = np.exp2(label) - 1.0 if mode == "power" else label.copy()
    return float(out) if out.ndim == 0 else out


def discount(rank):
    """Positional discount 1/log2(rank + 1); accepts fractional ranks >= 1."""
    rank = np.asarray(rank, dtype=np.float64)
    if np.any(rank < 1.0):
        raise ValueError("ranks must be at least 1")
    out = 1.0 / np.log2(rank + 1.0)
    return float(out) if out.ndim == 0 else out


def validate_labels(labels) -> np.ndarray:
    psi = np.asarray(labels, dtype=np.float64)
    if psi.ndim != 1 or len(psi) == 0:
        raise ValueError("labels must be a non-empty 1-d array")
    if not np.all(np.isfinite(psi)):
        raise ValueError("labels must be finite")
    if np.any(np.diff(psi) > 0):
        raise ValueError("labels must be sorted non-increasing")
    return psi


def _validate_scores(scores, n: int) -> np.ndarray:
    s = np.asarray(scores, dtype=np.float64)
    if s.shape != (n,):
        raise ValueError(f"scores must have shape ({n},), got {s.shape}")
    if not np.all(np.isfinite(s)):
        raise ValueError("scores must be finite")
    return s


def rank_assignment(scores) -> np.ndarray:
    """1-based descending rank of each response; ties go to the lower index."""
    s = np.asarray(scores, dtype=np.float64)
    order = np.lexsort((np.arange(len(s)), -s))
    ranks = np.empty(len(s), dtype=np.int64)
    ranks[order] = np.arange(1, len(s) + 1)
    return ranks


def dcg_at_k(labels, scores, k: int, gain_mode: str = "power") -> float:
    """Discounted cumulative gain of the top k responses under `scores`.

    The k highest-scoring responses contribute their gains at discounts
    D(1)..D(k). At k=K this equals summing every response's gain at the
    discount of its own score rank.
    """
    psi = validate_labels(labels)
    s = _validate_scores(scores, len(psi))
    if not 1 <= k <= len(psi):
        raise ValueError(f"k must be in [1, {len(psi)}], got {k}")
    order = np.lexsort((np.arange(len(s)), -s))
    top = order[:k]
    return float(np.sum(gain(psi[top], gain_mode) * discount(np.arange(1, k + 1))))


def max_dcg_at_k(labels, k: int, gain_mode: str = "power") -> float:
    """DCG of the ideal (label-descending) ranking, truncated at k."""
    psi = validate_labels(labels)
    if not 1 <= k <= len(psi):
        raise ValueError(f"k must be in [1, {len(psi)}], got {k}")
    value = float(np.sum(gain(psi[:k], gain_mode) * discount(np.arange(1, k + 1))))
    if value <= 0.0:
        raise ZeroGainError("all gains in the top k are zero")
    return value


def ndcg_at_k(labels, scores, k: int, gain_mode: str = "power") -> float:
    """dcg_at_k normalized by the ideal ranking; 1.0 when scores sort labels."""
    return dcg_at_k(labels, scores, k, gain_mode) / max_dcg_at_k(labels, k, gain_mode)


def approx_rank(scores, alpha: float, index: int | None = None):
    """Smooth rank estimate 1 + sum_{i != j} sigmoid(alpha * (s_i - s_j)).

    Returns the rank of `index`, or the whole vector when index is None.
    The estimates always sum to K(K+1)/2, like true ranks.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim != 1 or len(s) == 0:
        raise ValueError("scores must be a non-empty 1-d array")
    diffs = alpha * (s[:, None] - s[None, :])
    e = np.exp(-np.abs(diffs))
    sig = np.where(diffs >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    ranks = sig.sum(axis=0) + 0.5  # the diagonal contributes sigmoid(0)=0.5
    return ranks if index is None else float(ranks[index])
