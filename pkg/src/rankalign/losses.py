"""The eight training objectives as differentiable functions of the score
vector: the relaxed-sort NDCG surrogate, the sigmoid-rank NDCG surrogate,
a Plackett-Luce likelihood, and five pairwise losses.

Every loss accepts either a raw score array (returning a DiffValue whose
gradient is keyed "s[0]".."s[K-1]") or a graph Node (returning a Node, for
composition with a scorer). Labels must arrive sorted non-increasing, the
list convention used package-wide.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace

import numpy as np

from . import diffkernel as dk
from . import metrics
from .diffkernel import DiffValue, Node, ParameterSet
from .sorting import neural_sort_node, sinkhorn_node

__all__ = [
    "LossKind",
    "LossSpec",
    "SINKHORN_LOSS_ITERS",
    "opo_loss",
    "approx_ndcg_loss",
    "list_mle_loss",
    "single_pair_loss",
    "bpr_loss",
    "all_pairs_loss",
    "lambda_rank_loss",
    "slic_loss",
    "compute_loss",
]

# The differentiable path always runs a fixed Sinkhorn budget: an early
# exit would make the loss discontinuous where the iteration count flips.
SINKHORN_LOSS_ITERS = 50

SLIC_MARGIN = 1.0


class LossKind(enum.Enum):
    OPO = "opo"
    APPROX_NDCG = "approx_ndcg"
    LIST_MLE = "list_mle"
    SINGLE_PAIR = "single_pair"
    BPR = "bpr"
    ALL_PAIRS = "all_pairs"
    LAMBDA_RANK = "lambda_rank"
    SLIC = "slic"


@dataclass(frozen=True)
class LossSpec:
    """Which objective to train, plus its knobs.

    `k` truncates the NDCG-style objectives (None means the full list),
    `tau` is the sort-relaxation temperature, `alpha` the sigmoid-rank
    steepness, and `sinkhorn` toggles doubly-stochastic scaling of the
    relaxed permutation.
    """

    kind: LossKind = LossKind.OPO
    k: int | None = None
    tau: float = 1.0
    alpha: float = 25.0
    gain_mode: str = "power"
    sinkhorn: bool = True

    def __post_init__(self):
        if not isinstance(self.kind, LossKind):
            object.__setattr__(self, "kind", LossKind(self.kind))
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.k is not None and self.k < 1:
            raise ValueError("k must be at least 1")
        if self.gain_mode not in metrics.GAIN_MODES:
            raise ValueError(f"unknown gain mode {self.gain_mode!r}")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "k": self.k,
            "tau": self.tau,
            "alpha": self.alpha,
            "gain_mode": self.gain_mode,
            "sinkhorn": self.sinkhorn,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "LossSpec":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown loss config keys: {sorted(unknown)}")
        return cls(**data)

    def with_updates(self, **changes) -> "LossSpec":
        return replace(self, **changes)


def _truncation(spec: LossSpec, n: int) -> int:
    k = spec.k if spec.k is not None else n
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, {n}], got {k}")
    return k


def _labels_for(scores_len: int, labels) -> np.ndarray:
    psi = metrics.validate_labels(labels)
    if len(psi) != scores_len:
        raise ValueError(f"labels and scores differ in length: {len(psi)} vs {scores_len}")
    return psi


def _build(scores, build) -> DiffValue | Node:
    """Run `build` on a score Node; wrap raw arrays as score parameters."""
    if isinstance(scores, Node):
        return build(scores)
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim != 1 or len(s) == 0:
        raise ValueError("scores must be a non-empty 1-d array")
    if not np.all(np.isfinite(s)):
        raise ValueError("scores must be finite")
    names = [f"s[{i}]" for i in range(len(s))]
    params = ParameterSet(zip(names, s))
    return dk.evaluate_with_gradient(lambda p: build(p.vector(names)), params)


def _score_len(scores) -> int:
    return len(scores.data) if isinstance(scores, Node) else len(np.asarray(scores))


def _strict_pairs(psi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # All (i, j) with psi_i > psi_j; with sorted labels this means i < j.
    return np.where(psi[:, None] > psi[None, :])


def opo_loss(scores, labels, spec: LossSpec | None = None) -> DiffValue | Node:
    """Negative relaxed-sort NDCG@k.

    The score vector is turned into a row-stochastic relaxation of its
    sort permutation at temperature `spec.tau`, optionally Sinkhorn-scaled
    toward doubly stochastic, and applied to the gains; the top-k expected
    gains are discounted, summed, and normalized by maxDCG@k. With
    non-negative gains and scaling on, values lie in [-1, 0], and as tau
    shrinks the loss approaches exact -NDCG@k.
    """
    spec = spec if spec is not None else LossSpec(kind=LossKind.OPO)
    psi = _labels_for(_score_len(scores), labels)
    k = _truncation(spec, len(psi))
    gains = metrics.gain(psi, spec.gain_mode)
    norm = metrics.max_dcg_at_k(psi, k, spec.gain_mode)
    disc = metrics.discount(np.arange(1, k + 1))

    def build(s: Node) -> Node:
        p = neural_sort_node(s, spec.tau)
        if spec.sinkhorn:
            p = sinkhorn_node(p, SINKHORN_LOSS_ITERS)
        sorted_gains = dk.matvec(p, dk.constant(np.atleast_1d(gains)))
        return -(sorted_gains[0:k] * dk.constant(disc)).sum() / norm

    return _build(scores, build)


def approx_ndcg_loss(scores, labels, spec: LossSpec | None = None) -> DiffValue | Node:
    """Negative NDCG@k with sigmoid-approximated ranks.

    Each response's rank is estimated as 1 + sum of sigmoid(alpha * score
    differences); discounts are evaluated at those fractional ranks. The
    sum runs over the k best-labeled responses.
    """
    spec = spec if spec is not None else LossSpec(kind=LossKind.APPROX_NDCG)
    psi = _labels_for(_score_len(scores), labels)
    n = len(psi)
    k = _truncation(spec, n)
    gains = np.atleast_1d(metrics.gain(psi, spec.gain_mode))
    norm = metrics.max_dcg_at_k(psi, k, spec.gain_mode)

    def build(s: Node) -> Node:
        diffs = (s.reshape((n, 1)) - s.reshape((1, n))) * spec.alpha
        ranks = dk.sigmoid(diffs).sum(axis=0) + 0.5  # diagonal adds sigmoid(0)
        disc = math.log(2.0) / dk.log(ranks + 1.0)
        return -(dk.constant(gains[:k]) * disc[0:k]).sum() / norm

    return _build(scores, build)


def list_mle_loss(scores, labels=None) -> DiffValue | Node:
    """Negative Plackett-Luce log-likelihood of the label order.

    Scores arrive in label order, so the target permutation is the
    identity: -sum_t [s_t - logsumexp(s_t..s_K)]. Labels are accepted for
    interface uniformity but only their order convention matters.
    """
    n = _score_len(scores)
    if labels is not None:
        _labels_for(n, labels)

    def build(s: Node) -> Node:
        total = dk.constant(0.0)
        for t in range(n):
            total = total + (dk.logsumexp(s[t:]) - s[t])
        return total

    return _build(scores, build)


def single_pair_loss(scores) -> DiffValue | Node:
    """-log sigmoid(s_1 - s_K): best-labeled against worst-labeled."""
    n = _score_len(scores)
    if n < 2:
        raise ValueError("need at least 2 responses")
    return _build(scores, lambda s: -dk.log_sigmoid(s[0] - s[n - 1]))


def bpr_loss(scores) -> DiffValue | Node:
    """Mean of -log sigmoid(s_1 - s_j) over all other responses j."""
    n = _score_len(scores)
    if n < 2:
        raise ValueError("need at least 2 responses")
    return _build(scores, lambda s: (-dk.log_sigmoid(s[0] - s[1:])).mean())


def all_pairs_loss(scores, labels) -> DiffValue | Node:
    """Sum of -log sigmoid(s_i - s_j) over strictly-preferred pairs, over C(K,2).

    The normalizer stays C(K,2) even when label ties remove pairs, so tied
    pairs dilute rather than reweight the rest.
    """
    psi = _labels_for(_score_len(scores), labels)
    n = len(psi)
    if n < 2:
        raise ValueError("need at least 2 responses")
    ii, jj = _strict_pairs(psi)
    npairs = n * (n - 1) // 2
    if len(ii) == 0:
        return _build(scores, lambda s: dk.constant(0.0))
    return _build(scores, lambda s: (-dk.log_sigmoid(s[ii] - s[jj])).sum() / npairs)


def lambda_rank_loss(scores, labels, gain_mode: str = "power") -> DiffValue | Node:
    """Pairwise logistic loss weighted by the NDCG swap cost of each pair.

    The weight |G_i - G_j| * |D(rank_i) - D(rank_j)| uses the ranks induced
    by the current scores and is treated as a constant: differentiating
    through discrete ranks is undefined, so gradients flow only through
    the score differences.
    """
    psi = _labels_for(_score_len(scores), labels)
    n = len(psi)
    if n < 2:
        raise ValueError("need at least 2 responses")
    ii, jj = _strict_pairs(psi)
    npairs = n * (n - 1) // 2
    if len(ii) == 0:
        return _build(scores, lambda s: dk.constant(0.0))
    gains = np.atleast_1d(metrics.gain(psi, gain_mode))

    def build(s: Node) -> Node:
        disc = metrics.discount(metrics.rank_assignment(s.data))
        delta = np.abs(gains[ii] - gains[jj]) * np.abs(disc[ii] - disc[jj])
        return (dk.constant(delta) * -dk.log_sigmoid(s[ii] - s[jj])).sum() / npairs

    return _build(scores, build)


def slic_loss(scores, labels) -> DiffValue | Node:
    """Mean hinge max(0, 1 - (s_i - s_j)) over strictly-preferred pairs,
    normalized by C(K,2). The margin is 1 in score units; rescale scores
    (via beta) rather than the margin to move it."""
    psi = _labels_for(_score_len(scores), labels)
    n = len(psi)
    if n < 2:
        raise ValueError("need at least 2 responses")
    ii, jj = _strict_pairs(psi)
    npairs = n * (n - 1) // 2
    if len(ii) == 0:
        return _build(scores, lambda s: dk.constant(0.0))
    return _build(
        scores,
        lambda s: dk.maximum(SLIC_MARGIN - (s[ii] - s[jj]), 0.0).sum() / npairs,
    )


def compute_loss(scores, labels, spec: LossSpec) -> DiffValue | Node:
    """Dispatch to the objective named by `spec.kind`."""
    kind = spec.kind
    if kind is LossKind.OPO:
        return opo_loss(scores, labels, spec)
    if kind is LossKind.APPROX_NDCG:
        return approx_ndcg_loss(scores, labels, spec)
    if kind is LossKind.LIST_MLE:
        return list_mle_loss(scores, labels)
    if kind is LossKind.SINGLE_PAIR:
        return single_pair_loss(scores)
    if kind is LossKind.BPR:
        return bpr_loss(scores)
    if kind is LossKind.ALL_PAIRS:
        return all_pairs_loss(scores, labels)
    if kind is LossKind.LAMBDA_RANK:
        return lambda_rank_loss(scores, labels, spec.gain_mode)
    if kind is LossKind.SLIC:
        return slic_loss(scores, labels)
    raise ValueError(f"unknown loss kind {kind!r}")
