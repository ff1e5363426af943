"""Score producers: a small feature scorer and a bigram toy policy whose
reward score is the temperature-scaled log-likelihood ratio against a
frozen reference.

Both keep their weights in a ParameterSet and expose two paths: *_node
builders for training graphs, and plain-float scoring for evaluation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import diffkernel as dk
from .diffkernel import DiffValue, Node, ParamContext, ParameterSet

__all__ = [
    "RewardScoreConfig",
    "FeatureScorer",
    "ToyPolicy",
    "score_features",
    "sequence_log_prob",
    "reward_score",
    "score_response_list",
    "save_checkpoint",
    "load_checkpoint",
]

CHECKPOINT_HEADER = "#rankalign-checkpoint v1"


@dataclass(frozen=True)
class RewardScoreConfig:
    """Scale beta applied to the policy/reference log-likelihood ratio."""

    beta: float = 0.1

    def __post_init__(self):
        if self.beta <= 0:
            raise ValueError("beta must be positive")


def _uniform_init(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class FeatureScorer:
    """Linear scorer over response features, optionally with one tanh layer.

    Parameter names are stable across a run: "w[i]"/"b" for the linear
    form, "w1[h,i]"/"b1[h]"/"w2[h]"/"b2" with a hidden layer of width H.
    """

    def __init__(self, params: ParameterSet, input_dim: int, hidden: int = 0):
        if input_dim < 1:
            raise ValueError("input_dim must be at least 1")
        if hidden < 0:
            raise ValueError("hidden width must be non-negative")
        self.params = params
        self.input_dim = input_dim
        self.hidden = hidden
        for name in self._weight_names():
            if name not in params:
                raise ValueError(f"missing parameter {name!r}")

    def _weight_names(self) -> list[str]:
        d, h = self.input_dim, self.hidden
        if h == 0:
            return [f"w[{i}]" for i in range(d)] + ["b"]
        names = [f"w1[{j},{i}]" for j in range(h) for i in range(d)]
        names += [f"b1[{j}]" for j in range(h)]
        names += [f"w2[{j}]" for j in range(h)]
        names.append("b2")
        return names

    @classmethod
    def create(cls, input_dim: int, hidden: int = 0, seed: int = 0) -> "FeatureScorer":
        """Seeded init: weights uniform in +-1/sqrt(fan_in), biases zero."""
        rng = np.random.default_rng(seed)
        values: dict[str, float] = {}
        if hidden == 0:
            w = _uniform_init(rng, input_dim, input_dim)
            values.update({f"w[{i}]": w[i] for i in range(input_dim)})
            values["b"] = 0.0
        else:
            w1 = _uniform_init(rng, (hidden, input_dim), input_dim)
            w2 = _uniform_init(rng, hidden, hidden)
            values.update(
                {f"w1[{j},{i}]": w1[j, i] for j in range(hidden) for i in range(input_dim)}
            )
            values.update({f"b1[{j}]": 0.0 for j in range(hidden)})
            values.update({f"w2[{j}]": w2[j] for j in range(hidden)})
            values["b2"] = 0.0
        return cls(ParameterSet(values), input_dim, hidden)

    def copy(self) -> "FeatureScorer":
        return FeatureScorer(self.params.copy(), self.input_dim, self.hidden)

    def _check_features(self, features) -> np.ndarray:
        x = np.asarray(features, dtype=np.float64)
        if x.shape[-1] != self.input_dim:
            raise ValueError(
                f"feature dimension {x.shape[-1]} does not match input_dim {self.input_dim}"
            )
        return x

    def scores_node(self, p: ParamContext, features_matrix) -> Node:
        """Graph of per-row scores for an (n, input_dim) feature matrix."""
        x = np.atleast_2d(self._check_features(features_matrix))
        d, h = self.input_dim, self.hidden
        if h == 0:
            w = p.vector([f"w[{i}]" for i in range(d)])
            return dk.matvec(dk.constant(x), w) + p.scalar("b")
        w1 = p.vector([f"w1[{j},{i}]" for j in range(h) for i in range(d)]).reshape((h, d))
        b1 = p.vector([f"b1[{j}]" for j in range(h)])
        w2 = p.vector([f"w2[{j}]" for j in range(h)])
        rows = [
            (dk.tanh(dk.matvec(w1, dk.constant(row)) + b1) * w2).sum() for row in x
        ]
        return dk.stack(rows) + p.scalar("b2")

    def score_value(self, features) -> float:
        """Plain forward pass for one feature vector."""
        x = self._check_features(features)
        v = self.params
        if self.hidden == 0:
            w = np.array([v[f"w[{i}]"] for i in range(self.input_dim)])
            return float(x @ w + v["b"])
        h, d = self.hidden, self.input_dim
        w1 = np.array([[v[f"w1[{j},{i}]"] for i in range(d)] for j in range(h)])
        b1 = np.array([v[f"b1[{j}]"] for j in range(h)])
        w2 = np.array([v[f"w2[{j}]"] for j in range(h)])
        return float(np.tanh(w1 @ x + b1) @ w2 + v["b2"])


def score_features(scorer: FeatureScorer, features) -> DiffValue:
    """Score one feature vector, differentiated w.r.t. the scorer weights."""
    x = scorer._check_features(np.asarray(features, dtype=np.float64))
    if x.ndim != 1:
        raise ValueError("features must be a 1-d vector")
    return dk.evaluate_with_gradient(
        lambda p: scorer.scores_node(p, x[None, :])[0], scorer.params
    )


class ToyPolicy:
    """Bigram policy over a small vocabulary.

    Each token is predicted from the previous token via a softmax over
    per-context logits; a dedicated start context covers sequences given
    no prefix. Parameter names are "logit[c,t]" with context V meaning
    start-of-sequence.
    """

    def __init__(self, params: ParameterSet, vocab_size: int = 16, max_len: int = 8):
        if vocab_size < 2:
            raise ValueError("vocab_size must be at least 2")
        if max_len < 1:
            raise ValueError("max_len must be at least 1")
        self.params = params
        self.vocab_size = vocab_size
        self.max_len = max_len
        for c in range(vocab_size + 1):
            for t in range(vocab_size):
                if f"logit[{c},{t}]" not in params:
                    raise ValueError(f"missing parameter logit[{c},{t}]")

    @classmethod
    def create(cls, vocab_size: int = 16, max_len: int = 8, seed: int = 0) -> "ToyPolicy":
        rng = np.random.default_rng(seed)
        table = _uniform_init(rng, (vocab_size + 1, vocab_size), vocab_size)
        values = {
            f"logit[{c},{t}]": table[c, t]
            for c in range(vocab_size + 1)
            for t in range(vocab_size)
        }
        return cls(ParameterSet(values), vocab_size, max_len)

    def copy(self) -> "ToyPolicy":
        return ToyPolicy(self.params.copy(), self.vocab_size, self.max_len)

    def _row_names(self, context: int) -> list[str]:
        return [f"logit[{context},{t}]" for t in range(self.vocab_size)]

    def _check_tokens(self, tokens: Sequence[int], prefix: Sequence[int]) -> tuple[int, ...]:
        toks = tuple(int(t) for t in tokens)
        if len(toks) > self.max_len:
            raise ValueError(f"sequence length {len(toks)} exceeds max_len {self.max_len}")
        for t in (*prefix, *toks):
            if not 0 <= t < self.vocab_size:
                raise ValueError(f"token {t} outside vocabulary of size {self.vocab_size}")
        return toks

    def _contexts(self, tokens: tuple[int, ...], prefix: Sequence[int]) -> list[int]:
        prev = int(prefix[-1]) if len(prefix) else self.vocab_size
        contexts = []
        for t in tokens:
            contexts.append(prev)
            prev = t
        return contexts

    def log_prob_node(self, p: ParamContext, tokens: Sequence[int], prefix: Sequence[int] = ()) -> Node:
        toks = self._check_tokens(tokens, prefix)
        total = dk.constant(0.0)
        for ctx, tok in zip(self._contexts(toks, prefix), toks):
            row = p.vector(self._row_names(ctx))
            total = total + (row[tok] - dk.logsumexp(row))
        return total

    def log_prob_value(self, tokens: Sequence[int], prefix: Sequence[int] = ()) -> float:
        toks = self._check_tokens(tokens, prefix)
        total = 0.0
        for ctx, tok in zip(self._contexts(toks, prefix), toks):
            row = np.array([self.params[n] for n in self._row_names(ctx)])
            m = row.max()
            total += row[tok] - (m + math.log(np.exp(row - m).sum()))
        return total


def sequence_log_prob(policy: ToyPolicy, tokens: Sequence[int], prefix: Sequence[int] = ()) -> DiffValue:
    """Log-probability of `tokens` under the policy, differentiated w.r.t.
    its logits. An empty sequence has log-probability 0."""
    return dk.evaluate_with_gradient(
        lambda p: policy.log_prob_node(p, tokens, prefix), policy.params
    )


def reward_score(
    policy: ToyPolicy,
    ref: ToyPolicy,
    tokens: Sequence[int],
    cfg: RewardScoreConfig,
    prefix: Sequence[int] = (),
) -> DiffValue:
    """beta * (log pi(tokens) - log pi_ref(tokens)).

    The reference term enters as a constant, so the gradient flows only
    through the trainable policy. Identical policies score 0 exactly.
    """
    if ref.vocab_size != policy.vocab_size:
        raise ValueError("policy and reference must share a vocabulary")
    ref_lp = ref.log_prob_value(tokens, prefix)
    return dk.evaluate_with_gradient(
        lambda p: (policy.log_prob_node(p, tokens, prefix) - ref_lp) * cfg.beta,
        policy.params,
    )


def score_response_list(scorer, response_list, *, reference: ToyPolicy | None = None, beta: float | None = None) -> np.ndarray:
    """Plain-float scores for every response in a list.

    Feature mode needs only the scorer; policy mode needs the frozen
    reference and beta to form the log-likelihood-ratio reward.
    """
    if isinstance(scorer, FeatureScorer):
        return np.array([scorer.score_value(r.features) for r in response_list.responses])
    if isinstance(scorer, ToyPolicy):
        if reference is None or beta is None:
            raise ValueError("policy scoring needs a reference policy and beta")
        prefix = response_list.prompt or ()
        return np.array(
            [
                beta * (scorer.log_prob_value(r.tokens, prefix) - reference.log_prob_value(r.tokens, prefix))
                for r in response_list.responses
            ]
        )
    raise TypeError(f"unsupported scorer type {type(scorer).__name__}")


def save_checkpoint(scorer, path) -> None:
    """Write a scorer or policy as a flat name=value text map."""
    lines = [CHECKPOINT_HEADER]
    if isinstance(scorer, FeatureScorer):
        lines += [
            "kind=feature",
            f"input_dim={scorer.input_dim}",
            f"hidden={scorer.hidden}",
        ]
    elif isinstance(scorer, ToyPolicy):
        lines += [
            "kind=policy",
            f"vocab_size={scorer.vocab_size}",
            f"max_len={scorer.max_len}",
        ]
    else:
        raise TypeError(f"unsupported scorer type {type(scorer).__name__}")
    lines += [f"{name}={value!r}" for name, value in scorer.params.as_dict().items()]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_checkpoint(path):
    """Inverse of save_checkpoint; returns a FeatureScorer or ToyPolicy."""
    with open(path, encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    if not lines or lines[0] != CHECKPOINT_HEADER:
        raise ValueError(f"{path}: not a rankalign checkpoint")
    fields: dict[str, str] = {}
    for ln in lines[1:]:
        if not ln:
            continue
        key, _, value = ln.partition("=")
        fields[key] = value
    kind = fields.pop("kind", None)
    if kind == "feature":
        input_dim = int(fields.pop("input_dim"))
        hidden = int(fields.pop("hidden"))
        params = ParameterSet({k: float(v) for k, v in fields.items()})
        return FeatureScorer(params, input_dim, hidden)
    if kind == "policy":
        vocab_size = int(fields.pop("vocab_size"))
        max_len = int(fields.pop("max_len"))
        params = ParameterSet({k: float(v) for k, v in fields.items()})
        return ToyPolicy(params, vocab_size, max_len)
    raise ValueError(f"{path}: unknown checkpoint kind {kind!r}")
