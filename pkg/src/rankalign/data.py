"""Dataset model, JSONL serialization, list subsampling, and a synthetic
generator standing in for a learned reward model.

Responses carry either a feature vector or a token sequence, a label in
[0, 1], and the hidden oracle utility the label was derived from (kept
for win-rate judging only; training never sees it). Lists are stored
pre-sorted by label descending.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np

__all__ = [
    "DataError",
    "ResponseRecord",
    "ResponseList",
    "Dataset",
    "SyntheticConfig",
    "generate_synthetic",
    "presort_descending",
    "subsample_list",
    "load_jsonl",
    "save_jsonl",
    "MIN_LIST_SIZE",
    "MAX_LIST_SIZE",
]

MIN_LIST_SIZE = 2
MAX_LIST_SIZE = 16

MODES = ("feature", "policy")


class DataError(ValueError):
    """Invalid dataset content; carries the source line when known."""

    def __init__(self, message: str, line: int | None = None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


@dataclass(frozen=True, eq=False)
class ResponseRecord:
    """One response: features or tokens, a label, and its hidden utility."""

    id: str
    label: float
    features: np.ndarray | None = None
    tokens: tuple[int, ...] | None = None
    oracle_utility: float | None = None

    def __post_init__(self):
        if not 0.0 <= self.label <= 1.0:
            raise DataError(f"label {self.label} outside [0, 1]")
        if (self.features is None) == (self.tokens is None):
            raise DataError("exactly one of features or tokens must be set")
        if self.features is not None:
            object.__setattr__(
                self, "features", np.asarray(self.features, dtype=np.float64)
            )
        if self.tokens is not None:
            object.__setattr__(self, "tokens", tuple(int(t) for t in self.tokens))

    @property
    def mode(self) -> str:
        return "feature" if self.features is not None else "policy"

    def __eq__(self, other) -> bool:
        if not isinstance(other, ResponseRecord):
            return NotImplemented
        if self.features is not None:
            same_payload = other.features is not None and np.array_equal(
                self.features, other.features
            )
        else:
            same_payload = self.tokens == other.tokens
        return (
            self.id == other.id
            and self.label == other.label
            and same_payload
            and self.oracle_utility == other.oracle_utility
        )


@dataclass(frozen=True, eq=False)
class ResponseList:
    """A prompt's responses, sorted by label descending."""

    prompt_id: str
    responses: tuple[ResponseRecord, ...]
    prompt: tuple[int, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "responses", tuple(self.responses))
        if self.prompt is not None:
            object.__setattr__(self, "prompt", tuple(int(t) for t in self.prompt))
        n = len(self.responses)
        if not MIN_LIST_SIZE <= n <= MAX_LIST_SIZE:
            raise DataError(
                f"list {self.prompt_id!r} has {n} responses, "
                f"expected {MIN_LIST_SIZE}..{MAX_LIST_SIZE}"
            )
        modes = {r.mode for r in self.responses}
        if len(modes) != 1:
            raise DataError(f"list {self.prompt_id!r} mixes feature and token responses")

    @property
    def is_sorted(self) -> bool:
        return not np.any(np.diff(self.labels) > 0)

    @property
    def size(self) -> int:
        return len(self.responses)

    @property
    def mode(self) -> str:
        return self.responses[0].mode

    @property
    def labels(self) -> np.ndarray:
        return np.array([r.label for r in self.responses])

    @property
    def features_matrix(self) -> np.ndarray:
        if self.mode != "feature":
            raise DataError(f"list {self.prompt_id!r} has no features")
        return np.stack([r.features for r in self.responses])

    def __eq__(self, other) -> bool:
        if not isinstance(other, ResponseList):
            return NotImplemented
        return (
            self.prompt_id == other.prompt_id
            and self.prompt == other.prompt
            and self.responses == other.responses
        )


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable collection of response lists, all in one mode."""

    lists: tuple[ResponseList, ...]
    mode: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "lists", tuple(self.lists))
        if self.lists:
            modes = {rl.mode for rl in self.lists}
            if len(modes) != 1:
                raise DataError("dataset mixes feature and policy lists")
            inferred = modes.pop()
            if self.mode is None:
                object.__setattr__(self, "mode", inferred)
            elif self.mode != inferred:
                raise DataError(f"dataset mode {self.mode!r} does not match contents")
        elif self.mode is not None and self.mode not in MODES:
            raise DataError(f"unknown dataset mode {self.mode!r}")

    def __len__(self) -> int:
        return len(self.lists)

    def __iter__(self) -> Iterator[ResponseList]:
        return iter(self.lists)

    def __getitem__(self, i: int) -> ResponseList:
        return self.lists[i]

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return self.mode == other.mode and self.lists == other.lists

    @property
    def feature_dim(self) -> int:
        if self.mode != "feature" or not self.lists:
            raise DataError("feature_dim is only defined for non-empty feature datasets")
        return self.lists[0].responses[0].features.shape[0]


@dataclass(frozen=True)
class SyntheticConfig:
    """Generator settings.

    The hidden utility direction (feature mode) or per-token score table
    (policy mode) is drawn from `direction_seed`, separately from the
    per-list sampling driven by `seed`: datasets generated with the same
    direction_seed share one underlying preference task, so a train/eval
    pair uses equal direction_seed and different seed. `utility_scale`
    spreads utilities so labels saturate toward 0/1 rather than pile up
    mid-range.
    """

    num_lists: int
    list_size: int = 8
    feature_dim: int = 8
    label_noise_sd: float = 0.05
    mode: str = "feature"
    seed: int = 0
    direction_seed: int = 0
    utility_scale: float = 3.0
    vocab_size: int = 16
    max_len: int = 8
    prefix_len: int = 2

    def __post_init__(self):
        if self.num_lists < 1:
            raise ValueError("num_lists must be at least 1")
        if not MIN_LIST_SIZE <= self.list_size <= MAX_LIST_SIZE:
            raise ValueError(f"list_size must be in {MIN_LIST_SIZE}..{MAX_LIST_SIZE}")
        if self.feature_dim < 1:
            raise ValueError("feature_dim must be at least 1")
        if self.label_noise_sd < 0:
            raise ValueError("label_noise_sd must be non-negative")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.max_len < 2:
            raise ValueError("max_len must be at least 2")
        if self.prefix_len < 1:
            raise ValueError("prefix_len must be at least 1")


def _sigmoid(u: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(u))
    return np.where(u >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def generate_synthetic(cfg: SyntheticConfig) -> Dataset:
    """Sample lists whose labels are a noisy sigmoid of a hidden utility.

    Feature mode: utility = direction . features. Policy mode: utility is
    the mean of a fixed per-token score table over the response tokens.
    Labels are clamped to [0, 1]; lists come out pre-sorted. Deterministic
    for a fixed (seed, direction_seed) pair.
    """
    task_rng = np.random.default_rng(cfg.direction_seed)
    rng = np.random.default_rng(cfg.seed)
    if cfg.mode == "feature":
        direction = cfg.utility_scale * task_rng.normal(size=cfg.feature_dim) / math.sqrt(
            cfg.feature_dim
        )
    else:
        token_scores = cfg.utility_scale * task_rng.normal(size=cfg.vocab_size)

    lists = []
    for i in range(cfg.num_lists):
        pid = f"p{i:05d}"
        n = cfg.list_size
        if cfg.mode == "feature":
            feats = rng.normal(size=(n, cfg.feature_dim))
            utilities = feats @ direction
            payloads = [{"features": feats[j]} for j in range(n)]
            prompt = None
        else:
            prompt = tuple(int(t) for t in rng.integers(0, cfg.vocab_size, cfg.prefix_len))
            lengths = rng.integers(2, cfg.max_len + 1, size=n)
            tokens = [
                tuple(int(t) for t in rng.integers(0, cfg.vocab_size, length))
                for length in lengths
            ]
            utilities = np.array([token_scores[list(t)].mean() for t in tokens])
            payloads = [{"tokens": tokens[j]} for j in range(n)]
        noise = rng.normal(0.0, cfg.label_noise_sd, size=n) if cfg.label_noise_sd > 0 else 0.0
        labels = np.clip(_sigmoid(utilities) + noise, 0.0, 1.0)
        records = [
            ResponseRecord(
                id=f"{pid}-r{j}",
                label=float(labels[j]),
                oracle_utility=float(utilities[j]),
                **payloads[j],
            )
            for j in range(n)
        ]
        order = np.lexsort((np.arange(n), -labels))
        lists.append(
            ResponseList(prompt_id=pid, responses=tuple(records[j] for j in order), prompt=prompt)
        )
    return Dataset(tuple(lists), mode=cfg.mode)


def presort_descending(response_list: ResponseList) -> ResponseList:
    """Stable re-sort by label descending; identity on sorted input."""
    labels = response_list.labels
    order = np.lexsort((np.arange(len(labels)), -labels))
    if np.array_equal(order, np.arange(len(labels))):
        return response_list
    return ResponseList(
        prompt_id=response_list.prompt_id,
        responses=tuple(response_list.responses[j] for j in order),
        prompt=response_list.prompt,
    )


def subsample_list(response_list: ResponseList, new_size: int, seed: int) -> ResponseList:
    """Shrink a list to `new_size`, always keeping the best- and
    worst-labeled responses; the middle is sampled without replacement."""
    response_list = presort_descending(response_list)
    n = response_list.size
    if not MIN_LIST_SIZE <= new_size <= n:
        raise ValueError(f"new size must be in {MIN_LIST_SIZE}..{n}, got {new_size}")
    if new_size == n:
        return response_list
    rng = np.random.default_rng(seed)
    middle = rng.choice(np.arange(1, n - 1), size=new_size - 2, replace=False)
    keep = np.concatenate(([0], np.sort(middle), [n - 1]))
    return ResponseList(
        prompt_id=response_list.prompt_id,
        responses=tuple(response_list.responses[j] for j in keep),
        prompt=response_list.prompt,
    )


def _record_to_json(record: ResponseRecord) -> dict:
    out: dict = {"id": record.id, "label": record.label}
    if record.features is not None:
        out["features"] = [float(v) for v in record.features]
    else:
        out["tokens"] = list(record.tokens)
    if record.oracle_utility is not None:
        out["oracle_utility"] = record.oracle_utility
    return out


def save_jsonl(dataset: Dataset, path) -> None:
    """One JSON object per list; floats serialize at full precision."""
    with open(path, "w", encoding="utf-8") as fh:
        for rl in dataset.lists:
            obj = {
                "prompt_id": rl.prompt_id,
                "prompt": list(rl.prompt) if rl.prompt is not None else None,
                "responses": [_record_to_json(r) for r in rl.responses],
            }
            fh.write(json.dumps(obj) + "\n")


def load_jsonl(path) -> Dataset:
    """Parse, validate, and presort a JSONL dataset.

    Malformed lines, out-of-range labels, and undersized lists raise
    DataError carrying the 1-based line number. An empty file gives an
    empty dataset.
    """
    lists = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"invalid JSON ({exc.msg})", line=lineno) from exc
            try:
                records = tuple(
                    ResponseRecord(
                        id=str(r["id"]),
                        label=float(r["label"]),
                        features=r.get("features"),
                        tokens=tuple(r["tokens"]) if "tokens" in r else None,
                        oracle_utility=(
                            float(r["oracle_utility"]) if "oracle_utility" in r else None
                        ),
                    )
                    for r in obj["responses"]
                )
                prompt = obj.get("prompt")
                rl = ResponseList(
                    prompt_id=str(obj["prompt_id"]),
                    responses=records,
                    prompt=tuple(prompt) if prompt is not None else None,
                )
            except DataError as exc:
                raise DataError(str(exc), line=lineno) from exc
            except (KeyError, TypeError, ValueError) as exc:
                raise DataError(f"malformed record ({exc})", line=lineno) from exc
            lists.append(presort_descending(rl))
    return Dataset(tuple(lists))
