"""Evaluation harness: held-out NDCG, oracle-judged win rate, surrogate
approximation curves, and an eight-way objective comparison report.

Win rates are judged by the hidden oracle utility each response was
generated from; at desk scale there is no external judge model, and the
reports say so.
"""

from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import dataclass, field

import numpy as np

from .data import DataError, Dataset
from .losses import LossKind, LossSpec, approx_ndcg_loss, opo_loss
from .metrics import ZeroGainError, ndcg_at_k
from .scorer import score_response_list
from .trainer import TrainConfig, default_scorer, train

__all__ = [
    "EvalResult",
    "MetricsReport",
    "WIN_RATE_NOTE",
    "CURVE_LABELS",
    "evaluate_ndcg",
    "win_rate",
    "approximation_curve",
    "compare",
    "rows_to_csv",
]

WIN_RATE_NOTE = (
    "win_rate judged by the hidden oracle utility of each scorer's top pick; "
    "no external judge model is involved"
)

# The curve configuration: fixed labels, and a score vector whose first
# entry sweeps while the rest sit at the label values.
CURVE_LABELS = (1.0, 0.8, 0.6, 0.4, 0.2)


@dataclass(frozen=True)
class EvalResult:
    """Mean/sd of NDCG@k over a dataset, with zero-gain lists skipped."""

    mean: float
    sd: float
    evaluated: int
    skipped: int


def evaluate_ndcg(
    scorer,
    dataset: Dataset,
    k: int,
    *,
    reference=None,
    beta: float | None = None,
    gain_mode: str = "power",
) -> EvalResult:
    """Mean NDCG@k of the scorer's rankings over all lists.

    Lists whose top-k ideal gains are all zero have no defined NDCG; they
    are skipped and counted in the result.
    """
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    values = []
    skipped = 0
    for rl in dataset:
        scores = score_response_list(scorer, rl, reference=reference, beta=beta)
        try:
            values.append(ndcg_at_k(rl.labels, scores, k, gain_mode))
        except ZeroGainError:
            skipped += 1
    if not values:
        raise ZeroGainError("every list in the dataset has zero gains")
    arr = np.array(values)
    return EvalResult(
        mean=float(arr.mean()),
        sd=float(arr.std()),
        evaluated=len(values),
        skipped=skipped,
    )


def win_rate(
    candidate,
    baseline,
    dataset: Dataset,
    *,
    reference=None,
    beta: float | None = None,
) -> float:
    """Fraction of lists where the candidate's top pick has higher oracle
    utility than the baseline's; ties (including identical picks) count 0.5."""
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    wins = 0.0
    for rl in dataset:
        cand = int(np.argmax(score_response_list(candidate, rl, reference=reference, beta=beta)))
        base = int(np.argmax(score_response_list(baseline, rl, reference=reference, beta=beta)))
        u_cand = rl.responses[cand].oracle_utility
        u_base = rl.responses[base].oracle_utility
        if u_cand is None or u_base is None:
            raise DataError(f"list {rl.prompt_id!r} lacks oracle_utility; cannot judge wins")
        if u_cand > u_base:
            wins += 1.0
        elif u_cand == u_base:
            wins += 0.5
    return wins / len(dataset)


def approximation_curve(
    kind: str,
    params,
    x_grid=None,
    labels=CURVE_LABELS,
) -> list[dict]:
    """Surrogate-vs-exact NDCG as the top score sweeps through the list.

    For each parameter value (tau for the relaxed-sort surrogate, alpha
    for the sigmoid-rank one) and each x, scores are [x, 0.8, 0.6, 0.4,
    0.2]; rows carry the surrogate value, the exact NDCG step function,
    and their absolute gap.
    """
    if kind not in ("neural", "approx"):
        raise ValueError(f"kind must be 'neural' or 'approx', got {kind!r}")
    psi = np.asarray(labels, dtype=np.float64)
    if x_grid is None:
        x_grid = np.linspace(0.0, 1.0, 101)
    rows = []
    for param in params:
        if param <= 0:
            raise ValueError("curve parameters must be positive")
        spec = (
            LossSpec(kind=LossKind.OPO, tau=float(param))
            if kind == "neural"
            else LossSpec(kind=LossKind.APPROX_NDCG, alpha=float(param))
        )
        for x in x_grid:
            scores = np.array([float(x), *psi[1:]])
            if kind == "neural":
                surrogate = -opo_loss(scores, psi, spec).value
            else:
                surrogate = -approx_ndcg_loss(scores, psi, spec).value
            exact = ndcg_at_k(psi, scores, len(psi))
            rows.append(
                {
                    "kind": kind,
                    "param": float(param),
                    "x": float(x),
                    "surrogate": surrogate,
                    "exact": exact,
                    "abs_error": abs(surrogate - exact),
                }
            )
    return rows


@dataclass
class MetricsReport:
    """Comparison of every objective on one dataset against the shared
    untrained baseline.

    `runtime_seconds` is measured but deliberately left out of the
    serialized forms so identical configurations produce byte-identical
    reports; callers may surface it separately.
    """

    k: int
    baseline: dict
    rows: list[dict]
    config: dict
    notes: str = WIN_RATE_NOTE
    runtime_seconds: float | None = field(default=None, compare=False)

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "baseline": self.baseline,
            "rows": self.rows,
            "config": self.config,
            "notes": self.notes,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_csv(self) -> str:
        baseline_row = {
            "kind": "untrained_baseline",
            "ndcg_mean": self.baseline["ndcg_mean"],
            "ndcg_sd": self.baseline["ndcg_sd"],
            "win_rate": 0.5,
            "final_loss": None,
        }
        return rows_to_csv([baseline_row, *self.rows])


def rows_to_csv(rows: list[dict]) -> str:
    """Serialize dict rows to CSV; floats keep full round-trip precision."""
    if not rows:
        return ""
    fields = list(rows[0])
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(fields)
    for row in rows:
        writer.writerow(["" if row.get(f) is None else repr(row[f]) if isinstance(row[f], float) else row[f] for f in fields])
    return buf.getvalue()


def compare(
    config: TrainConfig,
    train_dataset: Dataset,
    eval_dataset: Dataset,
    k: int | None = None,
    hidden: int = 0,
) -> MetricsReport:
    """Train one scorer per objective from a shared init and report NDCG,
    win rate against that untrained init, and final training loss."""
    if len(train_dataset) == 0 or len(eval_dataset) == 0:
        raise ValueError("datasets must be non-empty")
    started = time.perf_counter()
    if k is None:
        k = min(rl.size for rl in eval_dataset)
    init = default_scorer(train_dataset, seed=config.seed, hidden=hidden)
    reference = init.copy() if train_dataset.mode == "policy" else None
    baseline_eval = evaluate_ndcg(
        init, eval_dataset, k, reference=reference, beta=config.beta
    )
    rows = []
    for kind in LossKind:
        run_config = config.with_updates(loss=config.loss.with_updates(kind=kind))
        run_scorer = init.copy()
        _, history = train(run_config, train_dataset, run_scorer)
        result = evaluate_ndcg(
            run_scorer, eval_dataset, k, reference=reference, beta=config.beta
        )
        rows.append(
            {
                "kind": kind.value,
                "ndcg_mean": result.mean,
                "ndcg_sd": result.sd,
                "win_rate": win_rate(
                    run_scorer, init, eval_dataset, reference=reference, beta=config.beta
                ),
                "final_loss": history.final_loss,
            }
        )
    return MetricsReport(
        k=k,
        baseline={
            "ndcg_mean": baseline_eval.mean,
            "ndcg_sd": baseline_eval.sd,
            "evaluated": baseline_eval.evaluated,
            "skipped": baseline_eval.skipped,
        },
        rows=rows,
        config=config.to_dict(),
        runtime_seconds=time.perf_counter() - started,
    )
