"""Acceptance gate: ten executable checks, one test per criterion.

Each test pins a property of the finished toolkit — frozen reference
values for the relaxed sort, exactness limits, gradient correctness for
every objective, probabilistic normalization, end-to-end learning, and
CLI determinism — at the stated tolerance and runtime budget. Run with
`pytest -v tests/test_acceptance.py` for one pass/fail line per check.
"""

from __future__ import annotations

import itertools
import math
from time import perf_counter

import numpy as np
import pytest

from rankalign import diffkernel as dk
from rankalign.cli import main
from rankalign.data import SyntheticConfig, generate_synthetic
from rankalign.harness import approximation_curve, compare
from rankalign.losses import (
    LossKind,
    LossSpec,
    approx_ndcg_loss,
    bpr_loss,
    compute_loss,
    list_mle_loss,
    opo_loss,
    single_pair_loss,
)
from rankalign.metrics import discount, gain, max_dcg_at_k, ndcg_at_k
from rankalign.scorer import FeatureScorer, ToyPolicy
from rankalign.sorting import hard_sort_matrix, neural_sort, sinkhorn_scale
from rankalign.trainer import TrainConfig


def _descending_labels(rng, k):
    return np.sort(rng.uniform(0.0, 1.0, k))[::-1].copy()


def _gapped_scores(rng, k, gap=0.05):
    """Random scores whose sorted gaps are at least `gap`, so a very cold
    relaxation resolves every pair."""
    base = np.sort(rng.uniform(0.0, 1.0, k)) + gap * np.arange(k)
    return rng.permutation(base)


def test_01_relaxed_sort_matches_frozen_reference_values():
    """sinkhorn-scaled neural sort of [9, 1, 5, 2] at three temperatures."""
    started = perf_counter()
    scores = np.array([9.0, 1.0, 5.0, 2.0])
    expected = {
        0.01: np.array([9.0000, 5.0000, 2.0000, 1.0000]),
        1.0: np.array([8.9282, 4.9420, 1.8604, 1.2643]),
        10.0: np.array([6.6862, 4.8452, 3.2129, 2.2557]),
    }
    for tau, want in expected.items():
        relaxed = neural_sort(scores, tau)
        scaled = sinkhorn_scale(relaxed, max_iters=50, tol=1e-6, strict=False)
        got = scaled.matrix @ scores
        assert np.max(np.abs(got - want)) <= 1e-3, f"tau={tau}: {got} != {want}"
    assert perf_counter() - started < 1.0


def test_02_cold_temperature_recovers_exact_ndcg():
    """opo_loss at tau=1e-3 negates NDCG on 200 gapped random instances,
    and the loss formula evaluated on the hard permutation IS NDCG."""
    started = perf_counter()
    rng = np.random.default_rng(202)
    worst = 0.0
    for _ in range(200):
        k = int(rng.integers(2, 9))
        labels = _descending_labels(rng, k)
        scores = _gapped_scores(rng, k)
        value = opo_loss(scores, labels, LossSpec(kind="opo", tau=1e-3, k=k)).value
        worst = max(worst, abs(value + ndcg_at_k(labels, scores, k)))
    assert worst <= 1e-3, f"worst |loss + ndcg| = {worst:.3e}"

    rng = np.random.default_rng(203)
    worst = 0.0
    for _ in range(50):
        k = int(rng.integers(2, 9))
        labels = _descending_labels(rng, k)
        scores = _gapped_scores(rng, k)
        perm = hard_sort_matrix(scores)
        gains = np.array([gain(l) for l in labels])
        discounts = np.array([discount(j) for j in range(1, k + 1)])
        hard_value = float(np.sum((perm @ gains) * discounts)) / max_dcg_at_k(labels, k)
        worst = max(worst, abs(hard_value - ndcg_at_k(labels, scores, k)))
    assert worst <= 1e-12, f"worst hard-permutation gap = {worst:.3e}"
    assert perf_counter() - started < 10.0


def _feature_gradient_case(rng, k, spec):
    feats = rng.normal(size=(k, 3))
    labels = _descending_labels(rng, k)
    scorer = FeatureScorer.create(3, seed=int(rng.integers(2**31)))

    def expr(p):
        return compute_loss(scorer.scores_node(p, feats), labels, spec)

    return scorer.params, expr


def _policy_gradient_case(rng, k, spec):
    policy = ToyPolicy.create(vocab_size=4, max_len=4, seed=int(rng.integers(2**31)))
    reference = ToyPolicy.create(vocab_size=4, max_len=4, seed=int(rng.integers(2**31)))
    prefix = tuple(int(t) for t in rng.integers(0, 4, 2))
    seqs = [
        tuple(int(t) for t in rng.integers(0, 4, int(rng.integers(2, 5))))
        for _ in range(k)
    ]
    ref_lp = [reference.log_prob_value(t, prefix) for t in seqs]
    labels = _descending_labels(rng, k)
    beta = 0.1

    def expr(p):
        s = dk.stack(
            [
                (policy.log_prob_node(p, t, prefix) - lp) * beta
                for t, lp in zip(seqs, ref_lp)
            ]
        )
        return compute_loss(s, labels, spec)

    return policy.params, expr


def test_03_every_loss_passes_finite_difference_checks():
    """100 seeded instances per objective, K in {2, 4, 8}, alternating
    feature- and policy-mode scorers; gradients match central finite
    differences to 1e-4 relative (1e-8 floor)."""
    started = perf_counter()
    sizes = (2, 4, 8)
    for kind_index, kind in enumerate(LossKind):
        spec = LossSpec(kind=kind)
        rng = np.random.default_rng(3000 + kind_index)
        for i in range(100):
            k = sizes[i % 3]
            build = _feature_gradient_case if i % 2 == 0 else _policy_gradient_case
            params, expr = build(rng, k, spec)
            dv = dk.evaluate_with_gradient(expr, params)
            fd = dk.finite_difference_gradient(expr, params)
            for name in params.ids():
                an, num = dv.gradient[name], fd[name]
                tol = max(1e-8, 1e-4 * max(abs(an), abs(num)))
                assert abs(an - num) <= tol, (
                    f"{kind.value} instance {i} ({build.__name__}, K={k}) "
                    f"param {name}: analytic {an:.6e} vs fd {num:.6e}"
                )
    assert perf_counter() - started < 60.0


def test_04_plackett_luce_probabilities_sum_to_one():
    """exp(-list_mle_loss) over all 24 orderings of 4 scores is a
    normalized distribution."""
    for seed in range(5):
        rng = np.random.default_rng(400 + seed)
        scores = rng.normal(size=4)
        total = sum(
            math.exp(-list_mle_loss(scores[list(perm)]).value)
            for perm in itertools.permutations(range(4))
        )
        assert abs(total - 1.0) <= 1e-8, f"seed {seed}: sum = {total!r}"


def test_05_bpr_is_the_mean_of_its_pairs():
    """bpr_loss decomposes into the mean of single_pair_loss over the
    (best, other) pairs it is defined on."""
    for seed in range(20):
        rng = np.random.default_rng(500 + seed)
        k = int(rng.integers(2, 9))
        scores = rng.normal(size=k)
        pairs = [
            single_pair_loss(np.array([scores[0], scores[j]])).value
            for j in range(1, k)
        ]
        gap = abs(bpr_loss(scores).value - float(np.mean(pairs)))
        assert gap <= 1e-12, f"seed {seed}: gap = {gap:.3e}"


def test_06_sharpness_and_reward_scale_trade_off_exactly():
    """approx_ndcg_loss is invariant under (alpha, beta) -> (4*alpha, beta/4)
    when scores are beta times a policy/reference log-ratio."""
    alpha, beta = 25.0, 0.1
    for seed in range(20):
        rng = np.random.default_rng(600 + seed)
        k = int(rng.integers(2, 9))
        policy = ToyPolicy.create(vocab_size=4, max_len=4, seed=seed)
        reference = ToyPolicy.create(vocab_size=4, max_len=4, seed=seed + 1000)
        prefix = tuple(int(t) for t in rng.integers(0, 4, 2))
        log_ratio = np.array(
            [
                policy.log_prob_value(t, prefix) - reference.log_prob_value(t, prefix)
                for t in (
                    tuple(int(v) for v in rng.integers(0, 4, int(rng.integers(2, 5))))
                    for _ in range(k)
                )
            ]
        )
        labels = _descending_labels(rng, k)
        a = approx_ndcg_loss(
            beta * log_ratio, labels, LossSpec(kind="approx_ndcg", alpha=alpha)
        ).value
        b = approx_ndcg_loss(
            (beta / 4.0) * log_ratio, labels, LossSpec(kind="approx_ndcg", alpha=4.0 * alpha)
        ).value
        assert abs(a - b) <= 1e-9, f"seed {seed}: {a!r} vs {b!r}"


def test_07_sinkhorn_reaches_tolerance_within_fifty_iterations():
    """Row and column sums of the scaled relaxation within 1e-6 of 1
    after at most 50 iterations, for K <= 16 and tau in {0.1, 1, 10}."""
    worst = (0.0, None, None)
    for tau in (0.1, 1.0, 10.0):
        for i in range(20):
            rng = np.random.default_rng(700 + i)
            k = int(rng.integers(2, 17))
            relaxed = neural_sort(rng.uniform(0.0, 1.0, k), tau)
            scaled = sinkhorn_scale(relaxed, max_iters=50, tol=1e-6, strict=False)
            if scaled.residual > worst[0]:
                worst = (scaled.residual, tau, k)
    assert worst[0] <= 1e-6, (
        f"worst row/column-sum residual after 50 iterations: {worst[0]:.3e} "
        f"(tau={worst[1]}, K={worst[2]})"
    )


def test_08_training_beats_the_untrained_baseline_end_to_end():
    """2000/500-list synthetic benchmark: the relaxed-sort objective reaches
    NDCG@8 >= 0.95 and >= 0.90 win rate over its own initialization within
    5 epochs, and all eight objectives clear the baseline by >= 0.1."""
    started = perf_counter()
    train_ds = generate_synthetic(
        SyntheticConfig(num_lists=2000, list_size=8, feature_dim=16, seed=0)
    )
    eval_ds = generate_synthetic(
        SyntheticConfig(num_lists=500, list_size=8, feature_dim=16, seed=1)
    )
    config = TrainConfig(loss=LossSpec(kind="opo", tau=1.0, k=8), beta=0.1, epochs=5, seed=0)
    report = compare(config, train_ds, eval_ds, k=8)

    opo_row = report.rows[0]
    assert opo_row["kind"] == "opo"
    assert opo_row["ndcg_mean"] >= 0.95, f"held-out NDCG@8 = {opo_row['ndcg_mean']:.4f}"
    assert opo_row["win_rate"] >= 0.90, f"win rate vs init = {opo_row['win_rate']:.4f}"

    baseline = report.baseline["ndcg_mean"]
    assert len(report.rows) == 8
    for row in report.rows:
        margin = row["ndcg_mean"] - baseline
        assert margin >= 0.1, f"{row['kind']}: margin over baseline = {margin:.4f}"
    assert perf_counter() - started <= 300.0


def test_09_surrogate_error_trends_with_temperature_and_sharpness():
    """Mean |surrogate - NDCG| over a 201-point sweep grows with the sort
    temperature and shrinks with the sigmoid sharpness."""
    grid = np.linspace(0.0, 1.2, 201)

    def mean_errors(kind, params):
        rows = approximation_curve(kind, params, grid)
        return [
            float(np.mean([r["abs_error"] for r in rows if r["param"] == p]))
            for p in params
        ]

    neural = mean_errors("neural", [0.1, 1.0, 10.0])
    assert neural[0] <= neural[1] <= neural[2], f"neural errors not increasing: {neural}"
    approx = mean_errors("approx", [5.0, 25.0, 125.0])
    assert approx[0] >= approx[1] >= approx[2], f"approx errors not decreasing: {approx}"


def test_10_cli_reports_are_byte_identical_across_runs(tmp_path):
    data = tmp_path / "train.jsonl"
    assert main(["gen-data", "--out", str(data), "--num-lists", "6", "--list-size", "4",
                 "--feature-dim", "3", "--seed", "5"]) == 0

    second = tmp_path / "again.jsonl"
    assert main(["gen-data", "--out", str(second), "--num-lists", "6", "--list-size", "4",
                 "--feature-dim", "3", "--seed", "5"]) == 0
    assert data.read_bytes() == second.read_bytes()

    for command in (
        ["train", "--data", str(data), "--epochs", "2", "--seed", "3"],
        ["eval", "--data", str(data), "--checkpoint", str(tmp_path / "model.ckpt")],
        ["sweep", "--data", str(data), "--grid", '{"tau": [0.5, 1.0]}', "--epochs", "1"],
        ["curve", "--kind", "neural", "--params", "0.1,1.0", "--points", "21"],
        ["compare", "--data", str(data), "--epochs", "1", "--seed", "3"],
    ):
        if command[0] == "eval":
            assert main(["train", "--data", str(data), "--epochs", "1",
                         "--save", str(tmp_path / "model.ckpt")]) == 0
        outs = [tmp_path / f"{command[0]}-{i}.out" for i in range(2)]
        for out in outs:
            assert main([*command, "--out", str(out)]) == 0, f"{command[0]} failed"
        assert outs[0].read_bytes() == outs[1].read_bytes(), f"{command[0]} not deterministic"
