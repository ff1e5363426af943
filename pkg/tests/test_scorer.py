"""Scorers: feature models, the bigram toy policy, reward scores, and
checkpoint serialization."""

from __future__ import annotations

import math

import numpy as np
import pytest

from rankalign import diffkernel as dk
from rankalign.diffkernel import evaluate, evaluate_with_gradient, finite_difference_gradient
from rankalign.scorer import (
    CHECKPOINT_HEADER,
    FeatureScorer,
    RewardScoreConfig,
    ToyPolicy,
    load_checkpoint,
    reward_score,
    save_checkpoint,
    score_features,
    sequence_log_prob,
    score_response_list,
)
from rankalign.data import ResponseList, ResponseRecord


def test_zero_weight_scorer_outputs_zero():
    scorer = FeatureScorer.create(3, seed=0)
    scorer.params.update({name: 0.0 for name in scorer.params.ids()})
    assert scorer.score_value([1.0, -2.0, 5.0]) == 0.0


def test_linear_scorer_computes_dot_product_plus_bias():
    scorer = FeatureScorer.create(2, seed=0)
    scorer.params.update({"w[0]": 1.0, "w[1]": 2.0, "b": 0.0})
    assert scorer.score_value([3.0, 4.0]) == 11.0
    scorer.params["b"] = -1.5
    assert scorer.score_value([3.0, 4.0]) == 9.5


def test_score_features_gradient_is_the_input():
    scorer = FeatureScorer.create(3, seed=1)
    x = np.array([0.5, -1.0, 2.0])
    dv = score_features(scorer, x)
    assert dv.value == pytest.approx(scorer.score_value(x), abs=1e-12)
    for i in range(3):
        assert dv.gradient[f"w[{i}]"] == pytest.approx(x[i], abs=1e-12)
    assert dv.gradient["b"] == pytest.approx(1.0, abs=1e-12)


def test_hidden_scorer_matches_finite_differences():
    scorer = FeatureScorer.create(3, hidden=4, seed=2)
    x = np.array([0.2, 0.9, -0.4])

    def expr(p):
        return scorer.scores_node(p, x.reshape(1, -1))[0]

    dv = evaluate_with_gradient(expr, scorer.params)
    fd = finite_difference_gradient(expr, scorer.params)
    assert dv.value == pytest.approx(scorer.score_value(x), abs=1e-12)
    for name in scorer.params.ids():
        assert dv.gradient[name] == pytest.approx(fd[name], rel=1e-5, abs=1e-8)


def test_seeded_init_is_reproducible_and_bounded():
    a = FeatureScorer.create(6, seed=7)
    b = FeatureScorer.create(6, seed=7)
    assert a.params.as_dict() == b.params.as_dict()
    bound = 1.0 / math.sqrt(6.0)
    for i in range(6):
        assert abs(a.params[f"w[{i}]"]) <= bound
    assert a.params["b"] == 0.0


def test_feature_dimension_mismatch_is_rejected():
    scorer = FeatureScorer.create(4, seed=0)
    with pytest.raises(ValueError):
        scorer.score_value([1.0, 2.0])


def test_uniform_policy_log_prob():
    policy = ToyPolicy.create(vocab_size=4, max_len=8, seed=0)
    policy.params.update({name: 0.0 for name in policy.params.ids()})
    lp = policy.log_prob_value((1, 2, 3))
    assert lp == pytest.approx(3.0 * math.log(0.25), abs=1e-12)


def test_empty_sequence_has_log_prob_zero():
    policy = ToyPolicy.create(vocab_size=4, seed=0)
    assert policy.log_prob_value(()) == 0.0
    dv = sequence_log_prob(policy, ())
    assert dv.value == 0.0


def test_dominant_logits_saturate_to_certainty():
    policy = ToyPolicy.create(vocab_size=3, seed=0)
    policy.params.update({name: 0.0 for name in policy.params.ids()})
    # favor token (ctx + 1) mod 3 from every context by margin 20
    for ctx in range(4):
        policy.params[f"logit[{ctx},{(ctx + 1) % 3}]"] = 20.0
    tokens = (1, 2)  # start context is 3: 3->1, then 1->2
    assert abs(policy.log_prob_value(tokens)) <= 1e-8


def test_sequence_log_prob_matches_finite_differences():
    policy = ToyPolicy.create(vocab_size=3, max_len=4, seed=3)
    tokens = (2, 0, 1)

    def expr(p):
        return policy.log_prob_node(p, tokens)

    dv = evaluate_with_gradient(expr, policy.params)
    fd = finite_difference_gradient(expr, policy.params)
    assert dv.value == pytest.approx(policy.log_prob_value(tokens), abs=1e-12)
    for name in policy.params.ids():
        assert dv.gradient[name] == pytest.approx(fd[name], rel=1e-5, abs=1e-8)


def test_prefix_conditions_the_first_transition():
    policy = ToyPolicy.create(vocab_size=4, seed=5)
    with_prefix = policy.log_prob_value((1,), prefix=(2,))
    bare = policy.log_prob_value((1,))
    assert with_prefix != pytest.approx(bare, abs=1e-12)


def test_reward_score_is_zero_when_policy_equals_reference():
    policy = ToyPolicy.create(vocab_size=4, seed=8)
    ref = policy.copy()
    dv = reward_score(policy, ref, (1, 2), RewardScoreConfig(beta=0.1))
    assert dv.value == 0.0


def test_reward_score_scales_linearly_in_beta():
    policy = ToyPolicy.create(vocab_size=4, seed=9)
    ref = ToyPolicy.create(vocab_size=4, seed=10)
    tokens = (3, 1, 0)
    a = reward_score(policy, ref, tokens, RewardScoreConfig(beta=0.1)).value
    b = reward_score(policy, ref, tokens, RewardScoreConfig(beta=0.2)).value
    assert b == pytest.approx(2.0 * a, rel=1e-12)
    lr = policy.log_prob_value(tokens) - ref.log_prob_value(tokens)
    assert a == pytest.approx(0.1 * lr, abs=1e-12)


def test_reward_score_rejects_mismatched_vocabularies():
    policy = ToyPolicy.create(vocab_size=4, seed=0)
    ref = ToyPolicy.create(vocab_size=5, seed=0)
    with pytest.raises(ValueError):
        reward_score(policy, ref, (1,), RewardScoreConfig())


def test_beta_must_be_positive():
    with pytest.raises(ValueError):
        RewardScoreConfig(beta=0.0)


def test_score_response_list_feature_mode():
    scorer = FeatureScorer.create(2, seed=0)
    scorer.params.update({"w[0]": 1.0, "w[1]": 0.0, "b": 0.0})
    rl = ResponseList(
        prompt_id="p0",
        responses=(
            ResponseRecord(id="a", label=1.0, features=np.array([2.0, 0.0])),
            ResponseRecord(id="b", label=0.0, features=np.array([1.0, 0.0])),
        ),
    )
    np.testing.assert_allclose(score_response_list(scorer, rl), [2.0, 1.0])


def test_score_response_list_policy_mode_needs_reference():
    policy = ToyPolicy.create(vocab_size=4, seed=0)
    rl = ResponseList(
        prompt_id="p0",
        responses=(
            ResponseRecord(id="a", label=1.0, tokens=(1, 2)),
            ResponseRecord(id="b", label=0.0, tokens=(3,)),
        ),
        prompt=(0,),
    )
    with pytest.raises(ValueError):
        score_response_list(policy, rl)
    scores = score_response_list(policy, rl, reference=policy.copy(), beta=0.1)
    np.testing.assert_allclose(scores, [0.0, 0.0], atol=1e-15)


def test_checkpoint_round_trip_feature(tmp_path):
    scorer = FeatureScorer.create(5, hidden=3, seed=11)
    path = tmp_path / "scorer.ckpt"
    save_checkpoint(scorer, path)
    text = path.read_text()
    assert text.splitlines()[0] == CHECKPOINT_HEADER
    loaded = load_checkpoint(path)
    assert isinstance(loaded, FeatureScorer)
    assert loaded.input_dim == 5
    assert loaded.hidden == 3
    assert loaded.params.as_dict() == scorer.params.as_dict()


def test_checkpoint_round_trip_policy(tmp_path):
    policy = ToyPolicy.create(vocab_size=6, max_len=4, seed=12)
    path = tmp_path / "policy.ckpt"
    save_checkpoint(policy, path)
    loaded = load_checkpoint(path)
    assert isinstance(loaded, ToyPolicy)
    assert loaded.vocab_size == 6
    assert loaded.max_len == 4
    assert loaded.params.as_dict() == policy.params.as_dict()


def test_checkpoint_rejects_foreign_files(tmp_path):
    path = tmp_path / "junk.ckpt"
    path.write_text("not a checkpoint\n")
    with pytest.raises(ValueError):
        load_checkpoint(path)
