"""rankalign: listwise preference optimization over reward scores.

Differentiable sorting relaxations turn NDCG into a trainable objective;
the package carries that loss, seven pairwise/listwise baselines, toy
scorers, a synthetic-data generator, a trainer, and an evaluation CLI.
"""

from .data import (
    DataError,
    Dataset,
    ResponseList,
    ResponseRecord,
    SyntheticConfig,
    generate_synthetic,
    load_jsonl,
    presort_descending,
    save_jsonl,
    subsample_list,
)
from .diffkernel import (
    DiffValue,
    DomainError,
    Node,
    ParamContext,
    ParameterSet,
    evaluate,
    evaluate_with_gradient,
    finite_difference_gradient,
)
from .harness import (
    EvalResult,
    MetricsReport,
    approximation_curve,
    compare,
    evaluate_ndcg,
    win_rate,
)
from .losses import (
    LossKind,
    LossSpec,
    all_pairs_loss,
    approx_ndcg_loss,
    bpr_loss,
    compute_loss,
    lambda_rank_loss,
    list_mle_loss,
    opo_loss,
    single_pair_loss,
    slic_loss,
)
from .metrics import (
    ZeroGainError,
    approx_rank,
    dcg_at_k,
    discount,
    gain,
    max_dcg_at_k,
    ndcg_at_k,
    rank_assignment,
)
from .scorer import (
    FeatureScorer,
    RewardScoreConfig,
    ToyPolicy,
    load_checkpoint,
    reward_score,
    save_checkpoint,
    score_features,
    sequence_log_prob,
)
from .sorting import (
    RelaxedPermutation,
    SinkhornConvergenceError,
    hard_sort_matrix,
    neural_sort,
    sinkhorn_scale,
)
from .trainer import (
    TrainConfig,
    TrainHistory,
    TrainingDivergenceError,
    cosine_lr,
    default_scorer,
    sweep,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "DataError",
    "Dataset",
    "ResponseList",
    "ResponseRecord",
    "SyntheticConfig",
    "generate_synthetic",
    "load_jsonl",
    "presort_descending",
    "save_jsonl",
    "subsample_list",
    "DiffValue",
    "DomainError",
    "Node",
    "ParamContext",
    "ParameterSet",
    "evaluate",
    "evaluate_with_gradient",
    "finite_difference_gradient",
    "EvalResult",
    "MetricsReport",
    "approximation_curve",
    "compare",
    "evaluate_ndcg",
    "win_rate",
    "LossKind",
    "LossSpec",
    "all_pairs_loss",
    "approx_ndcg_loss",
    "bpr_loss",
    "compute_loss",
    "lambda_rank_loss",
    "list_mle_loss",
    "opo_loss",
    "single_pair_loss",
    "slic_loss",
    "ZeroGainError",
    "approx_rank",
    "dcg_at_k",
    "discount",
    "gain",
    "max_dcg_at_k",
    "ndcg_at_k",
    "rank_assignment",
    "FeatureScorer",
    "RewardScoreConfig",
    "ToyPolicy",
    "load_checkpoint",
    "reward_score",
    "save_checkpoint",
    "score_features",
    "sequence_log_prob",
    "RelaxedPermutation",
    "SinkhornConvergenceError",
    "hard_sort_matrix",
    "neural_sort",
    "sinkhorn_scale",
    "TrainConfig",
    "TrainHistory",
    "TrainingDivergenceError",
    "cosine_lr",
    "default_scorer",
    "sweep",
    "train",
    "__version__",
]
