"""Adaptive selection of the best noisy candidate model.

Treats model selection as best-arm identification: each candidate's
evaluations (on fresh data splits and seeds) are noisy draws around an
unknown mean, and the algorithms spend evaluations where they most reduce
uncertainty about which mean is largest, under a fixed evaluation budget or
until a target confidence is reached.
"""

from .core import (
    Belief,
    BudgetTooSmallError,
    ConfigError,
    EvaluationError,
    EvaluationRequest,
    EvaluationScore,
    EvaluatorFailure,
    EventKind,
    InsufficientDataError,
    ModelId,
    ModelStats,
    NonFiniteScoreError,
    PoolExhaustedError,
    ProtocolError,
    SelectionResult,
    StreamPurpose,
    TerminationReason,
    TraceEvent,
    UndefinedComplexityError,
    make_model_ids,
    rng_stream,
    stats_merge,
    stats_update,
)
from .posterior import (
    DEFAULT_MC_SAMPLES,
    IDENTITY,
    PosteriorParams,
    TransformMode,
    VARIANCE_FLOOR,
    estimate_pi,
    posterior_from_stats,
    posterior_sample,
    transform_score,
)
from .algorithms import (
    BatchMode,
    BatchPolicy,
    BudgetPolicy,
    ConfidencePolicy,
    DEFAULT_MAX_TOTAL_EVALS,
    bts,
    complexity_h,
    nonadaptive_fixed_budget,
    nonadaptive_fixed_confidence,
    sequential_halving,
    ttts,
)
from .evaluators import (
    ArmSpec,
    Beta,
    Evaluator,
    ExhaustionPolicy,
    Gaussian,
    ReplayEvaluator,
    ReplayTable,
    SubprocessEvaluator,
    SyntheticEvaluator,
    TruncatedGaussian,
    build_arm_specs,
    load_arm_file,
    read_replay_csv,
)
from .cli import CampaignConfig, ReplicationReport, run_campaign, run_replications

__version__ = "0.1.0"

__all__ = [
    "ArmSpec",
    "BatchMode",
    "BatchPolicy",
    "Belief",
    "Beta",
    "BudgetPolicy",
    "BudgetTooSmallError",
    "CampaignConfig",
    "ConfidencePolicy",
    "ConfigError",
    "DEFAULT_MAX_TOTAL_EVALS",
    "DEFAULT_MC_SAMPLES",
    "Evaluator",
    "EvaluationError",
    "EvaluationRequest",
    "EvaluationScore",
    "EvaluatorFailure",
    "EventKind",
    "ExhaustionPolicy",
    "Gaussian",
    "IDENTITY",
    "InsufficientDataError",
    "ModelId",
    "ModelStats",
    "NonFiniteScoreError",
    "PoolExhaustedError",
    "PosteriorParams",
    "ProtocolError",
    "ReplayEvaluator",
    "ReplayTable",
    "ReplicationReport",
    "SelectionResult",
    "StreamPurpose",
    "SubprocessEvaluator",
    "SyntheticEvaluator",
    "TerminationReason",
    "TraceEvent",
    "TransformMode",
    "TruncatedGaussian",
    "UndefinedComplexityError",
    "VARIANCE_FLOOR",
    "bts",
    "build_arm_specs",
    "complexity_h",
    "estimate_pi",
    "load_arm_file",
    "make_model_ids",
    "nonadaptive_fixed_budget",
    "nonadaptive_fixed_confidence",
    "posterior_from_stats",
    "posterior_sample",
    "read_replay_csv",
    "rng_stream",
    "run_campaign",
    "run_replications",
    "sequential_halving",
    "stats_merge",
    "stats_update",
    "transform_score",
    "ttts",
]
