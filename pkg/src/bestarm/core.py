"""Shared domain types: candidate models, evaluation records, online
statistics, belief vectors, trace events, and the seeded randomness contract
used by every selection algorithm."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from typing import Optional, Sequence

import numpy as np


class NonFiniteScoreError(ValueError):
    """A NaN or infinite score was offered where a finite metric is required."""


class InsufficientDataError(ValueError):
    """A posterior was requested for a model with fewer than 3 evaluations."""


class BudgetTooSmallError(ValueError):
    """The evaluation budget cannot give every model one evaluation per round."""


class UndefinedComplexityError(ValueError):
    """The difficulty measure is undefined when the best mean is not unique."""


class PoolExhaustedError(RuntimeError):
    """A replay score pool ran out under the Error exhaustion policy."""


class ProtocolError(RuntimeError):
    """The external evaluator violated the wire protocol."""


class ConfigError(ValueError):
    """A campaign configuration field failed validation."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field_name = field_name


class EvaluatorFailure(RuntimeError):
    """An evaluator back-end failed (dead child, timeout, aborted campaign).

    When raised from inside a running campaign, ``partial_trace`` and
    ``partial_counts`` carry whatever the campaign had recorded so far so the
    caller can flush diagnostics.
    """

    def __init__(self, message: str, *, stderr: Optional[str] = None):
        super().__init__(message)
        self.stderr = stderr
        self.partial_trace: Optional[tuple] = None
        self.partial_counts: Optional[tuple] = None


class EvaluationError(EvaluatorFailure):
    """A single evaluation request came back as an error (retryable)."""

    def __init__(self, request: "EvaluationRequest", message: str):
        super().__init__(f"evaluation {request.sequence} of {request.model.name} failed: {message}")
        self.request = request
        self.reason = message


@dataclass(frozen=True)
class ModelId:
    """One candidate model: an opaque name plus its 0-based position."""

    name: str
    index: int


def make_model_ids(names: Sequence[str]) -> tuple[ModelId, ...]:
    """Build the candidate set, enforcing unique names and contiguous indices."""
    if len(set(names)) != len(names):
        dupes = sorted({n for n in names if list(names).count(n) > 1})
        raise ValueError(f"duplicate model names: {dupes}")
    return tuple(ModelId(name=n, index=i) for i, n in enumerate(names))


@dataclass(frozen=True)
class EvaluationRequest:
    """One unit of work: evaluate ``model`` on a fresh data split and seed."""

    model: ModelId
    split_seed: int
    model_seed: int
    sequence: int


@dataclass(frozen=True)
class EvaluationScore:
    """The scalar metric outcome of one evaluation request."""

    request: EvaluationRequest
    score: float

    def __post_init__(self):
        if not math.isfinite(self.score):
            raise NonFiniteScoreError(
                f"score for {self.request.model.name} (request {self.request.sequence}) "
                f"is not finite: {self.score!r}"
            )


@dataclass(frozen=True)
class ModelStats:
    """Online sufficient statistics for one model's evaluations.

    ``sq_dev_sum`` is the running sum of squared deviations from the mean
    (not the sample variance). An empty stats value is all zeros.
    """

    count: int = 0
    mean: float = 0.0
    sq_dev_sum: float = 0.0


def stats_update(stats: ModelStats, score: float) -> ModelStats:
    """Fold one score into the statistics via the stable single-pass recurrence.

    Never computed as sum(x^2) - n*mean^2, which cancels catastrophically.
    """
    score = float(score)
    if not math.isfinite(score):
        raise NonFiniteScoreError(f"cannot update statistics with non-finite score {score!r}")
    count = stats.count + 1
    delta = score - stats.mean
    mean = stats.mean + delta / count
    sq_dev_sum = stats.sq_dev_sum + delta * (score - mean)
    return ModelStats(count=count, mean=mean, sq_dev_sum=sq_dev_sum)


def stats_merge(a: ModelStats, b: ModelStats) -> ModelStats:
    """Combine statistics over two disjoint score sequences.

    Equivalent to statistics over the concatenation of both sequences; empty
    stats are the identity element.
    """
    if a.count == 0:
        return b
    if b.count == 0:
        return a
    count = a.count + b.count
    delta = b.mean - a.mean
    mean = a.mean + delta * (b.count / count)
    sq_dev_sum = a.sq_dev_sum + b.sq_dev_sum + delta * delta * (a.count * b.count / count)
    return ModelStats(count=count, mean=mean, sq_dev_sum=sq_dev_sum)


class StreamPurpose(IntEnum):
    """Independent randomness substreams of a campaign."""

    SPLIT_SEED = 0
    MODEL_SEED = 1
    POSTERIOR = 2
    ALGORITHM = 3
    SYNTHETIC = 4
    REPLAY = 5


def rng_stream(campaign_seed: int, purpose: StreamPurpose, *key: int) -> np.random.Generator:
    """Deterministic substream for one purpose of one campaign.

    Distinct purposes (and extra key parts, e.g. model index and request
    sequence) yield independent streams; the same arguments always reproduce
    the same stream.
    """
    ss = np.random.SeedSequence(int(campaign_seed), spawn_key=(int(purpose), *map(int, key)))
    return np.random.default_rng(ss)


@dataclass(frozen=True)
class Belief:
    """Monte-Carlo belief over which candidate has the highest true mean.

    ``pi[m]`` is ``win_counts[m] / mc_samples``, so the entries are exact
    relative frequencies of a common denominator and sum to one.
    """

    pi: tuple[float, ...]
    stats: tuple[ModelStats, ...]
    mc_samples: int
    win_counts: tuple[int, ...]

    def argmax(self) -> int:
        """Index of the most probably optimal model (first of any tied max)."""
        best = 0
        for i in range(1, len(self.pi)):
            if self.pi[i] > self.pi[best]:
                best = i
        return best


def point_mass_belief(stats: Sequence[ModelStats], winner_index: int) -> Belief:
    """Degenerate belief concentrated on one model.

    Used by fixed-budget algorithms, where eliminated models may hold fewer
    than the 3 evaluations the Monte-Carlo belief requires.
    """
    counts = tuple(1 if i == winner_index else 0 for i in range(len(stats)))
    return Belief(
        pi=tuple(float(c) for c in counts),
        stats=tuple(stats),
        mc_samples=1,
        win_counts=counts,
    )


class EventKind(str, Enum):
    """Trace event discriminator."""

    EVALUATED = "evaluated"
    ELIMINATED = "eliminated"
    ROUND_STARTED = "round_started"
    BELIEF_UPDATED = "belief_updated"
    TERMINATED = "terminated"


class TerminationReason(str, Enum):
    """Why a campaign stopped."""

    BUDGET_EXHAUSTED = "budget_exhausted"
    CONFIDENCE_REACHED = "confidence_reached"
    MAX_EVALS_SAFEGUARD = "max_evals_safeguard"


@dataclass(frozen=True)
class TraceEvent:
    """One entry of the campaign trace, ordered by the campaign event counter."""

    seq: int
    kind: EventKind
    payload: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = {"seq": self.seq, "kind": self.kind.value}
        d.update(self.payload)
        return d


@dataclass(frozen=True)
class SelectionResult:
    """Outcome of one selection campaign."""

    chosen: ModelId
    final_belief: Belief
    eval_counts: tuple[int, ...]
    total_evals: int
    trace: tuple[TraceEvent, ...]
    terminated_by: TerminationReason
