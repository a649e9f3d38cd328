"""Selection algorithms over the evaluator contract.

Fixed budget: sequential halving eliminates the worst half of the surviving
candidates each round until one remains, splitting the budget equally across
rounds and equally across that round's survivors. The theory behind it
assumes bounded score distributions (true of accuracy-like metrics); scores
are not range-checked here.

Fixed confidence: top-two Thompson sampling draws two distinct candidates
from the belief that each is optimal, evaluates one of them chosen by a fair
coin, and stops as soon as one candidate's belief exceeds the target. Batch
Thompson sampling extends this to B parallel draws, synchronously or
asynchronously; it draws single candidates (not top-two pairs), so it is
more exploitative and degrades as B grows.

Two non-adaptive baselines mirror conventional practice (equal budget split;
evaluate everything each round until confident), and ``complexity_h`` scores
problem difficulty from the true mean gaps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from .core import (
    Belief,
    BudgetTooSmallError,
    ConfigError,
    EvaluationRequest,
    EvaluationScore,
    EvaluatorFailure,
    EvaluationError,
    EventKind,
    ModelId,
    ModelStats,
    PoolExhaustedError,
    ProtocolError,
    SelectionResult,
    StreamPurpose,
    TerminationReason,
    TraceEvent,
    UndefinedComplexityError,
    point_mass_belief,
    rng_stream,
    stats_update,
)
from .evaluators import Evaluator
from .posterior import (
    DEFAULT_MC_SAMPLES,
    IDENTITY,
    MIN_EVALS_FOR_POSTERIOR,
    TransformMode,
    estimate_pi,
    transform_score,
)

DEFAULT_MAX_TOTAL_EVALS = 10_000

# Everything an evaluator back-end can raise mid-campaign; the campaign
# attaches its partial trace to these before they propagate.
EVALUATOR_ERRORS = (EvaluatorFailure, ProtocolError, PoolExhaustedError)


@dataclass(frozen=True)
class BudgetPolicy:
    """Hard cap on the number of model evaluations (fixed-budget selection)."""

    total_budget: int

    def __post_init__(self):
        if self.total_budget < 1:
            raise ValueError(f"total_budget must be positive, got {self.total_budget}")


@dataclass(frozen=True)
class ConfidencePolicy:
    """Stop once some model is believed optimal with probability > 1 - delta.

    ``max_total_evals`` is a safety valve for near-tied problems that would
    otherwise never reach the target confidence.
    """

    delta: float
    max_total_evals: int = DEFAULT_MAX_TOTAL_EVALS

    def __post_init__(self):
        if not (0.0 < self.delta < 1.0):
            raise ValueError(f"delta must be in (0, 1), got {self.delta}")
        if self.max_total_evals < 1:
            raise ValueError(f"max_total_evals must be positive, got {self.max_total_evals}")


class BatchMode(str, Enum):
    SYNCHRONOUS = "synchronous"
    ASYNCHRONOUS = "asynchronous"


@dataclass(frozen=True)
class BatchPolicy:
    """Parallelism for batch Thompson sampling: B draws per step or B workers."""

    batch_size: int
    mode: BatchMode = BatchMode.SYNCHRONOUS

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be positive, got {self.batch_size}")


class _Campaign:
    """Single-coordinator mutable state of one selection run.

    Owns the per-purpose randomness substreams, the online statistics, the
    evaluation counters, and the ordered trace. Algorithms drive it; all
    shared values it hands out (stats, beliefs) are immutable.
    """

    def __init__(
        self,
        models: Sequence[ModelId],
        evaluator: Evaluator,
        campaign_seed: int,
        mc_samples: int = DEFAULT_MC_SAMPLES,
        transform: TransformMode = IDENTITY,
    ):
        self.models = tuple(models)
        n = len(self.models)
        if [m.index for m in self.models] != list(range(n)):
            raise ValueError("model indices must be contiguous from 0 in candidate order")
        self.evaluator = evaluator
        self.mc_samples = mc_samples
        self.transform = transform
        self.stats: list[ModelStats] = [ModelStats() for _ in range(n)]
        self.eval_counts = [0] * n
        self.total = 0
        self.trace: list[TraceEvent] = []
        self._event_seq = 0
        self._request_seq = 0
        self._split_rng = rng_stream(campaign_seed, StreamPurpose.SPLIT_SEED)
        self._model_seed_rng = rng_stream(campaign_seed, StreamPurpose.MODEL_SEED)
        self._posterior_rng = rng_stream(campaign_seed, StreamPurpose.POSTERIOR)
        self.algo_rng = rng_stream(campaign_seed, StreamPurpose.ALGORITHM)
        self._retried: set[int] = set()

    def emit(self, kind: EventKind, payload: dict) -> None:
        self.trace.append(TraceEvent(seq=self._event_seq, kind=kind, payload=payload))
        self._event_seq += 1

    def next_request(self, model: ModelId) -> EvaluationRequest:
        req = EvaluationRequest(
            model=model,
            split_seed=int(self._split_rng.integers(0, 2**64, dtype=np.uint64)),
            model_seed=int(self._model_seed_rng.integers(0, 2**64, dtype=np.uint64)),
            sequence=self._request_seq,
        )
        self._request_seq += 1
        return req

    def fold(self, result: EvaluationScore, extra: Optional[dict] = None) -> None:
        model = result.request.model
        value = transform_score(result.score, self.transform)
        self.stats[model.index] = stats_update(self.stats[model.index], value)
        self.eval_counts[model.index] += 1
        self.total += 1
        payload = {
            "model": model.name,
            "request": result.request.sequence,
            "score": result.score,
        }
        if self.transform.kind != "identity":
            payload["transformed_score"] = value
        if extra:
            payload.update(extra)
        self.emit(EventKind.EVALUATED, payload)

    def _attach_and_raise(self, e: Exception):
        e.partial_trace = tuple(self.trace)
        e.partial_counts = tuple(self.eval_counts)
        raise e

    def _collect_with_retry(self, retry_once: bool) -> EvaluationScore:
        while True:
            try:
                return self.evaluator.collect()
            except EvaluationError as e:
                if retry_once and e.request.sequence not in self._retried:
                    self._retried.add(e.request.sequence)
                    self.evaluator.submit(e.request)
                    continue
                raise

    def run_batch(
        self,
        batch: Sequence[ModelId],
        retry_once: bool = False,
        extras: Optional[Sequence[Optional[dict]]] = None,
    ) -> None:
        """Evaluate ``batch``, pipelined up to the evaluator's capacity.

        Scores are folded into the statistics in request-sequence order no
        matter the completion order, keeping campaigns reproducible under
        concurrent dispatch.
        """
        requests = [self.next_request(m) for m in batch]
        window = self.evaluator.max_in_flight or len(requests)
        results: dict[int, EvaluationScore] = {}
        try:
            submitted = 0
            while len(results) < len(requests):
                while submitted < len(requests) and submitted - len(results) < window:
                    self.evaluator.submit(requests[submitted])
                    submitted += 1
                res = self._collect_with_retry(retry_once)
                results[res.request.sequence] = res
        except EVALUATOR_ERRORS as e:
            self._attach_and_raise(e)
        for i, req in enumerate(requests):
            self.fold(results[req.sequence], extras[i] if extras else None)

    def update_belief(self) -> Belief:
        belief = estimate_pi(self.stats, self.mc_samples, self._posterior_rng)
        self.emit(
            EventKind.BELIEF_UPDATED,
            {"pi": list(belief.pi), "eval_counts": list(self.eval_counts)},
        )
        return belief

    def initialize_all(self, retry_once: bool = False) -> None:
        """Give every model the 3 evaluations its posterior requires."""
        batch = [m for _ in range(MIN_EVALS_FOR_POSTERIOR) for m in self.models]
        self.run_batch(batch, retry_once=retry_once)

    def finish(self, winner: ModelId, reason: TerminationReason, belief: Belief, **extra) -> SelectionResult:
        payload = {"reason": reason.value, "chosen": winner.name, "total_evals": self.total}
        payload.update(extra)
        self.emit(EventKind.TERMINATED, payload)
        return SelectionResult(
            chosen=winner,
            final_belief=belief,
            eval_counts=tuple(self.eval_counts),
            total_evals=self.total,
            trace=tuple(self.trace),
            terminated_by=reason,
        )


def _draw_index(win_counts: Sequence[int], rng: np.random.Generator, exclude: Optional[int] = None) -> int:
    # Sample proportionally to the integer win counts (exact, no float
    # normalization); excluding an index renormalizes over the rest.
    total = sum(win_counts)
    if exclude is not None:
        total -= win_counts[exclude]
    u = int(rng.integers(total))
    acc = 0
    for i, c in enumerate(win_counts):
        if i == exclude:
            continue
        acc += c
        if u < acc:
            return i
    raise AssertionError("empty belief support")


def _require_safeguard_capacity(conf: ConfidencePolicy, n: int) -> None:
    need = MIN_EVALS_FOR_POSTERIOR * n
    if conf.max_total_evals < need:
        raise ConfigError(
            "max_total_evals",
            f"must be at least 3 evaluations per model ({need} for {n} models), "
            f"got {conf.max_total_evals}",
        )


def sequential_halving(
    models: Sequence[ModelId],
    budget: BudgetPolicy,
    evaluator: Evaluator,
    campaign_seed: int,
    *,
    transform: TransformMode = IDENTITY,
) -> SelectionResult:
    """Fixed-budget selection by halving the candidate set each round.

    Runs ceil(log2 N) rounds; each round gives every survivor
    floor(T / (|S| * ceil(log2 N))) evaluations and then drops the
    floor(|S|/2) models with the worst mean over ALL evaluations so far.
    Ties at the elimination boundary break uniformly at random. Budget lost
    to flooring is reported in the trace, never redistributed.
    """
    models = tuple(models)
    n = len(models)
    if n < 2:
        raise ValueError(f"sequential halving needs at least 2 models, got {n}")
    rounds = math.ceil(math.log2(n))
    if budget.total_budget < n * rounds:
        raise BudgetTooSmallError(
            f"budget too small: {n} models over {rounds} rounds need at least "
            f"{n * rounds} evaluations, got {budget.total_budget}"
        )
    c = _Campaign(models, evaluator, campaign_seed, transform=transform)
    survivors = list(models)
    round_index = 0
    while len(survivors) > 1:
        round_index += 1
        per_model = budget.total_budget // (len(survivors) * rounds)
        c.emit(
            EventKind.ROUND_STARTED,
            {
                "round": round_index,
                "survivors": [m.name for m in survivors],
                "evals_per_model": per_model,
            },
        )
        c.run_batch([m for _ in range(per_model) for m in survivors])
        drop = len(survivors) // 2
        # A uniform shuffle before the stable sort makes boundary ties fall
        # uniformly at random, at a fixed randomness cost per round.
        perm = c.algo_rng.permutation(len(survivors))
        ranked = [survivors[int(i)] for i in perm]
        ranked.sort(key=lambda m: c.stats[m.index].mean)
        dropped = {m.index for m in ranked[:drop]}
        c.emit(
            EventKind.ELIMINATED,
            {
                "round": round_index,
                "models": [m.name for m in ranked[:drop]],
                "means": {m.name: c.stats[m.index].mean for m in ranked[:drop]},
            },
        )
        survivors = [m for m in survivors if m.index not in dropped]
    winner = survivors[0]
    belief = point_mass_belief(c.stats, winner.index)
    return c.finish(
        winner,
        TerminationReason.BUDGET_EXHAUSTED,
        belief,
        unused_budget=budget.total_budget - c.total,
    )


def ttts(
    models: Sequence[ModelId],
    conf: ConfidencePolicy,
    evaluator: Evaluator,
    campaign_seed: int,
    *,
    mc_samples: int = DEFAULT_MC_SAMPLES,
    transform: TransformMode = IDENTITY,
) -> SelectionResult:
    """Fixed-confidence selection by top-two Thompson sampling.

    After 3 evaluations of every model, repeatedly: recompute the belief; if
    its maximum exceeds 1 - delta stop and return that model; otherwise draw
    two distinct models from the belief (the second renormalized over the
    rest), flip a fair coin between them, and evaluate the winner once.
    """
    models = tuple(models)
    n = len(models)
    if n < 1:
        raise ValueError("need at least 1 candidate model")
    _require_safeguard_capacity(conf, n)
    c = _Campaign(models, evaluator, campaign_seed, mc_samples=mc_samples, transform=transform)
    c.initialize_all()
    while True:
        belief = c.update_belief()
        if max(belief.pi) > 1.0 - conf.delta:
            reason = TerminationReason.CONFIDENCE_REACHED
            break
        if c.total + 1 > conf.max_total_evals:
            reason = TerminationReason.MAX_EVALS_SAFEGUARD
            break
        first = _draw_index(belief.win_counts, c.algo_rng)
        second = _draw_index(belief.win_counts, c.algo_rng, exclude=first)
        pick = first if int(c.algo_rng.integers(2)) == 0 else second
        c.run_batch(
            [models[pick]],
            extras=[{"candidates": [models[first].name, models[second].name]}],
        )
    winner = models[belief.argmax()]
    return c.finish(winner, reason, belief)


def bts(
    models: Sequence[ModelId],
    conf: ConfidencePolicy,
    batch: BatchPolicy,
    evaluator: Evaluator,
    campaign_seed: int,
    *,
    mc_samples: int = DEFAULT_MC_SAMPLES,
    transform: TransformMode = IDENTITY,
) -> SelectionResult:
    """Fixed-confidence selection by batch Thompson sampling.

    Synchronous mode draws B models i.i.d. from the belief (with
    replacement), evaluates all B, then updates the belief once.
    Asynchronous mode keeps B evaluations in flight; whenever one finishes
    it is folded in, the belief is republished, and the freed worker draws
    its next model from that newest belief. A failed evaluation is retried
    once, then the campaign aborts. In-flight work is discarded at
    termination.
    """
    models = tuple(models)
    n = len(models)
    if n < 1:
        raise ValueError("need at least 1 candidate model")
    _require_safeguard_capacity(conf, n)
    cap = evaluator.max_in_flight
    if cap is not None and batch.batch_size > cap:
        raise ConfigError(
            "batch_size",
            f"evaluator supports at most {cap} concurrent requests, got {batch.batch_size}",
        )
    c = _Campaign(models, evaluator, campaign_seed, mc_samples=mc_samples, transform=transform)
    c.initialize_all(retry_once=True)
    belief = c.update_belief()

    if batch.mode is BatchMode.SYNCHRONOUS:
        while True:
            if max(belief.pi) > 1.0 - conf.delta:
                reason = TerminationReason.CONFIDENCE_REACHED
                break
            if c.total + batch.batch_size > conf.max_total_evals:
                reason = TerminationReason.MAX_EVALS_SAFEGUARD
                break
            drawn = [models[_draw_index(belief.win_counts, c.algo_rng)] for _ in range(batch.batch_size)]
            c.run_batch(drawn, retry_once=True)
            belief = c.update_belief()
    else:
        reason = None
        if max(belief.pi) > 1.0 - conf.delta:
            reason = TerminationReason.CONFIDENCE_REACHED
        elif c.total + 1 > conf.max_total_evals:
            reason = TerminationReason.MAX_EVALS_SAFEGUARD
        else:
            try:
                for _ in range(batch.batch_size):
                    i = _draw_index(belief.win_counts, c.algo_rng)
                    c.evaluator.submit(c.next_request(models[i]))
                while True:
                    res = c._collect_with_retry(retry_once=True)
                    c.fold(res)
                    belief = c.update_belief()
                    if max(belief.pi) > 1.0 - conf.delta:
                        reason = TerminationReason.CONFIDENCE_REACHED
                        break
                    if c.total >= conf.max_total_evals:
                        reason = TerminationReason.MAX_EVALS_SAFEGUARD
                        break
                    i = _draw_index(belief.win_counts, c.algo_rng)
                    c.evaluator.submit(c.next_request(models[i]))
            except EVALUATOR_ERRORS as e:
                c._attach_and_raise(e)
    winner = models[belief.argmax()]
    return c.finish(winner, reason, belief)


def nonadaptive_fixed_budget(
    models: Sequence[ModelId],
    budget: BudgetPolicy,
    evaluator: Evaluator,
    campaign_seed: int,
    *,
    transform: TransformMode = IDENTITY,
) -> SelectionResult:
    """Equal-split baseline: floor(T/N) evaluations per model, round-robin,
    then pick the highest empirical mean."""
    models = tuple(models)
    n = len(models)
    if n < 1:
        raise ValueError("need at least 1 candidate model")
    per_model = budget.total_budget // n
    c = _Campaign(models, evaluator, campaign_seed, transform=transform)
    c.emit(
        EventKind.ROUND_STARTED,
        {"round": 1, "survivors": [m.name for m in models], "evals_per_model": per_model},
    )
    c.run_batch([m for _ in range(per_model) for m in models])
    means = [c.stats[m.index].mean for m in models]
    winner = models[max(range(n), key=lambda i: means[i])]
    belief = point_mass_belief(c.stats, winner.index)
    return c.finish(
        winner,
        TerminationReason.BUDGET_EXHAUSTED,
        belief,
        unused_budget=budget.total_budget - c.total,
    )


def nonadaptive_fixed_confidence(
    models: Sequence[ModelId],
    conf: ConfidencePolicy,
    evaluator: Evaluator,
    campaign_seed: int,
    *,
    mc_samples: int = DEFAULT_MC_SAMPLES,
    transform: TransformMode = IDENTITY,
) -> SelectionResult:
    """Evaluate-everything baseline under the same Bayesian stopping rule.

    Every model gets one evaluation per round regardless of results; the
    belief is recomputed after each full round. Same 3-per-model start and
    stopping threshold as top-two Thompson sampling.
    """
    models = tuple(models)
    n = len(models)
    if n < 1:
        raise ValueError("need at least 1 candidate model")
    _require_safeguard_capacity(conf, n)
    c = _Campaign(models, evaluator, campaign_seed, mc_samples=mc_samples, transform=transform)
    c.initialize_all()
    belief = c.update_belief()
    round_index = 0
    while True:
        if max(belief.pi) > 1.0 - conf.delta:
            reason = TerminationReason.CONFIDENCE_REACHED
            break
        if c.total + n > conf.max_total_evals:
            reason = TerminationReason.MAX_EVALS_SAFEGUARD
            break
        round_index += 1
        c.emit(
            EventKind.ROUND_STARTED,
            {"round": round_index, "survivors": [m.name for m in models], "evals_per_model": 1},
        )
        c.run_batch(list(models))
        belief = c.update_belief()
    winner = models[belief.argmax()]
    return c.finish(winner, reason, belief)


def complexity_h(true_means: Sequence[float]) -> float:
    """Difficulty of a selection problem: sum of inverse squared gaps to the
    best mean. Lower-bounds (up to log factors) the evaluations needed for
    confident identification."""
    means = [float(x) for x in true_means]
    if not means:
        raise ValueError("need at least one mean")
    best = max(means)
    if means.count(best) != 1:
        raise UndefinedComplexityError(
            f"complexity is undefined when the best mean ({best}) is not unique"
        )
    return sum(1.0 / (best - m) ** 2 for m in means if m != best)
