"""Evaluator back-ends: how the selection algorithms obtain noisy scores.

Three implementations of one contract:

* ``SyntheticEvaluator`` samples configured reward distributions, keyed so
  every (campaign seed, model index, request sequence) triple is a fixed
  draw regardless of dispatch order.
* ``ReplayEvaluator`` serves pre-recorded scores from a CSV pool.
* ``SubprocessEvaluator`` drives a long-lived external worker over
  line-delimited JSON on stdin/stdout, matching pipelined responses to
  requests strictly by id.
"""

from __future__ import annotations

import csv
import json
import math
import queue
import shlex
import subprocess
import threading
import warnings
from abc import ABC, abstractmethod
from collections import deque
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence, Union

from .core import (
    EvaluationError,
    EvaluationRequest,
    EvaluationScore,
    EvaluatorFailure,
    ModelId,
    PoolExhaustedError,
    ProtocolError,
    StreamPurpose,
    rng_stream,
)

PROTOCOL_VERSION = 1

# Rejection sampling cap for truncated distributions; hit only by badly
# mis-specified arms (support nearly disjoint from the parent distribution).
_MAX_REJECTIONS = 100_000


@dataclass(frozen=True)
class Gaussian:
    mean: float
    sd: float

    def __post_init__(self):
        if not self.sd > 0:
            raise ValueError(f"sd must be positive, got {self.sd}")

    def sample(self, rng) -> float:
        return float(rng.normal(self.mean, self.sd))


@dataclass(frozen=True)
class TruncatedGaussian:
    mean: float
    sd: float
    lo: float
    hi: float

    def __post_init__(self):
        if not self.sd > 0:
            raise ValueError(f"sd must be positive, got {self.sd}")
        if not self.lo < self.hi:
            raise ValueError(f"need lo < hi, got [{self.lo}, {self.hi}]")

    def sample(self, rng) -> float:
        for _ in range(_MAX_REJECTIONS):
            x = float(rng.normal(self.mean, self.sd))
            if self.lo <= x <= self.hi:
                return x
        raise RuntimeError(
            f"rejection sampling failed after {_MAX_REJECTIONS} draws for "
            f"truncated Gaussian({self.mean}, {self.sd}) on [{self.lo}, {self.hi}]"
        )


@dataclass(frozen=True)
class Beta:
    alpha: float
    beta: float

    def __post_init__(self):
        if not (self.alpha > 0 and self.beta > 0):
            raise ValueError(f"alpha and beta must be positive, got {self.alpha}, {self.beta}")

    def sample(self, rng) -> float:
        return float(rng.beta(self.alpha, self.beta))


Distribution = Union[Gaussian, TruncatedGaussian, Beta]

_FAMILIES = {"gaussian": Gaussian, "truncated_gaussian": TruncatedGaussian, "beta": Beta}


@dataclass(frozen=True)
class ArmSpec:
    """Synthetic arm: a candidate model plus its score distribution."""

    model: ModelId
    dist: Distribution


def parse_arm_entries(entries: list) -> list[tuple[str, Distribution]]:
    """Parse the arm file structure: a JSON array of named family records."""
    if not isinstance(entries, list):
        raise ValueError("arm spec file must contain a JSON array")
    out = []
    for i, entry in enumerate(entries):
        if not isinstance(entry, dict) or "name" not in entry or "family" not in entry:
            raise ValueError(f"arm entry {i} must be an object with 'name' and 'family'")
        family = entry["family"]
        if family not in _FAMILIES:
            raise ValueError(f"arm entry {i}: unknown family {family!r}")
        params = {k: v for k, v in entry.items() if k not in ("name", "family")}
        try:
            dist = _FAMILIES[family](**params)
        except TypeError as e:
            raise ValueError(f"arm entry {i} ({entry['name']}): {e}") from None
        out.append((str(entry["name"]), dist))
    return out


def load_arm_file(path: str) -> list[tuple[str, Distribution]]:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_arm_entries(json.load(fh))


def build_arm_specs(
    entries: Sequence[tuple[str, Distribution]], models: Sequence[ModelId]
) -> tuple[ArmSpec, ...]:
    """Attach loaded arm distributions to the candidate set, in model order."""
    by_name = dict(entries)
    missing = [m.name for m in models if m.name not in by_name]
    if missing:
        raise ValueError(f"no arm defined for models: {missing}")
    return tuple(ArmSpec(model=m, dist=by_name[m.name]) for m in models)


class Evaluator(ABC):
    """The contract by which algorithms obtain scores.

    ``submit`` enqueues a request, ``collect`` blocks for the next completed
    response (completion order, matched to its request). Back-ends that can
    hold several requests in flight report the pipeline depth via
    ``max_in_flight``; ``None`` means unlimited.
    """

    @property
    @abstractmethod
    def max_in_flight(self) -> Optional[int]: ...

    @abstractmethod
    def submit(self, request: EvaluationRequest) -> None: ...

    @abstractmethod
    def collect(self) -> EvaluationScore: ...

    @abstractmethod
    def pending(self) -> int: ...

    def evaluate(self, request: EvaluationRequest) -> EvaluationScore:
        """Serial convenience: submit one request and wait for its score."""
        if self.pending():
            raise RuntimeError("evaluate() requires no outstanding requests")
        self.submit(request)
        return self.collect()

    def close(self) -> None:
        """Release any resources; safe to call more than once."""


class SyntheticEvaluator(Evaluator):
    """Scores drawn from per-model reward distributions.

    Each request's draw comes from a stream keyed by (campaign seed, model
    index, request sequence), so scores are reproducible across processes
    and independent of dispatch interleaving. Responses complete in submit
    order, which doubles as the deterministic scheduler for asynchronous
    batch campaigns.
    """

    def __init__(self, arms: Sequence[ArmSpec], campaign_seed: int):
        self._arms = {a.model.index: a for a in arms}
        self._seed = int(campaign_seed)
        self._queue: deque[EvaluationScore] = deque()

    @property
    def max_in_flight(self) -> Optional[int]:
        return None

    def submit(self, request: EvaluationRequest) -> None:
        arm = self._arms[request.model.index]
        rng = rng_stream(self._seed, StreamPurpose.SYNTHETIC, request.model.index, request.sequence)
        self._queue.append(EvaluationScore(request=request, score=arm.dist.sample(rng)))

    def collect(self) -> EvaluationScore:
        if not self._queue:
            raise RuntimeError("collect() with no pending requests")
        return self._queue.popleft()

    def pending(self) -> int:
        return len(self._queue)


class ExhaustionPolicy(str, Enum):
    """What a replay pool does once its recorded scores run out."""

    ERROR = "error"
    CYCLE = "cycle"
    RESAMPLE = "resample"


class ReplayTable:
    """Per-model ordered score pools loaded from a recorded-evaluation file."""

    def __init__(
        self,
        scores: dict[str, list[float]],
        models: Sequence[ModelId],
        exhaustion_policy: ExhaustionPolicy = ExhaustionPolicy.RESAMPLE,
    ):
        empty = [m.name for m in models if not scores.get(m.name)]
        if empty:
            raise ValueError(f"no recorded scores for models: {empty}")
        self._pools = {m.index: list(scores[m.name]) for m in models}
        self._cursors = {m.index: 0 for m in models}
        self.policy = ExhaustionPolicy(exhaustion_policy)

    @classmethod
    def from_csv(
        cls,
        path: str,
        models: Sequence[ModelId],
        exhaustion_policy: ExhaustionPolicy = ExhaustionPolicy.RESAMPLE,
    ) -> "ReplayTable":
        scores = read_replay_csv(path, known={m.name for m in models})
        return cls(scores, models, exhaustion_policy)

    def next_score(self, request: EvaluationRequest, campaign_seed: int) -> float:
        idx = request.model.index
        pool = self._pools[idx]
        cursor = self._cursors[idx]
        if cursor < len(pool):
            self._cursors[idx] = cursor + 1
            return pool[cursor]
        if self.policy is ExhaustionPolicy.ERROR:
            raise PoolExhaustedError(
                f"replay pool for {request.model.name} exhausted after {len(pool)} scores"
            )
        if self.policy is ExhaustionPolicy.CYCLE:
            self._cursors[idx] = cursor + 1
            return pool[cursor % len(pool)]
        rng = rng_stream(campaign_seed, StreamPurpose.REPLAY, idx, request.sequence)
        return pool[int(rng.integers(len(pool)))]


def read_replay_csv(path: str, known: Optional[set[str]] = None) -> dict[str, list[float]]:
    """Read a "model,score" CSV into per-model ordered score lists.

    Rows for models outside ``known`` are dropped with a warning.
    """
    scores: dict[str, list[float]] = {}
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:2]] != ["model", "score"]:
            raise ValueError(f"{path}: expected CSV header 'model,score', got {header}")
        unknown: set[str] = set()
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) < 2:
                raise ValueError(f"{path}:{lineno}: expected 'model,score', got {row}")
            name = row[0].strip()
            try:
                value = float(row[1])
            except ValueError:
                raise ValueError(f"{path}:{lineno}: score {row[1]!r} is not a number") from None
            if known is not None and name not in known:
                unknown.add(name)
                continue
            scores.setdefault(name, []).append(value)
    if unknown:
        warnings.warn(f"{path}: ignoring scores for unknown models: {sorted(unknown)}")
    return scores


class ReplayEvaluator(Evaluator):
    """Serves recorded scores; completion order is submit order."""

    def __init__(self, table: ReplayTable, campaign_seed: int):
        self._table = table
        self._seed = int(campaign_seed)
        self._queue: deque[EvaluationScore] = deque()

    @property
    def max_in_flight(self) -> Optional[int]:
        return None

    def submit(self, request: EvaluationRequest) -> None:
        score = self._table.next_score(request, self._seed)
        self._queue.append(EvaluationScore(request=request, score=score))

    def collect(self) -> EvaluationScore:
        if not self._queue:
            raise RuntimeError("collect() with no pending requests")
        return self._queue.popleft()

    def pending(self) -> int:
        return len(self._queue)


class SubprocessEvaluator(Evaluator):
    """Long-lived external worker speaking line-delimited JSON.

    One child process serves the whole campaign (model setup costs are paid
    once). Requests carry the seeds the child must honor; responses are
    demultiplexed strictly by id, so the child may reply out of order up to
    its advertised pipeline depth.
    """

    def __init__(
        self,
        command: Union[str, Sequence[str]],
        model_names: Sequence[str],
        max_in_flight: Optional[int] = None,
        timeout: Optional[float] = None,
    ):
        argv = shlex.split(command) if isinstance(command, str) else list(command)
        self._timeout = timeout
        self._pending: dict[int, EvaluationRequest] = {}
        self._closed = False
        self._lines: queue.Queue = queue.Queue()
        self._stderr_chunks: list[str] = []
        try:
            self._child = subprocess.Popen(
                argv,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.PIPE,
                encoding="utf-8",
            )
        except OSError as e:
            raise EvaluatorFailure(f"failed to spawn evaluator {argv!r}: {e}") from e
        self._stdout_thread = threading.Thread(target=self._drain_stdout, daemon=True)
        self._stderr_thread = threading.Thread(target=self._drain_stderr, daemon=True)
        self._stdout_thread.start()
        self._stderr_thread.start()

        try:
            self._send({"fiesta_protocol": PROTOCOL_VERSION, "models": list(model_names)})
            reply = self._read_object()
            if reply.get("ok") is not True:
                raise ProtocolError(f"handshake rejected: {reply}")
            advertised = reply.get("max_in_flight")
            if not isinstance(advertised, int) or advertised < 1:
                raise ProtocolError(f"handshake max_in_flight must be a positive integer: {reply}")
        except Exception:
            self._kill()
            raise
        self._max_in_flight = advertised if max_in_flight is None else min(advertised, max_in_flight)

    def _drain_stdout(self):
        try:
            for line in self._child.stdout:
                self._lines.put(line)
        except ValueError:
            pass
        self._lines.put(None)

    def _drain_stderr(self):
        try:
            for line in self._child.stderr:
                self._stderr_chunks.append(line)
        except ValueError:
            pass

    def _stderr_text(self) -> str:
        return "".join(self._stderr_chunks).strip()

    def _send(self, obj: dict) -> None:
        try:
            self._child.stdin.write(json.dumps(obj) + "\n")
            self._child.stdin.flush()
        except (BrokenPipeError, OSError) as e:
            raise EvaluatorFailure(
                f"evaluator child is not accepting requests ({e})", stderr=self._stderr_text()
            ) from e

    def _read_object(self) -> dict:
        try:
            line = self._lines.get(timeout=self._timeout)
        except queue.Empty:
            raise EvaluatorFailure(
                f"evaluator response timed out after {self._timeout}s",
                stderr=self._stderr_text(),
            ) from None
        if line is None:
            code = self._child.wait()
            raise EvaluatorFailure(
                f"evaluator child exited (code {code}) with {len(self._pending)} "
                f"requests outstanding",
                stderr=self._stderr_text(),
            )
        try:
            obj = json.loads(line)
        except json.JSONDecodeError:
            raise ProtocolError(f"malformed response line: {line.strip()!r}") from None
        if not isinstance(obj, dict):
            raise ProtocolError(f"response must be a JSON object: {line.strip()!r}")
        return obj

    @property
    def max_in_flight(self) -> Optional[int]:
        return self._max_in_flight

    def submit(self, request: EvaluationRequest) -> None:
        if len(self._pending) >= self._max_in_flight:
            raise RuntimeError(
                f"submit() beyond the evaluator's pipeline depth ({self._max_in_flight})"
            )
        self._pending[request.sequence] = request
        self._send(
            {
                "id": request.sequence,
                "model": request.model.name,
                "split_seed": request.split_seed,
                "model_seed": request.model_seed,
            }
        )

    def collect(self) -> EvaluationScore:
        if not self._pending:
            raise RuntimeError("collect() with no pending requests")
        obj = self._read_object()
        rid = obj.get("id")
        if rid not in self._pending:
            raise ProtocolError(f"response id {rid!r} does not match any outstanding request")
        request = self._pending.pop(rid)
        if "error" in obj:
            raise EvaluationError(request, str(obj["error"]))
        score = obj.get("score")
        if not isinstance(score, (int, float)) or isinstance(score, bool) or not math.isfinite(score):
            raise ProtocolError(f"response for id {rid} has no finite score: {obj}")
        return EvaluationScore(request=request, score=float(score))

    def pending(self) -> int:
        return len(self._pending)

    def _kill(self) -> None:
        if self._child.poll() is None:
            self._child.kill()
        self._child.wait()

    def close(self) -> None:
        if self._closed:
            return
        self._closed = True
        if self._child.poll() is None:
            try:
                self._send({"shutdown": True})
                self._child.stdin.close()
            except (EvaluatorFailure, OSError):
                pass
            try:
                self._child.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self._kill()
