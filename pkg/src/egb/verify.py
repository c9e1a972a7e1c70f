"""Process-reward verifiers and candidate ranking."""
from __future__ import annotations

import hashlib
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Callable, Mapping, Optional, Sequence

import httpx

from egb._http import JsonClient, MalformedResponse

AGGREGATION_RULES = ("last", "min", "product", "mean")


class ScoreValidationError(ValueError):
    pass


class VerificationError(RuntimeError):
    """A verifier call failed while ranking a step's candidates."""

    def __init__(self, message: str, candidate: Any = None):
        super().__init__(message)
        self.candidate = candidate


@dataclass(frozen=True)
class StepScore:
    value: float
    scorer_id: str = ""
    latency_ms: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.value <= 1.0:
            raise ScoreValidationError(f"score {self.value!r} outside [0, 1]")
        if self.latency_ms < 0:
            raise ScoreValidationError("negative latency")


@dataclass(frozen=True)
class ScoredCandidate:
    candidate: Any
    step_scores: tuple[StepScore, ...]
    aggregate: float


class Verifier:
    """Scores a partial solution step by step.

    ``score_steps`` receives the problem text and every step so far and
    returns one value in [0, 1] per step; the last entry rates the newest step
    given all earlier ones.
    """

    scorer_id = "verifier"
    concurrent_safe = True

    def score_steps(self, context: str, steps: Sequence[str]) -> list[float]:
        raise NotImplementedError


def _check_values(values, n_steps: int, scorer_id: str) -> list[float]:
    out = [float(v) for v in values]
    if not out:
        raise ScoreValidationError(f"{scorer_id} returned no scores")
    if len(out) > n_steps:
        raise ScoreValidationError(f"{scorer_id} returned {len(out)} scores for {n_steps} steps")
    for v in out:
        if not (0.0 <= v <= 1.0):
            raise ScoreValidationError(f"{scorer_id} returned score {v!r} outside [0, 1]")
    return out


def score_history(verifier: Verifier, context: str, steps: Sequence[str]) -> list[StepScore]:
    if not context:
        raise ValueError("context must be non-empty")
    if not steps:
        raise ValueError("need at least one step to score")
    t0 = time.perf_counter()
    values = _check_values(verifier.score_steps(context, list(steps)), len(steps), verifier.scorer_id)
    ms = (time.perf_counter() - t0) * 1e3
    return [StepScore(v, verifier.scorer_id, ms) for v in values]


def score(verifier: Verifier, context: str, candidate_steps: Sequence[str]) -> StepScore:
    """Score of the newest step in ``candidate_steps``."""
    return score_history(verifier, context, candidate_steps)[-1]


def aggregate_scores(step_scores: Sequence[StepScore | float], rule: str = "last") -> float:
    if not step_scores:
        raise ValueError("cannot aggregate an empty score list")
    vals = [s.value if isinstance(s, StepScore) else float(s) for s in step_scores]
    if rule == "last":
        return vals[-1]
    if rule == "min":
        return min(vals)
    if rule == "product":
        return math.prod(vals)
    if rule == "mean":
        return math.fsum(vals) / len(vals)
    raise ValueError(f"unknown aggregation rule {rule!r}; expected one of {AGGREGATION_RULES}")


def rank_key(sc: ScoredCandidate) -> tuple:
    c = sc.candidate
    return (-sc.aggregate, c.source_index, c.branch_index)


def rank_candidates(
    pool,
    verifier: Verifier,
    rule: str = "last",
    rescore_history: bool = False,
    workers: int = 1,
) -> list[ScoredCandidate]:
    """Score every entry of a deduplicated pool and sort it best first.

    Entries that carry ``frozen_scores`` (finished beams) are not re-scored.
    Ties are broken by (source beam index, branch index).
    """
    entries = list(getattr(pool, "entries", pool))
    todo = [i for i, c in enumerate(entries) if c.frozen_scores is None]

    def run(i):
        c = entries[i]
        try:
            hist = score_history(verifier, c.context, c.step_texts)
        except Exception as exc:
            raise VerificationError(
                f"verifier failed on candidate from beam {c.source_beam_id} branch {c.branch_index}: {exc}", c
            ) from exc
        if rescore_history:
            if len(hist) != len(c.step_texts):
                raise VerificationError("rescore_history needs one score per step from the verifier", c)
            return tuple(hist)
        return tuple(c.prior_scores) + (hist[-1],)

    if workers > 1 and len(todo) > 1 and getattr(verifier, "concurrent_safe", True):
        with ThreadPoolExecutor(workers) as ex:
            results = list(ex.map(run, todo))
    else:
        results = [run(i) for i in todo]
    scores = {i: r for i, r in zip(todo, results)}
    scored = []
    for i, c in enumerate(entries):
        hist = scores[i] if i in scores else tuple(c.frozen_scores)
        scored.append(ScoredCandidate(c, hist, aggregate_scores(hist, rule)))
    scored.sort(key=rank_key)
    return scored


def text_hash(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def hash_score(text: str) -> float:
    """Deterministic pseudo-random score in [0, 1) derived from the text."""
    return int(text_hash(text)[:13], 16) / 16**13


class ScriptedVerifier(Verifier):
    """Scores steps by table lookup on the step text or its sha256 hex digest.

    Unlisted steps get ``default``, or a hash-derived pseudo-random score
    when ``default`` is None.
    """

    def __init__(self, table: Optional[Mapping[str, float]] = None, default: Optional[float] = None, scorer_id: str = "scripted"):
        self.table = dict(table or {})
        self.default = default
        self.scorer_id = scorer_id

    def step_value(self, text: str) -> float:
        if text in self.table:
            return self.table[text]
        h = text_hash(text)
        for key in (h, h[:16], h[:8]):
            if key in self.table:
                return self.table[key]
        return hash_score(text) if self.default is None else self.default

    def score_steps(self, context, steps):
        return [self.step_value(s) for s in steps]

    @classmethod
    def from_json(cls, data: dict) -> "ScriptedVerifier":
        return cls(data.get("table"), data.get("default"), data.get("scorer_id", "scripted"))


class CallableVerifier(Verifier):
    def __init__(self, fn: Callable[[str, Sequence[str]], Sequence[float]], scorer_id: str = "callable"):
        self.fn = fn
        self.scorer_id = scorer_id

    def score_steps(self, context, steps):
        return list(self.fn(context, steps))


def _logistic(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    z = math.exp(x)
    return z / (1.0 + z)


class RemoteVerifier(Verifier):
    """Client for ``POST /v1/score {context, steps} -> {step_scores, scorer_id}``.

    When the response sets ``"score_type": "logit"`` scores are mapped
    through the logistic function; otherwise they must already lie in [0, 1].
    """

    def __init__(
        self,
        endpoint: str,
        token: Optional[str] = None,
        timeout: float = 60.0,
        max_retries: int = 3,
        backoff: float = 0.5,
        max_in_flight: int = 8,
        transport: Optional[httpx.BaseTransport] = None,
        sleep=None,
    ):
        kwargs = {} if sleep is None else {"sleep": sleep}
        self.client = JsonClient(endpoint, token, timeout, max_retries, backoff, max_in_flight, transport, **kwargs)
        self.scorer_id = "remote"

    @classmethod
    def from_env(cls, **kwargs) -> "RemoteVerifier":
        url = os.environ.get("EGB_PRM_URL")
        if not url:
            raise ValueError("EGB_PRM_URL is not set")
        return cls(url, os.environ.get("EGB_PRM_TOKEN"), **kwargs)

    def score_steps(self, context, steps):
        data = self.client.post("/v1/score", {"context": context, "steps": list(steps)})
        raw = data.get("step_scores")
        if not isinstance(raw, list) or not raw:
            raise MalformedResponse("response lacks a non-empty step_scores list", data)
        try:
            vals = [float(v) for v in raw]
        except (TypeError, ValueError) as exc:
            raise MalformedResponse(f"non-numeric score in {raw!r}", data) from exc
        if data.get("score_type") == "logit":
            vals = [_logistic(v) for v in vals]
        self.scorer_id = str(data.get("scorer_id", self.scorer_id))
        for v in vals:
            if not 0.0 <= v <= 1.0:
                raise ScoreValidationError(f"remote score {v!r} outside [0, 1]")
        return vals
