"""Entropy-gated branching search and its beam-search / self-consistency endpoints.

Randomness is keyed, not sequential: every random draw comes from a
generator seeded by (master seed, purpose, beam key). A beam key is the path
of (branch index, replica index) pairs from the root, so results do not
depend on the order in which beams are expanded.
"""
from __future__ import annotations

import math
import time
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Optional, Sequence

from egb import prob
from egb.answers import extract_answer, normalize_answer
from egb.lm.base import (
    GenerationEvent,
    MeteredModel,
    ModelContext,
    SamplerSettings,
    SequenceModel,
    StepBoundaryRule,
    StepOutput,
    generate_step,
)
from egb.prob import TokenDistribution
from egb.verify import AGGREGATION_RULES, ScoredCandidate, StepScore, Verifier, rank_candidates

METHODS = ("standard", "beam_search", "egb", "self_consistency")

# Default threshold for the built-in toy models, picked by the harness tau sweep
# on the default synthetic suite (scripts/tau_sweep.py).
DEFAULT_TAU = 1.5

# seed purposes
_PROBE, _BRANCH, _SPLIT = 0, 1, 2


class ConfigError(ValueError):
    pass


class SearchError(RuntimeError):
    """Search aborted; ``partial`` holds the SearchResult built so far."""

    def __init__(self, message: str, partial: Any = None):
        super().__init__(message)
        self.partial = partial


def _tau_to_json(tau: float):
    return "inf" if math.isinf(tau) else tau


def parse_tau(value) -> float:
    if isinstance(value, str):
        v = value.strip().lower()
        if v in ("inf", "infinity", "+inf", "∞"):
            return math.inf
        try:
            value = float(v)
        except ValueError as exc:
            raise ConfigError(f"invalid tau {value!r}") from exc
    value = float(value)
    if math.isnan(value) or value < 0:
        raise ConfigError(f"tau must be a nonnegative number of bits or 'inf', got {value!r}")
    return value


@dataclass(frozen=True)
class SearchConfig:
    """Search hyperparameters.

    ``tau`` is in bits; ``None`` takes the method's value (0 for beam search,
    infinity for standard decoding and self-consistency, ``DEFAULT_TAU`` for
    egb). Standard decoding always runs with one beam of width one.
    """

    method: str = "egb"
    tau: Optional[float] = None
    beam_size: int = 4
    beam_width: int = 4
    max_steps: int = 32
    base_temperature: float = 0.7
    branch_temperature: float = 1.0
    step_rule: StepBoundaryRule = field(default_factory=StepBoundaryRule)
    seed: int = 0
    aggregation: str = "last"
    rescore_history: bool = False
    certain_decoding: str = "sample"
    gate: str = "any"
    workers: int = 1

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {self.method!r}")
        tau = None if self.tau is None else parse_tau(self.tau)
        if self.method == "beam_search":
            if tau not in (None, 0.0):
                raise ConfigError(f"method beam_search forces tau=0, got tau={self.tau}")
            tau = 0.0
        elif self.method in ("self_consistency", "standard"):
            if tau is not None and not math.isinf(tau):
                raise ConfigError(f"method {self.method} forces tau=inf, got tau={self.tau}")
            tau = math.inf
        elif tau is None:
            tau = DEFAULT_TAU
        object.__setattr__(self, "tau", tau)
        if self.method == "standard":
            object.__setattr__(self, "beam_size", 1)
            object.__setattr__(self, "beam_width", 1)
        for name in ("beam_size", "beam_width", "max_steps", "workers"):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v < 1:
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")
        for name in ("base_temperature", "branch_temperature"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and v > 0 and math.isfinite(v)):
                raise ConfigError(f"{name} must be a positive number, got {v!r}")
        if self.aggregation not in AGGREGATION_RULES:
            raise ConfigError(f"aggregation must be one of {AGGREGATION_RULES}, got {self.aggregation!r}")
        if self.certain_decoding not in ("sample", "greedy"):
            raise ConfigError("certain_decoding must be 'sample' or 'greedy'")
        if self.gate not in ("any", "first"):
            raise ConfigError("gate must be 'any' or 'first'")
        if isinstance(self.step_rule, dict):
            object.__setattr__(self, "step_rule", StepBoundaryRule(**self.step_rule))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["tau"] = _tau_to_json(self.tau)
        d["step_rule"] = {
            "delimiters": list(self.step_rule.delimiters),
            "max_step_tokens": self.step_rule.max_step_tokens,
            "terminal_markers": list(self.step_rule.terminal_markers),
        }
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "SearchConfig":
        data = dict(data)
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "step_rule" in data and isinstance(data["step_rule"], dict):
            data["step_rule"] = StepBoundaryRule(**data["step_rule"])
        return cls(**data)


@dataclass(frozen=True)
class TokenRecord:
    token_id: int
    text: str
    entropy_bits: float
    varentropy_bits2: float
    sampler_state: str
    step_index: int
    lower_bound: bool = False


@dataclass(frozen=True)
class BranchEvent:
    step_index: int
    t_star: int
    position: int
    entropy_bits: float


@dataclass(frozen=True)
class Beam:
    id: int
    key: tuple[int, ...]
    ctx: ModelContext
    steps: tuple[str, ...] = ()
    step_scores: tuple[StepScore, ...] = ()
    tokens: tuple[TokenRecord, ...] = ()
    finished: bool = False
    branch_events: tuple[BranchEvent, ...] = ()
    aggregate: float = 0.0
    parent_id: Optional[int] = None

    @property
    def lineage(self) -> Optional[int]:
        return self.key[0] if self.key else None

    @property
    def text(self) -> str:
        return self.ctx.generated_text

    @property
    def entropy_trace(self) -> list[prob.UncertaintyReading]:
        return [prob.UncertaintyReading(t.entropy_bits, t.varentropy_bits2) for t in self.tokens]

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "parent_id": self.parent_id,
            "key": list(self.key),
            "text": self.text,
            "finished": self.finished,
            "aggregate": self.aggregate,
            "steps": [
                {"text": t, "score": s.value, "scorer_id": s.scorer_id}
                for t, s in zip(self.steps, self.step_scores)
            ],
            "branch_events": [asdict(e) for e in self.branch_events],
            "n_tokens": len(self.tokens),
        }


@dataclass(frozen=True)
class Candidate:
    """One entry of a step's candidate pool.

    Finished beams enter the pool as pass-through entries with
    ``frozen_scores`` set and no new step.
    """

    source_index: int
    source_beam_id: int
    branch_index: int
    key: tuple[int, ...]
    parent: Beam
    ctx: ModelContext
    step_text: Optional[str] = None
    step_tokens: tuple[TokenRecord, ...] = ()
    stop_reason: str = ""
    branch_event: Optional[BranchEvent] = None
    frozen_scores: Optional[tuple[StepScore, ...]] = None

    @property
    def passthrough(self) -> bool:
        return self.step_text is None

    @property
    def context(self) -> str:
        return self.parent.ctx.prompt

    @property
    def step_texts(self) -> tuple[str, ...]:
        if self.passthrough:
            return self.parent.steps
        return self.parent.steps + (self.step_text,)

    @property
    def prior_scores(self) -> tuple[StepScore, ...]:
        return self.parent.step_scores

    @property
    def full_tokens(self) -> tuple[int, ...]:
        return self.ctx.token_ids

    @property
    def finished(self) -> bool:
        return self.parent.finished if self.passthrough else self.stop_reason == "terminal"


@dataclass
class CandidatePool:
    entries: list[Candidate]
    n_certain: int = 0
    n_uncertain: int = 0
    n_finished: int = 0
    dedup_removed: int = 0
    tokens_sampled: int = 0
    # (removed duplicate, surviving twin)
    removed: list[tuple[Candidate, Candidate]] = field(default_factory=list)

    @property
    def generated(self) -> int:
        return sum(1 for c in self.entries if not c.passthrough) + sum(1 for c, _ in self.removed if not c.passthrough)

    def __len__(self) -> int:
        return len(self.entries)


@dataclass(frozen=True)
class StepStats:
    step: int
    n_beams: int
    n_certain: int
    n_uncertain: int
    n_finished: int
    generated: int
    pool_size: int
    after_dedup: int
    kept: int
    verifier_calls: int


@dataclass
class SearchResult:
    best_beam: Beam
    all_beams: list[Beam]
    answer: str
    config: SearchConfig
    total_candidates_generated: int = 0
    total_model_calls: int = 0
    total_tokens_generated: int = 0
    total_verifier_calls: int = 0
    total_branch_events: int = 0
    steps_run: int = 0
    wall_time_ms: float = 0.0
    per_step_pool_sizes: list[int] = field(default_factory=list)
    step_stats: list[StepStats] = field(default_factory=list)

    @property
    def branch_events(self) -> list[tuple[int, BranchEvent]]:
        """Branch events on the lineage of every returned beam, as (beam id, event)."""
        return [(b.id, e) for b in self.all_beams for e in b.branch_events]

    def to_dict(self, include_timing: bool = True) -> dict:
        d = {
            "answer": self.answer,
            "best_beam_id": self.best_beam.id,
            "config": self.config.to_dict(),
            "counters": {
                "candidates_generated": self.total_candidates_generated,
                "model_calls": self.total_model_calls,
                "tokens_generated": self.total_tokens_generated,
                "verifier_calls": self.total_verifier_calls,
                "branch_events": self.total_branch_events,
                "steps_run": self.steps_run,
            },
            "per_step_pool_sizes": list(self.per_step_pool_sizes),
            "step_stats": [asdict(s) for s in self.step_stats],
            "beams": [b.to_dict() for b in self.all_beams],
        }
        if include_timing:
            d["wall_time_ms"] = self.wall_time_ms
        return d


def detect_first_exceedance(events: Sequence[GenerationEvent], tau: float) -> Optional[int]:
    """Position (within the step) of the first token whose entropy exceeds tau."""
    for i, e in enumerate(events):
        if prob.entropy(e.distribution) > tau:
            return i
    return None


def _records(events: Sequence[GenerationEvent], step_index: int, states: Sequence[str]) -> tuple[TokenRecord, ...]:
    out = []
    for e, state in zip(events, states):
        d = e.distribution
        out.append(
            TokenRecord(e.token_id, e.text, prob.entropy(d), prob.varentropy(d), state, step_index, d.lower_bound)
        )
    return tuple(out)


class _Expander:
    """Generates the candidates of one step for one search."""

    def __init__(self, cfg: SearchConfig, model, lineage: int = 0):
        self.cfg = cfg
        self.model = model
        self.lineage = lineage
        self.rule = cfg.step_rule
        self.base = SamplerSettings(cfg.base_temperature, greedy=cfg.certain_decoding == "greedy")
        self.branch = SamplerSettings(cfg.branch_temperature)

    def rng(self, purpose: int, key: tuple[int, ...]):
        return prob.make_rng(self.cfg.seed, (purpose, *key))

    def key(self, beam: Beam, j: int) -> tuple[int, ...]:
        if not beam.key:
            return (self.lineage + j, 0)
        return beam.key + (j, 0)

    def halt(self):
        tau = self.cfg.tau
        if math.isinf(tau):
            return None
        if self.cfg.gate == "first":
            return lambda d, pos: pos == 0 and prob.entropy(d) > tau
        return lambda d, pos: prob.entropy(d) > tau

    def candidate(self, slot, beam, j, out: StepOutput, tokens, event=None, text=None) -> Candidate:
        return Candidate(
            source_index=slot,
            source_beam_id=beam.id,
            branch_index=j,
            key=self.key(beam, j),
            parent=beam,
            ctx=out.ctx,
            step_text=out.text if text is None else text,
            step_tokens=tokens,
            stop_reason=out.stop_reason,
            branch_event=event,
        )

    def sample_certain(self, beam, j, halt=None) -> StepOutput:
        return generate_step(self.model, beam.ctx, self.rule, self.base, self.rng(_PROBE, self.key(beam, j)), halt=halt)

    def rollback_and_branch(self, slot, beam, step_index, probe: StepOutput) -> tuple[list[Candidate], int]:
        """Branch W ways at the probe's halting position t*.

        The probe stopped before sampling t*, so its tokens are exactly the
        kept prefix [0, t*). The W tokens at t* are drawn jointly
        (stratified) at the branch temperature; each branch then runs to the
        step boundary on its own generator.
        """
        cfg = self.cfg
        t_star = len(probe.tokens)
        dist = probe.halted_dist
        firsts = prob.sample_stratified(
            prob.apply_temperature(dist, cfg.branch_temperature), cfg.beam_width, self.rng(_SPLIT, beam.key or (self.lineage,))
        )
        prefix = _records(probe.events, step_index, ["certain"] * t_star)
        event = BranchEvent(step_index, t_star, len(beam.tokens) + t_star, prob.entropy(dist))
        cands, sampled = [], t_star
        for j in range(cfg.beam_width):
            out = generate_step(
                self.model, probe.ctx, self.rule, self.branch, self.rng(_BRANCH, self.key(beam, j)),
                first_dist=dist, first_index=firsts[j], step_prefix=probe.text, prefix_len=t_star,
            )
            states = ["branch_point"] + ["uncertain"] * (len(out.events) - 1)
            tokens = prefix + _records(out.events, step_index, states)
            cands.append(self.candidate(slot, beam, j, out, tokens, event, probe.text + out.text))
            sampled += len(out.tokens)
        return cands, sampled

    def expand_gated(self, slot, beam, step_index):
        probe = self.sample_certain(beam, 0, self.halt())
        if probe.stop_reason == "halt":
            cands, sampled = self.rollback_and_branch(slot, beam, step_index, probe)
            return cands, True, sampled
        cands = [self.candidate(slot, beam, 0, probe, _records(probe.events, step_index, ["certain"] * len(probe.events)))]
        sampled = len(probe.tokens)
        # a lone root needs K distinct starting points; a fully deterministic step has only one
        if not beam.steps and not beam.key and any(not e.distribution.is_degenerate for e in probe.events):
            for j in range(1, self.cfg.beam_size):
                out = self.sample_certain(beam, j)
                cands.append(self.candidate(slot, beam, j, out, _records(out.events, step_index, ["certain"] * len(out.events))))
                sampled += len(out.tokens)
        return cands, False, sampled

    def expand_beam_search(self, slot, beam, step_index):
        """W samples from the step start that share one stratified draw at the
        first position with a non-degenerate distribution. A step with no such
        position yields a single candidate, since its W copies would coincide."""
        cfg = self.cfg
        W = cfg.beam_width
        split_rng = self.rng(_SPLIT, beam.key or (self.lineage,))
        shared: dict[str, Any] = {}
        cands, sampled = [], 0
        for j in range(W):
            state: dict[str, Any] = {"at": None}

            def picker(dist: TokenDistribution, pos: int, j=j, state=state):
                if state["at"] is not None or dist.is_degenerate:
                    return None
                if "firsts" not in shared:
                    shared["firsts"] = prob.sample_stratified(prob.apply_temperature(dist, cfg.branch_temperature), W, split_rng)
                state["at"] = pos
                return shared["firsts"][j]

            out = generate_step(self.model, beam.ctx, self.rule, self.branch, self.rng(_BRANCH, self.key(beam, j)), picker=picker)
            sampled += len(out.tokens)
            t = state["at"]
            if t is None:
                tokens = _records(out.events, step_index, ["certain"] * len(out.events))
                return [self.candidate(slot, beam, 0, out, tokens)], False, sampled
            states = ["certain"] * t + ["branch_point"] + ["uncertain"] * (len(out.events) - t - 1)
            event = BranchEvent(step_index, t, len(beam.tokens) + t, prob.entropy(out.events[t].distribution))
            cands.append(self.candidate(slot, beam, j, out, _records(out.events, step_index, states), event))
        return cands, True, sampled


def expand_step(
    beams: Sequence[Beam],
    cfg: SearchConfig,
    model: SequenceModel,
    step_index: int = 1,
    *,
    lineage: int = 0,
    workers: Optional[int] = None,
) -> CandidatePool:
    """Build the candidate pool for one step.

    Certain beams contribute one continuation, uncertain beams W, finished
    beams pass through unchanged. A certain root beam contributes K
    continuations so that K beams exist after the first selection.
    """
    if all(b.finished for b in beams):
        raise ValueError("expand_step needs at least one unfinished beam")
    ex = _Expander(cfg, model, lineage)

    def one(slot):
        beam = beams[slot]
        if beam.finished:
            return [Candidate(slot, beam.id, 0, beam.key, beam, beam.ctx, frozen_scores=beam.step_scores)], None, 0
        if cfg.method == "beam_search":
            return ex.expand_beam_search(slot, beam, step_index)
        return ex.expand_gated(slot, beam, step_index)

    n_workers = cfg.workers if workers is None else workers
    if n_workers > 1 and len(beams) > 1:
        with ThreadPoolExecutor(n_workers) as pool:
            results = list(pool.map(one, range(len(beams))))
    else:
        results = [one(i) for i in range(len(beams))]
    return CandidatePool(
        [c for cands, _, _ in results for c in cands],
        n_certain=sum(1 for _, u, _ in results if u is False),
        n_uncertain=sum(1 for _, u, _ in results if u is True),
        n_finished=sum(1 for _, u, _ in results if u is None),
        tokens_sampled=sum(n for _, _, n in results),
    )


def dedup(pool: CandidatePool) -> CandidatePool:
    """Drop candidates whose full token sequence repeats an earlier one.

    The first occurrence in (source beam index, branch index) order survives.
    """
    seen: dict[tuple[int, ...], Candidate] = {}
    kept, removed = [], list(pool.removed)
    for c in sorted(pool.entries, key=lambda c: (c.source_index, c.branch_index)):
        twin = seen.get(c.full_tokens)
        if twin is None:
            seen[c.full_tokens] = c
            kept.append(c)
        else:
            removed.append((c, twin))
    return replace(pool, entries=kept, removed=removed, dedup_removed=len(removed))


def select_top_k(ranked: Sequence[ScoredCandidate], pool: CandidatePool, k: int) -> list[ScoredCandidate]:
    """Top-k of the ranking.

    A short pool is topped up first with the removed duplicates of the best
    survivors (they keep their own keys and copy their twin's scores), then
    with replicas of the survivors in rank order.
    """
    chosen = list(ranked[:k])
    if len(chosen) >= k:
        return chosen
    rank_of = {id(sc.candidate): r for r, sc in enumerate(ranked)}
    dups = sorted(pool.removed, key=lambda d: (rank_of[id(d[1])], d[0].branch_index, d[0].source_index))
    for dup, twin in dups:
        if len(chosen) >= k:
            return chosen
        t = ranked[rank_of[id(twin)]]
        chosen.append(ScoredCandidate(dup, t.step_scores, t.aggregate))
    base = list(chosen)
    # children of the root get fresh lineages, so a replicated root step
    # continues like an independent chain; deeper replicas bump the last key slot
    next_lineage = 1 + max(c.key[0] for c in list(pool.entries) + [d for d, _ in pool.removed])
    r = 1
    while len(chosen) < k:
        for sc in base:
            if len(chosen) >= k:
                break
            c = sc.candidate
            if not c.parent.key and not c.passthrough:
                key = (next_lineage,) + c.key[1:]
                next_lineage += 1
            else:
                key = c.key[:-1] + (c.key[-1] + r,)
            chosen.append(ScoredCandidate(replace(c, key=key), sc.step_scores, sc.aggregate))
        r += 1
    return chosen


def _to_beam(sc: ScoredCandidate, new_id: int) -> Beam:
    c = sc.candidate
    p = c.parent
    if c.passthrough:
        return replace(p, id=new_id, key=c.key)
    return Beam(
        id=new_id,
        key=c.key,
        ctx=c.ctx,
        steps=p.steps + (c.step_text,),
        step_scores=sc.step_scores,
        tokens=p.tokens + c.step_tokens,
        finished=c.finished,
        branch_events=p.branch_events + ((c.branch_event,) if c.branch_event else ()),
        aggregate=sc.aggregate,
        parent_id=p.id,
    )


def best_beam(beams: Sequence[Beam]) -> Beam:
    """Highest aggregate among finished beams, else among all; earlier beams win ties."""
    pool = [b for b in beams if b.finished] or list(beams)
    best = pool[0]
    for b in pool[1:]:
        if b.aggregate > best.aggregate:
            best = b
    return best


def _search_beams(problem: str, cfg: SearchConfig, model, verifier: Verifier, lineage: int) -> SearchResult:
    t0 = time.perf_counter()
    metered = MeteredModel(model)
    root = Beam(id=0, key=(), ctx=metered.start(problem))
    beams = [root]
    next_id = 1
    result = SearchResult(root, [root], "", cfg)
    try:
        for step in range(1, cfg.max_steps + 1):
            if all(b.finished for b in beams):
                break
            pool = expand_step(beams, cfg, metered, step, lineage=lineage)
            size = len(pool.entries)
            generated = size - pool.n_finished
            pool = dedup(pool)
            todo = sum(1 for c in pool.entries if c.frozen_scores is None)
            ranked = rank_candidates(pool, verifier, cfg.aggregation, cfg.rescore_history, cfg.workers)
            new_beams: list[Beam] = []
            for sc in select_top_k(ranked, pool, cfg.beam_size):
                c = sc.candidate
                if c.passthrough and all(b.id != c.parent.id for b in new_beams):
                    new_beams.append(_to_beam(sc, c.parent.id))
                else:
                    new_beams.append(_to_beam(sc, next_id))
                    next_id += 1
            result.per_step_pool_sizes.append(size)
            result.step_stats.append(StepStats(
                step, len(beams), pool.n_certain, pool.n_uncertain, pool.n_finished,
                generated, size, len(pool.entries), len(new_beams), todo,
            ))
            beams = new_beams
            result.total_candidates_generated += generated
            result.total_tokens_generated += pool.tokens_sampled
            result.total_verifier_calls += todo
            result.total_branch_events += pool.n_uncertain
            result.steps_run = step
            result.all_beams = beams
            result.best_beam = best_beam(beams)
    except Exception as exc:
        result.total_model_calls = metered.calls
        result.wall_time_ms = (time.perf_counter() - t0) * 1e3
        raise SearchError(f"search failed at step {result.steps_run + 1}: {exc}", result) from exc
    result.total_model_calls = metered.calls
    result.answer = extract_answer(result.best_beam.text, cfg.step_rule.terminal_markers)
    result.wall_time_ms = (time.perf_counter() - t0) * 1e3
    return result


def self_consistency_vote(answers: Sequence[str], scores: Optional[Sequence[float]] = None) -> str:
    """Majority answer after normalization.

    Ties go to the answer whose beams have the highest mean score, then to the
    lexicographically smallest normalized answer.
    """
    if not answers:
        raise ValueError("cannot vote over an empty answer list")
    if scores is not None and len(scores) != len(answers):
        raise ValueError("scores must align with answers")
    norm = [normalize_answer(a) for a in answers]
    counts = Counter(norm)
    top = max(counts.values())
    tied = [a for a in counts if counts[a] == top]

    def mean_score(a):
        if scores is None:
            return 0.0
        vals = [s for n, s in zip(norm, scores) if n == a]
        return math.fsum(vals) / len(vals)

    return min(tied, key=lambda a: (-mean_score(a), a))


def _self_consistency(problem: str, cfg: SearchConfig, model, verifier: Verifier) -> SearchResult:
    t0 = time.perf_counter()
    chain_cfg = replace(cfg, method="standard", tau=None)
    chains = []
    for i in range(cfg.beam_size):
        try:
            chains.append(_search_beams(problem, chain_cfg, model, verifier, lineage=i))
        except SearchError as exc:
            raise SearchError(f"self-consistency chain {i}: {exc}", exc.partial) from exc
    beams = [replace(r.best_beam, id=i + 1) for i, r in enumerate(chains)]
    answers = [r.answer for r in chains]
    winner = self_consistency_vote(answers, [b.aggregate for b in beams])
    best = best_beam([b for b, a in zip(beams, answers) if normalize_answer(a) == winner])
    n_steps = max(len(r.per_step_pool_sizes) for r in chains)
    # a chain that already finished counts as one pass-through entry per step
    sizes = [sum(r.per_step_pool_sizes[t] if t < len(r.per_step_pool_sizes) else 1 for r in chains) for t in range(n_steps)]
    result = SearchResult(
        best_beam=best,
        all_beams=beams,
        answer=extract_answer(best.text, cfg.step_rule.terminal_markers),
        config=cfg,
        total_candidates_generated=sum(r.total_candidates_generated for r in chains),
        total_model_calls=sum(r.total_model_calls for r in chains),
        total_tokens_generated=sum(r.total_tokens_generated for r in chains),
        total_verifier_calls=sum(r.total_verifier_calls for r in chains),
        total_branch_events=0,
        steps_run=n_steps,
        per_step_pool_sizes=sizes,
    )
    result.wall_time_ms = (time.perf_counter() - t0) * 1e3
    return result


def run_search(
    problem: str,
    cfg: SearchConfig,
    model: SequenceModel,
    verifier: Verifier,
    *,
    lineage: int = 0,
) -> SearchResult:
    """Solve ``problem`` with the configured method.

    ``lineage`` offsets the root's branch keys. Standard decoding with
    lineage i reproduces chain i of a K-chain self-consistency run.
    """
    if cfg.method == "self_consistency":
        return _self_consistency(problem, cfg, model, verifier)
    return _search_beams(problem, cfg, model, verifier, lineage)


def rollback_and_branch(
    beam: Beam,
    partial: StepOutput,
    t_star: int,
    cfg: SearchConfig,
    model: SequenceModel,
    step_index: int = 1,
    slot: int = 0,
) -> list[Candidate]:
    """Truncate a generated partial step to [0, t*) and branch W ways at t*."""
    events = partial.events
    if not 0 <= t_star < len(events):
        raise ValueError(f"t*={t_star} is not a position of the partial step ({len(events)} tokens)")
    kept = events[:t_star]
    text = "".join(e.text for e in kept)
    ids = tuple(e.token_id for e in kept)
    probe = StepOutput(ids, tuple(kept), "halt", text, beam.ctx.extend(ids, text), events[t_star].distribution)
    return _Expander(cfg, model).rollback_and_branch(slot, beam, step_index, probe)[0]
