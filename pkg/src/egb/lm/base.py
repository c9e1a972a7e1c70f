from __future__ import annotations

import threading
from dataclasses import dataclass, replace
from typing import Callable, Optional, Sequence

import numpy as np

from egb import prob
from egb.prob import TokenDistribution

EOS = "<eos>"
DEFAULT_DELIMITERS = (".\n", "\n\n")
DEFAULT_MAX_STEP_TOKENS = 256


class ModelError(RuntimeError):
    pass


class ContextOverflowError(ModelError):
    pass


class TokenizationError(ModelError, ValueError):
    pass


@dataclass(frozen=True)
class ModelContext:
    """Token ids and their detokenized text, kept in sync.

    ``prompt_tokens`` / ``prompt_chars`` mark where the problem prompt ends so
    generated text can be separated from it.
    """

    token_ids: tuple[int, ...]
    text: str
    prompt_tokens: int = 0
    prompt_chars: int = 0

    @property
    def generated_ids(self) -> tuple[int, ...]:
        return self.token_ids[self.prompt_tokens:]

    @property
    def generated_text(self) -> str:
        return self.text[self.prompt_chars:]

    @property
    def prompt(self) -> str:
        return self.text[: self.prompt_chars]

    def extend(self, token_ids: Sequence[int], text: str) -> "ModelContext":
        return replace(self, token_ids=self.token_ids + tuple(token_ids), text=self.text + text)

    def __len__(self) -> int:
        return len(self.token_ids)


@dataclass(frozen=True)
class StepBoundaryRule:
    delimiters: tuple[str, ...] = DEFAULT_DELIMITERS
    max_step_tokens: int = DEFAULT_MAX_STEP_TOKENS
    terminal_markers: tuple[str, ...] = (EOS,)

    def __post_init__(self):
        object.__setattr__(self, "delimiters", tuple(self.delimiters))
        object.__setattr__(self, "terminal_markers", tuple(self.terminal_markers))
        if not self.delimiters or any(not d for d in self.delimiters):
            raise ValueError("delimiters must be a non-empty list of non-empty strings")
        if self.max_step_tokens < 1:
            raise ValueError("max_step_tokens must be >= 1")

    def is_terminal(self, text: str) -> bool:
        return any(text.endswith(m) for m in self.terminal_markers if m)


@dataclass(frozen=True)
class SamplerSettings:
    temperature: float = 1.0
    greedy: bool = False

    def pick(self, dist: TokenDistribution, rng: np.random.Generator) -> int:
        if self.greedy:
            return prob.greedy(dist)
        return prob.sample(prob.apply_temperature(dist, self.temperature), rng)


@dataclass(frozen=True)
class GenerationEvent:
    token_id: int
    distribution: TokenDistribution
    position: int
    text: str = ""


@dataclass(frozen=True)
class StepOutput:
    tokens: tuple[int, ...]
    events: tuple[GenerationEvent, ...]
    stop_reason: str
    text: str
    ctx: ModelContext
    # distribution at the position where generation halted, if it did
    halted_dist: Optional[TokenDistribution] = None


class Vocabulary:
    """Explicit token inventory with greedy longest-match encoding."""

    def __init__(self, tokens: Sequence[str]):
        self.tokens = tuple(tokens)
        if len(set(self.tokens)) != len(self.tokens):
            raise ValueError("vocabulary tokens must be unique")
        if any(t == "" for t in self.tokens):
            raise ValueError("empty token in vocabulary")
        self.index = {t: i for i, t in enumerate(self.tokens)}
        self._max_len = max(len(t) for t in self.tokens)

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.index

    def id(self, token: str) -> int:
        return self.index[token]

    def encode(self, text: str) -> list[int]:
        ids = []
        i = 0
        while i < len(text):
            for n in range(min(self._max_len, len(text) - i), 0, -1):
                tid = self.index.get(text[i : i + n])
                if tid is not None:
                    ids.append(tid)
                    i += n
                    break
            else:
                raise TokenizationError(f"cannot tokenize {text[i:i + 10]!r} at offset {i}")
        return ids

    def decode(self, ids: Sequence[int]) -> str:
        return "".join(self.tokens[i] for i in ids)


class SequenceModel:
    """Base for models the search engine drives.

    Subclasses implement ``next_distribution``. Set ``concurrent_safe = False``
    if calls must be serialized.
    """

    name = "model"
    concurrent_safe = True
    max_context: Optional[int] = None
    native_steps = False
    vocab: Vocabulary

    def encode(self, text: str) -> list[int]:
        return self.vocab.encode(text)

    def decode(self, ids: Sequence[int]) -> str:
        return self.vocab.decode(ids)

    def token_text(self, token_id: int) -> str:
        return self.vocab.tokens[token_id]

    def start(self, prompt: str) -> ModelContext:
        ids = tuple(self.encode(prompt))
        text = self.decode(ids)
        return ModelContext(ids, text, len(ids), len(text))

    def append(self, ctx: ModelContext, token_id: int, text: Optional[str] = None) -> ModelContext:
        return ctx.extend((token_id,), self.token_text(token_id) if text is None else text)

    def next_distribution(self, ctx: ModelContext) -> TokenDistribution:
        raise NotImplementedError


class MeteredModel:
    """Proxy that counts ``next_distribution`` calls and serializes serial models."""

    def __init__(self, model: SequenceModel):
        self.inner = model
        self.calls = 0
        self._count_lock = threading.Lock()
        self._call_lock = None if getattr(model, "concurrent_safe", True) else threading.Lock()

    def __getattr__(self, name):
        return getattr(self.inner, name)

    @property
    def native_steps(self):
        return getattr(self.inner, "native_steps", False)

    def encode(self, text):
        return self.inner.encode(text)

    def decode(self, ids):
        return self.inner.decode(ids)

    def token_text(self, token_id):
        return self.inner.token_text(token_id)

    def start(self, prompt):
        return self.inner.start(prompt)

    def append(self, ctx, token_id, text=None):
        return self.inner.append(ctx, token_id, text)

    def add_calls(self, n: int) -> None:
        with self._count_lock:
            self.calls += n

    def next_distribution(self, ctx):
        self.add_calls(1)
        if self._call_lock is None:
            return self.inner.next_distribution(ctx)
        with self._call_lock:
            return self.inner.next_distribution(ctx)

    def generate_step_native(self, *args, **kwargs):
        if self._call_lock is None:
            out = self.inner.generate_step_native(*args, **kwargs)
        else:
            with self._call_lock:
                out = self.inner.generate_step_native(*args, **kwargs)
        self.add_calls(1)
        return out


def next_distribution(model: SequenceModel, ctx: ModelContext) -> TokenDistribution:
    limit = getattr(model, "max_context", None)
    if limit is not None and len(ctx.token_ids) >= limit:
        raise ContextOverflowError(f"context of {len(ctx.token_ids)} tokens exceeds window of {limit}")
    return model.next_distribution(ctx)


def _resolve(model: SequenceModel, dist: TokenDistribution, index: int) -> tuple[int, str]:
    tid = dist.token_id(index)
    if dist.token_texts is not None:
        return tid, dist.token_texts[index]
    return tid, model.token_text(tid)


def _stop_reason(step_text: str, n_tokens: int, rule: StepBoundaryRule) -> Optional[str]:
    if rule.is_terminal(step_text):
        return "terminal"
    if any(step_text.endswith(d) for d in rule.delimiters):
        return "delimiter"
    if n_tokens >= rule.max_step_tokens:
        return "max_tokens"
    return None


Picker = Callable[[TokenDistribution, int], Optional[int]]
Halt = Callable[[TokenDistribution, int], bool]


def generate_step(
    model: SequenceModel,
    ctx: ModelContext,
    rule: StepBoundaryRule,
    sampler: SamplerSettings,
    rng: np.random.Generator,
    *,
    first_dist: Optional[TokenDistribution] = None,
    first_index: Optional[int] = None,
    halt: Optional[Halt] = None,
    picker: Optional[Picker] = None,
    step_prefix: str = "",
    prefix_len: int = 0,
) -> StepOutput:
    """Generate one reasoning step from ``ctx``.

    ``first_dist`` reuses an already computed distribution for position 0 and
    ``first_index`` forces the entry sampled there. ``halt`` is consulted
    before sampling each position; when it returns True generation stops
    with ``stop_reason == "halt"`` and the offending distribution attached.
    ``picker`` may override the sampler at any position by returning an index.
    ``step_prefix`` / ``prefix_len`` describe tokens of the current step that
    are already in ``ctx`` (resuming after a rollback); boundary checks and
    the token cap see the whole step.
    """
    if getattr(model, "native_steps", False):
        return _generate_step_native(model, ctx, rule, sampler, rng, first_dist, first_index, halt, step_prefix, prefix_len)
    if rule.is_terminal(ctx.text):
        return StepOutput((), (), "terminal", "", ctx)
    tokens: list[int] = []
    events: list[GenerationEvent] = []
    text = ""
    cur = ctx
    while True:
        pos = len(tokens)
        if pos == 0 and first_dist is not None:
            dist = first_dist
        else:
            dist = next_distribution(model, cur)
        if halt is not None and halt(dist, pos):
            return StepOutput(tuple(tokens), tuple(events), "halt", text, cur, dist)
        index = None
        if pos == 0 and first_index is not None:
            index = first_index
        elif picker is not None:
            index = picker(dist, pos)
        if index is None:
            index = sampler.pick(dist, rng)
        if dist.token_id(index) == prob.TAIL_ID:
            # the tail bucket is not a real token; redraw among the listed ones
            index = sampler.pick(prob.drop_tail(dist), rng)
        tid, piece = _resolve(model, dist, index)
        cur = model.append(cur, tid, piece)
        # the appended surface may differ from the bare token (e.g. spacing)
        piece = cur.text[len(ctx.text) + len(text):]
        tokens.append(tid)
        events.append(GenerationEvent(tid, dist, pos, piece))
        text += piece
        reason = _stop_reason(step_prefix + text, prefix_len + len(tokens), rule)
        if reason is not None:
            return StepOutput(tuple(tokens), tuple(events), reason, text, cur)


def _generate_step_native(model, ctx, rule, sampler, rng, first_dist, first_index, halt, step_prefix="", prefix_len=0):
    prefix_tokens: list[int] = []
    prefix_events: list[GenerationEvent] = []
    cur = ctx
    if first_index is not None:
        if first_dist is None:
            raise ValueError("first_index requires first_dist")
        index = first_index
        if first_dist.token_id(index) == prob.TAIL_ID:
            index = sampler.pick(prob.drop_tail(first_dist), rng)
        tid, piece = _resolve(model, first_dist, index)
        cur = model.append(cur, tid, piece)
        prefix_tokens.append(tid)
        prefix_events.append(GenerationEvent(tid, first_dist, 0, piece))
        reason = _stop_reason(step_prefix + piece, prefix_len + 1, rule)
        if reason is not None:
            return StepOutput(tuple(prefix_tokens), tuple(prefix_events), reason, piece, cur)
    seed = int(rng.integers(0, 2**31 - 1))
    remaining = replace(rule, max_step_tokens=rule.max_step_tokens - prefix_len - len(prefix_tokens))
    out = model.generate_step_native(cur, remaining, sampler, seed)
    offset = len(prefix_tokens)
    events = prefix_events + [replace(e, position=e.position + offset) for e in out.events]
    tokens = prefix_tokens + list(out.tokens)
    if halt is not None:
        for e in events[offset:]:
            if halt(e.distribution, e.position):
                kept = events[: e.position]
                text = "".join(k.text for k in kept)
                new_ctx = ctx.extend([k.token_id for k in kept], text)
                return StepOutput(tuple(tokens[: e.position]), tuple(kept), "halt", text, new_ctx, e.distribution)
    text = "".join(e.text for e in events)
    return StepOutput(tuple(tokens), tuple(events), out.stop_reason, text, ctx.extend(tokens, text))
