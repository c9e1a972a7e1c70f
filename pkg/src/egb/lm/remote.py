"""Client for a model served over HTTP.

Wire protocol (JSON bodies)::

    POST /v1/next           {context_text, top_n}
        -> {tokens: [{id, logprob, text?}], model_id}
    POST /v1/generate_step  {context_text, delimiters, max_tokens, temperature, seed, top_n}
        -> {text, events: [{token_id, position, top_logprobs: [{id, logprob, text?}], text?}],
            stop_reason}

Servers return only the top-n log-probabilities. The residual mass is folded
into one tail entry, so entropies computed from these distributions are lower
bounds and are flagged as such.
"""
from __future__ import annotations

import math
import os
from typing import Optional

import httpx
import numpy as np

from egb import prob
from egb._http import JsonClient, MalformedResponse
from egb.lm.base import GenerationEvent, ModelContext, SamplerSettings, SequenceModel, StepBoundaryRule, StepOutput
from egb.prob import TAIL_ID, TokenDistribution


def distribution_from_logprobs(entries: list, payload=None) -> TokenDistribution:
    """Build a distribution from top-n ``{id, logprob, text?}`` entries plus a tail bucket."""
    if not isinstance(entries, list) or not entries:
        raise MalformedResponse("expected a non-empty list of logprob entries", payload)
    ids, probs, texts = [], [], []
    for e in entries:
        try:
            lp = float(e["logprob"])
            tid = int(e["id"])
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedResponse(f"bad logprob entry {e!r}", payload) from exc
        if not math.isfinite(lp) and lp != -math.inf:
            raise MalformedResponse(f"non-finite logprob in {e!r}", payload)
        ids.append(tid)
        probs.append(math.exp(lp))
        texts.append(e.get("text", ""))
    total = math.fsum(probs)
    if total > 1 + prob.SUM_TOL:
        raise MalformedResponse(f"top-n probabilities sum to {total:.6f} > 1", payload)
    tail = 1.0 - total
    if tail > prob.SUM_TOL:
        ids.append(TAIL_ID)
        probs.append(tail)
        texts.append("")
        lower = True
    else:
        probs = [p / total for p in probs]
        lower = False
    return TokenDistribution(np.array(probs), tuple(ids), tuple(texts), lower)


class RemoteModel(SequenceModel):
    """SequenceModel adapter over the HTTP wire protocol.

    With ``native_steps`` (the default) whole steps are generated server-side
    through ``/v1/generate_step``; otherwise the engine drives ``/v1/next``
    token by token, which needs per-token ``text`` in the response.
    """

    name = "remote"
    concurrent_safe = True

    def __init__(
        self,
        endpoint: str,
        token: Optional[str] = None,
        top_n: int = 20,
        timeout: float = 60.0,
        max_retries: int = 3,
        backoff: float = 0.5,
        max_in_flight: int = 8,
        native_steps: bool = True,
        transport: Optional[httpx.BaseTransport] = None,
        sleep=None,
    ):
        kwargs = {} if sleep is None else {"sleep": sleep}
        self.client = JsonClient(endpoint, token, timeout, max_retries, backoff, max_in_flight, transport, **kwargs)
        self.top_n = top_n
        self.native_steps = native_steps
        self.model_id: Optional[str] = None

    @classmethod
    def from_env(cls, **kwargs) -> "RemoteModel":
        url = os.environ.get("EGB_MODEL_URL")
        if not url:
            raise ValueError("EGB_MODEL_URL is not set")
        return cls(url, os.environ.get("EGB_MODEL_TOKEN"), **kwargs)

    @property
    def retries(self) -> int:
        return self.client.retries

    def start(self, prompt: str) -> ModelContext:
        return ModelContext((), prompt, 0, len(prompt))

    def encode(self, text):
        raise NotImplementedError("the remote model owns its tokenizer")

    def decode(self, ids):
        raise NotImplementedError("the remote model owns its tokenizer")

    def token_text(self, token_id):
        raise NotImplementedError("token text must come from the server response")

    def append(self, ctx, token_id, text=None):
        if text is None:
            raise ValueError("remote tokens need their text")
        return ctx.extend((token_id,), text)

    def next_distribution(self, ctx: ModelContext) -> TokenDistribution:
        data = self.client.post("/v1/next", {"context_text": ctx.text, "top_n": self.top_n})
        self.model_id = data.get("model_id", self.model_id)
        return distribution_from_logprobs(data.get("tokens"), data)

    def generate_step_native(self, ctx: ModelContext, rule: StepBoundaryRule, sampler: SamplerSettings, seed: int) -> StepOutput:
        body = {
            "context_text": ctx.text,
            "delimiters": list(rule.delimiters),
            "max_tokens": rule.max_step_tokens,
            "temperature": 0.0 if sampler.greedy else sampler.temperature,
            "seed": seed,
            "top_n": self.top_n,
        }
        data = self.client.post("/v1/generate_step", body)
        try:
            text = data["text"]
            raw_events = data["events"]
            stop = data["stop_reason"]
        except KeyError as exc:
            raise MalformedResponse(f"generate_step response missing {exc}", data) from exc
        if stop not in ("delimiter", "max_tokens", "terminal"):
            raise MalformedResponse(f"unknown stop_reason {stop!r}", data)
        events = []
        for i, e in enumerate(raw_events):
            try:
                dist = distribution_from_logprobs(e["top_logprobs"], data)
                events.append(GenerationEvent(int(e["token_id"]), dist, int(e.get("position", i)), e.get("text", "")))
            except (KeyError, TypeError, ValueError) as exc:
                raise MalformedResponse(f"bad event {i}: {exc}", data) from exc
        if "".join(e.text for e in events) != text:
            raise MalformedResponse("per-token text does not reassemble the step text", data)
        tokens = tuple(e.token_id for e in events)
        return StepOutput(tokens, tuple(events), stop, text, ctx.extend(tokens, text))
