from __future__ import annotations

import re
from collections import defaultdict
from typing import Optional, Sequence

import numpy as np

from egb.lm.base import ModelContext, SequenceModel, TokenizationError, Vocabulary
from egb.prob import TokenDistribution

_TOKEN_RE = re.compile(r"\n|[^\s]+")


def tokenize_words(text: str) -> list[str]:
    return _TOKEN_RE.findall(text)


class NgramModel(SequenceModel):
    """Add-k smoothed n-gram model with backoff.

    The distribution for a history comes from the longest suffix of the last
    ``order - 1`` tokens that was seen in training; each level is normalized
    on its own, so every distribution sums to one. Unseen histories fall back
    to the (smoothed) unigram.

    Tokens are whitespace-separated words plus explicit newlines. Words are
    joined by single spaces; no space is written next to a newline.
    """

    name = "ngram"

    def __init__(self, tokens: Sequence[str], order: int, k: float, vocab: Optional[Sequence[str]] = None):
        if order < 1:
            raise ValueError(f"order must be >= 1, got {order}")
        if k < 0:
            raise ValueError(f"smoothing constant must be >= 0, got {k}")
        self.order = order
        self.k = float(k)
        self.vocab = Vocabulary(vocab if vocab is not None else sorted(set(tokens)))
        ids = [self.vocab.id(t) for t in tokens]
        V = len(self.vocab)
        self._counts: dict[tuple[int, ...], np.ndarray] = defaultdict(lambda: np.zeros(V))
        for n in range(order):
            for i in range(n, len(ids)):
                self._counts[tuple(ids[i - n : i])][ids[i]] += 1
        self._counts = dict(self._counts)
        self._cache: dict[tuple[int, ...], TokenDistribution] = {}
        if self.k == 0 and self._counts[()].sum() == 0:
            raise ValueError("empty corpus")

    def _level(self, history: tuple[int, ...]) -> TokenDistribution:
        dist = self._cache.get(history)
        if dist is None:
            c = self._counts[history]
            V = c.size
            dist = TokenDistribution((c + self.k) / (c.sum() + self.k * V))
            self._cache[history] = dist
        return dist

    def distribution_for(self, history: Sequence[int]) -> TokenDistribution:
        history = tuple(history)
        for n in range(min(self.order - 1, len(history)), 0, -1):
            h = history[len(history) - n :]
            c = self._counts.get(h)
            if c is not None and c.sum() > 0:
                return self._level(h)
        return self._level(())

    def next_distribution(self, ctx: ModelContext) -> TokenDistribution:
        return self.distribution_for(ctx.token_ids)

    def encode(self, text):
        ids = []
        for w in tokenize_words(text):
            if w not in self.vocab:
                raise TokenizationError(f"word {w!r} is not in the n-gram vocabulary")
            ids.append(self.vocab.id(w))
        return ids

    def _join(self, prev: Optional[str], tok: str) -> str:
        if prev is None or prev == "\n" or tok == "\n":
            return tok
        return " " + tok

    def decode(self, ids):
        out = []
        prev = None
        for i in ids:
            tok = self.vocab.tokens[i]
            out.append(self._join(prev, tok))
            prev = tok
        return "".join(out)

    def append(self, ctx, token_id, text=None):
        prev = self.vocab.tokens[ctx.token_ids[-1]] if ctx.token_ids else None
        return ctx.extend((token_id,), self._join(prev, self.vocab.tokens[token_id]))


def build_ngram_model(corpus: str, order: int, smoothing: float = 0.0, vocab: Optional[Sequence[str]] = None) -> NgramModel:
    if order < 1:
        raise ValueError(f"order must be >= 1, got {order}")
    tokens = tokenize_words(corpus)
    if not tokens:
        raise ValueError("corpus is empty")
    return NgramModel(tokens, order, smoothing, vocab)
