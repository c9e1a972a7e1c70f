"""Deterministic desk-scale models with hand-specified distributions."""
from __future__ import annotations

import json
import string
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from egb.lm.base import EOS, ModelContext, ModelError, SequenceModel, Vocabulary
from egb.prob import TokenDistribution

PRINTABLE = tuple(c for c in string.printable if c not in "\r\x0b\x0c")


class ScriptError(ModelError):
    pass


class TableModel(SequenceModel):
    """Looks up the distribution by the longest table key that suffixes the context.

    An entry keyed by ``""`` matches every context and acts as the start /
    fallback distribution.
    """

    name = "table"

    def __init__(
        self,
        vocab: Sequence[str],
        table: Mapping[str, Mapping[str, float]],
        max_context: Optional[int] = None,
    ):
        self.vocab = Vocabulary(vocab)
        self.max_context = max_context
        self._table: dict[str, TokenDistribution] = {}
        for key, entry in table.items():
            p = np.zeros(len(self.vocab))
            for tok, v in entry.items():
                if tok not in self.vocab:
                    raise ScriptError(f"token {tok!r} in entry {key!r} is not in the vocabulary")
                p[self.vocab.id(tok)] = v
            self._table[key] = TokenDistribution(p)
        self._keys = sorted(self._table, key=len, reverse=True)

    def next_distribution(self, ctx: ModelContext) -> TokenDistribution:
        for key in self._keys:
            if ctx.text.endswith(key):
                return self._table[key]
        raise ScriptError(f"no script entry matches context ending {ctx.text[-30:]!r}")

    @classmethod
    def from_json(cls, data: dict) -> "TableModel":
        return cls(data["vocab"], data["table"], data.get("max_context"))


class ProfileModel(SequenceModel):
    """Emits filler tokens whose entropy follows a fixed per-position profile.

    ``profile[s][p]`` is the probability vector (over filler symbols) used at
    position ``p`` of step ``s``. Which filler gets which probability rotates
    with the previous token, so different paths produce different text while
    the entropy at every position stays path independent. Each step ends with
    ``".\\n"`` and the last one with ``<eos>``.
    """

    name = "profile"

    def __init__(self, profile: Sequence[Sequence[Sequence[float]]], n_fillers: int = 8):
        if not profile:
            raise ValueError("profile needs at least one step")
        self.n_fillers = n_fillers
        # trailing space makes generated text read as words
        self.fillers = [f"w{i} " for i in range(n_fillers)]
        self.vocab = Vocabulary([*self.fillers, ".\n", EOS, *PRINTABLE])
        self._delim = self.vocab.id(".\n")
        self._eos = self.vocab.id(EOS)
        self.profile = []
        for step in profile:
            rows = []
            for row in step:
                row = np.asarray(row, dtype=np.float64)
                if row.size > n_fillers:
                    raise ValueError("profile row wider than the filler set")
                rows.append(np.pad(row, (0, n_fillers - row.size)))
            self.profile.append(rows)
        self._dists: dict[tuple[int, int, int], TokenDistribution] = {}

    @property
    def n_steps(self) -> int:
        return len(self.profile)

    def _locate(self, ctx: ModelContext) -> tuple[int, int, int]:
        gen = ctx.generated_ids
        step = 0
        last = -1
        for i, t in enumerate(gen):
            if t == self._delim:
                step += 1
                last = i
        pos = len(gen) - last - 1
        prev = gen[-1] if gen else (ctx.token_ids[-1] if ctx.token_ids else 0)
        return step, pos, prev

    def next_distribution(self, ctx: ModelContext) -> TokenDistribution:
        step, pos, prev = self._locate(ctx)
        if step >= self.n_steps or (ctx.generated_ids and ctx.generated_ids[-1] == self._eos):
            return TokenDistribution.one_hot(self._eos, len(self.vocab))
        rows = self.profile[step]
        if pos >= len(rows):
            end = self._eos if step == self.n_steps - 1 else self._delim
            return TokenDistribution.one_hot(end, len(self.vocab))
        shift = (prev * 7 + pos) % self.n_fillers
        key = (step, pos, shift)
        dist = self._dists.get(key)
        if dist is None:
            p = np.zeros(len(self.vocab))
            p[: self.n_fillers] = np.roll(rows[pos], shift)
            dist = TokenDistribution(p)
            self._dists[key] = dist
        return dist

    @classmethod
    def from_spreads(cls, spreads: Sequence[Sequence[int]], n_fillers: int = 8) -> "ProfileModel":
        """Uniform rows: a spread of m gives log2(m) bits at that position."""
        return cls([[np.full(m, 1.0 / m) for m in step] for step in spreads], n_fillers)

    @classmethod
    def random(
        cls,
        rng: np.random.Generator,
        n_steps: int,
        step_len: int,
        n_fillers: int = 8,
        p_flat: float = 0.6,
    ) -> "ProfileModel":
        """Random profile: each position is one-hot with probability ``p_flat``,
        otherwise a Dirichlet draw over 2..n_fillers symbols."""
        profile = []
        for _ in range(n_steps):
            rows = []
            for _ in range(step_len):
                if rng.random() < p_flat:
                    rows.append([1.0])
                else:
                    m = int(rng.integers(2, n_fillers + 1))
                    rows.append(rng.dirichlet(np.full(m, 0.7)).tolist())
            profile.append(rows)
        return cls(profile, n_fillers)


def load_scripted_model(path: str | Path) -> SequenceModel:
    """Load a scripted model from JSON: a table script, a profile script or a
    synthetic-suite bundle."""
    data = json.loads(Path(path).read_text())
    kind = data.get("kind", "table")
    if kind == "table":
        return TableModel.from_json(data)
    if kind == "profile":
        return ProfileModel(data["profile"], data.get("n_fillers", 8))
    if kind == "synthetic-arithmetic":
        from egb.harness.synthetic import SyntheticSuite

        return SyntheticSuite.from_json(data).model
    raise ScriptError(f"unknown scripted model kind {kind!r}")
