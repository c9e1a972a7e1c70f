"""Synthetic multi-step addition tasks with scripted uncertainty.

A problem is a chain of additions. The scripted model writes one running sum
per step::

    Q3: 4 + 7 + 2 = ?
    4 + 7 = 11.
    11 + 2 = 13.
    answer: 13<eos>

Every token is deterministic except at fork positions, where the sum token
splits between the correct value and wrong ones, and at decoy positions, where
the step delimiter varies harmlessly. The oracle verifier knows the true sums.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from egb import prob
from egb.harness.datasets import Problem
from egb.lm.base import EOS, ModelContext, SequenceModel, Vocabulary
from egb.lm.scripted import PRINTABLE, ScriptError
from egb.prob import TokenDistribution
from egb.verify import Verifier

PLUS, EQUALS, ANSWER = " + ", " = ", "answer: "
DELIM, DELIM_ALT, DELIM_BLANK = ".\n", " .\n", "\n\n"
MAX_NUMBER = 511

_PROMPT_RE = re.compile(r"Q\d+: ([\d +]+) = \?\n")
_STEP_RE = re.compile(r"(\d+) \+ (\d+) = (\d+)(?: ?\.\n|\n\n)")
_ANSWER_STEP_RE = re.compile(r"answer: (\d+)(?:<eos>)?")


@dataclass(frozen=True)
class SpikeProfile:
    """Where the scripted model is uncertain.

    ``fork_probs[0]`` goes to the correct sum, the rest to distinct wrong
    sums. ``decoy_probs`` spreads the delimiter of ``n_decoys`` steps per
    problem over equivalent variants (``.\\n``, `` .\\n``, blank line).
    """

    fork_probs: tuple[float, ...] = (0.5, 0.5)
    decoy_probs: tuple[float, ...] = ()
    n_decoys: int = 0

    def __post_init__(self):
        object.__setattr__(self, "fork_probs", tuple(float(p) for p in self.fork_probs))
        object.__setattr__(self, "decoy_probs", tuple(float(p) for p in self.decoy_probs))
        TokenDistribution(np.array(self.fork_probs))
        if not 2 <= len(self.fork_probs) <= 10:
            raise ValueError("fork_probs needs between 2 and 10 entries")
        if self.n_decoys:
            if not 2 <= len(self.decoy_probs) <= 3:
                raise ValueError("decoy_probs needs 2 or 3 entries when n_decoys > 0")
            TokenDistribution(np.array(self.decoy_probs))

    @property
    def fork_entropy(self) -> float:
        return prob.entropy(TokenDistribution(np.array(self.fork_probs)))

    @property
    def decoy_entropy(self) -> float:
        return prob.entropy(TokenDistribution(np.array(self.decoy_probs))) if self.decoy_probs else 0.0

    def to_dict(self) -> dict:
        return {"fork_probs": list(self.fork_probs), "decoy_probs": list(self.decoy_probs), "n_decoys": self.n_decoys}


# forks at 40/30/30 (1.57 bits) and decoys at 50/25/25 (1.5 bits): the suite used to pick the default tau
TUNING_PROFILE = SpikeProfile((0.4, 0.3, 0.3), (0.5, 0.25, 0.25), 1)


@dataclass(frozen=True)
class ProblemScript:
    terms: tuple[int, ...]
    forks: frozenset[int] = frozenset()
    decoys: frozenset[int] = frozenset()
    # per fork step: offsets of the wrong sums from the correct one
    offsets: dict[int, tuple[int, ...]] = field(default_factory=dict)

    @property
    def n_additions(self) -> int:
        return len(self.terms) - 1

    @property
    def answer(self) -> int:
        return sum(self.terms)


def prompt_terms(prompt: str) -> Optional[tuple[int, ...]]:
    m = _PROMPT_RE.search(prompt)
    if not m:
        return None
    return tuple(int(t) for t in m.group(1).split(" + "))


class SyntheticArithmeticModel(SequenceModel):
    """Scripted model for the synthetic suite.

    Prompts not in the script are solved deterministically.
    """

    name = "synthetic-arithmetic"

    def __init__(self, scripts: dict[str, ProblemScript], profile: SpikeProfile):
        self.scripts = dict(scripts)
        self.profile = profile
        self.numbers = [str(i) for i in range(MAX_NUMBER + 1)]
        self.specials = [PLUS, EQUALS, DELIM, DELIM_ALT, DELIM_BLANK, ANSWER, EOS]
        self.vocab = Vocabulary([*self.specials, *self.numbers, *[c for c in PRINTABLE if not c.isdigit()]])
        self._num0 = self.vocab.id("0")
        self._delims = {self.vocab.id(d) for d in (DELIM, DELIM_ALT, DELIM_BLANK)}
        self._eos = self.vocab.id(EOS)
        self._cache: dict[tuple, TokenDistribution] = {}

    def _script(self, prompt: str) -> ProblemScript:
        s = self.scripts.get(prompt)
        if s is not None:
            return s
        terms = prompt_terms(prompt)
        if terms is None:
            raise ScriptError(f"prompt is not a synthetic addition problem: {prompt[:40]!r}")
        return ProblemScript(terms)

    def _num_id(self, value: int) -> int:
        if not 0 <= value <= MAX_NUMBER:
            raise ScriptError(f"value {value} outside the number vocabulary")
        return self._num0 + value

    def _dist(self, key: tuple, entries: Sequence[tuple[int, float]]) -> TokenDistribution:
        d = self._cache.get(key)
        if d is None:
            p = np.zeros(len(self.vocab))
            for tid, v in entries:
                p[tid] += v
            d = TokenDistribution(p)
            self._cache[key] = d
        return d

    def _one_hot(self, tid: int) -> TokenDistribution:
        return self._dist(("1h", tid), [(tid, 1.0)])

    def next_distribution(self, ctx: ModelContext) -> TokenDistribution:
        script = self._script(ctx.prompt)
        gen = ctx.generated_ids
        if gen and gen[-1] == self._eos:
            return self._one_hot(self._eos)
        # split the generation into steps at delimiter tokens
        steps, cur = [], []
        for t in gen:
            cur.append(t)
            if t in self._delims:
                steps.append(cur)
                cur = []
        s, pos = len(steps), len(cur)
        prev = script.terms[0] if s == 0 else int(self.vocab.tokens[steps[-1][4]])
        n_add = script.n_additions
        if s > n_add:
            return self._one_hot(self._eos)
        if s == n_add:
            seq = [self.vocab.id(ANSWER), self._num_id(prev), self._eos]
            return self._one_hot(seq[min(pos, 2)])
        term = script.terms[s + 1]
        if pos == 0:
            return self._one_hot(self._num_id(prev))
        if pos == 1:
            return self._one_hot(self.vocab.id(PLUS))
        if pos == 2:
            return self._one_hot(self._num_id(term))
        if pos == 3:
            return self._one_hot(self.vocab.id(EQUALS))
        correct = prev + term
        if pos == 4:
            if s not in script.forks:
                return self._one_hot(self._num_id(correct))
            probs = self.profile.fork_probs
            values = [correct] + [correct + o for o in script.offsets[s]]
            return self._dist(("fork", correct, s, ctx.prompt), [(self._num_id(v), p) for v, p in zip(values, probs)])
        if s in script.decoys:
            variants = [self.vocab.id(d) for d in (DELIM, DELIM_ALT, DELIM_BLANK)]
            return self._dist(("decoy",), list(zip(variants, self.profile.decoy_probs)))
        return self._one_hot(self.vocab.id(DELIM))


def _partial_sums(terms: Sequence[int]) -> list[int]:
    out, acc = [], terms[0]
    for t in terms[1:]:
        acc += t
        out.append(acc)
    return out


class OracleVerifier(Verifier):
    """Scores a step 1.0 when it and every earlier step are correct, else 0.0."""

    scorer_id = "oracle"

    def score_steps(self, context, steps):
        terms = prompt_terms(context)
        if terms is None:
            raise ValueError("oracle verifier needs a synthetic addition prompt")
        sums = _partial_sums(terms)
        out, ok, prev = [], True, terms[0]
        for k, text in enumerate(steps):
            if k < len(sums):
                m = _STEP_RE.fullmatch(text)
                ok = ok and m is not None and (int(m[1]), int(m[2]), int(m[3])) == (prev, terms[k + 1], sums[k])
                prev = sums[k]
            elif k == len(sums):
                m = _ANSWER_STEP_RE.fullmatch(text)
                ok = ok and m is not None and int(m[1]) == sum(terms)
            else:
                ok = False
            out.append(1.0 if ok else 0.0)
        return out


@dataclass
class SyntheticSuite:
    problems: list[Problem]
    model: SyntheticArithmeticModel
    verifier: OracleVerifier
    profile: SpikeProfile
    fork_depth: int
    seed: int

    def to_json(self) -> dict:
        scripts = self.model.scripts
        return {
            "kind": "synthetic-arithmetic",
            "seed": self.seed,
            "fork_depth": self.fork_depth,
            "spike_profile": self.profile.to_dict(),
            "problems": [
                {
                    **p.to_dict(),
                    "terms": list(scripts[p.prompt].terms),
                    "forks": sorted(scripts[p.prompt].forks),
                    "decoys": sorted(scripts[p.prompt].decoys),
                    "offsets": {str(k): list(v) for k, v in sorted(scripts[p.prompt].offsets.items())},
                }
                for p in self.problems
            ],
        }

    @classmethod
    def from_json(cls, data: dict) -> "SyntheticSuite":
        profile = SpikeProfile(**data.get("spike_profile", {}))
        problems, scripts = [], {}
        for row in data["problems"]:
            p = Problem(row["id"], row["prompt"], row["gold_answer"], tuple(row.get("tags", ())))
            problems.append(p)
            scripts[p.prompt] = ProblemScript(
                tuple(row["terms"]),
                frozenset(row.get("forks", ())),
                frozenset(row.get("decoys", ())),
                {int(k): tuple(v) for k, v in row.get("offsets", {}).items()},
            )
        model = SyntheticArithmeticModel(scripts, profile)
        return cls(problems, model, OracleVerifier(), profile, int(data.get("fork_depth", 0)), int(data.get("seed", 0)))


def build_synthetic_suite(
    n_problems: int,
    fork_depth: int,
    spike_profile: SpikeProfile = SpikeProfile(),
    seed: int = 0,
    n_additions: Optional[int] = None,
) -> SyntheticSuite:
    """Generate ``n_problems`` addition chains with ``fork_depth`` forks each.

    Chains have ``n_additions`` steps (default ``fork_depth + 1``, so at
    least one step is deterministic).
    """
    if n_problems < 1:
        raise ValueError("n_problems must be >= 1")
    n_add = fork_depth + 1 if n_additions is None else n_additions
    if fork_depth < 0 or n_add < max(1, fork_depth):
        raise ValueError("need 0 <= fork_depth <= n_additions")
    if spike_profile.n_decoys > n_add:
        raise ValueError("more decoys than steps")
    rng = np.random.default_rng(seed)
    n_wrong = len(spike_profile.fork_probs) - 1
    problems, scripts = [], {}
    for i in range(n_problems):
        terms = tuple(int(t) for t in rng.integers(1, 10, size=n_add + 1))
        forks = frozenset(int(s) for s in rng.choice(n_add, size=fork_depth, replace=False))
        decoys = frozenset(int(s) for s in rng.choice(n_add, size=spike_profile.n_decoys, replace=False))
        offsets = {s: tuple(int(o) for o in rng.choice(np.arange(1, 10), size=n_wrong, replace=False)) for s in sorted(forks)}
        prompt = f"Q{i}: {' + '.join(map(str, terms))} = ?\n"
        problems.append(Problem(f"syn-{i:04d}", prompt, str(sum(terms)), ("synthetic", f"forks={fork_depth}")))
        scripts[prompt] = ProblemScript(terms, forks, decoys, offsets)
    model = SyntheticArithmeticModel(scripts, spike_profile)
    return SyntheticSuite(problems, model, OracleVerifier(), spike_profile, fork_depth, seed)


def enumerate_completions(
    model: SequenceModel,
    prompt: str,
    max_leaves: int = 100_000,
    max_tokens: int = 1_000,
) -> list[tuple[str, float]]:
    """Every completion with nonzero probability under ``model``, by depth-first search.

    Returns (generated text, probability) pairs; generation ends at ``<eos>``.
    """
    eos = model.vocab.id(EOS)
    out: list[tuple[str, float]] = []
    stack = [(model.start(prompt), 1.0)]
    while stack:
        ctx, p = stack.pop()
        if len(ctx.generated_ids) > max_tokens:
            raise ScriptError("completion exceeds max_tokens")
        dist = model.next_distribution(ctx)
        for idx in reversed(np.flatnonzero(dist.probs).tolist()):
            tid = dist.token_id(idx)
            nxt = model.append(ctx, tid)
            q = p * float(dist.probs[idx])
            if tid == eos:
                out.append((nxt.generated_text, q))
                if len(out) > max_leaves:
                    raise ScriptError("too many completions")
            else:
                stack.append((nxt, q))
    return out
