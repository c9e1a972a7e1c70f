"""Probability math for next-token distributions.

Everything here works in bits (log base 2). Distributions are normalized
probability vectors, never logits.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

SUM_TOL = 1e-6

# Marks the residual-mass bucket of a truncated (top-n) distribution.
TAIL_ID = -1


class DistributionError(ValueError):
    """A probability vector violates the distribution invariants."""


class ParameterError(ValueError):
    """A numeric parameter is outside its domain."""


@dataclass(frozen=True, eq=False)
class TokenDistribution:
    """Probability vector over a vocabulary at one decoding position.

    ``token_ids`` and ``token_texts`` are only set for truncated
    distributions (remote top-n logprobs), where entry ``i`` does not map to
    token id ``i``.  ``lower_bound`` flags that entropy computed from this
    vector underestimates the entropy of the full distribution.
    """

    probs: np.ndarray
    token_ids: Optional[tuple[int, ...]] = None
    token_texts: Optional[tuple[str, ...]] = None
    lower_bound: bool = False
    _support: int = field(init=False, repr=False, default=0)

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        if p.ndim != 1 or p.size == 0:
            raise DistributionError("probs must be a non-empty 1-d vector")
        if not np.all(np.isfinite(p)):
            raise DistributionError("probs contain non-finite entries")
        if np.any(p < 0):
            raise DistributionError(f"negative probability at index {int(np.argmin(p))}")
        total = math.fsum(p.tolist())
        if abs(total - 1.0) > SUM_TOL:
            raise DistributionError(f"probabilities sum to {total!r}, expected 1")
        if self.token_ids is not None and len(self.token_ids) != p.size:
            raise DistributionError("token_ids length does not match probs")
        if self.token_texts is not None and len(self.token_texts) != p.size:
            raise DistributionError("token_texts length does not match probs")
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)
        object.__setattr__(self, "_support", int(np.count_nonzero(p)))

    @property
    def vocab_size(self) -> int:
        return int(self.probs.size)

    @property
    def support_size(self) -> int:
        return self._support

    @property
    def is_degenerate(self) -> bool:
        """True when all mass sits on a single entry."""
        return self._support == 1

    def token_id(self, index: int) -> int:
        return self.token_ids[index] if self.token_ids is not None else int(index)

    @classmethod
    def from_mapping(cls, mapping: dict[int, float], vocab_size: int) -> "TokenDistribution":
        p = np.zeros(vocab_size)
        for i, v in mapping.items():
            p[i] = v
        return cls(p)

    @classmethod
    def one_hot(cls, index: int, vocab_size: int) -> "TokenDistribution":
        p = np.zeros(vocab_size)
        p[index] = 1.0
        return cls(p)

    @classmethod
    def uniform(cls, vocab_size: int) -> "TokenDistribution":
        return cls(np.full(vocab_size, 1.0 / vocab_size))


@dataclass(frozen=True)
class UncertaintyReading:
    entropy_bits: float
    varentropy_bits2: float


def _uniform_support(p: np.ndarray) -> bool:
    nz = p[p > 0]
    return bool(nz.max() == nz.min())


def entropy(dist: TokenDistribution) -> float:
    """Shannon entropy in bits, with 0 log 0 = 0."""
    p = dist.probs
    if _uniform_support(p):
        # exact for uniform-on-support, where term-wise summation drifts by an ulp
        return math.log2(dist.support_size)
    nz = p[p > 0]
    return float(max(0.0, -np.sum(nz * np.log2(nz))))


def varentropy(dist: TokenDistribution) -> float:
    """Variance of the surprisal -log2 p under the distribution, in bits^2."""
    p = dist.probs
    if _uniform_support(p):
        return 0.0
    nz = p[p > 0]
    surprisal = -np.log2(nz)
    h = float(np.sum(nz * surprisal))
    return float(max(0.0, np.sum(nz * (surprisal - h) ** 2)))


def uncertainty(dist: TokenDistribution) -> UncertaintyReading:
    return UncertaintyReading(entropy(dist), varentropy(dist))


def apply_temperature(dist: TokenDistribution, temperature: float) -> TokenDistribution:
    """Return the distribution proportional to p ** (1 / temperature)."""
    if not temperature > 0 or not math.isfinite(temperature):
        raise ParameterError(f"temperature must be a positive finite number, got {temperature!r}")
    if temperature == 1.0 or dist.is_degenerate:
        return dist
    p = dist.probs
    out = np.zeros_like(p)
    mask = p > 0
    logits = np.log(p[mask]) / temperature
    logits -= logits.max()
    w = np.exp(logits)
    out[mask] = w / w.sum()
    return TokenDistribution(out, dist.token_ids, dist.token_texts, dist.lower_bound)


def drop_tail(dist: TokenDistribution) -> TokenDistribution:
    """Zero the tail bucket of a truncated distribution and renormalize."""
    if dist.token_ids is None or TAIL_ID not in dist.token_ids:
        return dist
    p = dist.probs.copy()
    p[dist.token_ids.index(TAIL_ID)] = 0.0
    if p.sum() <= 0:
        raise DistributionError("distribution has no mass outside the tail bucket")
    return TokenDistribution(p / p.sum(), dist.token_ids, dist.token_texts, dist.lower_bound)


def greedy(dist: TokenDistribution) -> int:
    """Index of the most probable entry; ties go to the lowest index."""
    return int(np.argmax(dist.probs))


def _invert_cdf(p: np.ndarray, u: float) -> int:
    cdf = np.cumsum(p)
    # the first index whose cdf exceeds the target always carries mass
    idx = int(np.searchsorted(cdf, u * cdf[-1], side="right"))
    if idx >= p.size:
        idx = int(np.flatnonzero(p)[-1])
    return idx


def sample(dist: TokenDistribution, rng: np.random.Generator) -> int:
    """Draw one index from ``dist``.

    Degenerate distributions return their single supported index without
    consuming a draw, so deterministic stretches of a generation leave the
    generator state untouched.
    """
    if dist.is_degenerate:
        return int(np.flatnonzero(dist.probs)[0])
    return _invert_cdf(dist.probs, float(rng.random()))


def sample_stratified(dist: TokenDistribution, n: int, rng: np.random.Generator) -> list[int]:
    """Draw ``n`` indices by systematic resampling over a random stratum order.

    Each returned position is marginally distributed as ``dist``, while the
    set of draws covers the distribution evenly: an entry with mass p appears
    floor(n p) or ceil(n p) times.
    """
    if n < 1:
        raise ParameterError(f"n must be >= 1, got {n}")
    if dist.is_degenerate:
        return [int(np.flatnonzero(dist.probs)[0])] * n
    offset = float(rng.random())
    order = rng.permutation(n)
    p = dist.probs
    return [_invert_cdf(p, (int(order[j]) + offset) / n) for j in range(n)]


def make_rng(seed: int, key: Sequence[int] = ()) -> np.random.Generator:
    """Generator for a (master seed, key path) pair.

    The key length is mixed in so that a key and its zero-extended variant
    give unrelated streams.
    """
    ss = np.random.SeedSequence(int(seed) & ((1 << 128) - 1), spawn_key=(len(key), *key))
    return np.random.Generator(np.random.PCG64(ss))
