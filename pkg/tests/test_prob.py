import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from egb.prob import (
    DistributionError,
    ParameterError,
    TokenDistribution,
    apply_temperature,
    entropy,
    greedy,
    make_rng,
    sample,
    sample_stratified,
    uncertainty,
    varentropy,
)

# frozen from a 40-digit mpmath summation
H_75_25 = 0.8112781244591328639
VARENT_75_25 = 0.4710198991297989392


def naive_entropy(p):
    return -sum(x * math.log2(x) for x in p if x > 0)


def naive_varentropy(p):
    h = naive_entropy(p)
    return sum(x * (-math.log2(x) - h) ** 2 for x in p if x > 0)


@st.composite
def distributions(draw, min_v=1, max_v=64):
    v = draw(st.integers(min_v, max_v))
    w = draw(st.lists(st.floats(0, 1, allow_nan=False), min_size=v, max_size=v))
    w = np.array(w)
    if w.sum() <= 0:
        w[draw(st.integers(0, v - 1))] = 1.0
    return TokenDistribution(w / w.sum())


def test_uniform_four_is_two_bits():
    assert entropy(TokenDistribution.uniform(4)) == 2.0


@pytest.mark.parametrize("v", [1, 2, 7, 64])
def test_one_hot_is_zero(v):
    d = TokenDistribution.one_hot(v - 1, v)
    assert entropy(d) == 0.0
    assert varentropy(d) == 0.0


def test_dyadic_entropy():
    assert entropy(TokenDistribution(np.array([0.5, 0.25, 0.125, 0.125]))) == 1.75


def test_varentropy_examples():
    assert varentropy(TokenDistribution.uniform(5)) == 0.0
    assert varentropy(TokenDistribution(np.array([0.5, 0.5, 0.0]))) == 0.0
    d = TokenDistribution(np.array([0.75, 0.25]))
    assert entropy(d) == pytest.approx(H_75_25, abs=1e-12)
    assert varentropy(d) == pytest.approx(VARENT_75_25, abs=1e-12)
    assert varentropy(TokenDistribution(np.array([0.5, 0.25, 0.25]))) == pytest.approx(0.25, abs=1e-15)


def test_uncertainty_reading():
    r = uncertainty(TokenDistribution(np.array([0.75, 0.25])))
    assert r.entropy_bits == pytest.approx(H_75_25)
    assert r.varentropy_bits2 == pytest.approx(VARENT_75_25)


@pytest.mark.parametrize(
    "probs",
    [[-0.1, 1.1], [0.5, 0.4], [0.6, 0.6], [float("nan"), 1.0], [], [[0.5, 0.5]]],
)
def test_invalid_distributions_rejected(probs):
    with pytest.raises(DistributionError):
        TokenDistribution(np.array(probs))


def test_sum_tolerance_boundary():
    TokenDistribution(np.array([0.5, 0.5 + 9e-7]))
    with pytest.raises(DistributionError):
        TokenDistribution(np.array([0.5, 0.5 + 2e-6]))


def test_probs_are_read_only():
    d = TokenDistribution(np.array([0.5, 0.5]))
    with pytest.raises(ValueError):
        d.probs[0] = 1.0


def test_temperature_closed_form():
    d = apply_temperature(TokenDistribution(np.array([0.8, 0.2])), 2.0)
    # sqrt(0.8) = 2 sqrt(0.2), so the result is (2/3, 1/3)
    assert d.probs[0] == pytest.approx(2 / 3, abs=1e-12)
    assert d.probs[1] == pytest.approx(1 / 3, abs=1e-12)


def test_temperature_identity_and_limit():
    d = TokenDistribution(np.array([0.9, 0.1]))
    assert apply_temperature(d, 1.0) is d
    cold = apply_temperature(d, 0.01)
    assert cold.probs[0] == pytest.approx(1.0, abs=1e-3)


@pytest.mark.parametrize("t", [0.0, -1.0, float("inf"), float("nan")])
def test_temperature_domain(t):
    with pytest.raises(ParameterError):
        apply_temperature(TokenDistribution.uniform(2), t)


def test_sample_one_hot_any_seed():
    d = TokenDistribution.one_hot(3, 6)
    for seed in range(20):
        assert sample(d, make_rng(seed)) == 3


def test_sample_uniform_frequency():
    rng = make_rng(1234)
    d = TokenDistribution.uniform(2)
    draws = [sample(d, rng) for _ in range(10_000)]
    assert 0.47 <= draws.count(0) / 10_000 <= 0.53


def test_sample_reproducible():
    d = TokenDistribution(np.array([0.1, 0.2, 0.3, 0.4]))
    a, b = make_rng(7, (1, 2)), make_rng(7, (1, 2))
    assert [sample(d, a) for _ in range(50)] == [sample(d, b) for _ in range(50)]


def test_sample_skips_draw_on_degenerate():
    rng = make_rng(5)
    sample(TokenDistribution.one_hot(0, 3), rng)
    assert rng.random() == make_rng(5).random()


def test_rng_keys_are_distinct_streams():
    assert make_rng(0, (0,)).random() != make_rng(0, (0, 0)).random()
    assert make_rng(0, (1,)).random() != make_rng(1, (1,)).random()


def test_stratified_covers_even_split():
    d = TokenDistribution(np.array([0.5, 0.5]))
    for seed in range(50):
        assert sorted(sample_stratified(d, 2, make_rng(seed))) == [0, 1]


def test_stratified_rejects_zero():
    with pytest.raises(ParameterError):
        sample_stratified(TokenDistribution.uniform(2), 0, make_rng(0))


@settings(max_examples=200, deadline=None)
@given(distributions())
def test_entropy_bounds(d):
    h = entropy(d)
    assert 0.0 <= h <= math.log2(d.vocab_size) + 1e-12
    assert varentropy(d) >= 0.0


@settings(max_examples=200, deadline=None)
@given(distributions(min_v=2))
def test_matches_naive_oracle(d):
    p = d.probs.tolist()
    assert entropy(d) == pytest.approx(naive_entropy(p), abs=1e-9)
    assert varentropy(d) == pytest.approx(naive_varentropy(p), abs=1e-9)


@settings(max_examples=200, deadline=None)
@given(distributions(), st.floats(0.05, 20))
def test_temperature_preserves_argmax_and_validity(d, t):
    out = apply_temperature(d, t)
    assert abs(out.probs.sum() - 1.0) <= 1e-9
    assert greedy(out) == greedy(d) or out.probs[greedy(d)] == pytest.approx(out.probs.max(), rel=1e-12)
    # tiny masses may underflow to zero but no mass appears outside the support
    assert np.all(out.probs[d.probs == 0] == 0)


@settings(max_examples=100, deadline=None)
@given(distributions(), st.integers(0, 2**32), st.integers(1, 16))
def test_stratified_counts_within_one(d, seed, n):
    picks = sample_stratified(d, n, make_rng(seed))
    for i in range(d.vocab_size):
        expected = n * d.probs[i]
        assert math.floor(expected - 1e-9) <= picks.count(i) <= math.ceil(expected + 1e-9)
        if d.probs[i] == 0:
            assert picks.count(i) == 0


@settings(max_examples=100, deadline=None)
@given(distributions(), st.integers(0, 2**32))
def test_sample_in_support(d, seed):
    i = sample(d, make_rng(seed))
    assert d.probs[i] > 0
