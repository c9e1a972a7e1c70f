"""Acceptance checks. Each test prints one PASS/FAIL line and records it for
the terminal summary."""
import math
import time
from contextlib import contextmanager
from dataclasses import replace
from fractions import Fraction

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from egb.harness import (
    TUNING_PROFILE,
    Problem,
    build_synthetic_suite,
    budget_of,
    enumerate_completions,
    grade,
    run_benchmark,
    sweep,
    write_report,
)
from egb.lm import EOS, ProfileModel
from egb.lm.base import SequenceModel, Vocabulary
from egb.prob import TokenDistribution, entropy, varentropy
from egb.search import Beam, CandidatePool, SearchConfig, dedup, expand_step, run_search
from egb.trace import load_trace, render_trace, trace_records, write_trace
from egb.verify import CallableVerifier, ScriptedVerifier, rank_candidates


@contextmanager
def criterion(results, number, title, limit_s=None):
    name = f"[{number:>2}] {title}"
    start = time.perf_counter()
    try:
        yield
        elapsed = time.perf_counter() - start
        if limit_s is not None:
            assert elapsed < limit_s, f"took {elapsed:.2f}s, limit {limit_s}s"
    except BaseException as exc:
        results.append((name, False, str(exc).splitlines()[0] if str(exc) else type(exc).__name__))
        print(f"FAIL {name}")
        raise
    elapsed = time.perf_counter() - start
    results.append((name, True, f"{elapsed:.2f}s"))
    print(f"PASS {name} ({elapsed:.2f}s)")


def naive_entropy(p):
    return -math.fsum(x * math.log2(x) for x in p if x > 0)


def naive_varentropy(p):
    h = naive_entropy(p)
    return math.fsum(x * (-math.log2(x) - h) ** 2 for x in p if x > 0)


def test_entropy_oracle(acceptance):
    rng = np.random.default_rng(20241017)
    cases = []
    for _ in range(1000):
        v = int(rng.integers(2, 65))
        p = rng.dirichlet(np.full(v, rng.choice([0.05, 0.5, 1.0, 5.0])))
        p[rng.random(v) < 0.2] = 0.0
        if p.sum() == 0:
            p[0] = 1.0
        cases.append(p / p.sum())
    with criterion(acceptance, 1, "entropy and varentropy match a naive oracle", 1.0):
        for p in cases:
            d = TokenDistribution(p)
            q = [float(x) for x in d.probs]
            assert abs(entropy(d) - naive_entropy(q)) <= 1e-9
            assert abs(varentropy(d) - naive_varentropy(q)) <= 1e-9
        for v in range(2, 65):
            assert entropy(TokenDistribution.uniform(v)) == math.log2(v)
            assert varentropy(TokenDistribution.uniform(v)) == 0.0
            onehot = np.zeros(v)
            onehot[v // 2] = 1.0
            assert entropy(TokenDistribution(onehot)) == 0.0
            assert varentropy(TokenDistribution(onehot)) == 0.0


def test_pool_size_bound(acceptance):
    rng = np.random.default_rng(7)
    V = ScriptedVerifier()
    with criterion(acceptance, 2, "pool size bound on 200 randomized runs", 30.0):
        steps_checked = 0
        for run in range(200):
            K = int(rng.choice([2, 4, 8]))
            W = int(rng.choice([2, 4, 8]))
            tau = float(rng.choice([0.0, 0.5, 1.0, 1.5, 2.0, 3.0, math.inf]))
            m = ProfileModel.random(np.random.default_rng(run), int(rng.integers(1, 5)), int(rng.integers(1, 5)))
            res = run_search("go\n", SearchConfig(tau=tau, beam_size=K, beam_width=W, seed=run), m, V)
            for s in res.step_stats:
                bound = K + (W - 1) * s.n_uncertain
                if s.step == 1 and s.n_certain == 1:
                    # a certain root samples K continuations of the prompt
                    assert s.pool_size in (1, K)
                else:
                    assert s.pool_size == s.n_certain + s.n_finished + W * s.n_uncertain
                assert s.pool_size <= bound <= K * W
                steps_checked += 1
        assert steps_checked > 200


def _beam_view(b):
    # latency_ms is wall time, so it is the one score field left out
    scores = tuple((s.value, s.scorer_id) for s in b.step_scores)
    return (b.id, b.key, b.ctx.token_ids, b.steps, scores, b.aggregate, b.finished,
            tuple((t.token_id, t.entropy_bits, t.sampler_state) for t in b.tokens), b.branch_events)


def _endpoint_cases():
    suite = build_synthetic_suite(25, 2, TUNING_PROFILE, seed=31, n_additions=4)
    cases = [(p.prompt, suite.model, suite.verifier) for p in suite.problems]
    for i in range(25):
        cases.append(("go\n", ProfileModel.random(np.random.default_rng(100 + i), 3, 4), ScriptedVerifier()))
    return cases


def test_tau_endpoints(acceptance):
    cases = _endpoint_cases()
    with criterion(acceptance, 3, "tau=0 equals beam search, tau=inf equals K standard runs", 30.0):
        assert len(cases) == 50
        for i, (prompt, model, ver) in enumerate(cases):
            base = SearchConfig(beam_size=4, beam_width=3, seed=1000 + i)
            egb0 = run_search(prompt, replace(base, method="egb", tau=0.0), model, ver)
            bs = run_search(prompt, replace(base, method="beam_search", tau=0.0), model, ver)
            assert [_beam_view(b) for b in egb0.all_beams] == [_beam_view(b) for b in bs.all_beams]
            assert egb0.per_step_pool_sizes == bs.per_step_pool_sizes
            assert egb0.step_stats == bs.step_stats
            assert egb0.answer == bs.answer

            inf = run_search(prompt, replace(base, method="egb", tau=math.inf), model, ver)
            assert inf.total_branch_events == 0
            assert all(not b.branch_events for b in inf.all_beams)
            std_cfg = replace(base, method="standard", tau=math.inf, beam_size=1, beam_width=1)
            runs = [run_search(prompt, std_cfg, model, ver, lineage=k) for k in range(base.beam_size)]
            got = sorted(_beam_view(b)[2:] for b in inf.all_beams)
            want = sorted(_beam_view(r.best_beam)[2:] for r in runs)
            assert got == want


class _Timer:
    elapsed = 0.0


_minimality = _Timer()


@settings(max_examples=150, deadline=None, derandomize=True)
@given(st.integers(0, 2**31), st.sampled_from([2, 3, 4, 8]), st.sampled_from([0.0, 0.3, 0.8, 1.2, 2.0]),
       st.floats(0.1, 0.9))
def _check_minimality(seed, W, tau, p_flat):
    start = time.perf_counter()
    m = ProfileModel.random(np.random.default_rng(seed), 1, 6, p_flat=p_flat)
    beams = [Beam(id=i + 1, key=(i, 0), ctx=m.start(f"go{i}\n"), steps=("s",)) for i in range(2)]
    pool = expand_step(beams, SearchConfig(tau=tau, beam_size=2, beam_width=W, seed=seed), m)
    by_source = {}
    for c in pool.entries:
        by_source.setdefault(c.source_index, []).append(c)
    for src, cands in by_source.items():
        ev = cands[0].branch_event
        if ev is None:
            assert len(cands) == 1
            # no position of a certain step may exceed tau
            ctx = beams[src].ctx
            for r in cands[0].step_tokens:
                assert naive_entropy(m.next_distribution(ctx).probs) <= tau
                ctx = m.append(ctx, r.token_id)
            continue
        assert len(cands) == W
        t = ev.t_star
        ctx = beams[src].ctx
        hs = []
        for r in cands[0].step_tokens[: t + 1]:
            hs.append(naive_entropy(m.next_distribution(ctx).probs))
            ctx = m.append(ctx, r.token_id)
        assert hs[t] > tau and all(h <= tau for h in hs[:t])
        prefixes = {tuple(r.token_id for r in c.step_tokens[:t]) for c in cands}
        assert len(prefixes) == 1
        assert all(c.branch_event == ev for c in cands)
    _minimality.elapsed += time.perf_counter() - start


def test_rollback_minimality(acceptance):
    with criterion(acceptance, 4, "every t* is the first exceedance and branches share [0, t*)"):
        _check_minimality()
        assert _minimality.elapsed < 10.0, f"took {_minimality.elapsed:.2f}s"


def test_dedup_contract(acceptance):
    m = ProfileModel.random(np.random.default_rng(3), 2, 4)
    beams = [Beam(id=i + 1, key=(i, 0), ctx=m.start(f"go{i}\n"), steps=("s",)) for i in range(3)]
    base = expand_step(beams, SearchConfig(tau=math.inf, beam_size=3, beam_width=2, seed=5), m)
    with criterion(acceptance, 5, "k injected copies leave one survivor and are never scored"):
        for k in range(1, 11):
            victim = base.entries[1]
            copies = [replace(victim, branch_index=victim.branch_index + j) for j in range(1, k)]
            pool = CandidatePool(list(base.entries) + copies)
            out = dedup(pool)
            assert out.dedup_removed == k - 1
            assert sum(c.full_tokens == victim.full_tokens for c in out.entries) == 1
            seen = []

            def score(ctx, steps, seen=seen):
                seen.append(ctx + "".join(steps))
                return [0.5] * len(steps)

            rank_candidates(out, CallableVerifier(score))
            assert len(seen) == len(out.entries) == len(base.entries)
            assert len(set(seen)) == len(seen)

        # end to end: beam search on a low-entropy model makes many exact duplicates
        calm = HalfCalmModel()
        calls = []

        def score2(ctx, steps):
            calls.append(ctx + "".join(steps))
            return [0.5] * len(steps)

        res = run_search("Q\n", SearchConfig(method="beam_search", beam_size=4, beam_width=4, seed=2), calm, CallableVerifier(score2))
        removed = sum(s.pool_size - s.after_dedup - s.n_finished for s in res.step_stats)
        assert removed > 0
        assert res.total_verifier_calls == len(calls) == sum(s.verifier_calls for s in res.step_stats)
        assert len(set(calls)) == len(calls)


def test_synthetic_rescue(acceptance):
    with criterion(acceptance, 6, "synthetic rescue on 500 depth-3 problems", 120.0):
        suite = build_synthetic_suite(500, 3, seed=6)
        for p in suite.problems:
            leaves = enumerate_completions(suite.model, p.prompt)
            right = [q for text, q in leaves if grade(text.rsplit("answer: ", 1)[-1].removesuffix(EOS), p.gold_answer)]
            assert len(leaves) == 8 and right == [0.125]
        egb = run_benchmark(suite.problems, SearchConfig(tau=0.5, beam_width=2, seed=6), suite.model, suite.verifier)
        assert egb.accuracy == 1.0
        std = run_benchmark(suite.problems, SearchConfig(method="standard", seed=6), suite.model, suite.verifier)
        assert 0.06 <= std.accuracy <= 0.22, std.accuracy
        print(f"  standard accuracy {std.accuracy:.3f}, egb accuracy {egb.accuracy:.3f}")


class HalfCalmModel(SequenceModel):
    """The first token of a solution picks its type for good: lines starting
    ``a`` continue with a low-entropy token, lines starting ``b`` with a
    four-way uniform one."""

    name = "half-calm"

    def __init__(self, n_steps: int = 5):
        self.n_steps = n_steps
        self.vocab = Vocabulary(["Q\n", "a1 ", "a2 ", "b1 ", "b2 ", "x", "y", "p", "q", "r", "s", ".\n", EOS])

    def _dist(self, probs):
        p = np.zeros(len(self.vocab))
        for tok, v in probs.items():
            p[self.vocab.id(tok)] = v
        return TokenDistribution(p)

    def next_distribution(self, ctx):
        gen = ctx.generated_text
        if not gen:
            return self._dist({"a1 ": 0.25, "a2 ": 0.25, "b1 ": 0.25, "b2 ": 0.25})
        if gen.endswith(".\n") or gen.endswith(" "):
            if gen.startswith("a"):
                return self._dist({"x": 0.75, "y": 0.25})
            return self._dist({t: 0.25 for t in "pqrs"})
        done = gen.count(".\n") + 1 >= self.n_steps
        return self._dist({EOS if done else ".\n": 1.0})


def half_calm_score(ctx, steps):
    # calm lines are only good while they avoid y; every other line scores 0.5
    if steps[0].startswith("a"):
        return [0.0 if "y" in s else 1.0 for s in steps]
    return [0.5] * len(steps)


def test_efficiency(acceptance):
    K = W = 4
    problems = [Problem(f"calm-{i:02d}", "Q\n", "x") for i in range(10)]
    model, ver = HalfCalmModel(), CallableVerifier(half_calm_score)
    with criterion(acceptance, 7, "half-certain benchmark: egb tokens <= 0.75 x beam search", 30.0):
        base = SearchConfig(beam_size=K, beam_width=W, certain_decoding="greedy", seed=17)
        bs = run_benchmark(problems, replace(base, method="beam_search", tau=0.0), model, ver)
        egb = run_benchmark(problems, replace(base, method="egb", tau=1.5), model, ver)
        # after the root, every step has exactly K/2 certain and K/2 uncertain beams
        for p in problems[:3]:
            res = run_search(p.prompt, replace(base, method="egb", tau=1.5), model, ver)
            assert [(s.n_certain, s.n_uncertain) for s in res.step_stats[1:]] == [(K // 2, K // 2)] * (model.n_steps - 1)
        egb_tokens = sum(r.tokens_generated for r in egb.problems)
        bs_tokens = sum(r.tokens_generated for r in bs.problems)
        assert Fraction(egb_tokens, bs_tokens) <= Fraction(3, 4), (egb_tokens, bs_tokens)
        # the pool bound with |U| = K/2: K/2 + W*K/2 candidates of 2 tokens per later step
        later = model.n_steps - 1
        assert egb_tokens == len(problems) * (W * 3 + later * 2 * (K // 2 + W * K // 2))
        assert bs_tokens == len(problems) * (W * 3 + later * 2 * K * W)
        egb_calls = sum(r.verifier_calls for r in egb.problems)
        bs_calls = sum(r.verifier_calls for r in bs.problems)
        assert egb_calls < bs_calls
        print(f"  tokens {egb_tokens} vs {bs_tokens}, verifier calls {egb_calls} vs {bs_calls}")


def test_budget_accounting(acceptance):
    suite = build_synthetic_suite(4, 2, TUNING_PROFILE, seed=8, n_additions=3)
    P, M, V = suite.problems, suite.model, suite.verifier
    with criterion(acceptance, 8, "sweep reports follow the budget convention"):
        for method in ("egb", "beam_search"):
            base = SearchConfig(method=method, tau=0.0 if method == "beam_search" else 1.5, beam_width=4)
            for r in sweep(P, base, "budget", [4, 8, 16, 32], M, V):
                cfg = SearchConfig.from_dict(r.config)
                assert r.total_budget == cfg.beam_size * cfg.beam_width == r.meta["sweep_value"]
                assert r.meta["budget_convention"] == "beam_size*beam_width"
        for r in sweep(P, SearchConfig(method="self_consistency"), "budget", [2, 4, 8, 16], M, V):
            n = r.meta["sweep_value"]
            assert r.total_budget == n == r.config["beam_size"]
            res = run_search(P[0].prompt, SearchConfig.from_dict(r.config), M, V)
            assert len(res.all_beams) == n
            assert r.meta["budget_convention"] == "samples"
        for r in sweep(P, SearchConfig(beam_size=4, beam_width=4), "tau", [0, 1.5, "inf"], M, V):
            assert r.total_budget == budget_of(SearchConfig.from_dict(r.config))
            assert r.total_budget == (4 if r.method == "self_consistency" else 16)


def _bench_bytes(tmp_path, tag, workers):
    from egb.cli import load_model, load_verifier, _dataset

    out = tmp_path / tag
    report = run_benchmark(_dataset("demo"), SearchConfig(tau=1.0, seed=99), load_model("scripted:demo"),
                           load_verifier("oracle"), workers=workers, trace_dir=out / "traces")
    write_report(report, out)
    files = {"report.json": (out / "report.json").read_bytes()}
    for p in sorted((out / "traces").glob("*.jsonl")):
        files[p.name] = p.read_bytes()
    return files


def test_determinism(acceptance, tmp_path):
    with criterion(acceptance, 9, "reruns with workers 1 and 4 are byte identical"):
        runs = [_bench_bytes(tmp_path, f"run{i}", w) for i, w in enumerate([1, 4, 1, 4])]
        assert len(runs[0]) == 11
        for other in runs[1:]:
            assert other == runs[0]


def test_trace_fidelity(acceptance, tmp_path):
    suite = build_synthetic_suite(10, 3, seed=12)
    with criterion(acceptance, 10, "branch events traced once each, SVG byte stable"):
        n_events = 0
        for p in suite.problems:
            res = run_search(p.prompt, SearchConfig(tau=0.5, beam_width=2, seed=3), suite.model, suite.verifier)
            recs = trace_records(res)
            for b in res.all_beams:
                marked = [r.token_position for r in recs if r.beam_id == b.id and r.branched]
                assert marked == [e.position for e in b.branch_events]
                assert all(b.tokens[e.position].sampler_state == "branch_point" for e in b.branch_events)
                n_events += len(b.branch_events)
            assert all(r.sampler_state == "branch_point" for r in recs if r.branched)
        assert n_events > 0
        svgs = []
        for i in range(2):
            p = suite.problems[0]
            res = run_search(p.prompt, SearchConfig(tau=0.5, beam_width=2, seed=3), suite.model, suite.verifier)
            run_dir = tmp_path / f"run{i}"
            run_dir.mkdir()
            write_trace(res, run_dir / "trace.jsonl")
            assert len(load_trace(run_dir / "trace.jsonl")) == sum(len(b.tokens) for b in res.all_beams)
            render_trace(run_dir / "trace.jsonl", run_dir / "trace.svg", True, True, 0.5)
            svgs.append((run_dir / "trace.svg").read_bytes())
        assert svgs[0] == svgs[1] and svgs[0].count(b"branch-marker") > 0
