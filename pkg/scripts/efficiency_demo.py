"""Compare methods on a synthetic suite: accuracy against generation and
verifier cost.

    python3 scripts/efficiency_demo.py [--n 50] [--fork-depth 3] [--workers 4]
"""
import argparse
from dataclasses import replace

from egb.harness import TUNING_PROFILE, build_synthetic_suite, run_benchmark
from egb.search import SearchConfig


def main():
    ap = argparse.ArgumentParser(description="method comparison on a synthetic suite")
    ap.add_argument("--n", type=int, default=50)
    ap.add_argument("--fork-depth", type=int, default=3)
    ap.add_argument("--n-additions", type=int, default=6)
    ap.add_argument("--K", type=int, default=4)
    ap.add_argument("--W", type=int, default=4)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--workers", type=int, default=4)
    args = ap.parse_args()

    suite = build_synthetic_suite(args.n, args.fork_depth, TUNING_PROFILE, seed=args.seed, n_additions=args.n_additions)
    base = SearchConfig(beam_size=args.K, beam_width=args.W, seed=args.seed)
    runs = [
        ("standard", replace(base, method="standard", tau=None, beam_size=1, beam_width=1)),
        ("self-consistency", replace(base, method="self_consistency", tau=None, beam_size=args.K * args.W)),
        ("beam search", replace(base, method="beam_search", tau=0.0)),
        ("egb", replace(base, method="egb")),
    ]
    print(f"{'method':>17} {'accuracy':>9} {'candidates':>11} {'tokens':>8} {'model calls':>12} {'verifier calls':>15}")
    for label, cfg in runs:
        agg = run_benchmark(suite.problems, cfg, suite.model, suite.verifier, workers=args.workers).aggregate()
        print(f"{label:>17} {agg['accuracy']:>9.3f} {agg['mean_candidates']:>11.1f} {agg['mean_tokens']:>8.1f} "
              f"{agg['mean_model_calls']:>12.1f} {agg['mean_verifier_calls']:>15.1f}")


if __name__ == "__main__":
    main()
