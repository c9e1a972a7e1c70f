"""Command-line interface: ``egb solve | bench | sweep | render | synth``.

Exit codes: 0 success, 1 unexpected failure, 2 invalid configuration or
input, 3 model or verifier transport failure.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

from egb._http import TransportError
from egb.harness.datasets import DatasetError, load_dataset, write_dataset
from egb.harness.runner import AXES, run_benchmark, sweep, write_report, write_summary_csv
from egb.harness.synthetic import OracleVerifier, SpikeProfile, SyntheticSuite, build_synthetic_suite
from egb.lm.ngram import build_ngram_model
from egb.lm.remote import RemoteModel
from egb.lm.scripted import load_scripted_model
from egb.search import METHODS, ConfigError, SearchConfig, SearchError, parse_tau, run_search
from egb.trace import TraceParseError, render_trace, write_trace
from egb.verify import RemoteVerifier, ScriptedVerifier, VerificationError

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_TRANSPORT = 0, 1, 2, 3


class UsageError(ValueError):
    pass


def _demo_path(name: str) -> Path:
    return Path(str(resources.files("egb") / "data" / name))


def _tau_arg(text: str) -> float:
    try:
        return parse_tau(text)
    except ConfigError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {v}")
    return v


def load_model(spec: str, ngram_order: int = 3, ngram_smoothing: float = 0.0):
    kind, _, arg = spec.partition(":")
    if kind == "scripted":
        return load_scripted_model(_demo_path("demo_suite.json") if arg in ("", "demo") else arg)
    if kind == "ngram":
        if not arg:
            raise UsageError("--model ngram:<corpus path> needs a corpus file")
        return build_ngram_model(Path(arg).read_text(encoding="utf-8"), ngram_order, ngram_smoothing)
    if kind == "remote":
        return RemoteModel(arg) if arg else RemoteModel.from_env()
    raise UsageError(f"--model: unknown model spec {spec!r} (scripted:<path>, ngram:<path>, remote)")


def load_verifier(spec: str):
    kind, _, arg = spec.partition(":")
    if kind == "oracle":
        # the oracle reads the true sums from the prompt; a path only has to be a valid suite
        if arg and arg != "demo":
            SyntheticSuite.from_json(json.loads(Path(arg).read_text(encoding="utf-8")))
        return OracleVerifier()
    if kind == "scripted":
        if not arg:
            raise UsageError("--verifier scripted:<path> needs a score table")
        return ScriptedVerifier.from_json(json.loads(Path(arg).read_text(encoding="utf-8")))
    if kind == "remote":
        return RemoteVerifier(arg) if arg else RemoteVerifier.from_env()
    raise UsageError(f"--verifier: unknown verifier spec {spec!r} (oracle[:path], scripted:<path>, remote)")


_FLAG_KEYS = {
    "method": "method", "tau": "tau", "K": "beam_size", "W": "beam_width", "max_steps": "max_steps",
    "seed": "seed", "base_temperature": "base_temperature", "branch_temperature": "branch_temperature",
    "aggregation": "aggregation", "certain_decoding": "certain_decoding", "gate": "gate",
}


def build_config(args: argparse.Namespace) -> SearchConfig:
    """Config file values, overridden by explicit flags."""
    data: dict = {}
    if getattr(args, "config", None):
        data = json.loads(Path(args.config).read_text(encoding="utf-8"))
        if not isinstance(data, dict):
            raise UsageError("--config must hold a JSON object")
        for short, key in (("K", "beam_size"), ("W", "beam_width")):
            if short in data:
                data[key] = data.pop(short)
    for flag, key in _FLAG_KEYS.items():
        v = getattr(args, flag, None)
        if v is not None:
            data[key] = v
    if args.rescore_history:
        data["rescore_history"] = True
    if args.max_step_tokens is not None:
        rule = data.get("step_rule", {})
        rule = dict(rule) if isinstance(rule, dict) else {}
        rule["max_step_tokens"] = args.max_step_tokens
        data["step_rule"] = rule
    # a method that pins tau wins over a tau inherited from the config file
    if "method" in data and args.tau is None and data["method"] in ("beam_search", "self_consistency", "standard"):
        data.pop("tau", None)
    data.setdefault("workers", args.workers)
    try:
        return SearchConfig.from_dict(data)
    except ConfigError as exc:
        msg = str(exc)
        if "tau" in msg and args.tau is not None:
            msg = f"--tau: {msg}"
        raise ConfigError(msg) from exc


def _add_search_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file with SearchConfig fields; explicit flags override it")
    p.add_argument("--method", choices=METHODS)
    p.add_argument("--tau", type=_tau_arg, help="entropy threshold in bits, or 'inf'")
    p.add_argument("--K", type=_positive_int, help="beam size")
    p.add_argument("--W", type=_positive_int, help="beam width")
    p.add_argument("--max-steps", dest="max_steps", type=_positive_int)
    p.add_argument("--max-step-tokens", dest="max_step_tokens", type=_positive_int)
    p.add_argument("--seed", type=int)
    p.add_argument("--base-temperature", dest="base_temperature", type=float)
    p.add_argument("--branch-temperature", dest="branch_temperature", type=float)
    p.add_argument("--aggregation", choices=("last", "min", "product", "mean"))
    p.add_argument("--certain-decoding", dest="certain_decoding", choices=("sample", "greedy"))
    p.add_argument("--gate", choices=("any", "first"), help="branch on any token or only the step's first")
    p.add_argument("--rescore-history", action="store_true")
    p.add_argument("--model", default="scripted:demo", help="scripted:<path|demo>, ngram:<corpus>, remote[:url]")
    p.add_argument("--ngram-order", type=_positive_int, default=3)
    p.add_argument("--ngram-smoothing", type=float, default=0.0)
    p.add_argument("--verifier", default="oracle", help="oracle[:path], scripted:<path>, remote[:url]")
    p.add_argument("--workers", type=_positive_int, default=os.cpu_count() or 1)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="egb", description="Entropy-gated branching search.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="solve one prompt")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--prompt")
    src.add_argument("--prompt-file", dest="prompt_file")
    _add_search_flags(p)
    p.add_argument("--trace-out", dest="trace_out")
    p.add_argument("--out", help="write the SearchResult JSON here")

    p = sub.add_parser("bench", help="run a benchmark over a JSONL dataset")
    p.add_argument("--dataset", default="demo", help="JSONL dataset path, or 'demo'")
    _add_search_flags(p)
    p.add_argument("--out", default="runs/bench", help="output directory")
    p.add_argument("--trace-dir", dest="trace_dir")
    p.add_argument("--split", default="all", help="name of the dataset split, echoed in the report")

    p = sub.add_parser("sweep", help="sweep one parameter")
    p.add_argument("--dataset", default="demo")
    _add_search_flags(p)
    p.add_argument("--axis", required=True, choices=AXES)
    p.add_argument("--values", required=True, help="comma-separated values, e.g. 0,1,1.5,2,inf")
    p.add_argument("--out", default="runs/sweep")
    p.add_argument("--split", default="all")

    p = sub.add_parser("render", help="render a trace JSONL file to SVG")
    p.add_argument("--trace", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--tau", type=_tau_arg, help="draw the threshold line at this entropy")
    p.add_argument("--varentropy", action="store_true")
    p.add_argument("--no-branches", dest="no_branches", action="store_true")

    p = sub.add_parser("synth", help="write a synthetic suite (model script and dataset)")
    p.add_argument("--n-problems", dest="n_problems", type=_positive_int, default=20)
    p.add_argument("--fork-depth", dest="fork_depth", type=int, default=3)
    p.add_argument("--n-additions", dest="n_additions", type=_positive_int)
    p.add_argument("--fork-probs", dest="fork_probs", default="0.5,0.5")
    p.add_argument("--decoy-probs", dest="decoy_probs", default="")
    p.add_argument("--n-decoys", dest="n_decoys", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    return parser


def _dataset(arg: str):
    return load_dataset(_demo_path("demo.jsonl") if arg == "demo" else arg)


def _cmd_solve(args) -> int:
    cfg = build_config(args)
    if args.prompt is not None:
        prompt = args.prompt
    elif args.prompt_file:
        prompt = Path(args.prompt_file).read_text(encoding="utf-8")
    elif args.model in ("scripted", "scripted:demo"):
        prompt = _dataset("demo")[0].prompt
    else:
        raise UsageError("--prompt or --prompt-file is required")
    model = load_model(args.model, args.ngram_order, args.ngram_smoothing)
    verifier = load_verifier(args.verifier)
    res = run_search(prompt, cfg, model, verifier)
    print(f"answer: {res.answer}")
    print(
        f"steps={res.steps_run} candidates={res.total_candidates_generated} model_calls={res.total_model_calls} "
        f"verifier_calls={res.total_verifier_calls} branch_events={res.total_branch_events}"
    )
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(json.dumps(res.to_dict(include_timing=False), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    if args.trace_out:
        Path(args.trace_out).parent.mkdir(parents=True, exist_ok=True)
        write_trace(res, args.trace_out)
    return EXIT_OK


def _cmd_bench(args) -> int:
    cfg = build_config(args)
    problems = _dataset(args.dataset)
    model = load_model(args.model, args.ngram_order, args.ngram_smoothing)
    verifier = load_verifier(args.verifier)
    report = run_benchmark(problems, cfg, model, verifier, workers=args.workers, trace_dir=args.trace_dir,
                           meta={"dataset": args.dataset, "split": args.split})
    path = write_report(report, args.out)
    agg = report.aggregate()
    print(f"{report.method}: accuracy={agg['accuracy']:.4f} ({agg['correct']}/{agg['n_problems']}) "
          f"mean_candidates={agg['mean_candidates']:.2f} budget={agg['total_budget']} failures={agg['failures']}")
    print(f"report: {path}")
    return EXIT_OK


def _cmd_sweep(args) -> int:
    cfg = build_config(args)
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    if not values:
        raise UsageError("--values: need at least one value")
    if args.axis == "tau":
        for v in values:
            _tau_arg(v)
    else:
        for v in values:
            _positive_int(v)
    problems = _dataset(args.dataset)
    model = load_model(args.model, args.ngram_order, args.ngram_smoothing)
    verifier = load_verifier(args.verifier)
    reports = sweep(problems, cfg, args.axis, values, model, verifier, workers=args.workers,
                    meta={"dataset": args.dataset, "split": args.split})
    out = Path(args.out)
    for v, r in zip(values, reports):
        write_report(r, out, f"report_{args.axis}_{v}")
        agg = r.aggregate()
        print(f"{args.axis}={v} {r.method}: accuracy={agg['accuracy']:.4f} mean_candidates={agg['mean_candidates']:.2f} "
              f"budget={agg['total_budget']}")
    write_summary_csv(reports, out / "summary.csv")
    print(f"summary: {out / 'summary.csv'}")
    return EXIT_OK


def _cmd_render(args) -> int:
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    render_trace(args.trace, args.out, show_varentropy=args.varentropy, mark_branches=not args.no_branches, threshold=args.tau)
    print(f"svg: {args.out}")
    return EXIT_OK


def _floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise UsageError(f"expected comma-separated numbers, got {text!r}") from None


def _cmd_synth(args) -> int:
    profile = SpikeProfile(_floats(args.fork_probs), _floats(args.decoy_probs), args.n_decoys)
    suite = build_synthetic_suite(args.n_problems, args.fork_depth, profile, args.seed, args.n_additions)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "suite.json").write_text(json.dumps(suite.to_json(), indent=1) + "\n", encoding="utf-8")
    write_dataset(suite.problems, out / "problems.jsonl")
    print(f"suite: {out / 'suite.json'}\ndataset: {out / 'problems.jsonl'}")
    return EXIT_OK


_COMMANDS = {"solve": _cmd_solve, "bench": _cmd_bench, "sweep": _cmd_sweep, "render": _cmd_render, "synth": _cmd_synth}


def _is_transport(exc: BaseException) -> bool:
    while exc is not None:
        if isinstance(exc, TransportError):
            return True
        exc = exc.__cause__ or exc.__context__
    return False


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (SearchError, VerificationError, TransportError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT if _is_transport(exc) else EXIT_FAIL
    except (ConfigError, UsageError, DatasetError, TraceParseError, FileNotFoundError, json.JSONDecodeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
