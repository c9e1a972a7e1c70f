"""Benchmark runs, parameter sweeps and report files."""
from __future__ import annotations

import csv
import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

from egb.harness.datasets import Problem, grade
from egb.search import SearchConfig, SearchError, parse_tau, run_search
from egb.trace import write_trace
from egb.verify import Verifier

AXES = ("tau", "K", "W", "budget")


def derive_seed(*parts) -> int:
    """Stable 63-bit seed from any mix of values (their ``str`` forms are hashed)."""
    h = hashlib.sha256("\x1f".join(str(p) for p in parts).encode("utf-8")).digest()
    return int.from_bytes(h[:8], "big") >> 1


def budget_of(cfg: SearchConfig) -> int:
    """Samples for self-consistency, beam size times beam width for beam-style methods."""
    if cfg.method == "self_consistency":
        return cfg.beam_size
    if cfg.method == "standard":
        return 1
    return cfg.beam_size * cfg.beam_width


def method_label(cfg: SearchConfig) -> str:
    if cfg.method == "egb" and cfg.tau == 0:
        return "beam_search"
    if cfg.method == "egb" and math.isinf(cfg.tau):
        return "self_consistency"
    return cfg.method


@dataclass
class ProblemRecord:
    id: str
    predicted: str
    gold: str
    correct: bool
    candidates_generated: int = 0
    model_calls: int = 0
    verifier_calls: int = 0
    tokens_generated: int = 0
    branch_events: int = 0
    seed: int = 0
    error: Optional[str] = None
    wall_time_ms: float = 0.0

    def to_dict(self, include_timing: bool = False) -> dict:
        d = {k: v for k, v in self.__dict__.items() if k != "wall_time_ms"}
        if include_timing:
            d["wall_time_ms"] = self.wall_time_ms
        return d


@dataclass
class RunReport:
    method: str
    config: dict
    problems: list[ProblemRecord]
    meta: dict = field(default_factory=dict)

    @property
    def n_correct(self) -> int:
        return sum(r.correct for r in self.problems)

    @property
    def accuracy(self) -> float:
        return self.n_correct / len(self.problems)

    @property
    def failures(self) -> int:
        return sum(r.error is not None for r in self.problems)

    def _mean(self, attr: str) -> float:
        return math.fsum(getattr(r, attr) for r in self.problems) / len(self.problems)

    @property
    def total_budget(self) -> int:
        return budget_of(SearchConfig.from_dict(self.config))

    def aggregate(self, include_timing: bool = False) -> dict:
        agg = {
            "n_problems": len(self.problems),
            "correct": self.n_correct,
            "accuracy": self.accuracy,
            "mean_candidates": self._mean("candidates_generated"),
            "mean_model_calls": self._mean("model_calls"),
            "mean_verifier_calls": self._mean("verifier_calls"),
            "mean_tokens": self._mean("tokens_generated"),
            "total_budget": self.total_budget,
            "failures": self.failures,
            "has_failures": self.failures > 0,
        }
        if include_timing:
            agg["mean_wall_time_ms"] = self._mean("wall_time_ms")
        return agg

    def to_dict(self, include_timing: bool = False) -> dict:
        """Report as a JSON-ready dict. Wall times are left out by default so
        that reruns produce identical bytes."""
        return {
            "method": self.method,
            "config": self.config,
            "meta": self.meta,
            "aggregate": self.aggregate(include_timing),
            "problems": [r.to_dict(include_timing) for r in self.problems],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, ensure_ascii=False) + "\n"

    def timings(self) -> dict:
        return {
            "mean_wall_time_ms": self._mean("wall_time_ms"),
            "problems": {r.id: r.wall_time_ms for r in self.problems},
        }


def _solve(problem: Problem, cfg: SearchConfig, model, verifier, master_seed: int, trace_dir: Optional[Path]) -> ProblemRecord:
    seed = derive_seed(master_seed, problem.id)
    try:
        res = run_search(problem.prompt, replace(cfg, seed=seed), model, verifier)
    except SearchError as exc:
        rec = ProblemRecord(problem.id, "", problem.gold_answer, False, seed=seed, error=str(exc))
        part = exc.partial
        if part is not None:
            rec.candidates_generated = part.total_candidates_generated
            rec.model_calls = part.total_model_calls
            rec.verifier_calls = part.total_verifier_calls
            rec.wall_time_ms = part.wall_time_ms
        return rec
    if trace_dir is not None:
        write_trace(res, trace_dir / f"{problem.id}.jsonl")
    return ProblemRecord(
        id=problem.id,
        predicted=res.answer,
        gold=problem.gold_answer,
        correct=grade(res.answer, problem.gold_answer),
        candidates_generated=res.total_candidates_generated,
        model_calls=res.total_model_calls,
        verifier_calls=res.total_verifier_calls,
        tokens_generated=res.total_tokens_generated,
        branch_events=res.total_branch_events,
        seed=seed,
        wall_time_ms=res.wall_time_ms,
    )


def run_benchmark(
    dataset: Sequence[Problem],
    cfg: SearchConfig,
    model,
    verifier: Verifier,
    *,
    workers: int = 1,
    trace_dir: Optional[str | Path] = None,
    meta: Optional[dict] = None,
) -> RunReport:
    """Solve every problem and grade it by exact match.

    Each problem is searched with a seed derived from ``cfg.seed`` and its
    id, so results do not depend on ``workers`` or on dataset order.
    Failing problems are recorded and counted; the run continues.
    """
    if not dataset:
        raise ValueError("empty dataset")
    tdir = None
    if trace_dir is not None:
        tdir = Path(trace_dir)
        tdir.mkdir(parents=True, exist_ok=True)
    problems = sorted(dataset, key=lambda p: p.id)
    if workers > 1 and len(problems) > 1:
        with ThreadPoolExecutor(workers) as ex:
            records = list(ex.map(lambda p: _solve(p, cfg, model, verifier, cfg.seed, tdir), problems))
    else:
        records = [_solve(p, cfg, model, verifier, cfg.seed, tdir) for p in problems]
    info = {
        "master_seed": cfg.seed,
        "model": getattr(model, "name", type(model).__name__),
        "verifier": getattr(verifier, "scorer_id", type(verifier).__name__),
        "budget_convention": "samples" if cfg.method == "self_consistency" else "beam_size*beam_width",
    }
    info.update(meta or {})
    return RunReport(method_label(cfg), cfg.to_dict(), records, info)


def config_for(base: SearchConfig, axis: str, value) -> SearchConfig:
    """The run configuration for one point of a sweep."""
    if axis == "tau":
        tau = parse_tau(value)
        if tau == 0:
            return replace(base, method="beam_search", tau=0.0)
        if math.isinf(tau):
            return replace(base, method="self_consistency", tau=math.inf)
        return replace(base, method="egb", tau=tau)
    if axis == "K":
        return replace(base, beam_size=int(value))
    if axis == "W":
        return replace(base, beam_width=int(value))
    if axis == "budget":
        b = int(value)
        if b < 1:
            raise ValueError("budget must be >= 1")
        if base.method == "self_consistency":
            return replace(base, beam_size=b)
        if base.method == "standard":
            raise ValueError("standard decoding has a fixed budget of 1")
        w = min(base.beam_width, b)
        return replace(base, beam_width=w, beam_size=b // w)
    raise ValueError(f"unknown sweep axis {axis!r}; expected one of {AXES}")


def sweep(
    dataset: Sequence[Problem],
    base_cfg: SearchConfig,
    axis: str,
    values: Sequence,
    model,
    verifier: Verifier,
    *,
    workers: int = 1,
    meta: Optional[dict] = None,
) -> list[RunReport]:
    """One report per value. Each run gets a master seed derived from the
    base seed, the axis and the value.

    On the tau axis, 0 runs as beam search and infinity as self-consistency.
    """
    if not values:
        raise ValueError("sweep needs at least one value")
    if axis not in AXES:
        raise ValueError(f"unknown sweep axis {axis!r}; expected one of {AXES}")
    reports = []
    for v in values:
        cfg = config_for(base_cfg, axis, v)
        cfg = replace(cfg, seed=derive_seed(base_cfg.seed, axis, v))
        label = "inf" if axis == "tau" and math.isinf(parse_tau(v)) else v
        info = {"sweep_axis": axis, "sweep_value": label, "base_seed": base_cfg.seed}
        info.update(meta or {})
        reports.append(run_benchmark(dataset, cfg, model, verifier, workers=workers, meta=info))
    return reports


def tune_tau(
    dataset: Sequence[Problem],
    base_cfg: SearchConfig,
    values: Sequence,
    model,
    verifier: Verifier,
    *,
    split: str = "all",
    workers: int = 1,
) -> tuple[float, list[RunReport]]:
    """Pick tau on a validation split: best accuracy, then fewest mean
    candidates, then the larger tau."""
    reports = sweep(dataset, base_cfg, "tau", values, model, verifier, workers=workers, meta={"tuning_split": split})
    taus = [parse_tau(v) for v in values]
    best = max(range(len(taus)), key=lambda i: (reports[i].accuracy, -reports[i].aggregate()["mean_candidates"], taus[i]))
    return taus[best], reports


SUMMARY_FIELDS = (
    "axis", "value", "method", "K", "W", "tau", "accuracy", "mean_candidates",
    "mean_model_calls", "mean_verifier_calls", "total_budget", "failures",
)


def write_summary_csv(reports: Sequence[RunReport], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(SUMMARY_FIELDS)
        for r in reports:
            agg = r.aggregate()
            w.writerow([
                r.meta.get("sweep_axis", ""), r.meta.get("sweep_value", ""), r.method,
                r.config["beam_size"], r.config["beam_width"], r.config["tau"],
                f"{agg['accuracy']:.6f}", f"{agg['mean_candidates']:.6f}", f"{agg['mean_model_calls']:.6f}",
                f"{agg['mean_verifier_calls']:.6f}", agg["total_budget"], agg["failures"],
            ])


def write_report(report: RunReport, out_dir: str | Path, name: str = "report") -> Path:
    """Write ``<name>.json`` plus a ``<name>.timings.json`` sidecar with wall times."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{name}.json"
    path.write_text(report.to_json(), encoding="utf-8")
    (out / f"{name}.timings.json").write_text(json.dumps(report.timings(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path
