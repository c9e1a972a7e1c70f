"""JSONL problem sets and exact-match grading."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from egb.answers import normalize_answer


class DatasetError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


@dataclass(frozen=True)
class Problem:
    id: str
    prompt: str
    gold_answer: str
    tags: tuple[str, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if not self.id:
            raise DatasetError("problem id must be non-empty")
        if not normalize_answer(self.gold_answer):
            raise DatasetError(f"problem {self.id!r} has an empty gold_answer")
        object.__setattr__(self, "tags", tuple(self.tags))

    def to_dict(self) -> dict:
        return {"id": self.id, "prompt": self.prompt, "gold_answer": self.gold_answer, "tags": list(self.tags)}


def parse_dataset(lines: Iterable[str]) -> list[Problem]:
    problems, seen = [], set()
    for i, raw in enumerate(lines, start=1):
        if not raw.strip():
            continue
        try:
            obj = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise DatasetError(f"invalid JSON ({exc.msg})", i) from exc
        if not isinstance(obj, dict):
            raise DatasetError("expected a JSON object", i)
        for key in ("id", "prompt", "gold_answer"):
            if key not in obj:
                raise DatasetError(f"missing required field {key!r}", i)
            if not isinstance(obj[key], (str, int, float)) or isinstance(obj[key], bool):
                raise DatasetError(f"field {key!r} must be a string", i)
        tags = obj.get("tags", [])
        if not isinstance(tags, list) or not all(isinstance(t, str) for t in tags):
            raise DatasetError("tags must be a list of strings", i)
        pid = str(obj["id"])
        if pid in seen:
            raise DatasetError(f"duplicate problem id {pid!r}", i)
        seen.add(pid)
        try:
            problems.append(Problem(pid, str(obj["prompt"]), str(obj["gold_answer"]), tuple(tags)))
        except DatasetError as exc:
            raise DatasetError(str(exc), i) from exc
    return problems


def load_dataset(path: str | Path) -> list[Problem]:
    with open(path, encoding="utf-8") as f:
        return parse_dataset(f)


def write_dataset(problems: Iterable[Problem], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for p in problems:
            f.write(json.dumps(p.to_dict(), ensure_ascii=False) + "\n")


def grade(predicted: str, gold: str) -> bool:
    return normalize_answer(predicted) == normalize_answer(gold)
