"""Final-answer extraction and normalization."""
from __future__ import annotations

import re
from decimal import Decimal, InvalidOperation
from typing import Sequence

from egb.lm.base import EOS

_ANSWER_RE = re.compile(r"answer\s*(?:is)?\s*[:=]\s*([^\n]*)", re.IGNORECASE)
_NUMBER_RE = re.compile(r"[-+]?\d[\d,]*(?:\.\d+)?|[-+]?\.\d+")
_NUMERIC_RE = re.compile(r"^[-+]?(?:\d[\d,]*(?:\.\d*)?|\.\d+)$")


def _canonical_number(s: str) -> str | None:
    if not _NUMERIC_RE.match(s):
        return None
    try:
        d = Decimal(s.replace(",", ""))
    except InvalidOperation:
        return None
    if d == 0:
        return "0"
    d = d.normalize()
    return format(d, "f")


def normalize_answer(ans: str) -> str:
    s = " ".join(ans.split()).casefold()
    s = s.rstrip(".,;:!?").strip()
    num = _canonical_number(s)
    return num if num is not None else s


def extract_answer(text: str, terminal_markers: Sequence[str] = (EOS,)) -> str:
    """Pull the final answer out of a generated solution.

    Prefers the last ``answer: ...`` line, then the last number, then the
    last non-empty line.
    """
    for m in terminal_markers:
        if m:
            text = text.replace(m, "")
    hits = _ANSWER_RE.findall(text)
    if hits:
        return hits[-1].strip()
    nums = _NUMBER_RE.findall(text)
    if nums:
        return nums[-1]
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    return lines[-1] if lines else ""
