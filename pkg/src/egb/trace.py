"""Per-token uncertainty traces: JSONL emission and SVG rendering."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import IO, Iterable, Optional, Sequence
from xml.sax.saxutils import escape

from egb.search import SearchResult

SAMPLER_STATES = ("certain", "uncertain", "branch_point")


class TraceParseError(ValueError):
    def __init__(self, message: str, line: Optional[int] = None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


@dataclass(frozen=True)
class TraceRecord:
    beam_id: int
    step_index: int
    token_position: int
    token_id: int
    token_text: str
    entropy_bits: float
    varentropy_bits2: float
    branched: bool
    sampler_state: str
    entropy_lower_bound: bool

    def to_json(self) -> str:
        return json.dumps(asdict(self), ensure_ascii=False, separators=(", ", ": "))


_FIELDS = {f.name: f.type for f in fields(TraceRecord)}


def trace_records(result: SearchResult) -> list[TraceRecord]:
    """One record per token on the lineage of every returned beam."""
    out = []
    for beam in sorted(result.all_beams, key=lambda b: b.id):
        for pos, t in enumerate(beam.tokens):
            out.append(TraceRecord(
                beam_id=beam.id,
                step_index=t.step_index,
                token_position=pos,
                token_id=t.token_id,
                token_text=t.text,
                entropy_bits=t.entropy_bits,
                varentropy_bits2=t.varentropy_bits2,
                branched=t.sampler_state == "branch_point",
                sampler_state=t.sampler_state,
                entropy_lower_bound=t.lower_bound,
            ))
    return out


def emit_trace(result: SearchResult, sink: IO[str]) -> int:
    """Write the trace of ``result`` as JSONL ordered by (beam_id, token_position)."""
    n = 0
    for rec in trace_records(result):
        sink.write(rec.to_json() + "\n")
        n += 1
    return n


def write_trace(result: SearchResult, path: str | Path) -> int:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        return emit_trace(result, f)


def _check(name: str, value, line: int):
    if name in ("beam_id", "step_index", "token_position", "token_id"):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif name in ("entropy_bits", "varentropy_bits2"):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool) and math.isfinite(value)
    elif name in ("branched", "entropy_lower_bound"):
        ok = isinstance(value, bool)
    elif name == "sampler_state":
        ok = value in SAMPLER_STATES
    else:
        ok = isinstance(value, str)
    if not ok:
        raise TraceParseError(f"bad value for {name}: {value!r}", line)


def read_trace(lines: Iterable[str]) -> list[TraceRecord]:
    records = []
    for i, raw in enumerate(lines, start=1):
        if not raw.strip():
            continue
        try:
            obj = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise TraceParseError(f"invalid JSON ({exc.msg})", i) from exc
        if not isinstance(obj, dict):
            raise TraceParseError("expected a JSON object", i)
        missing = set(_FIELDS) - set(obj)
        if missing:
            raise TraceParseError(f"missing fields {sorted(missing)}", i)
        extra = set(obj) - set(_FIELDS)
        if extra:
            raise TraceParseError(f"unknown fields {sorted(extra)}", i)
        for name in _FIELDS:
            _check(name, obj[name], i)
        records.append(TraceRecord(**obj))
    return records


def load_trace(path: str | Path) -> list[TraceRecord]:
    with open(path, encoding="utf-8") as f:
        return read_trace(f)


# plot geometry
_W, _H = 800, 320
_LEFT, _RIGHT, _TOP, _BOTTOM = 56, 16, 20, 40
_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22")


def _f(x: float) -> str:
    return f"{x:.2f}"


def render_svg(
    records: Sequence[TraceRecord],
    show_varentropy: bool = False,
    mark_branches: bool = True,
    threshold: Optional[float] = None,
    title: str = "token entropy",
) -> str:
    """SVG line plot of entropy (and optionally varentropy) per token position.

    Each beam gets its own polyline. Branch points are drawn as squares with
    class ``branch-marker``; ``threshold`` adds a dashed horizontal line.
    """
    if not records:
        raise TraceParseError("no records")
    beams = sorted({r.beam_id for r in records})
    by_beam = {b: sorted((r for r in records if r.beam_id == b), key=lambda r: r.token_position) for b in beams}
    x_max = max(1, max(r.token_position for r in records))
    series = [r.entropy_bits for r in records]
    if show_varentropy:
        series += [r.varentropy_bits2 for r in records]
    y_max = max(series + [threshold if threshold is not None and math.isfinite(threshold) else 0.0])
    y_max = max(1.0, math.ceil(y_max * 1.1 * 2) / 2)
    pw, ph = _W - _LEFT - _RIGHT, _H - _TOP - _BOTTOM

    def px(pos):
        return _LEFT + pw * pos / x_max

    def py(val):
        return _TOP + ph * (1 - val / y_max)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" viewBox="0 0 {_W} {_H}">',
        f'<rect x="0" y="0" width="{_W}" height="{_H}" fill="white"/>',
        f'<text x="{_LEFT}" y="14" font-family="sans-serif" font-size="12">{escape(title)}</text>',
        f'<line class="axis" x1="{_LEFT}" y1="{_TOP + ph}" x2="{_LEFT + pw}" y2="{_TOP + ph}" stroke="black"/>',
        f'<line class="axis" x1="{_LEFT}" y1="{_TOP}" x2="{_LEFT}" y2="{_TOP + ph}" stroke="black"/>',
    ]
    n_ticks = 4
    for i in range(n_ticks + 1):
        v = y_max * i / n_ticks
        out.append(
            f'<text x="{_LEFT - 6}" y="{_f(py(v) + 4)}" font-family="sans-serif" font-size="10" '
            f'text-anchor="end">{v:.2f}</text>'
        )
    for i in range(n_ticks + 1):
        pos = round(x_max * i / n_ticks)
        out.append(
            f'<text x="{_f(px(pos))}" y="{_TOP + ph + 14}" font-family="sans-serif" font-size="10" '
            f'text-anchor="middle">{pos}</text>'
        )
    out.append(
        f'<text x="{_LEFT + pw // 2}" y="{_H - 6}" font-family="sans-serif" font-size="11" '
        f'text-anchor="middle">token position</text>'
    )
    if threshold is not None and math.isfinite(threshold):
        y = _f(py(min(threshold, y_max)))
        out.append(
            f'<line class="threshold" x1="{_LEFT}" y1="{y}" x2="{_LEFT + pw}" y2="{y}" '
            f'stroke="#555" stroke-dasharray="6 4"/>'
        )
    for i, b in enumerate(beams):
        color = _COLORS[i % len(_COLORS)]
        recs = by_beam[b]
        pts = " ".join(f"{_f(px(r.token_position))},{_f(py(r.entropy_bits))}" for r in recs)
        out.append(f'<polyline class="entropy" data-beam="{b}" fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        if show_varentropy:
            pts = " ".join(f"{_f(px(r.token_position))},{_f(py(r.varentropy_bits2))}" for r in recs)
            out.append(
                f'<polyline class="varentropy" data-beam="{b}" fill="none" stroke="{color}" '
                f'stroke-width="1" stroke-dasharray="2 2" points="{pts}"/>'
            )
        if mark_branches:
            for r in recs:
                if r.branched:
                    out.append(
                        f'<rect class="branch-marker" data-beam="{b}" data-step="{r.step_index}" '
                        f'x="{_f(px(r.token_position) - 3)}" y="{_f(py(r.entropy_bits) - 3)}" '
                        f'width="6" height="6" fill="{color}"/>'
                    )
    out.append("</svg>")
    return "\n".join(out) + "\n"


def render_trace(
    trace_path: str | Path,
    out_path: str | Path,
    show_varentropy: bool = False,
    mark_branches: bool = True,
    threshold: Optional[float] = None,
) -> str:
    svg = render_svg(load_trace(trace_path), show_varentropy, mark_branches, threshold, title=Path(trace_path).name)
    with open(out_path, "w", encoding="utf-8", newline="\n") as f:
        f.write(svg)
    return svg
