"""Per-step, per-layer uncertainty traces: capture, CSV/JSON export, heatmap and stats.

CSV schema::

    step,token_id,trigger_layer,applied_alpha,u_1,...,u_{L-1}

``trigger_layer`` is empty when the step did not trigger; floats carry six
decimals. The JSON export is an array of objects with the same keys.
"""
from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Optional, Union

import numpy as np

from .decoding import StepDecision
from .exceptions import MVIOError, MVTraceError

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

GLYPHS = " .:-=+*#%@"
TRIGGER_GLYPH = "!"
_FIXED_COLUMNS = ["step", "token_id", "trigger_layer", "applied_alpha"]


@dataclass(frozen=True)
class TraceRow:
    step: int
    token_id: int
    trigger_layer: Optional[int]
    applied_alpha: float
    uncertainties: tuple[float, ...]


class UncertaintyTrace:
    """Append-only table of :class:`TraceRow`, each with ``width`` = L-1 u values."""

    def __init__(self, width: int, rows: Iterable[TraceRow] = ()) -> None:
        if width < 1:
            raise MVTraceError(f"trace width must be >= 1, got {width}")
        self.width = width
        self._rows: list[TraceRow] = []
        for row in rows:
            self.append(row)

    @classmethod
    def for_layers(cls, num_layers: int) -> "UncertaintyTrace":
        return cls(num_layers - 1)

    def __len__(self) -> int:
        return len(self._rows)

    def __iter__(self) -> Iterator[TraceRow]:
        return iter(self._rows)

    def __getitem__(self, index: int) -> TraceRow:
        return self._rows[index]

    @property
    def rows(self) -> tuple[TraceRow, ...]:
        return tuple(self._rows)

    def matrix(self) -> np.ndarray:
        """(steps, L-1) array of u values."""
        if not self._rows:
            return np.zeros((0, self.width))
        return np.array([row.uncertainties for row in self._rows], dtype=np.float64)

    def append(self, row: TraceRow) -> None:
        if len(row.uncertainties) != self.width:
            raise MVTraceError(
                f"step {row.step} has {len(row.uncertainties)} uncertainty values, trace expects {self.width}"
            )
        self._rows.append(row)


def record_step(trace: UncertaintyTrace, decision: StepDecision) -> UncertaintyTrace:
    """Append one row built from *decision*; earlier rows are never touched."""
    trace.append(
        TraceRow(
            step=len(trace),
            token_id=decision.token_id,
            trigger_layer=decision.trigger_layer if decision.triggered else None,
            applied_alpha=decision.applied_alpha,
            uncertainties=tuple(decision.per_layer_uncertainty),
        )
    )
    return trace


def trace_from_decisions(num_layers: int, decisions: Iterable[StepDecision]) -> UncertaintyTrace:
    trace = UncertaintyTrace.for_layers(num_layers)
    for decision in decisions:
        record_step(trace, decision)
    return trace


# ── export ────────────────────────────────────────────────────────────────────

def _header(width: int) -> list[str]:
    return _FIXED_COLUMNS + [f"u_{layer}" for layer in range(1, width + 1)]


def trace_to_csv(trace: UncertaintyTrace) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(_header(trace.width))
    for row in trace:
        writer.writerow(
            [
                row.step,
                row.token_id,
                "" if row.trigger_layer is None else row.trigger_layer,
                f"{row.applied_alpha:.6f}",
                *(f"{u:.6f}" for u in row.uncertainties),
            ]
        )
    return buffer.getvalue()


def _row_object(row: TraceRow) -> dict:
    obj = {
        "step": row.step,
        "token_id": row.token_id,
        "trigger_layer": row.trigger_layer,
        "applied_alpha": round(row.applied_alpha, 6),
    }
    obj.update({f"u_{i}": round(u, 6) for i, u in enumerate(row.uncertainties, start=1)})
    return obj


def trace_to_json(trace: UncertaintyTrace) -> str:
    return json.dumps([_row_object(row) for row in trace], indent=2) + "\n"


def _write_text(path: PathLike, text: str) -> None:
    try:
        Path(path).write_text(text, encoding="utf-8")
    except OSError as e:
        raise MVIOError(f"cannot write trace {path}: {e.strerror or e}", path=path) from e
    logger.debug("wrote trace %s", path)


def export_trace_csv(trace: UncertaintyTrace, path: PathLike) -> None:
    _write_text(path, trace_to_csv(trace))


def export_trace_json(trace: UncertaintyTrace, path: PathLike) -> None:
    _write_text(path, trace_to_json(trace))


# ── import ────────────────────────────────────────────────────────────────────

def _parse_u(value: str, line: int, column: str) -> float:
    try:
        u = float(value)
    except ValueError:
        raise MVTraceError(f"line {line}: {column} is not a number: {value!r}", line=line) from None
    if not 0.0 <= u <= 1.0:
        raise MVTraceError(f"line {line}: {column}={u} outside [0, 1]", line=line)
    return u


def _parse_int(value: str, line: int, column: str) -> int:
    try:
        return int(value)
    except ValueError:
        raise MVTraceError(f"line {line}: {column} is not an integer: {value!r}", line=line) from None


def parse_trace_csv(text: str) -> UncertaintyTrace:
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise MVTraceError("line 1: missing header", line=1) from None
    width = len(header) - len(_FIXED_COLUMNS)
    if width < 1 or header != _header(width):
        raise MVTraceError(f"line 1: unexpected header {','.join(header)!r}", line=1)
    trace = UncertaintyTrace(width)
    for line, record in enumerate(reader, start=2):
        if not record:
            continue
        if len(record) != len(header):
            raise MVTraceError(f"line {line}: expected {len(header)} fields, got {len(record)}", line=line)
        step, token_id, trigger, alpha, *us = record
        trace.append(
            TraceRow(
                step=_parse_int(step, line, "step"),
                token_id=_parse_int(token_id, line, "token_id"),
                trigger_layer=_parse_int(trigger, line, "trigger_layer") if trigger.strip() else None,
                applied_alpha=_parse_u(alpha, line, "applied_alpha"),
                uncertainties=tuple(_parse_u(u, line, f"u_{i}") for i, u in enumerate(us, start=1)),
            )
        )
    return trace


def parse_trace_json(text: str, width: Optional[int] = None) -> UncertaintyTrace:
    """Parse the JSON export; an empty array needs *width* (defaults to 1)."""
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise MVTraceError(f"line {e.lineno}: {e.msg}", line=e.lineno) from None
    if not isinstance(data, list):
        raise MVTraceError("trace JSON must be an array of row objects")
    if data:
        width = sum(1 for key in data[0] if key.startswith("u_"))
    trace = UncertaintyTrace(width or 1)
    for index, obj in enumerate(data):
        try:
            trace.append(
                TraceRow(
                    step=int(obj["step"]),
                    token_id=int(obj["token_id"]),
                    trigger_layer=None if obj["trigger_layer"] is None else int(obj["trigger_layer"]),
                    applied_alpha=float(obj["applied_alpha"]),
                    uncertainties=tuple(float(obj[f"u_{i}"]) for i in range(1, trace.width + 1)),
                )
            )
        except (KeyError, TypeError, ValueError) as e:
            raise MVTraceError(f"row {index}: malformed trace object ({e})") from None
    return trace


def load_trace(path: PathLike) -> UncertaintyTrace:
    """Load a CSV trace, or a JSON trace when the suffix is ``.json``."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise MVIOError(f"cannot read trace {path}: {e.strerror or e}", path=path) from e
    if Path(path).suffix.lower() == ".json":
        return parse_trace_json(text)
    return parse_trace_csv(text)


# ── views ─────────────────────────────────────────────────────────────────────

def _glyph(u: float) -> str:
    return GLYPHS[min(int(u * len(GLYPHS)), len(GLYPHS) - 1)]


def render_ascii_heatmap(trace: UncertaintyTrace) -> str:
    """One line per layer (1 at the top), one column per step; ``!`` marks the trigger cell."""
    if len(trace) == 0:
        return "empty trace"
    lines = []
    for layer in range(1, trace.width + 1):
        cells = "".join(
            TRIGGER_GLYPH if row.trigger_layer == layer else _glyph(row.uncertainties[layer - 1])
            for row in trace
        )
        lines.append(f"{layer:>3} |{cells}|")
    return "\n".join(lines)


@dataclass
class TraceStats:
    layer_mean: list[float]
    layer_max: list[float]
    steps: int
    triggered_steps: int
    trigger_layers: dict[int, int] = field(default_factory=dict)

    @property
    def trigger_rate(self) -> float:
        return self.triggered_steps / self.steps if self.steps else 0.0


def trace_stats(trace: UncertaintyTrace) -> TraceStats:
    u = trace.matrix()
    layers: dict[int, int] = {}
    for row in trace:
        if row.trigger_layer is not None:
            layers[row.trigger_layer] = layers.get(row.trigger_layer, 0) + 1
    empty = len(trace) == 0
    return TraceStats(
        layer_mean=[0.0] * trace.width if empty else u.mean(axis=0).tolist(),
        layer_max=[0.0] * trace.width if empty else u.max(axis=0).tolist(),
        steps=len(trace),
        triggered_steps=sum(layers.values()),
        trigger_layers=dict(sorted(layers.items())),
    )
