"""Threshold / injection-ratio sweeps and the static-layer comparison over a fixed prompt."""
from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence

from rich.table import Table

from .decoding import DecodePolicy, RetraceSource, StepDecision, Strategy, generate
from .model import VisualContext, Weights

logger = logging.getLogger(__name__)

METRICS = ("trigger_rate", "mean_trigger_layer", "mean_alpha", "divergence")
CSV_HEADER = ["gamma", "alpha", *METRICS]
LAYER_CSV_HEADER = ["strategy", "layer", "gamma", "alpha", *METRICS]


@dataclass(frozen=True)
class SweepRow:
    """One (gamma, alpha) cell; ``alpha`` is None when it is derived from u."""

    gamma: float
    alpha: Optional[float]
    trigger_rate: float
    mean_trigger_layer: Optional[float]
    mean_alpha: float
    divergence: float


@dataclass(frozen=True)
class LayerRow:
    """One static layer, or the dynamic reference row (``layer`` is None)."""

    strategy: str
    layer: Optional[int]
    gamma: Optional[float]
    alpha: float
    trigger_rate: float
    mean_trigger_layer: Optional[float]
    mean_alpha: float
    divergence: float


def hamming_divergence(a: Sequence[int], b: Sequence[int]) -> float:
    """Fraction of positions that differ; length mismatch counts as differing positions."""
    n = max(len(a), len(b))
    if n == 0:
        return 0.0
    mismatches = sum(x != y for x, y in zip(a, b)) + abs(len(a) - len(b))
    return mismatches / n


def _summarize(tokens: Sequence[int], decisions: Sequence[StepDecision], baseline: Sequence[int]) -> dict:
    fired = [d for d in decisions if d.triggered]
    steps = len(decisions)
    return {
        "trigger_rate": len(fired) / steps if steps else 0.0,
        "mean_trigger_layer": sum(d.trigger_layer for d in fired) / len(fired) if fired else None,
        "mean_alpha": sum(d.applied_alpha for d in decisions) / steps if steps else 0.0,
        "divergence": hamming_divergence(tokens, baseline),
    }


def _greedy_baseline(
    weights: Weights,
    visual: VisualContext,
    prompt_ids: Sequence[int],
    max_new_tokens: int,
) -> list[int]:
    tokens, _ = generate(
        weights,
        DecodePolicy(max_new_tokens=max_new_tokens),
        visual,
        prompt_ids,
        record_uncertainty=False,
    )
    return tokens


def sweep(
    weights: Weights,
    visual: VisualContext,
    prompt_ids: Sequence[int],
    gammas: Sequence[float],
    alphas: Sequence[float],
    *,
    strategy: Strategy = Strategy.MEMVR_DYNAMIC,
    max_new_tokens: int = 32,
    candidate_layers: Optional[tuple[int, int]] = None,
    retrace_source: RetraceSource = RetraceSource.IMAGE,
) -> list[SweepRow]:
    """One generation per (gamma, alpha) pair, compared against greedy.

    memvr_dynamic_alpha derives alpha from u, so *alphas* is ignored and each
    gamma yields a single row with ``alpha=None``.
    """
    baseline = _greedy_baseline(weights, visual, prompt_ids, max_new_tokens)
    grid_alphas: Sequence[Optional[float]] = [None] if strategy is Strategy.MEMVR_DYNAMIC_ALPHA else alphas
    rows = []
    for gamma in gammas:
        for alpha in grid_alphas:
            policy = DecodePolicy(
                strategy=strategy,
                gamma=gamma,
                candidate_layers=candidate_layers,
                max_new_tokens=max_new_tokens,
                retrace_source=retrace_source,
            )
            if alpha is not None:
                policy = policy.with_(alpha=alpha)
            tokens, decisions = generate(weights, policy, visual, prompt_ids, record_uncertainty=False)
            rows.append(SweepRow(gamma=gamma, alpha=alpha, **_summarize(tokens, decisions, baseline)))
            logger.debug("sweep %s", rows[-1])
    return rows


def compare_static_layers(
    weights: Weights,
    visual: VisualContext,
    prompt_ids: Sequence[int],
    layers: Sequence[int],
    alphas: Sequence[float],
    gammas: Sequence[float],
    *,
    max_new_tokens: int = 32,
    candidate_layers: Optional[tuple[int, int]] = None,
    retrace_source: RetraceSource = RetraceSource.IMAGE,
) -> list[LayerRow]:
    """For each alpha: memvr_static at every layer, then memvr_dynamic at every gamma."""
    baseline = _greedy_baseline(weights, visual, prompt_ids, max_new_tokens)
    base = DecodePolicy(
        strategy=Strategy.MEMVR_DYNAMIC,
        candidate_layers=candidate_layers,
        max_new_tokens=max_new_tokens,
        retrace_source=retrace_source,
    )
    rows = []
    for alpha in alphas:
        runs: list[tuple[str, Optional[int], Optional[float], DecodePolicy]] = [
            ("static", layer, None, base.with_(strategy=Strategy.MEMVR_STATIC, static_layer=layer, alpha=alpha))
            for layer in layers
        ]
        runs += [("dynamic", None, gamma, base.with_(gamma=gamma, alpha=alpha)) for gamma in gammas]
        for label, layer, gamma, policy in runs:
            tokens, decisions = generate(weights, policy, visual, prompt_ids, record_uncertainty=False)
            rows.append(
                LayerRow(
                    strategy=label,
                    layer=layer,
                    gamma=gamma,
                    alpha=alpha,
                    **_summarize(tokens, decisions, baseline),
                )
            )
            logger.debug("layer comparison %s", rows[-1])
    return rows


def _fmt(value: Optional[float]) -> str:
    return "" if value is None else f"{value:.6f}"


def sweep_to_csv(rows: Sequence[SweepRow]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for row in rows:
        writer.writerow([_fmt(getattr(row, column)) for column in CSV_HEADER])
    return buffer.getvalue()


def layer_rows_to_csv(rows: Sequence[LayerRow]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(LAYER_CSV_HEADER)
    for row in rows:
        writer.writerow(
            [row.strategy, "" if row.layer is None else row.layer]
            + [_fmt(getattr(row, column)) for column in LAYER_CSV_HEADER[2:]]
        )
    return buffer.getvalue()


def render_sweep_grid(rows: Sequence[SweepRow], metric: str) -> str:
    """gamma rows x alpha columns of one metric."""
    gammas = list(dict.fromkeys(row.gamma for row in rows))
    alphas = list(dict.fromkeys(row.alpha for row in rows))
    cell = {(row.gamma, row.alpha): getattr(row, metric) for row in rows}
    columns = " ".join(f"{'u-derived':>8}" if a is None else f"{a:>8.3f}" for a in alphas)
    lines = [f"{metric} (rows: gamma, columns: alpha)", "gamma\\alpha " + columns]
    for g in gammas:
        values = []
        for a in alphas:
            v = cell.get((g, a))
            values.append(f"{'-':>8}" if v is None or (isinstance(v, float) and math.isnan(v)) else f"{v:>8.3f}")
        lines.append(f"{g:>11.3f} " + " ".join(values))
    return "\n".join(lines)


def layer_table(rows: Sequence[LayerRow]) -> Table:
    table = Table(title="static layers vs dynamic")
    for column in ("strategy", "layer", "gamma", "alpha", "trigger rate", "mean layer", "mean alpha", "divergence"):
        table.add_column(column, justify="left" if column == "strategy" else "right")
    for row in rows:
        table.add_row(
            row.strategy,
            "-" if row.layer is None else str(row.layer),
            "-" if row.gamma is None else f"{row.gamma:.3f}",
            f"{row.alpha:.3f}",
            f"{row.trigger_rate:.3f}",
            "-" if row.mean_trigger_layer is None else f"{row.mean_trigger_layer:.2f}",
            f"{row.mean_alpha:.3f}",
            f"{row.divergence:.3f}",
        )
    return table
