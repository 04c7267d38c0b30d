"""Latency / throughput comparison of decoding strategies.

Each strategy gets one excluded warm-up run and then ``repeats`` timed runs of
exactly ``tokens_per_run`` tokens (EOS disabled, no uncertainty recording
beyond what the strategy itself needs). Reported latency is the median over
repeats of decode time per emitted token; ratios are against the greedy row of
the same invocation.
"""
from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np
import psutil
from rich.table import Table

from .decoding import DecodePolicy, Strategy, build_decoder
from .exceptions import MVConfigError, MVException
from .model import VisualContext, Weights

logger = logging.getLogger(__name__)

MIN_REPEATS = 3
DEFAULT_STRATEGIES = (Strategy.GREEDY, Strategy.SAMPLE, Strategy.MEMVR_DYNAMIC, Strategy.CONTRASTIVE)


@dataclass
class BenchRow:
    strategy: str
    tokens: int = 0
    latency_ms_per_token: float = 0.0
    throughput_tokens_per_ms: float = 0.0
    total_ms: float = 0.0
    prefill_ms: float = 0.0
    forward_passes: int = 0
    memory_mb: float = 0.0  # approximate resident set size
    ratio_to_greedy: Optional[float] = None
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.error is None


@dataclass
class BenchReport:
    rows: list[BenchRow]
    tokens_per_run: int
    repeats: int

    def row(self, strategy: Strategy | str) -> BenchRow:
        name = strategy.cli_name if isinstance(strategy, Strategy) else Strategy.parse(strategy).cli_name
        for row in self.rows:
            if row.strategy == name:
                return row
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {
            "tokens_per_run": self.tokens_per_run,
            "repeats": self.repeats,
            "memory_note": "memory_mb is an approximate resident-set sample",
            "rows": [asdict(row) for row in self.rows],
        }


def bench_policy(strategy: Strategy, weights: Weights, tokens: int) -> DecodePolicy:
    """Default policy for a benchmark row; memvr-static retraces at the middle layer."""
    static = weights.config.num_layers // 2 if strategy is Strategy.MEMVR_STATIC else None
    return DecodePolicy(strategy=strategy, static_layer=static, max_new_tokens=tokens, eos_id=None)


def _rss_mb() -> float:
    return psutil.Process().memory_info().rss / (1 << 20)


def _run_once(
    weights: Weights,
    policy: DecodePolicy,
    visual: VisualContext,
    prompt_ids: Sequence[int],
) -> tuple[float, float, int, int]:
    """Returns (prefill_s, decode_s, tokens, forward_passes)."""
    decoder = build_decoder(weights, policy, visual, record_uncertainty=False)
    decoder.check_capacity(prompt_ids)
    t0 = time.perf_counter()
    embedding = decoder.start(prompt_ids)
    t1 = time.perf_counter()
    for _ in range(policy.max_new_tokens):
        decision = decoder.step(embedding)
        embedding = decoder.embed(decision.token_id)
    t2 = time.perf_counter()
    return t1 - t0, t2 - t1, policy.max_new_tokens, decoder.forward_passes


def measure(
    weights: Weights,
    policy: DecodePolicy,
    visual: VisualContext,
    prompt_ids: Sequence[int],
    repeats: int,
) -> BenchRow:
    if policy.max_new_tokens < 1:
        raise MVConfigError("benchmark needs at least one token per run", field="tokens")
    _run_once(weights, policy, visual, prompt_ids)  # warm-up
    prefill, decode, totals, memory = [], [], [], []
    passes = tokens = 0
    for _ in range(repeats):
        p, d, tokens, passes = _run_once(weights, policy, visual, prompt_ids)
        prefill.append(p * 1000.0)
        decode.append(d * 1000.0 / tokens)
        totals.append((p + d) * 1000.0)
        memory.append(_rss_mb())
    latency = float(np.median(decode))
    return BenchRow(
        strategy=policy.strategy.cli_name,
        tokens=tokens,
        latency_ms_per_token=latency,
        throughput_tokens_per_ms=1.0 / latency if latency > 0 else 0.0,
        total_ms=float(np.median(totals)),
        prefill_ms=float(np.median(prefill)),
        forward_passes=passes,
        memory_mb=max(memory),
    )


def benchmark(
    weights: Weights,
    visual: VisualContext,
    prompt_ids: Sequence[int],
    strategies: Sequence[Strategy | str] = DEFAULT_STRATEGIES,
    tokens_per_run: int = 80,
    repeats: int = 5,
    policies: Optional[dict[Strategy, DecodePolicy]] = None,
) -> BenchReport:
    """Time every strategy sequentially; greedy is always measured as the baseline."""
    if repeats < MIN_REPEATS:
        raise MVConfigError(f"repeats must be >= {MIN_REPEATS}, got {repeats}", field="repeats")
    parsed = [s if isinstance(s, Strategy) else Strategy.parse(s) for s in strategies]
    if not parsed:
        raise MVConfigError("at least one strategy is required", field="strategies")
    order = [Strategy.GREEDY] + [s for s in dict.fromkeys(parsed) if s is not Strategy.GREEDY]

    rows: list[BenchRow] = []
    for strategy in order:
        policy = (policies or {}).get(strategy) or bench_policy(strategy, weights, tokens_per_run)
        try:
            row = measure(weights, policy, visual, prompt_ids, repeats)
        except MVException as e:
            logger.warning("benchmark row %s failed: %s", strategy.cli_name, e)
            row = BenchRow(strategy=strategy.cli_name, error=str(e))
        except (ArithmeticError, MemoryError, ValueError) as e:
            logger.warning("benchmark row %s failed", strategy.cli_name, exc_info=True)
            row = BenchRow(strategy=strategy.cli_name, error=f"{type(e).__name__}: {e}")
        logger.debug("bench %s", row)
        rows.append(row)

    baseline = rows[0]
    for row in rows:
        if row.ok and baseline.ok and baseline.latency_ms_per_token > 0:
            row.ratio_to_greedy = row.latency_ms_per_token / baseline.latency_ms_per_token
    return BenchReport(rows=rows, tokens_per_run=tokens_per_run, repeats=repeats)


def bench_table(report: BenchReport) -> Table:
    table = Table(title=f"{report.tokens_per_run} tokens x {report.repeats} repeats (median)")
    for column in ("strategy", "ms/token", "tokens/ms", "total ms", "prefill ms", "fwd passes", "~RSS MB", "x greedy"):
        table.add_column(column, justify="left" if column == "strategy" else "right")
    for row in report.rows:
        if not row.ok:
            table.add_row(row.strategy, f"error: {row.error}", "", "", "", "", "", "")
            continue
        table.add_row(
            row.strategy,
            f"{row.latency_ms_per_token:.3f}",
            f"{row.throughput_tokens_per_ms:.4f}",
            f"{row.total_ms:.1f}",
            f"{row.prefill_ms:.1f}",
            str(row.forward_passes),
            f"{row.memory_mb:.1f}",
            f"{row.ratio_to_greedy:.2f}" if row.ratio_to_greedy is not None else "-",
        )
    return table
