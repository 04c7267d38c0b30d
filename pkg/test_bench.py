"""Tests for the strategy benchmark."""

import pytest
from rich.console import Console

from src.memvr_engine import bench as bench_module
from src.memvr_engine.bench import BenchReport, bench_policy, bench_table, benchmark
from src.memvr_engine.config import ModelConfig
from src.memvr_engine.decoding import DecodePolicy, Strategy
from src.memvr_engine.exceptions import MVConfigError
from src.memvr_engine.model import synthesize_visual_context, synthesize_weights

PROMPT = [1, 2, 3]


def test_greedy_only_has_ratio_one(weights, visual):
    report = benchmark(weights, visual, PROMPT, ["greedy"], tokens_per_run=4, repeats=3)
    assert [row.strategy for row in report.rows] == ["greedy"]
    row = report.row(Strategy.GREEDY)
    assert row.ok
    assert row.ratio_to_greedy == 1.0
    assert row.tokens == 4
    assert row.latency_ms_per_token > 0
    assert row.memory_mb > 0


def test_greedy_is_always_the_baseline(weights, visual):
    report = benchmark(weights, visual, PROMPT, ["contrastive", "memvr-dynamic"], tokens_per_run=5, repeats=3)
    assert [row.strategy for row in report.rows] == ["greedy", "contrastive", "memvr-dynamic"]
    assert all(row.ratio_to_greedy is not None for row in report.rows)


def test_forward_pass_column(weights, visual):
    report = benchmark(weights, visual, PROMPT, ["greedy", "contrastive"], tokens_per_run=5, repeats=3)
    assert report.row("greedy").forward_passes == 5
    assert report.row("contrastive").forward_passes == 10


def test_repeats_must_be_at_least_three(weights, visual):
    with pytest.raises(MVConfigError):
        benchmark(weights, visual, PROMPT, ["greedy"], tokens_per_run=4, repeats=1)


def test_failing_row_does_not_stop_the_others(weights, visual):
    bad = DecodePolicy(strategy=Strategy.SAMPLE, max_new_tokens=10_000, eos_id=None)
    report = benchmark(
        weights, visual, PROMPT, ["greedy", "sample"], tokens_per_run=4, repeats=3,
        policies={Strategy.SAMPLE: bad},
    )
    assert report.row("greedy").ok
    sample = report.row("sample")
    assert not sample.ok
    assert "max_seq_len" in sample.error
    assert sample.ratio_to_greedy is None


def test_bench_policy_defaults(weights):
    policy = bench_policy(Strategy.MEMVR_STATIC, weights, 12)
    assert policy.static_layer == weights.config.num_layers // 2
    assert policy.eos_id is None
    assert policy.max_new_tokens == 12


def test_report_renders(weights, visual):
    report = benchmark(weights, visual, PROMPT, ["greedy"], tokens_per_run=3, repeats=3)
    data = report.to_dict()
    assert data["repeats"] == 3 and data["rows"][0]["strategy"] == "greedy"
    console = Console(width=120, record=True)
    console.print(bench_table(report))
    assert "greedy" in console.export_text()
    assert isinstance(report, BenchReport)


def test_unexpected_row_error_is_contained(weights, visual, monkeypatch):
    real_run_once = bench_module._run_once

    def run_once(weights, policy, visual, prompt_ids):
        if policy.strategy is Strategy.SAMPLE:
            raise MemoryError("cannot allocate cache")
        return real_run_once(weights, policy, visual, prompt_ids)

    monkeypatch.setattr(bench_module, "_run_once", run_once)
    report = benchmark(weights, visual, PROMPT, ["greedy", "sample", "contrastive"], tokens_per_run=3, repeats=3)
    assert report.row("greedy").ok and report.row("contrastive").ok
    sample = report.row("sample")
    assert sample.error == "MemoryError: cannot allocate cache"
    assert sample.ratio_to_greedy is None


@pytest.mark.slow
def test_default_config_latency_profile():
    config = ModelConfig()
    weights = synthesize_weights(config, 42)
    visual = synthesize_visual_context(config, 7)
    report = benchmark(
        weights, visual, [1, 2, 3, 4], ["greedy", "memvr-dynamic", "contrastive"], tokens_per_run=80, repeats=5
    )
    greedy, memvr, contrastive = (report.row(name) for name in ("greedy", "memvr-dynamic", "contrastive"))
    assert greedy.forward_passes == memvr.forward_passes == 80
    assert contrastive.forward_passes == 160
    assert memvr.ratio_to_greedy <= 1.15
    assert contrastive.ratio_to_greedy >= 1.8
