"""Tests for uncertainty traces: recording, CSV/JSON export and parsing, heatmap, stats."""

import json

import pytest

from src.memvr_engine.decoding import DecodePolicy, StepDecision, Strategy, generate
from src.memvr_engine.exceptions import MVIOError, MVTraceError
from src.memvr_engine.trace import (
    TraceRow,
    UncertaintyTrace,
    export_trace_csv,
    export_trace_json,
    load_trace,
    parse_trace_csv,
    parse_trace_json,
    record_step,
    render_ascii_heatmap,
    trace_from_decisions,
    trace_stats,
    trace_to_csv,
)


def _sample_trace() -> UncertaintyTrace:
    trace = UncertaintyTrace(3)
    record_step(trace, StepDecision(token_id=5, per_layer_uncertainty=(0.1, 0.5, 0.99)))
    record_step(
        trace,
        StepDecision(
            token_id=7,
            triggered=True,
            trigger_layer=2,
            applied_alpha=0.25,
            per_layer_uncertainty=(0.0, 0.8, 0.3),
            injection_layer=3,
        ),
    )
    return trace


def test_record_step_appends_in_order():
    trace = _sample_trace()
    assert len(trace) == 2
    assert [row.step for row in trace] == [0, 1]
    assert trace[0].trigger_layer is None
    assert trace[1].trigger_layer == 2
    assert trace.matrix().shape == (2, 3)


def test_record_step_rejects_wrong_arity():
    with pytest.raises(MVTraceError):
        record_step(UncertaintyTrace(3), StepDecision(token_id=1, per_layer_uncertainty=(0.1, 0.2)))


def test_append_keeps_earlier_rows():
    trace = _sample_trace()
    before = trace.rows
    trace.append(TraceRow(step=2, token_id=9, trigger_layer=None, applied_alpha=0.0, uncertainties=(0.2, 0.2, 0.2)))
    assert trace.rows[:2] == before
    assert trace[2].token_id == 9
    with pytest.raises(MVTraceError):
        trace.append(TraceRow(step=3, token_id=1, trigger_layer=None, applied_alpha=0.0, uncertainties=(0.1,)))
    assert len(trace) == 3


def test_csv_format():
    text = trace_to_csv(_sample_trace())
    lines = text.splitlines()
    assert lines[0] == "step,token_id,trigger_layer,applied_alpha,u_1,u_2,u_3"
    assert lines[1] == "0,5,,0.000000,0.100000,0.500000,0.990000"
    assert lines[2] == "1,7,2,0.250000,0.000000,0.800000,0.300000"


def test_csv_parse_round_trip():
    trace = _sample_trace()
    parsed = parse_trace_csv(trace_to_csv(trace))
    assert parsed.rows == trace.rows


def test_json_parse_round_trip(tmp_path):
    trace = _sample_trace()
    path = tmp_path / "trace.json"
    export_trace_json(trace, path)
    data = json.loads(path.read_text())
    assert data[1]["trigger_layer"] == 2 and data[0]["trigger_layer"] is None
    assert load_trace(path).rows == trace.rows


def test_export_csv_and_load(tmp_path):
    path = tmp_path / "trace.csv"
    export_trace_csv(_sample_trace(), path)
    assert load_trace(path).rows == _sample_trace().rows


def test_parse_errors_carry_line_numbers():
    good = trace_to_csv(_sample_trace())
    with pytest.raises(MVTraceError) as exc:
        parse_trace_csv("step,token_id\n")
    assert exc.value.line == 1
    broken = good.replace("0,5,,0.000000,0.100000", "0,5,,0.000000,abc")
    with pytest.raises(MVTraceError) as exc:
        parse_trace_csv(broken)
    assert exc.value.line == 2
    with pytest.raises(MVTraceError) as exc:
        parse_trace_csv(good + "2,1,,0.0\n")
    assert exc.value.line == 4
    with pytest.raises(MVTraceError):
        parse_trace_csv(good.replace("0.990000", "1.500000"))
    with pytest.raises(MVTraceError):
        parse_trace_json("{not json")


def test_load_missing_trace(tmp_path):
    with pytest.raises(MVIOError):
        load_trace(tmp_path / "missing.csv")


def test_ascii_heatmap():
    art = render_ascii_heatmap(_sample_trace()).splitlines()
    assert len(art) == 3
    assert art[0] == "  1 |. |"
    assert art[1] == "  2 |+!|"
    assert art[2] == "  3 |@-|"


def test_ascii_heatmap_empty_trace():
    assert render_ascii_heatmap(parse_trace_csv("step,token_id,trigger_layer,applied_alpha,u_1\n")) == "empty trace"


def test_trace_stats():
    stats = trace_stats(_sample_trace())
    assert len(stats.layer_mean) == 3
    assert stats.layer_mean[1] == pytest.approx(0.65)
    assert stats.layer_max[2] == pytest.approx(0.99)
    assert stats.steps == 2 and stats.triggered_steps == 1
    assert stats.trigger_layers == {2: 1}
    assert stats.trigger_rate == 0.5


def test_trace_from_generation_has_l_minus_one_columns(weights, visual):
    policy = DecodePolicy(strategy=Strategy.MEMVR_DYNAMIC, max_new_tokens=4, eos_id=None)
    _, decisions = generate(weights, policy, visual, [1, 2, 3])
    trace = trace_from_decisions(weights.config.num_layers, decisions)
    header = trace_to_csv(trace).splitlines()[0].split(",")
    assert len([c for c in header if c.startswith("u_")]) == weights.config.num_layers - 1
    assert len(trace) == 4


def test_trace_row_is_immutable():
    row = TraceRow(step=0, token_id=1, trigger_layer=None, applied_alpha=0.0, uncertainties=(0.5,))
    with pytest.raises(AttributeError):
        row.step = 3
