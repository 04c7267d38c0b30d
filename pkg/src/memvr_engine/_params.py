"""Flag value parsing and policy building for the CLI.

Converts raw flag strings into token-id lists, float grids and layer ranges,
and keyword arguments into a validated DecodePolicy.
"""
from __future__ import annotations

import re
from typing import Any

import numpy as np

from .config import ModelConfig
from .decoding import DecodePolicy, Strategy, layer_buckets
from .exceptions import MVConfigError

_SEPARATORS = re.compile(r"[,\s]+")


def _split(text: str) -> list[str]:
    return [part for part in _SEPARATORS.split(text.strip()) if part]


def parse_id_list(text: str) -> list[int]:
    """Comma- and/or space-separated token ids.

    Examples:
        "1,2,3"   -> [1, 2, 3]
        "4 5, 6"  -> [4, 5, 6]
    """
    try:
        return [int(part) for part in _split(text)]
    except ValueError:
        raise MVConfigError(f"token ids must be integers: {text!r}", field="prompt_ids") from None


def parse_float_grid(text: str, field: str = "grid") -> list[float]:
    """Explicit values or an inclusive ``start:stop:step`` range.

    Examples:
        "0.5,0.75,1"   -> [0.5, 0.75, 1.0]
        "0:1:0.25"     -> [0.0, 0.25, 0.5, 0.75, 1.0]
    """
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise MVConfigError(f"range must be start:stop:step, got {text!r}", field=field)
        try:
            start, stop, step = (float(p) for p in parts)
        except ValueError:
            raise MVConfigError(f"range bounds must be numbers: {text!r}", field=field) from None
        if step <= 0 or stop < start:
            raise MVConfigError(f"empty range {text!r}", field=field)
        count = int(round((stop - start) / step)) + 1
        values = [round(float(v), 10) for v in np.linspace(start, start + step * (count - 1), count)]
    else:
        try:
            values = [float(part) for part in _split(text)]
        except ValueError:
            raise MVConfigError(f"grid values must be numbers: {text!r}", field=field) from None
    if not values:
        raise MVConfigError(f"{field} grid is empty", field=field)
    return values


def parse_candidates(text: str, config: ModelConfig) -> tuple[int, int]:
    """Inclusive layer range ``LO-HI`` or bucket ``bucket:I/N`` (I is 1-based).

    Examples (L = 12):
        "3-8"         -> (3, 8)
        "bucket:2/2"  -> (7, 11)
    """
    text = text.strip()
    bucket = re.fullmatch(r"bucket:(\d+)/(\d+)", text)
    if bucket:
        index, count = int(bucket.group(1)), int(bucket.group(2))
        buckets = layer_buckets(config.num_layers, count)
        if not 1 <= index <= count:
            raise MVConfigError(f"bucket index {index} outside 1..{count}", field="candidate_layers")
        return buckets[index - 1]
    span = re.fullmatch(r"(\d+)\s*-\s*(\d+)", text)
    if not span:
        raise MVConfigError(f"candidate layers must be LO-HI or bucket:I/N, got {text!r}", field="candidate_layers")
    return int(span.group(1)), int(span.group(2))


def parse_strategy_list(text: str) -> list[Strategy]:
    return [Strategy.parse(part) for part in _split(text)]


# Flags each strategy accepts beyond the common ones.
_STRATEGY_FLAGS: dict[Strategy, set[str]] = {
    Strategy.GREEDY: set(),
    Strategy.SAMPLE: {"temperature", "sample_seed"},
    Strategy.MEMVR_STATIC: {"static_layer", "alpha", "retrace_source"},
    Strategy.MEMVR_DYNAMIC: {"gamma", "alpha", "candidate_layers", "retrace_source"},
    Strategy.MEMVR_DYNAMIC_ALPHA: {"gamma", "candidate_layers", "retrace_source"},
    Strategy.CONTRASTIVE: {"cd_beta", "cd_noise_sigma", "sample_seed"},
}
_COMMON_FLAGS = {"max_new_tokens", "eos_id", "visual_scale", "text_scale"}


def build_policy(strategy: str | Strategy = Strategy.GREEDY, **kwargs: Any) -> DecodePolicy:
    """Convert keyword arguments into a DecodePolicy.

    ``None`` values are treated as "flag not given". A flag that the chosen
    strategy does not read is an error, as is memvr_static without a layer.

    Supported kwargs:
        gamma, alpha, static_layer, candidate_layers, temperature, sample_seed,
        cd_beta, cd_noise_sigma, retrace_source, visual_scale, text_scale,
        max_new_tokens, eos_id
    """
    strategy = strategy if isinstance(strategy, Strategy) else Strategy.parse(strategy)
    given = {key: value for key, value in kwargs.items() if value is not None}
    allowed = _STRATEGY_FLAGS[strategy] | _COMMON_FLAGS
    for key in given:
        if key not in allowed:
            raise MVConfigError(
                f"--{key.replace('_', '-')} does not apply to strategy {strategy.cli_name}",
                field=key,
            )
    if strategy is Strategy.MEMVR_STATIC and "static_layer" not in given:
        raise MVConfigError("memvr-static requires --layer", field="static_layer")
    return DecodePolicy(strategy=strategy, **given)
