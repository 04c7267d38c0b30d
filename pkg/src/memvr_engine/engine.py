"""MemVR engine: public entry point.

Usage:
    engine = MemVREngine.from_files("memvr_weights.bin", image_seed=7)
    result = engine.generate([1, 2, 3, 4], DecodePolicy(strategy=Strategy.MEMVR_DYNAMIC))
    print(result.tokens)
    export_trace_csv(result.trace, "trace.csv")
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

from ._io import PathLike, load_visual, load_weights
from .bench import DEFAULT_STRATEGIES, BenchReport, benchmark
from .config import ModelConfig
from .decoding import DecodePolicy, RetraceSource, StepDecision, Strategy, generate
from .exceptions import MVConfigError
from .model import VisualContext, Weights, synthesize_visual_context
from .sweep import LayerRow, SweepRow, compare_static_layers, sweep
from .trace import UncertaintyTrace, trace_from_decisions

logger = logging.getLogger(__name__)


@dataclass
class Generation:
    tokens: list[int]
    decisions: list[StepDecision]
    trace: UncertaintyTrace


class MemVREngine:
    """Weights plus one visual context, with generation, benchmark and sweep entry points."""

    def __init__(self, weights: Weights, visual: VisualContext) -> None:
        visual.check(weights.config)
        self.weights = weights
        self.visual = visual

    @classmethod
    def from_files(
        cls,
        weights_path: PathLike,
        image_seed: Optional[int] = None,
        image_file: Optional[PathLike] = None,
    ) -> "MemVREngine":
        """Load weights and either load or synthesize the visual context."""
        if image_seed is not None and image_file is not None:
            raise MVConfigError("give either an image seed or an image file, not both", field="image")
        weights = load_weights(weights_path)
        if image_file is not None:
            visual = load_visual(image_file)
        else:
            visual = synthesize_visual_context(weights.config, 7 if image_seed is None else image_seed)
        logger.debug("engine ready: %s, %d visual tokens", weights.config, visual.num_tokens)
        return cls(weights, visual)

    @property
    def config(self) -> ModelConfig:
        return self.weights.config

    def generate(
        self,
        prompt_ids: Sequence[int],
        policy: Optional[DecodePolicy] = None,
        *,
        record_uncertainty: bool = True,
    ) -> Generation:
        tokens, decisions = generate(
            self.weights,
            policy or DecodePolicy(),
            self.visual,
            prompt_ids,
            record_uncertainty=record_uncertainty,
        )
        trace = trace_from_decisions(self.config.num_layers, decisions if record_uncertainty else ())
        return Generation(tokens=tokens, decisions=decisions, trace=trace)

    def benchmark(
        self,
        prompt_ids: Sequence[int],
        strategies: Sequence[Strategy | str] = DEFAULT_STRATEGIES,
        tokens_per_run: int = 80,
        repeats: int = 5,
    ) -> BenchReport:
        if not prompt_ids:
            raise MVConfigError("benchmark prompt must contain at least one token id", field="prompt_ids")
        return benchmark(self.weights, self.visual, prompt_ids, strategies, tokens_per_run, repeats)

    def sweep(
        self,
        prompt_ids: Sequence[int],
        gammas: Sequence[float],
        alphas: Sequence[float],
        *,
        strategy: Strategy = Strategy.MEMVR_DYNAMIC,
        max_new_tokens: int = 32,
        candidate_layers: Optional[tuple[int, int]] = None,
        retrace_source: RetraceSource = RetraceSource.IMAGE,
    ) -> list[SweepRow]:
        """Alphas are required unless *strategy* derives alpha from u."""
        if not gammas or (not alphas and strategy is not Strategy.MEMVR_DYNAMIC_ALPHA):
            raise MVConfigError("sweep grids must be nonempty", field="grid")
        return sweep(
            self.weights,
            self.visual,
            prompt_ids,
            gammas,
            alphas,
            strategy=strategy,
            max_new_tokens=max_new_tokens,
            candidate_layers=candidate_layers,
            retrace_source=retrace_source,
        )

    def compare_static_layers(
        self,
        prompt_ids: Sequence[int],
        layers: Sequence[int],
        alphas: Sequence[float],
        gammas: Sequence[float],
        *,
        max_new_tokens: int = 32,
        candidate_layers: Optional[tuple[int, int]] = None,
        retrace_source: RetraceSource = RetraceSource.IMAGE,
    ) -> list[LayerRow]:
        if not layers or not alphas or not gammas:
            raise MVConfigError("layer comparison grids must be nonempty", field="grid")
        top = self.config.num_layers - 1
        for layer in layers:
            if not 1 <= layer <= top:
                raise MVConfigError(f"static layer {layer} outside [1, {top}]", field="static_layer")
        return compare_static_layers(
            self.weights,
            self.visual,
            prompt_ids,
            layers,
            alphas,
            gammas,
            max_new_tokens=max_new_tokens,
            candidate_layers=candidate_layers,
            retrace_source=retrace_source,
        )
