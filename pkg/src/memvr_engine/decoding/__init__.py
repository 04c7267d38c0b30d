from typing import Sequence

from ..model import VisualContext, Weights
from ._base import (
    DecodeStrategy,
    StepDecision,
    collect_uncertainties,
    layer_uncertainties,
    layer_uncertainty,
    normalized_entropy,
)
from .contrastive import ContrastiveDecoder, decode_step_contrastive, distort_visual
from .greedy import GreedyDecoder, SampleDecoder
from .memvr import (
    MemVRDecoder,
    RetraceHooks,
    blend_retrace,
    decode_step_memvr,
    dynamic_alpha,
    ffn_with_vr,
    retrace_memory,
    visual_retrace,
)
from .policy import DecodePolicy, RetraceSource, Strategy, layer_buckets

DECODERS: dict[Strategy, type[DecodeStrategy]] = {
    Strategy.GREEDY: GreedyDecoder,
    Strategy.SAMPLE: SampleDecoder,
    Strategy.MEMVR_STATIC: MemVRDecoder,
    Strategy.MEMVR_DYNAMIC: MemVRDecoder,
    Strategy.MEMVR_DYNAMIC_ALPHA: MemVRDecoder,
    Strategy.CONTRASTIVE: ContrastiveDecoder,
}


def build_decoder(
    weights: Weights,
    policy: DecodePolicy,
    visual: VisualContext,
    *,
    record_uncertainty: bool = True,
) -> DecodeStrategy:
    return DECODERS[policy.strategy](weights, policy, visual, record_uncertainty=record_uncertainty)


def generate(
    weights: Weights,
    policy: DecodePolicy,
    visual: VisualContext,
    prompt_ids: Sequence[int],
    *,
    record_uncertainty: bool = True,
) -> tuple[list[int], list[StepDecision]]:
    """Prefill the visual-then-text prompt and decode with *policy*."""
    return build_decoder(weights, policy, visual, record_uncertainty=record_uncertainty).run(prompt_ids)


__all__ = [
    "DECODERS",
    "ContrastiveDecoder",
    "DecodePolicy",
    "DecodeStrategy",
    "GreedyDecoder",
    "MemVRDecoder",
    "RetraceHooks",
    "RetraceSource",
    "SampleDecoder",
    "StepDecision",
    "Strategy",
    "blend_retrace",
    "build_decoder",
    "collect_uncertainties",
    "decode_step_contrastive",
    "decode_step_memvr",
    "distort_visual",
    "dynamic_alpha",
    "ffn_with_vr",
    "generate",
    "layer_buckets",
    "layer_uncertainties",
    "layer_uncertainty",
    "normalized_entropy",
    "retrace_memory",
    "visual_retrace",
]
