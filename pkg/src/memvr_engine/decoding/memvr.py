"""Visual retracing: re-inject visual tokens through a middle layer's FFN.

The FFN reads as a key-value memory, ``FFN(x) = sum_i phi(<x, k_i>) v_i``.
Retracing adds the visual tokens as extra entries where each token is both key
and value, ``delta(z | x) = sum_i phi(<x, z_i>) z_i``, and blends
``alpha * delta + (1 - alpha) * FFN(x)`` at one layer per decoding step.

Dynamic triggering scans the candidate layers in order, measures the
normalized early-exit entropy u after each, and at the first layer l with
``u > gamma`` retraces at layer l + 1. The trigger re-arms at every step.
"""
from __future__ import annotations

import logging
from typing import Optional, Sequence

import numpy as np

from ..exceptions import MVConfigError, MVShapeError, MVValueError
from ..model import ForwardHooks, KvCache, LayerWeights, VisualContext, Weights, ffn_forward, forward_step
from ..tensor import Vector, argmax_lowest, silu
from ._base import DecodeStrategy, StepDecision, collect_uncertainties, layer_uncertainty
from .policy import DecodePolicy, RetraceSource, Strategy

logger = logging.getLogger(__name__)


def visual_retrace(x: Vector, visual: VisualContext) -> Vector:
    """``sum_i silu(<x, z_i>) * z_i`` over the visual token columns."""
    if x.ndim != 1 or x.shape[0] != visual.dim:
        raise MVShapeError(f"visual_retrace: query of shape {x.shape} vs visual tokens {visual.tokens.shape}")
    z = visual.tokens.astype(np.float64)
    weights = silu(z.T @ x.astype(np.float64))
    return (z @ weights).astype(np.float32)


def blend_retrace(ffn_out: Vector, delta: Vector, alpha: float) -> Vector:
    return (alpha * delta.astype(np.float64) + (1.0 - alpha) * ffn_out.astype(np.float64)).astype(np.float32)


def ffn_with_vr(x: Vector, visual: VisualContext, alpha: float, layer: LayerWeights) -> Vector:
    """Convex blend of the retraced visual signal and the layer's FFN output."""
    if not 0.0 <= alpha <= 1.0:
        raise MVValueError(f"alpha must be in [0, 1], got {alpha}")
    return blend_retrace(ffn_forward(x, layer), visual_retrace(x, visual), alpha)


def dynamic_alpha(u: float, gamma: float) -> float:
    """Injection ratio ``2 * (u - gamma)`` clamped to [0, 1]."""
    return max(0.0, min(1.0, 2.0 * (u - gamma)))


def retrace_memory(
    weights: Weights,
    visual: VisualContext,
    prompt_ids: Sequence[int],
    source: RetraceSource = RetraceSource.IMAGE,
) -> VisualContext:
    """Entries that retracing reads as keys and values.

    Text entries are the distinct prompt token embeddings in first-seen order,
    each rescaled to unit norm like the visual columns. ``TEXT_IMAGE`` puts the
    visual columns first.
    """
    if source is RetraceSource.IMAGE:
        return visual
    ids = list(dict.fromkeys(int(t) for t in prompt_ids))
    if not ids:
        raise MVValueError("text retracing needs at least one prompt token")
    text = weights.token_embedding[ids].astype(np.float64)
    text = text / np.linalg.norm(text, axis=1, keepdims=True)
    columns = text.T if source is RetraceSource.TEXT else np.concatenate([visual.tokens, text.T], axis=1)
    return VisualContext(np.ascontiguousarray(columns, dtype=np.float32))


class RetraceHooks(ForwardHooks):
    """Forward interceptor for a single MemVR step; *memory* holds the retraced entries."""

    def __init__(self, weights: Weights, policy: DecodePolicy, memory: VisualContext) -> None:
        self.weights = weights
        self.policy = policy
        self.memory = memory
        self.candidates = policy.candidates(weights.config)
        self.scanned: dict[int, float] = {}
        self.trigger_layer: Optional[int] = None
        self.injection_layer: Optional[int] = None
        self.applied_alpha = 0.0
        self.armed = policy.strategy is not Strategy.MEMVR_STATIC
        if not self.armed:
            self.trigger_layer = self.injection_layer = policy.static_layer
            self.applied_alpha = policy.alpha

    @property
    def triggered(self) -> bool:
        return self.injection_layer is not None

    def layer_done(self, layer: int, hidden: Vector) -> None:
        if not self.armed or layer not in self.candidates:
            return
        u = layer_uncertainty(self.weights, hidden)
        self.scanned[layer] = u
        if u > self.policy.gamma:
            self.armed = False
            self.trigger_layer = layer
            self.injection_layer = layer + 1
            if self.policy.strategy is Strategy.MEMVR_DYNAMIC_ALPHA:
                self.applied_alpha = dynamic_alpha(u, self.policy.gamma)
            else:
                self.applied_alpha = self.policy.alpha

    def ffn(self, layer: int, x: Vector, ffn_out: Vector) -> Vector:
        if layer != self.injection_layer:
            return ffn_out
        return blend_retrace(ffn_out, visual_retrace(x, self.memory), self.applied_alpha)


def decode_step_memvr(
    weights: Weights,
    cache: KvCache,
    policy: DecodePolicy,
    visual: VisualContext,
    embedding: Vector,
    *,
    record_uncertainty: bool = True,
) -> tuple[StepDecision, KvCache]:
    """One greedy step with entropy-triggered (or static) visual retracing.

    *visual* is the retrace memory; see :func:`retrace_memory` for text sources.
    """
    if not policy.strategy.is_memvr:
        raise MVConfigError(f"decode_step_memvr needs a memvr strategy, got {policy.strategy.value}", field="strategy")
    hooks = RetraceHooks(weights, policy, visual)
    out, cache = forward_step(weights, cache, embedding, hooks)
    per_layer = collect_uncertainties(weights, out, hooks.scanned) if record_uncertainty else ()
    decision = StepDecision(
        token_id=argmax_lowest(out.final_logits),
        triggered=hooks.triggered,
        trigger_layer=hooks.trigger_layer if hooks.triggered else None,
        applied_alpha=hooks.applied_alpha if hooks.triggered else 0.0,
        per_layer_uncertainty=per_layer,
        injection_layer=hooks.injection_layer,
    )
    if hooks.triggered:
        logger.debug(
            "retrace at layer %s (trigger %s, u=%s, alpha=%.4f)",
            hooks.injection_layer,
            hooks.trigger_layer,
            hooks.scanned.get(hooks.trigger_layer),
            hooks.applied_alpha,
        )
    return decision, cache


class MemVRDecoder(DecodeStrategy):
    """Serves memvr_static, memvr_dynamic and memvr_dynamic_alpha.

    Prefill runs without retracing; only generation steps retrace.
    """

    strategy = Strategy.MEMVR_DYNAMIC

    def __init__(self, *args, **kwargs) -> None:
        super().__init__(*args, **kwargs)
        self.memory = self.visual

    def start(self, prompt_ids: Sequence[int]) -> Vector:
        embedding = super().start(prompt_ids)
        self.memory = retrace_memory(self.weights, self.visual, prompt_ids, self.policy.retrace_source)
        return embedding

    def step(self, embedding: Vector) -> StepDecision:
        decision, _ = decode_step_memvr(
            self.weights,
            self.cache,
            self.policy,
            self.memory,
            embedding,
            record_uncertainty=self.record_uncertainty,
        )
        return decision
