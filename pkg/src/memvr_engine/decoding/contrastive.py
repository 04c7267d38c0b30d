"""Two-pass contrastive baseline against a noise-distorted visual context."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from ..exceptions import MVConfigError
from ..model import KvCache, VisualContext, Weights, forward_step
from ..tensor import SplitMix64, Vector, argmax_lowest, softmax
from ._base import DecodeStrategy, StepDecision, collect_uncertainties
from .policy import PLAUSIBILITY_CUTOFF, DecodePolicy, Strategy


def distort_visual(visual: VisualContext, sigma: float, seed: int) -> VisualContext:
    """Add gaussian(0, sigma^2) to every visual entry, drawn from ``SplitMix64(seed)``."""
    noise = SplitMix64(seed).gaussian(visual.tokens.size).reshape(visual.tokens.shape)
    return VisualContext((visual.tokens.astype(np.float64) + sigma * noise).astype(np.float32))


def contrast_logits(clean: Vector, distorted: Vector, beta: float) -> np.ndarray:
    """``(1 + beta) * clean - beta * distorted``, written so equal inputs return *clean* exactly."""
    c = clean.astype(np.float64)
    return c + beta * (c - distorted.astype(np.float64))


def plausible_argmax(clean: Vector, scores: np.ndarray, cutoff: float = PLAUSIBILITY_CUTOFF) -> int:
    """Argmax of *scores* over tokens whose clean probability is >= cutoff * max."""
    probs = softmax(clean)
    keep = probs >= cutoff * probs.max()
    return argmax_lowest(np.where(keep, scores, -np.inf))


def decode_step_contrastive(
    weights: Weights,
    clean_cache: KvCache,
    distorted_cache: KvCache,
    policy: DecodePolicy,
    embedding: Vector,
    *,
    record_uncertainty: bool = True,
) -> StepDecision:
    """Clean and distorted forward passes, contrasted and masked.

    The visual contexts enter through the caches' prefill; the step input is the
    same text embedding on both paths.
    """
    if policy.strategy is not Strategy.CONTRASTIVE:
        raise MVConfigError(f"decode_step_contrastive needs the contrastive strategy, got {policy.strategy.value}")
    clean, _ = forward_step(weights, clean_cache, embedding)
    distorted, _ = forward_step(weights, distorted_cache, embedding)
    scores = contrast_logits(clean.final_logits, distorted.final_logits, policy.cd_beta)
    return StepDecision(
        token_id=plausible_argmax(clean.final_logits, scores),
        per_layer_uncertainty=collect_uncertainties(weights, clean) if record_uncertainty else (),
    )


class ContrastiveDecoder(DecodeStrategy):
    strategy = Strategy.CONTRASTIVE

    def __init__(self, *args, **kwargs) -> None:
        super().__init__(*args, **kwargs)
        self.noisy_visual = distort_visual(self.visual, self.policy.cd_noise_sigma, self.policy.sample_seed)
        self.distorted_cache = KvCache(self.weights.config)

    @property
    def caches(self) -> tuple[KvCache, ...]:
        return (self.cache, self.distorted_cache)

    def start(self, prompt_ids: Sequence[int]) -> Vector:
        embedding = super().start(prompt_ids)
        distorted = self.embed_prompt(prompt_ids, self.noisy_visual)
        self._prefill(self.distorted_cache, distorted[:-1])
        self._prefill_passes = sum(cache.passes for cache in self.caches)
        return embedding

    def step(self, embedding: Vector) -> StepDecision:
        return decode_step_contrastive(
            self.weights,
            self.cache,
            self.distorted_cache,
            self.policy,
            embedding,
            record_uncertainty=self.record_uncertainty,
        )
