"""Plain decoders: greedy argmax and seeded temperature sampling."""
from __future__ import annotations

import numpy as np

from ..tensor import SplitMix64, Vector, argmax_lowest, softmax
from ._base import DecodeStrategy, StepDecision
from .policy import Strategy


class GreedyDecoder(DecodeStrategy):
    strategy = Strategy.GREEDY

    def step(self, embedding: Vector) -> StepDecision:
        out = self._forward(embedding)
        return StepDecision(
            token_id=argmax_lowest(out.final_logits),
            per_layer_uncertainty=self._uncertainties(out),
        )


def sample_token(logits: Vector, temperature: float, prng: SplitMix64) -> int:
    """Inverse-CDF draw from ``softmax(logits / temperature)``."""
    probs = softmax(np.asarray(logits, dtype=np.float64) / temperature).astype(np.float64)
    cdf = np.cumsum(probs)
    r = prng.uniform() * cdf[-1]
    return int(min(np.searchsorted(cdf, r, side="right"), len(cdf) - 1))


class SampleDecoder(DecodeStrategy):
    strategy = Strategy.SAMPLE

    def __init__(self, *args, **kwargs) -> None:
        super().__init__(*args, **kwargs)
        self._prng = SplitMix64(self.policy.sample_seed)

    def step(self, embedding: Vector) -> StepDecision:
        out = self._forward(embedding)
        return StepDecision(
            token_id=sample_token(out.final_logits, self.policy.temperature, self._prng),
            per_layer_uncertainty=self._uncertainties(out),
        )
