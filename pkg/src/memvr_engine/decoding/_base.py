"""Base decoder class and the per-step record shared by every strategy."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from ..exceptions import MVCacheOverflowError, MVValueError
from ..model import ForwardHooks, KvCache, StepOutput, VisualContext, Weights, early_exit_logits, embed_prompt, forward_step
from ..tensor import Vector, softmax
from .policy import DecodePolicy, Strategy

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class StepDecision:
    """Outcome of one decoding step.

    ``per_layer_uncertainty[l-1]`` is u at layer l for l in 1..L-1; it is empty
    when the run was started with ``record_uncertainty=False``.
    """

    token_id: int
    triggered: bool = False
    trigger_layer: Optional[int] = None
    applied_alpha: float = 0.0
    per_layer_uncertainty: tuple[float, ...] = ()
    injection_layer: Optional[int] = None


# ── uncertainty ───────────────────────────────────────────────────────────────

def normalized_entropy(probs: np.ndarray) -> float:
    """Shannon entropy divided by log N, with 0 * log 0 = 0; result in [0, 1]."""
    p = np.asarray(probs, dtype=np.float64)
    n = p.shape[-1]
    if n < 2:
        raise MVValueError(f"normalized entropy needs at least 2 outcomes, got {n}")
    total = float(p.sum())
    if abs(total - 1.0) > 1e-5:
        raise MVValueError(f"probabilities sum to {total}, not 1")
    nz = p[p > 0]
    u = float(-np.sum(nz * np.log(nz)) / math.log(n))
    return min(1.0, max(0.0, u))


def layer_uncertainty(weights: Weights, hidden: Vector) -> float:
    """u of the early-exit next-token distribution at temperature 1."""
    return normalized_entropy(softmax(early_exit_logits(weights, hidden)))


def layer_uncertainties(weights: Weights, hidden: np.ndarray) -> np.ndarray:
    """Row-wise u for a (k, d) stack of hidden states."""
    p = softmax(early_exit_logits(weights, hidden), axis=-1).astype(np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0)
    u = -terms.sum(axis=-1) / math.log(weights.config.vocab_size)
    return np.clip(u, 0.0, 1.0)


def collect_uncertainties(
    weights: Weights,
    out: StepOutput,
    known: Optional[Mapping[int, float]] = None,
) -> tuple[float, ...]:
    """u for layers 1..L-1; layers already scanned during the forward are reused."""
    known = known or {}
    top = weights.config.num_layers - 1
    missing = [layer for layer in range(1, top + 1) if layer not in known]
    values = dict(known)
    if missing:
        batch = np.stack([out.per_layer_hidden[layer - 1] for layer in missing])
        values.update(zip(missing, (float(u) for u in layer_uncertainties(weights, batch))))
    return tuple(values[layer] for layer in range(1, top + 1))


# ── decoders ──────────────────────────────────────────────────────────────────

class DecodeStrategy:
    """Base class for decoders.

    Subclasses set ``strategy`` and implement :meth:`step`. One instance owns
    its caches and serves a single generation.
    """

    strategy: Strategy = Strategy.GREEDY

    def __init__(
        self,
        weights: Weights,
        policy: DecodePolicy,
        visual: VisualContext,
        *,
        record_uncertainty: bool = True,
    ) -> None:
        policy.validate_for(weights.config)
        visual.check(weights.config)
        self.weights = weights
        self.policy = policy
        self.visual = visual
        self.record_uncertainty = record_uncertainty
        self.cache = KvCache(weights.config)
        self._prefill_passes = 0

    # ── helpers ───────────────────────────────────────────────────────────────

    @property
    def caches(self) -> tuple[KvCache, ...]:
        return (self.cache,)

    @property
    def forward_passes(self) -> int:
        """Forward passes spent in decoding steps (prefill excluded)."""
        return sum(cache.passes for cache in self.caches) - self._prefill_passes

    def _prefill(self, cache: KvCache, embeddings: np.ndarray) -> None:
        for embedding in embeddings:
            forward_step(self.weights, cache, embedding)

    def _forward(self, embedding: Vector, hooks: Optional[ForwardHooks] = None) -> StepOutput:
        out, _ = forward_step(self.weights, self.cache, embedding, hooks)
        return out

    def _uncertainties(self, out: StepOutput, known: Optional[Mapping[int, float]] = None) -> tuple[float, ...]:
        if not self.record_uncertainty:
            return ()
        return collect_uncertainties(self.weights, out, known)

    def embed(self, token_id: int) -> Vector:
        return self.weights.token_embedding[token_id]

    def embed_prompt(self, prompt_ids: Sequence[int], visual: VisualContext) -> np.ndarray:
        return embed_prompt(
            self.weights,
            prompt_ids,
            visual,
            visual_scale=self.policy.visual_scale,
            text_scale=self.policy.text_scale,
        )

    def check_capacity(self, prompt_ids: Sequence[int]) -> None:
        config = self.weights.config
        needed = config.num_visual_tokens + len(prompt_ids) + self.policy.max_new_tokens
        if needed > config.max_seq_len:
            raise MVCacheOverflowError(
                f"prompt ({config.num_visual_tokens} visual + {len(prompt_ids)} text) plus "
                f"{self.policy.max_new_tokens} new tokens exceeds max_seq_len {config.max_seq_len}"
            )

    # ── lifecycle ─────────────────────────────────────────────────────────────

    def start(self, prompt_ids: Sequence[int]) -> Vector:
        """Prefill every prompt position but the last; return the last embedding."""
        embeddings = self.embed_prompt(prompt_ids, self.visual)
        self._prefill(self.cache, embeddings[:-1])
        self._prefill_passes = sum(cache.passes for cache in self.caches)
        return embeddings[-1]

    def step(self, embedding: Vector) -> StepDecision:
        raise NotImplementedError

    def run(self, prompt_ids: Sequence[int]) -> tuple[list[int], list[StepDecision]]:
        """Prefill then emit up to ``max_new_tokens``, stopping after the EOS id."""
        if len(prompt_ids) == 0:
            raise MVValueError("prompt must contain at least one token id")
        self.check_capacity(prompt_ids)
        tokens: list[int] = []
        decisions: list[StepDecision] = []
        if self.policy.max_new_tokens == 0:
            return tokens, decisions
        embedding = self.start(prompt_ids)
        for _ in range(self.policy.max_new_tokens):
            decision = self.step(embedding)
            tokens.append(decision.token_id)
            decisions.append(decision)
            if self.policy.eos_id is not None and decision.token_id == self.policy.eos_id:
                break
            embedding = self.embed(decision.token_id)
        return tokens, decisions
