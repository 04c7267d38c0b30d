"""Decoding policy: which strategy runs and with which knobs."""
from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum
from typing import Optional

from ..config import ModelConfig
from ..exceptions import MVConfigError

DEFAULT_GAMMA = 0.75
DEFAULT_ALPHA = 0.2
DEFAULT_CD_BETA = 1.0
DEFAULT_CD_NOISE_SIGMA = 0.1
PLAUSIBILITY_CUTOFF = 0.1
EOS_ID = 0


class Strategy(str, Enum):
    GREEDY = "greedy"
    SAMPLE = "sample"
    MEMVR_STATIC = "memvr_static"
    MEMVR_DYNAMIC = "memvr_dynamic"
    MEMVR_DYNAMIC_ALPHA = "memvr_dynamic_alpha"
    CONTRASTIVE = "contrastive"

    @classmethod
    def parse(cls, name: str) -> "Strategy":
        """Accept both ``memvr-dynamic`` and ``memvr_dynamic``."""
        try:
            return cls(name.strip().lower().replace("-", "_"))
        except ValueError:
            choices = ", ".join(s.cli_name for s in cls)
            raise MVConfigError(f"unknown strategy {name!r} (choose from {choices})", field="strategy") from None

    @property
    def cli_name(self) -> str:
        return self.value.replace("_", "-")

    @property
    def is_memvr(self) -> bool:
        return self in (Strategy.MEMVR_STATIC, Strategy.MEMVR_DYNAMIC, Strategy.MEMVR_DYNAMIC_ALPHA)

    @property
    def forward_passes_per_step(self) -> int:
        return 2 if self is Strategy.CONTRASTIVE else 1


class RetraceSource(str, Enum):
    """Entries retracing re-injects: visual tokens, prompt text embeddings, or both."""

    IMAGE = "image"
    TEXT = "text"
    TEXT_IMAGE = "text_image"

    @classmethod
    def parse(cls, name: str) -> "RetraceSource":
        try:
            return cls(name.strip().lower().replace("-", "_").replace("+", "_"))
        except ValueError:
            choices = ", ".join(s.cli_name for s in cls)
            raise MVConfigError(
                f"unknown retrace source {name!r} (choose from {choices})", field="retrace_source"
            ) from None

    @property
    def cli_name(self) -> str:
        return self.value.replace("_", "-")


def layer_buckets(num_layers: int, count: int) -> list[tuple[int, int]]:
    """Split candidate layers 1..L-1 into *count* contiguous inclusive buckets.

    Earlier buckets take the remainder, so sizes differ by at most one.
    """
    top = num_layers - 1
    if not 1 <= count <= top:
        raise MVConfigError(f"bucket count must be in [1, {top}], got {count}", field="candidate_layers")
    size, extra = divmod(top, count)
    buckets = []
    lo = 1
    for i in range(count):
        hi = lo + size - 1 + (1 if i < extra else 0)
        buckets.append((lo, hi))
        lo = hi + 1
    return buckets


@dataclass(frozen=True)
class DecodePolicy:
    """Strategy selector plus every knob the strategies read.

    ``candidate_layers`` is an inclusive ``(lo, hi)`` range; ``None`` means the
    full range [1, L-1]. ``eos_id=None`` disables early stopping.
    ``visual_scale`` and ``text_scale`` multiply the prompt features of each
    modality before prefill.
    """

    strategy: Strategy = Strategy.GREEDY
    gamma: float = DEFAULT_GAMMA
    alpha: float = DEFAULT_ALPHA
    static_layer: Optional[int] = None
    candidate_layers: Optional[tuple[int, int]] = None
    temperature: float = 1.0
    sample_seed: int = 0
    cd_beta: float = DEFAULT_CD_BETA
    cd_noise_sigma: float = DEFAULT_CD_NOISE_SIGMA
    max_new_tokens: int = 32
    eos_id: Optional[int] = EOS_ID
    retrace_source: RetraceSource = RetraceSource.IMAGE
    visual_scale: float = 1.0
    text_scale: float = 1.0

    def __post_init__(self) -> None:
        if not isinstance(self.strategy, Strategy):
            object.__setattr__(self, "strategy", Strategy.parse(str(self.strategy)))
        if not isinstance(self.retrace_source, RetraceSource):
            object.__setattr__(self, "retrace_source", RetraceSource.parse(str(self.retrace_source)))
        if not 0.0 <= self.gamma <= 1.0:
            raise MVConfigError(f"gamma must be in [0, 1], got {self.gamma}", field="gamma")
        if not 0.0 <= self.alpha <= 1.0:
            raise MVConfigError(f"alpha must be in [0, 1], got {self.alpha}", field="alpha")
        if self.temperature <= 0:
            raise MVConfigError(f"temperature must be positive, got {self.temperature}", field="temperature")
        if self.cd_beta < 0:
            raise MVConfigError(f"cd_beta must be >= 0, got {self.cd_beta}", field="cd_beta")
        if self.cd_noise_sigma < 0:
            raise MVConfigError(f"cd_noise_sigma must be >= 0, got {self.cd_noise_sigma}", field="cd_noise_sigma")
        for name in ("visual_scale", "text_scale"):
            value = getattr(self, name)
            if not 0.0 < value < float("inf"):
                raise MVConfigError(f"{name} must be positive and finite, got {value}", field=name)
        if self.max_new_tokens < 0:
            raise MVConfigError(f"max_new_tokens must be >= 0, got {self.max_new_tokens}", field="max_new_tokens")
        if self.candidate_layers is not None:
            lo, hi = self.candidate_layers
            if lo > hi:
                raise MVConfigError(f"candidate range {lo}-{hi} is empty", field="candidate_layers")
        if self.strategy is Strategy.MEMVR_STATIC and self.static_layer is None:
            raise MVConfigError("memvr_static needs a static_layer", field="static_layer")

    def with_(self, **changes) -> "DecodePolicy":
        return replace(self, **changes)

    def validate_for(self, config: ModelConfig) -> None:
        """Checks that depend on the model depth."""
        top = config.num_layers - 1
        if self.static_layer is not None and not 1 <= self.static_layer <= top:
            raise MVConfigError(f"static_layer must be in [1, {top}], got {self.static_layer}", field="static_layer")
        if self.candidate_layers is not None:
            lo, hi = self.candidate_layers
            if lo < 1 or hi > top:
                raise MVConfigError(f"candidate range {lo}-{hi} must lie within [1, {top}]", field="candidate_layers")
        if self.eos_id is not None and not 0 <= self.eos_id < config.vocab_size:
            raise MVConfigError(f"eos_id {self.eos_id} outside the vocabulary", field="eos_id")

    def candidates(self, config: ModelConfig) -> range:
        lo, hi = self.candidate_layers or (1, config.num_layers - 1)
        return range(lo, hi + 1)
