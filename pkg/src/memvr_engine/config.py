"""Model shape and environment-driven defaults.

Environment variables (a ``.env`` file in the working directory is honoured):

    MEMVR_WEIGHTS      default weight file for commands taking --weights
    MEMVR_SEED         default weight seed                 (42)
    MEMVR_IMAGE_SEED   default visual-context seed         (7)
    MEMVR_LOG_LEVEL    logging level for the CLI           (WARNING)
"""
from __future__ import annotations

import os
from dataclasses import asdict, dataclass
from typing import Optional

from dotenv import load_dotenv

from .exceptions import MVConfigError

MAX_SEQ_LEN = 8192


@dataclass(frozen=True)
class ModelConfig:
    """Shape of the toy decoder (L, d, D, N, heads, N_v, max_seq_len)."""

    num_layers: int = 12
    hidden_dim: int = 128
    ffn_dim: int = 512
    vocab_size: int = 512
    num_heads: int = 4
    num_visual_tokens: int = 16
    max_seq_len: int = 256

    def __post_init__(self) -> None:
        checks = [
            (self.num_layers >= 2, "num_layers", "num_layers must be >= 2"),
            (self.hidden_dim >= 1, "hidden_dim", "hidden_dim must be >= 1"),
            (self.num_heads >= 1, "num_heads", "num_heads must be >= 1"),
            (self.vocab_size >= 2, "vocab_size", "vocab_size must be >= 2"),
            (self.ffn_dim >= self.hidden_dim, "ffn_dim", "ffn_dim must be >= hidden_dim"),
            (self.num_visual_tokens >= 1, "num_visual_tokens", "num_visual_tokens must be >= 1"),
            (self.num_visual_tokens < self.ffn_dim, "num_visual_tokens", "num_visual_tokens must be < ffn_dim"),
            (self.max_seq_len >= 1, "max_seq_len", "max_seq_len must be >= 1"),
            (self.max_seq_len <= MAX_SEQ_LEN, "max_seq_len", f"max_seq_len must be <= {MAX_SEQ_LEN}"),
        ]
        for ok, field, message in checks:
            if not ok:
                raise MVConfigError(f"{message} (got {getattr(self, field)})", field=field)
        if self.hidden_dim % self.num_heads:
            raise MVConfigError(
                f"hidden_dim {self.hidden_dim} is not divisible by num_heads {self.num_heads}",
                field="num_heads",
            )
        if self.head_dim % 2:
            raise MVConfigError(f"head_dim {self.head_dim} must be even for rotary pairs", field="num_heads")

    @property
    def head_dim(self) -> int:
        return self.hidden_dim // self.num_heads

    def as_header(self) -> tuple[int, ...]:
        """The seven header integers, in file order."""
        return (
            self.num_layers,
            self.hidden_dim,
            self.ffn_dim,
            self.vocab_size,
            self.num_heads,
            self.num_visual_tokens,
            self.max_seq_len,
        )

    def to_dict(self) -> dict[str, int]:
        return asdict(self)


@dataclass(frozen=True)
class Settings:
    weights_path: Optional[str] = None
    weight_seed: int = 42
    image_seed: int = 7
    log_level: str = "WARNING"


def _int_env(name: str, default: int) -> int:
    raw = os.getenv(name)
    if raw is None or raw.strip() == "":
        return default
    try:
        return int(raw, 0)
    except ValueError as e:
        raise MVConfigError(f"{name} must be an integer, got {raw!r}", field=name) from e


def load_settings() -> Settings:
    """Read ``MEMVR_*`` variables (after loading ``.env``) into :class:`Settings`."""
    load_dotenv()
    return Settings(
        weights_path=os.getenv("MEMVR_WEIGHTS") or None,
        weight_seed=_int_env("MEMVR_SEED", 42),
        image_seed=_int_env("MEMVR_IMAGE_SEED", 7),
        log_level=(os.getenv("MEMVR_LOG_LEVEL") or "WARNING").upper(),
    )
