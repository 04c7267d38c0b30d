"""Toy decoder-only transformer.

Pre-norm blocks (rmsnorm → causal multi-head attention with rotary positions →
residual → rmsnorm → SiLU FFN → residual), a KV cache for incremental decoding,
and early-exit logits for any intermediate hidden state.

Layers are numbered 1..L everywhere outside this module's loops.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence

import numpy as np

from .config import ModelConfig
from .exceptions import MVCacheOverflowError, MVShapeError, MVTokenError, MVValueError
from .tensor import Matrix, SplitMix64, Vector, matmul, matvec, rmsnorm, silu, softmax

logger = logging.getLogger(__name__)

WEIGHT_STD = 0.02
ROPE_BASE = 10000.0


# ── parameters ────────────────────────────────────────────────────────────────

_LAYER_PARAMS = ("wq", "wk", "wv", "wo", "w1", "w2", "attn_gain", "ffn_gain")


def parameter_layout(config: ModelConfig) -> list[tuple[str, tuple[int, ...], str]]:
    """``(name, shape, kind)`` for every parameter, in synthesis and file order.

    kind is ``"matrix"`` or ``"gain"``.
    """
    d, big_d, n = config.hidden_dim, config.ffn_dim, config.vocab_size
    shapes = {
        "wq": (d, d), "wk": (d, d), "wv": (d, d), "wo": (d, d),
        "w1": (d, big_d), "w2": (d, big_d),
        "attn_gain": (d,), "ffn_gain": (d,),
    }
    layout: list[tuple[str, tuple[int, ...], str]] = [("token_embedding", (n, d), "matrix")]
    for i in range(1, config.num_layers + 1):
        for name in _LAYER_PARAMS:
            kind = "gain" if name.endswith("gain") else "matrix"
            layout.append((f"layers.{i}.{name}", shapes[name], kind))
    layout.append(("final_gain", (d,), "gain"))
    layout.append(("vocab_head", (n, d), "matrix"))
    return layout


@dataclass(frozen=True, eq=False)
class LayerWeights:
    wq: Matrix
    wk: Matrix
    wv: Matrix
    wo: Matrix
    w1: Matrix  # d x D, column i is key k_i
    w2: Matrix  # d x D, column i is value v_i
    attn_gain: Vector
    ffn_gain: Vector

    def arrays(self) -> tuple[np.ndarray, ...]:
        return tuple(getattr(self, name) for name in _LAYER_PARAMS)


@dataclass(frozen=True, eq=False)
class Weights:
    """All parameters of the toy model; immutable and safe to share."""

    config: ModelConfig
    token_embedding: Matrix
    layers: tuple[LayerWeights, ...]
    final_gain: Vector
    vocab_head: Matrix

    @classmethod
    def from_arrays(cls, config: ModelConfig, arrays: Sequence[np.ndarray]) -> "Weights":
        """Assemble from a flat list in :func:`parameter_layout` order."""
        layout = parameter_layout(config)
        if len(arrays) != len(layout):
            raise MVShapeError(f"expected {len(layout)} parameter arrays, got {len(arrays)}")
        checked: list[np.ndarray] = []
        for (name, shape, _), arr in zip(layout, arrays):
            arr = np.asarray(arr, dtype=np.float32)
            if arr.shape != shape:
                raise MVShapeError(f"parameter {name}: expected shape {shape}, got {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise MVValueError(f"parameter {name} contains non-finite values")
            arr.setflags(write=False)
            checked.append(arr)
        per_layer = len(_LAYER_PARAMS)
        layers = tuple(
            LayerWeights(*checked[1 + i * per_layer: 1 + (i + 1) * per_layer])
            for i in range(config.num_layers)
        )
        return cls(
            config=config,
            token_embedding=checked[0],
            layers=layers,
            final_gain=checked[-2],
            vocab_head=checked[-1],
        )

    def parameters(self) -> Iterator[tuple[str, np.ndarray]]:
        """Yield ``(name, array)`` in layout order."""
        arrays: list[np.ndarray] = [self.token_embedding]
        for layer in self.layers:
            arrays.extend(layer.arrays())
        arrays.extend([self.final_gain, self.vocab_head])
        for (name, _, _), arr in zip(parameter_layout(self.config), arrays):
            yield name, arr

    def layer(self, index: int) -> LayerWeights:
        """1-based layer access."""
        return self.layers[index - 1]


def synthesize_weights(config: ModelConfig, seed: int) -> Weights:
    """Draw every parameter from ``SplitMix64(seed)`` in layout order.

    Matrices are gaussian(0, 0.02); rmsnorm gains are 1 + gaussian(0, 0.02).
    """
    layout = parameter_layout(config)
    total = sum(math.prod(shape) for _, shape, _ in layout)
    draws = SplitMix64(seed).gaussian(total)
    arrays: list[np.ndarray] = []
    offset = 0
    for _, shape, kind in layout:
        n = math.prod(shape)
        chunk = draws[offset: offset + n] * WEIGHT_STD
        offset += n
        if kind == "gain":
            chunk = chunk + 1.0
        arrays.append(chunk.astype(np.float32).reshape(shape))
    logger.debug("synthesized %d parameters for seed %d", total, seed)
    return Weights.from_arrays(config, arrays)


# ── visual context ────────────────────────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class VisualContext:
    """Dimension-aligned visual tokens; column i is token z_{v,i} (d x N_v)."""

    tokens: Matrix

    def __post_init__(self) -> None:
        if self.tokens.ndim != 2:
            raise MVShapeError(f"visual tokens must be a d x N_v matrix, got shape {self.tokens.shape}")
        if not np.all(np.isfinite(self.tokens)):
            raise MVValueError("visual tokens contain non-finite values")

    @property
    def dim(self) -> int:
        return self.tokens.shape[0]

    @property
    def num_tokens(self) -> int:
        return self.tokens.shape[1]

    def check(self, config: ModelConfig) -> None:
        if self.dim != config.hidden_dim or self.num_tokens != config.num_visual_tokens:
            raise MVShapeError(
                f"visual context is {self.dim}x{self.num_tokens}, model expects "
                f"{config.hidden_dim}x{config.num_visual_tokens}"
            )


def synthesize_visual_context(config: ModelConfig, seed: int) -> VisualContext:
    """N_v gaussian columns, each rescaled to unit L2 norm."""
    d, n_v = config.hidden_dim, config.num_visual_tokens
    columns = SplitMix64(seed).gaussian(d * n_v).reshape(n_v, d)
    columns = columns / np.linalg.norm(columns, axis=1, keepdims=True)
    return VisualContext(np.ascontiguousarray(columns.T, dtype=np.float32))


# ── FFN ───────────────────────────────────────────────────────────────────────

def _check_hidden(x: np.ndarray, d: int, what: str) -> None:
    if x.shape[-1] != d:
        raise MVShapeError(f"{what}: input of shape {x.shape} does not match hidden dim {d}")


def ffn_forward(x: np.ndarray, layer: LayerWeights) -> np.ndarray:
    """Matrix form ``phi(x W1) W2^T``; accepts a vector or a batch of rows."""
    _check_hidden(x, layer.w1.shape[0], "ffn_forward")
    return matmul(silu(matmul(x, layer.w1)), layer.w2.T)


def ffn_forward_kv(x: Vector, layer: LayerWeights) -> Vector:
    """Key-value memory form ``sum_i phi(<x, k_i>) * v_i`` over the D slots."""
    _check_hidden(x, layer.w1.shape[0], "ffn_forward_kv")
    query = x.astype(np.float64)
    acc = np.zeros(layer.w2.shape[0], dtype=np.float64)
    for key, value in zip(layer.w1.T, layer.w2.T):
        acc += silu(float(np.dot(query, key))) * value.astype(np.float64)
    return acc.astype(np.float32)


# ── attention ─────────────────────────────────────────────────────────────────

def apply_rotary(x: np.ndarray, positions: np.ndarray, num_heads: int) -> np.ndarray:
    """Rotate each head's (first half, second half) pairs by position-dependent angles.

    x: (T, d); positions: (T,).
    """
    t, d = x.shape
    head_dim = d // num_heads
    half = head_dim // 2
    inv_freq = ROPE_BASE ** (-np.arange(half, dtype=np.float64) / half)
    angles = np.asarray(positions, dtype=np.float64)[:, None] * inv_freq[None, :]
    cos = np.cos(angles)[:, None, :]
    sin = np.sin(angles)[:, None, :]
    heads = x.reshape(t, num_heads, head_dim).astype(np.float64)
    x1, x2 = heads[..., :half], heads[..., half:]
    rotated = np.concatenate([x1 * cos - x2 * sin, x1 * sin + x2 * cos], axis=-1)
    return rotated.reshape(t, d).astype(np.float32)


def _attend(q: Vector, keys: Matrix, values: Matrix, num_heads: int) -> Vector:
    t, d = keys.shape
    head_dim = d // num_heads
    qh = q.reshape(num_heads, head_dim).astype(np.float64)
    kh = keys.reshape(t, num_heads, head_dim).astype(np.float64)
    vh = values.reshape(t, num_heads, head_dim).astype(np.float64)
    scores = np.einsum("hd,thd->ht", qh, kh) / math.sqrt(head_dim)
    probs = softmax(scores, axis=-1).astype(np.float64)
    return np.einsum("ht,thd->hd", probs, vh).reshape(d).astype(np.float32)


class KvCache:
    """Preallocated per-layer keys/values with one shared length.

    ``length`` only advances once every layer has written the new position.
    """

    def __init__(self, config: ModelConfig) -> None:
        shape = (config.num_layers, config.max_seq_len, config.hidden_dim)
        self.keys = np.zeros(shape, dtype=np.float32)
        self.values = np.zeros(shape, dtype=np.float32)
        self.length = 0
        self.capacity = config.max_seq_len
        self.passes = 0  # forward_step calls that used this cache

    def __len__(self) -> int:
        return self.length

    def layer_view(self, layer: int, upto: int) -> tuple[Matrix, Matrix]:
        return self.keys[layer - 1, :upto], self.values[layer - 1, :upto]


@dataclass
class StepOutput:
    final_logits: Vector
    per_layer_hidden: list[Vector] = field(default_factory=list)


class ForwardHooks:
    """Per-layer interceptor for :func:`forward_step`; the base class is a no-op.

    ``ffn`` may replace a layer's FFN output; ``layer_done`` sees each
    post-block hidden state as soon as it exists.
    """

    def ffn(self, layer: int, x: Vector, ffn_out: Vector) -> Vector:
        return ffn_out

    def layer_done(self, layer: int, hidden: Vector) -> None:
        return None


def forward_step(
    weights: Weights,
    cache: KvCache,
    embedding: Vector,
    hooks: Optional[ForwardHooks] = None,
) -> tuple[StepOutput, KvCache]:
    """Process one position on top of *cache*; the cache is updated in place and returned."""
    config = weights.config
    _check_hidden(embedding, config.hidden_dim, "forward_step")
    if cache.length >= cache.capacity:
        raise MVCacheOverflowError(f"KV cache full: {cache.length} positions, max_seq_len {cache.capacity}")
    pos = cache.length
    positions = np.array([pos])
    h = np.asarray(embedding, dtype=np.float32)
    hidden: list[Vector] = []
    for i, layer in enumerate(weights.layers, start=1):
        a = rmsnorm(h, layer.attn_gain)
        q = apply_rotary(matvec(layer.wq, a)[None, :], positions, config.num_heads)[0]
        k = apply_rotary(matvec(layer.wk, a)[None, :], positions, config.num_heads)[0]
        cache.keys[i - 1, pos] = k
        cache.values[i - 1, pos] = matvec(layer.wv, a)
        keys, values = cache.layer_view(i, pos + 1)
        h = h + matvec(layer.wo, _attend(q, keys, values, config.num_heads))
        x = rmsnorm(h, layer.ffn_gain)
        out = ffn_forward(x, layer)
        if hooks is not None:
            out = hooks.ffn(i, x, out)
        h = h + out
        hidden.append(h)
        if hooks is not None:
            hooks.layer_done(i, h)
    cache.length += 1
    cache.passes += 1
    return StepOutput(final_logits=early_exit_logits(weights, h), per_layer_hidden=hidden), cache


@dataclass
class FullOutput:
    logits: np.ndarray  # (T, N)
    hidden: np.ndarray  # (L, T, d)


def forward_full(weights: Weights, embeddings: np.ndarray) -> FullOutput:
    """Uncached causal forward over a whole sequence (T, d)."""
    config = weights.config
    _check_hidden(embeddings, config.hidden_dim, "forward_full")
    t = embeddings.shape[0]
    heads, head_dim = config.num_heads, config.head_dim
    positions = np.arange(t)
    future = np.triu(np.ones((t, t), dtype=bool), k=1)
    x = np.asarray(embeddings, dtype=np.float32)
    hidden = []
    for layer in weights.layers:
        a = rmsnorm(x, layer.attn_gain)
        q = apply_rotary(matmul(a, layer.wq.T), positions, heads).reshape(t, heads, head_dim)
        k = apply_rotary(matmul(a, layer.wk.T), positions, heads).reshape(t, heads, head_dim)
        v = matmul(a, layer.wv.T).reshape(t, heads, head_dim)
        scores = np.einsum("shd,thd->hst", q.astype(np.float64), k.astype(np.float64)) / math.sqrt(head_dim)
        scores = np.where(future[None, :, :], -np.inf, scores)
        probs = softmax(scores, axis=-1).astype(np.float64)
        attn = np.einsum("hst,thd->shd", probs, v.astype(np.float64)).reshape(t, -1).astype(np.float32)
        x = x + matmul(attn, layer.wo.T)
        x = x + ffn_forward(rmsnorm(x, layer.ffn_gain), layer)
        hidden.append(x)
    return FullOutput(logits=early_exit_logits(weights, x), hidden=np.stack(hidden))


def early_exit_logits(weights: Weights, hidden: np.ndarray) -> np.ndarray:
    """Final rmsnorm then the vocabulary head, for one hidden state or a batch of them."""
    _check_hidden(hidden, weights.config.hidden_dim, "early_exit_logits")
    return matmul(rmsnorm(hidden, weights.final_gain), weights.vocab_head.T)


def embed_prompt(
    weights: Weights,
    token_ids: Sequence[int],
    visual: VisualContext,
    *,
    visual_scale: float = 1.0,
    text_scale: float = 1.0,
) -> np.ndarray:
    """Visual token columns first, then text embeddings: shape (N_v + len(ids), d).

    Each modality is multiplied by its scale; 1.0 leaves the features unchanged.
    """
    visual.check(weights.config)
    vocab = weights.config.vocab_size
    for token_id in token_ids:
        if not 0 <= int(token_id) < vocab:
            raise MVTokenError(f"token id {token_id} out of range [0, {vocab})", token_id=int(token_id))
    text = weights.token_embedding[np.asarray(token_ids, dtype=np.int64)].reshape(-1, weights.config.hidden_dim)
    parts = [visual.tokens.T.astype(np.float64) * visual_scale, text.astype(np.float64) * text_scale]
    return np.concatenate(parts, axis=0).astype(np.float32)
