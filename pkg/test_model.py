"""Tests for the toy transformer: weights, FFN forms, cache correctness and causality."""

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from src.memvr_engine.config import ModelConfig
from src.memvr_engine.exceptions import MVCacheOverflowError, MVConfigError, MVShapeError, MVTokenError
from src.memvr_engine.model import (
    ForwardHooks,
    KvCache,
    LayerWeights,
    VisualContext,
    apply_rotary,
    early_exit_logits,
    embed_prompt,
    ffn_forward,
    ffn_forward_kv,
    forward_full,
    forward_step,
    parameter_layout,
    synthesize_visual_context,
    synthesize_weights,
)


# ── config ────────────────────────────────────────────────────────────────────

@pytest.mark.parametrize(
    "changes, field",
    [
        ({"num_layers": 1}, "num_layers"),
        ({"vocab_size": 1}, "vocab_size"),
        ({"ffn_dim": 8, "hidden_dim": 16}, "ffn_dim"),
        ({"hidden_dim": 16, "num_heads": 2, "ffn_dim": 32, "num_visual_tokens": 32}, "num_visual_tokens"),
        ({"hidden_dim": 18, "num_heads": 4}, "num_heads"),
        ({"hidden_dim": 12, "num_heads": 4}, "num_heads"),  # head_dim 3 is odd
        ({"max_seq_len": 0}, "max_seq_len"),
        ({"max_seq_len": 8193}, "max_seq_len"),
    ],
)
def test_config_rejects(changes, field):
    with pytest.raises(MVConfigError) as exc:
        ModelConfig(**changes)
    assert exc.value.field == field


def test_default_config():
    config = ModelConfig()
    assert config.as_header() == (12, 128, 512, 512, 4, 16, 256)
    assert config.head_dim == 32


# ── synthesis ─────────────────────────────────────────────────────────────────

def test_layout_order(config):
    names = [name for name, _, _ in parameter_layout(config)]
    assert names[0] == "token_embedding"
    assert names[1:9] == [f"layers.1.{n}" for n in ("wq", "wk", "wv", "wo", "w1", "w2", "attn_gain", "ffn_gain")]
    assert names[-2:] == ["final_gain", "vocab_head"]
    assert len(names) == 1 + 8 * config.num_layers + 2


def test_synthesis_is_deterministic(config, weights):
    again = synthesize_weights(config, 42)
    for (name, a), (_, b) in zip(weights.parameters(), again.parameters()):
        assert_array_equal(a, b, err_msg=name)
    other = synthesize_weights(config, 43)
    assert not np.array_equal(weights.token_embedding, other.token_embedding)


def test_synthesized_statistics(weights):
    assert weights.token_embedding.dtype == np.float32
    assert abs(float(weights.token_embedding.std()) - 0.02) < 0.005
    assert abs(float(weights.layer(1).attn_gain.mean()) - 1.0) < 0.02
    assert not weights.token_embedding.flags.writeable


def test_visual_context_unit_columns(config, visual):
    assert visual.tokens.shape == (config.hidden_dim, config.num_visual_tokens)
    assert_allclose(np.linalg.norm(visual.tokens, axis=0), 1.0, rtol=1e-5)
    again = synthesize_visual_context(config, 7)
    assert_array_equal(visual.tokens, again.tokens)


def test_default_visual_context_first_entry_is_pinned():
    tokens = synthesize_visual_context(ModelConfig(), 7).tokens
    assert float(tokens[0, 0]) == pytest.approx(0.0816097632, rel=1e-7)
    assert_allclose(np.linalg.norm(tokens[:, 0]), 1.0, rtol=1e-6)


def test_visual_context_shape_check(config):
    with pytest.raises(MVShapeError):
        VisualContext(np.zeros((config.hidden_dim + 1, config.num_visual_tokens), dtype=np.float32)).check(config)


# ── FFN ───────────────────────────────────────────────────────────────────────

def test_ffn_key_value_form_matches_matrix_form(weights):
    x = np.linspace(-1.0, 1.0, weights.config.hidden_dim).astype(np.float32)
    for layer in weights.layers:
        assert_allclose(ffn_forward_kv(x, layer), ffn_forward(x, layer), atol=1e-6)


def test_ffn_forms_agree_on_random_draws():
    rng = np.random.default_rng(4)
    for _ in range(1000):
        d = int(rng.integers(2, 17))
        big_d = int(rng.integers(d, 3 * d + 1))
        square = np.zeros((d, d), dtype=np.float32)
        gain = np.ones(d, dtype=np.float32)
        layer = LayerWeights(
            wq=square, wk=square, wv=square, wo=square,
            w1=(rng.standard_normal((d, big_d)) * 0.3).astype(np.float32),
            w2=(rng.standard_normal((d, big_d)) * 0.3).astype(np.float32),
            attn_gain=gain, ffn_gain=gain,
        )
        x = rng.standard_normal(d).astype(np.float32)
        assert_allclose(ffn_forward_kv(x, layer), ffn_forward(x, layer), rtol=0, atol=1e-5)


def test_ffn_rejects_wrong_dim(weights):
    with pytest.raises(MVShapeError):
        ffn_forward(np.zeros(weights.config.hidden_dim + 1, dtype=np.float32), weights.layer(1))


# ── attention / cache ─────────────────────────────────────────────────────────

def test_rotary_preserves_norm_and_position_zero():
    x = np.random.default_rng(0).standard_normal((3, 8)).astype(np.float32)
    rotated = apply_rotary(x, np.array([0, 5, 17]), num_heads=2)
    assert_allclose(rotated[0], x[0], atol=1e-6)
    assert_allclose(np.linalg.norm(rotated, axis=1), np.linalg.norm(x, axis=1), rtol=1e-5)


def test_cached_steps_match_full_forward(weights, visual):
    embeddings = embed_prompt(weights, [1, 2, 3, 4, 5], visual)
    full = forward_full(weights, embeddings)
    cache = KvCache(weights.config)
    for pos, embedding in enumerate(embeddings):
        out, cache = forward_step(weights, cache, embedding)
        assert_allclose(out.final_logits, full.logits[pos], atol=1e-4)
        for layer in range(weights.config.num_layers):
            assert_allclose(out.per_layer_hidden[layer], full.hidden[layer, pos], atol=1e-4)
    assert cache.length == len(embeddings)
    assert cache.passes == len(embeddings)


def test_cached_steps_match_full_forward_up_to_32_positions(weights, visual):
    rng = np.random.default_rng(10)
    text_len = 32 - weights.config.num_visual_tokens
    for _ in range(3):
        ids = rng.integers(1, weights.config.vocab_size, size=text_len).tolist()
        embeddings = embed_prompt(weights, ids, visual)
        assert len(embeddings) == 32
        full = forward_full(weights, embeddings).logits
        cache = KvCache(weights.config)
        for pos, embedding in enumerate(embeddings):
            out, cache = forward_step(weights, cache, embedding)
            assert_allclose(out.final_logits, full[pos], rtol=0, atol=1e-4, err_msg=f"position {pos}")


def test_causality(weights, visual):
    embeddings = embed_prompt(weights, [3, 4, 5], visual)
    changed = embeddings.copy()
    changed[-1] = weights.token_embedding[9]
    a = forward_full(weights, embeddings).logits
    b = forward_full(weights, changed).logits
    assert_allclose(a[:-1], b[:-1], rtol=0, atol=1e-7)
    assert not np.array_equal(a[-1], b[-1])


def test_cache_overflow(weights):
    config = weights.config
    cache = KvCache(config)
    cache.length = config.max_seq_len
    with pytest.raises(MVCacheOverflowError):
        forward_step(weights, cache, weights.token_embedding[1])


def test_hooks_see_every_layer(weights):
    class Recorder(ForwardHooks):
        def __init__(self):
            self.ffn_layers, self.done_layers = [], []

        def ffn(self, layer, x, ffn_out):
            self.ffn_layers.append(layer)
            return ffn_out

        def layer_done(self, layer, hidden):
            self.done_layers.append(layer)

    hooks = Recorder()
    plain, _ = forward_step(weights, KvCache(weights.config), weights.token_embedding[2])
    hooked, _ = forward_step(weights, KvCache(weights.config), weights.token_embedding[2], hooks)
    layers = list(range(1, weights.config.num_layers + 1))
    assert hooks.ffn_layers == layers and hooks.done_layers == layers
    assert_array_equal(plain.final_logits, hooked.final_logits)


def test_early_exit_of_last_layer_is_final_logits(weights):
    out, _ = forward_step(weights, KvCache(weights.config), weights.token_embedding[7])
    assert_array_equal(early_exit_logits(weights, out.per_layer_hidden[-1]), out.final_logits)


# ── prompt ────────────────────────────────────────────────────────────────────

def test_embed_prompt_places_visual_first(weights, visual):
    embeddings = embed_prompt(weights, [5, 6], visual)
    n_v = weights.config.num_visual_tokens
    assert embeddings.shape == (n_v + 2, weights.config.hidden_dim)
    assert_array_equal(embeddings[:n_v], visual.tokens.T)
    assert_array_equal(embeddings[n_v], weights.token_embedding[5])


def test_embed_prompt_rejects_unknown_token(weights, visual):
    with pytest.raises(MVTokenError) as exc:
        embed_prompt(weights, [1, weights.config.vocab_size], visual)
    assert exc.value.token_id == weights.config.vocab_size
