"""Shared fixtures: a small model so the suite runs in seconds."""

import pytest

from src.memvr_engine._io import save_visual, save_weights
from src.memvr_engine.config import ModelConfig
from src.memvr_engine.model import synthesize_visual_context, synthesize_weights

SMALL = ModelConfig(
    num_layers=4,
    hidden_dim=16,
    ffn_dim=32,
    vocab_size=64,
    num_heads=2,
    num_visual_tokens=4,
    max_seq_len=64,
)


@pytest.fixture(scope="session")
def config() -> ModelConfig:
    return SMALL


@pytest.fixture(scope="session")
def weights(config):
    return synthesize_weights(config, 42)


@pytest.fixture(scope="session")
def visual(config):
    return synthesize_visual_context(config, 7)


@pytest.fixture
def weights_file(tmp_path, weights):
    path = tmp_path / "weights.bin"
    save_weights(weights, path)
    return path


@pytest.fixture
def image_file(tmp_path, visual):
    path = tmp_path / "image.bin"
    save_visual(visual, path)
    return path
