"""Tests for the numeric primitives and the SplitMix64 stream."""

import math

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from src.memvr_engine.exceptions import MVShapeError, MVValueError
from src.memvr_engine.tensor import (
    SplitMix64,
    argmax_lowest,
    matmul,
    matvec,
    prng_next,
    rmsnorm,
    silu,
    softmax,
)


def test_splitmix_reference_value():
    state, value = prng_next(0)
    assert value == 0xE220A8397B1DCDAF
    assert state == 0x9E3779B97F4A7C15
    assert SplitMix64(0).next_u64() == 0xE220A8397B1DCDAF


def test_splitmix_block_matches_scalar():
    scalar = SplitMix64(1234)
    block = SplitMix64(1234)
    expected = [scalar.next_u64() for _ in range(17)]
    assert [int(v) for v in block.next_block(17)] == expected
    # both generators end up in the same state
    assert scalar.next_u64() == block.next_u64()


def test_splitmix_uniform_and_gaussian():
    u = SplitMix64(5).uniform(10_000)
    assert u.min() >= 0.0 and u.max() < 1.0
    g = SplitMix64(5).gaussian(100_000)
    assert abs(g.mean()) < 0.02
    assert abs(g.var() - 1.0) < 0.05
    scalar = SplitMix64(9)
    block = SplitMix64(9).gaussian(3)
    assert_allclose([scalar.gaussian() for _ in range(3)], block, rtol=1e-12)


def test_matvec_shape_mismatch():
    with pytest.raises(MVShapeError) as exc:
        matvec(np.zeros((3, 4), dtype=np.float32), np.zeros(5, dtype=np.float32))
    assert "3x4" in str(exc.value) and "5" in str(exc.value)


def test_matvec_and_matmul():
    m = np.arange(6, dtype=np.float32).reshape(2, 3)
    v = np.array([1.0, 2.0, 3.0], dtype=np.float32)
    assert_array_equal(matvec(m, v), np.array([8.0, 26.0], dtype=np.float32))
    assert matvec(m, v).dtype == np.float32
    assert_array_equal(matmul(m, m.T), (m @ m.T))
    with pytest.raises(MVShapeError):
        matmul(m, m)


def test_softmax():
    p = softmax(np.array([1.0, 2.0, 3.0], dtype=np.float32))
    assert_allclose(p.sum(), 1.0, atol=1e-6)
    assert_allclose(softmax(np.array([math.log(2.0), 0.0], dtype=np.float32)), [2 / 3, 1 / 3], atol=1e-6)
    assert_allclose(softmax(np.array([1000.0, 1000.0])), [0.5, 0.5])
    with pytest.raises(MVValueError):
        softmax(np.array([], dtype=np.float32))


def test_softmax_ignores_constant_shift():
    logits = np.random.default_rng(1).standard_normal(32).astype(np.float32)
    for shift in (-50.0, 3.5, 120.0):
        assert_allclose(softmax(logits + np.float32(shift)), softmax(logits), rtol=0, atol=1e-6)


def test_matvec_is_linear():
    rng = np.random.default_rng(2)
    for _ in range(50):
        m = rng.standard_normal((6, 8)).astype(np.float32)
        a = rng.standard_normal(8).astype(np.float32)
        b = rng.standard_normal(8).astype(np.float32)
        assert_allclose(matvec(m, a + b), matvec(m, a) + matvec(m, b), rtol=0, atol=1e-5)


def test_silu():
    assert silu(0.0) == 0.0
    assert math.isclose(silu(1.0), 1.0 / (1.0 + math.exp(-1.0)), rel_tol=1e-12)
    # large negative input does not overflow
    assert silu(-1000.0) == pytest.approx(0.0, abs=1e-300)
    x = np.array([-2.0, 0.0, 2.0], dtype=np.float32)
    assert_allclose(silu(x), x / (1.0 + np.exp(-x)), rtol=1e-6)


def test_rmsnorm():
    gain = np.ones(4, dtype=np.float32)
    v = np.array([1.0, -1.0, 1.0, -1.0], dtype=np.float32)
    assert_allclose(rmsnorm(v, gain), v / math.sqrt(1.0 + 1e-5), rtol=1e-6)
    assert_array_equal(rmsnorm(np.zeros(4, dtype=np.float32), gain), np.zeros(4))
    with pytest.raises(MVShapeError):
        rmsnorm(v, np.ones(3, dtype=np.float32))


def test_argmax_lowest_breaks_ties_low():
    assert argmax_lowest(np.array([0.1, 0.5, 0.5, 0.2])) == 1
    assert argmax_lowest(np.array([-np.inf, 0.0])) == 1


if __name__ == "__main__":
    test_splitmix_reference_value()
    test_splitmix_block_matches_scalar()
    test_splitmix_uniform_and_gaussian()
    test_matvec_shape_mismatch()
    test_matvec_and_matmul()
    test_softmax()
    test_softmax_ignores_constant_shift()
    test_matvec_is_linear()
    test_silu()
    test_rmsnorm()
    test_argmax_lowest_breaks_ties_low()
    print("All tests passed!")
