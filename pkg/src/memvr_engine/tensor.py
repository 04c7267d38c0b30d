"""Dense numeric primitives shared by every other module.

Matrices and vectors are float32 ``numpy`` arrays. Products and norms accumulate
in float64 and are cast back to float32. ``SplitMix64`` is the single source of
randomness: the stream is defined by its update constants, not by numpy.
"""
from __future__ import annotations

import math
from typing import overload

import numpy as np
import numpy.typing as npt

from .exceptions import MVShapeError, MVValueError

Matrix = npt.NDArray[np.float32]
Vector = npt.NDArray[np.float32]

RMSNORM_EPS = 1e-5

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


def _shape(a: np.ndarray) -> str:
    return "x".join(str(n) for n in a.shape) or "scalar"


# ── linear algebra ────────────────────────────────────────────────────────────

def matvec(m: Matrix, v: Vector) -> Vector:
    """Matrix-vector product ``m @ v``."""
    if m.ndim != 2 or v.ndim != 1 or m.shape[1] != v.shape[0]:
        raise MVShapeError(f"matvec shape mismatch: matrix {_shape(m)} vs vector {_shape(v)}")
    return (m.astype(np.float64) @ v.astype(np.float64)).astype(np.float32)


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Batched product ``a @ b`` with the same accumulation rule as :func:`matvec`."""
    if a.ndim < 1 or b.ndim < 1 or a.shape[-1] != b.shape[0 if b.ndim == 1 else -2]:
        raise MVShapeError(f"matmul shape mismatch: {_shape(a)} vs {_shape(b)}")
    return (a.astype(np.float64) @ b.astype(np.float64)).astype(np.float32)


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    """Numerically stable softmax along *axis* (max-subtraction)."""
    if logits.size == 0 or logits.shape[axis] == 0:
        raise MVValueError("softmax of an empty vector")
    z = logits.astype(np.float64)
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return (e / e.sum(axis=axis, keepdims=True)).astype(np.float32)


@overload
def silu(x: float) -> float: ...
@overload
def silu(x: np.ndarray) -> np.ndarray: ...
def silu(x):
    """``x * sigmoid(x)``, scalar or elementwise.

    sigmoid is evaluated as ``(1 + tanh(x/2)) / 2`` which never overflows.
    """
    if isinstance(x, np.ndarray):
        z = x.astype(np.float64)
        return (z * 0.5 * (1.0 + np.tanh(0.5 * z))).astype(x.dtype if x.dtype.kind == "f" else np.float32)
    return float(x) * 0.5 * (1.0 + math.tanh(0.5 * float(x)))


def rmsnorm(v: np.ndarray, gain: Vector, eps: float = RMSNORM_EPS) -> np.ndarray:
    """Scale *v* by ``1/sqrt(mean(v**2) + eps)`` then by *gain*, over the last axis."""
    if v.shape[-1] != gain.shape[-1] or gain.ndim != 1:
        raise MVShapeError(f"rmsnorm shape mismatch: input {_shape(v)} vs gain {_shape(gain)}")
    if eps < 0:
        raise MVValueError(f"rmsnorm eps must be non-negative, got {eps}")
    z = v.astype(np.float64)
    denom = np.sqrt(np.mean(z * z, axis=-1, keepdims=True) + eps)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(denom > 0, z / np.where(denom > 0, denom, 1.0), 0.0)
    return (out * gain.astype(np.float64)).astype(np.float32)


def argmax_lowest(scores: np.ndarray) -> int:
    """Index of the maximum; ties resolve to the lowest index."""
    # np.argmax already returns the first occurrence
    return int(np.argmax(scores))


# ── SplitMix64 ────────────────────────────────────────────────────────────────

def prng_next(state: int) -> tuple[int, int]:
    """Pure SplitMix64 step: returns ``(new_state, output)``."""
    state = (state + _GOLDEN) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK64
    return state, z ^ (z >> 31)


def _u64_to_unit(values: np.ndarray) -> np.ndarray:
    return (values >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))


class SplitMix64:
    """Seeded SplitMix64 generator.

    Scalar draws and block draws consume the same stream, so
    ``[p.next_u64() for _ in range(n)]`` equals ``p.next_block(n)`` from an
    identically seeded generator.
    """

    def __init__(self, seed: int = 0) -> None:
        self.state = int(seed) & _MASK64

    def __repr__(self) -> str:
        return f"SplitMix64(state=0x{self.state:016x})"

    def next_u64(self) -> int:
        self.state, value = prng_next(self.state)
        return value

    def next_block(self, n: int) -> np.ndarray:
        """Next *n* outputs as a ``uint64`` array (vectorized, wrap-around arithmetic)."""
        if n <= 0:
            return np.zeros(0, dtype=np.uint64)
        steps = np.arange(1, n + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            z = np.uint64(self.state) + steps * np.uint64(_GOLDEN)
            z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
            z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
            z = z ^ (z >> np.uint64(31))
        self.state = (self.state + n * _GOLDEN) & _MASK64
        return z

    def uniform(self, n: int | None = None) -> float | np.ndarray:
        """Uniform draw(s) on [0, 1) from the top 53 bits of each output."""
        if n is None:
            return (self.next_u64() >> 11) * (1.0 / (1 << 53))
        return _u64_to_unit(self.next_block(n))

    def gaussian(self, n: int | None = None) -> float | np.ndarray:
        """Standard normal draw(s) via Box-Muller; each draw consumes two uniforms."""
        if n is None:
            u1 = 1.0 - self.uniform()
            u2 = self.uniform()
            return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)
        u = _u64_to_unit(self.next_block(2 * n)).reshape(n, 2)
        u1 = 1.0 - u[:, 0]
        return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u[:, 1])
