"""Tensor substrate: validation helpers, seeded random streams, initializers.

Tensors are plain ``numpy.ndarray`` objects in NCHW layout. Parameters and
activations are float32; reductions accumulate in float64.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

DTYPE = np.float32


class ShapeError(ValueError):
    """Raised when tensor extents are inconsistent with an operation."""


class NonFiniteError(FloatingPointError):
    """Raised when a NaN or Inf shows up where finite values are required."""


def check_shape(shape: Sequence[int]) -> tuple:
    shape = tuple(int(s) for s in shape)
    if len(shape) == 0 or len(shape) > 4:
        raise ShapeError(f"tensor rank must be 1..4, got shape {shape}")
    if any(s < 1 for s in shape):
        raise ShapeError(f"zero-extent shape {shape}")
    return shape


def as_tensor(data, dtype=DTYPE) -> np.ndarray:
    """Copy ``data`` into a contiguous array of rank <= 4 with finite values."""
    arr = np.ascontiguousarray(np.array(data, dtype=dtype))
    if arr.ndim == 0:
        arr = arr.reshape(1)
    check_shape(arr.shape)
    check_finite(arr)
    return arr


def check_finite(arr: np.ndarray, what: str = "tensor") -> None:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite values in {what}")


@dataclass
class Parameter:
    """A named trainable tensor with its gradient buffer."""

    name: str
    data: np.ndarray
    grad: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        if self.grad.shape != self.data.shape:
            raise ShapeError(
                f"gradient shape {self.grad.shape} != data shape {self.data.shape} for {self.name}"
            )

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def zero_grad(self) -> None:
        self.grad[...] = 0

    def astype(self, dtype) -> "Parameter":
        return Parameter(self.name, self.data.astype(dtype), self.grad.astype(dtype))


class RngStream:
    """Deterministic counter-based random stream (Philox) keyed by a 64-bit seed.

    Not thread-safe; give each concurrent consumer its own stream via ``spawn``.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self._gen = np.random.Generator(np.random.Philox(key=self.seed))
        self.draws = 0

    def uniform(self, shape, lo: float = 0.0, hi: float = 1.0, dtype=DTYPE) -> np.ndarray:
        return rng_uniform(self, shape, lo, hi, dtype=dtype)

    def normal(self, shape, std: float = 1.0, dtype=DTYPE) -> np.ndarray:
        shape = check_shape(shape)
        self.draws += math.prod(shape)
        return (self._gen.standard_normal(shape) * std).astype(dtype)

    def integers(self, lo: int, hi: int, size=None):
        """Integers in [lo, hi)."""
        out = self._gen.integers(lo, hi, size=size)
        self.draws += 1 if size is None else int(np.prod(size))
        return out

    def random(self) -> float:
        self.draws += 1
        return float(self._gen.random())

    def spawn(self, index: int) -> "RngStream":
        """Independent child stream; same (seed, index) always gives the same child."""
        seq = np.random.SeedSequence([self.seed, int(index)])
        return RngStream(int(seq.generate_state(1, np.uint64)[0]))


def rng_uniform(stream: RngStream, shape, lo: float, hi: float, dtype=DTYPE) -> np.ndarray:
    """Independent draws uniform in ``[lo, hi)``."""
    if not lo < hi:
        raise ValueError(f"rng_uniform needs lo < hi, got lo={lo}, hi={hi}")
    shape = check_shape(shape)
    u = stream._gen.random(shape)
    stream.draws += math.prod(shape)
    out = (lo + (hi - lo) * u).astype(dtype)
    # rounding to float32 can land exactly on hi
    top = np.nextafter(dtype(hi), dtype(lo))
    return np.minimum(out, top)


def conv_fans(shape: Sequence[int], transpose: bool = False) -> tuple:
    """(fan_in, fan_out) of a conv kernel.

    Regular kernels are (C_out, C_in, k, k); transposed ones (C_in, C_out, k, k).
    """
    c0, c1, kh, kw = shape
    area = kh * kw
    if transpose:
        return c0 * area, c1 * area
    return c1 * area, c0 * area


def xavier_init(stream: RngStream, shape, fan_in: int, fan_out: int) -> np.ndarray:
    """Glorot-uniform: U(-a, a) with a = sqrt(6 / (fan_in + fan_out))."""
    if fan_in < 1 or fan_out < 1:
        raise ValueError(f"fans must be >= 1, got fan_in={fan_in}, fan_out={fan_out}")
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng_uniform(stream, shape, -bound, bound)


def he_init(stream: RngStream, shape, fan_in: int, fan_out: int = 1) -> np.ndarray:
    """He-normal: N(0, 2 / fan_in)."""
    if fan_in < 1:
        raise ValueError(f"fan_in must be >= 1, got {fan_in}")
    return stream.normal(shape, std=math.sqrt(2.0 / fan_in))


INITIALIZERS = {"xavier": xavier_init, "he": he_init}


def reduce_mean(t: np.ndarray) -> float:
    if t.size == 0:
        raise ShapeError("reduce_mean of an empty tensor")
    return float(np.mean(t, dtype=np.float64))


def reduce_mean_backward(t: np.ndarray, dout: float = 1.0) -> np.ndarray:
    return np.full(t.shape, dout / t.size, dtype=t.dtype)
