"""Dense rank-4 tensor helpers and seeded random initialization.

A "tensor" throughout this package is a contiguous numpy array of shape
(batch, channels, rows, cols) in row-major order, dtype float32 or
float64.  Operations treat their inputs as immutable values: nothing in
this module (or in ops/loss) writes into an argument array.

Training runs at float32 by default; gradient checking rebuilds the
whole graph at float64.  Reductions always accumulate at 64-bit no
matter the storage precision.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .errors import ShapeError

F32 = np.float32
F64 = np.float64

_REDUCE_OPS = ("sum", "max", "mean")


def check_shape4(shape) -> tuple[int, int, int, int]:
    """Validate a (n, c, h, w) shape tuple and return it as ints."""
    if len(shape) != 4:
        raise ShapeError(f"expected a rank-4 shape, got {shape!r}")
    dims = tuple(int(d) for d in shape)
    if any(d < 1 for d in dims):
        raise ShapeError(f"all dimensions must be >= 1, got {dims}")
    return dims


def check_tensor4(a: np.ndarray, name: str = "tensor") -> np.ndarray:
    if not isinstance(a, np.ndarray) or a.ndim != 4:
        raise ShapeError(f"{name} must be a rank-4 array")
    if a.dtype not in (F32, F64):
        raise ShapeError(f"{name} must be float32 or float64, got {a.dtype}")
    check_shape4(a.shape)
    return a


def fill(shape, value: float, dtype=F32) -> np.ndarray:
    """Tensor of the given shape with every element equal to `value`."""
    dims = check_shape4(shape)
    return np.full(dims, value, dtype=dtype)


def map2(a: np.ndarray, b: np.ndarray, f: Callable) -> np.ndarray:
    """Elementwise f(a_i, b_i); shapes must match exactly (no broadcasting)."""
    check_tensor4(a, "a")
    check_tensor4(b, "b")
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    return f(a, b)


def reduce(a: np.ndarray, op: str) -> float:
    """Full reduction to a python float; accumulates at 64-bit."""
    if op not in _REDUCE_OPS:
        raise ValueError(f"op must be one of {_REDUCE_OPS}, got {op!r}")
    if op == "sum":
        return float(np.sum(a, dtype=np.float64))
    if op == "mean":
        return float(np.mean(a, dtype=np.float64))
    return float(np.max(a))


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Seeded PCG64 generator; identical (seed, stream) gives an identical
    bit-exact sample sequence across runs.

    Extra `stream` ints derive independent substreams from the same root
    seed (initialization, shuffling, scene generation, ...).
    """
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence((int(seed),) + tuple(int(s) for s in stream))))


def uniform_fanin(shape, fan_in: int, rng: np.random.Generator, dtype=F32) -> np.ndarray:
    """Uniform samples in [-sqrt(6/fan_in), +sqrt(6/fan_in)]."""
    if fan_in < 1:
        raise ValueError(f"fan_in must be >= 1, got {fan_in}")
    bound = np.sqrt(6.0 / fan_in)
    dims = check_shape4(shape) if len(shape) == 4 else tuple(int(d) for d in shape)
    return rng.uniform(-bound, bound, size=dims).astype(dtype)
