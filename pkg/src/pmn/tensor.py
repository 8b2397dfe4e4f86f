"""Array helpers and the seeded random source.

Tensors are plain row-major ``numpy.ndarray`` values; this module adds the few
checked operations the rest of the package relies on and a reproducible
random number generator.
"""
from __future__ import annotations

import numpy as np

from .errors import DimensionError, DomainError

_REDUCE_OPS = ("sum", "mean", "min", "max", "argmin")


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product of an ``m x k`` and a ``k x n`` array."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    return a @ b


def reduce(a: np.ndarray, op: str, axis: int | None = None) -> np.ndarray:
    """Reduce ``a`` with one of sum/mean/min/max/argmin.

    ``argmin`` returns the lowest index among ties (numpy's rule, relied on
    everywhere a minimum is selected).
    """
    a = np.asarray(a)
    if op not in _REDUCE_OPS:
        raise ValueError(f"unknown reduction {op!r}")
    if a.size == 0:
        raise DomainError("cannot reduce an empty tensor")
    if axis is not None and not -a.ndim <= axis < a.ndim:
        raise DimensionError(f"axis {axis} out of range for shape {a.shape}")
    return np.asarray(getattr(np, op)(a, axis=axis))


def flat_index(shape: tuple[int, ...], index: tuple[int, ...]) -> int:
    """Row-major linear offset of ``index`` inside an array of ``shape``."""
    if len(shape) != len(index):
        raise DimensionError(f"index {index} has wrong rank for shape {shape}")
    offset = 0
    for size, i in zip(shape, index):
        if not 0 <= i < size:
            raise IndexError(f"index {index} out of bounds for shape {shape}")
        offset = offset * size + i
    return offset


class Rng:
    """Counter-based random source (Philox 4x64).

    Draws depend only on ``(seed, stream)`` and the call sequence. Gaussian
    variates come from numpy's ziggurat sampler on top of the Philox stream,
    which is platform independent.
    """

    def __init__(self, seed: int, stream: int = 0):
        if seed < 0 or seed >= 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        self.seed = int(seed)
        self.stream = int(stream)
        key = np.random.SeedSequence([self.seed, self.stream]).generate_state(2, np.uint64)
        self._gen = np.random.Generator(np.random.Philox(key=key))

    def spawn(self, stream: int) -> "Rng":
        """Independent generator for worker / purpose ``stream``."""
        return Rng(self.seed, self.stream * 1_000_003 + stream + 1)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self._gen.uniform(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self._gen.normal(loc, scale, size)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def random(self, size=None):
        return self._gen.random(size)
