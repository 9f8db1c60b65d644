"""Dense numeric kernels the model is built from.

Tensors are plain ``numpy.ndarray`` values (float32 in production, float64 for
gradient checks). Every kernel here is deterministic and rejects NaN/Inf in
its result.
"""
from __future__ import annotations

import numpy as np

from .errors import BadProbability, DimMismatch, NonFinite

F32 = np.float32
F64 = np.float64


def check_finite(x: np.ndarray, what: str = "tensor") -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise NonFinite(f"non-finite values in {what}")
    return x


class SeededRng:
    """Counter-free RNG addressed by ``(seed, stream)``.

    ``derive`` gives independent sub-streams (per layer, per batch, per
    candidate) whose sequences do not depend on how many numbers any other
    stream has consumed. PCG64 seeded through SeedSequence is platform
    independent.
    """

    def __init__(self, seed: int, stream: int | tuple[int, ...] = 0):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.stream = tuple(stream) if isinstance(stream, tuple) else (int(stream),)
        entropy = [self.seed, *(s & 0xFFFFFFFFFFFFFFFF for s in self.stream)]
        self._gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))

    def derive(self, *stream: int) -> "SeededRng":
        return SeededRng(self.seed, self.stream + tuple(int(s) for s in stream))

    def normal(self, shape, std: float, dtype=F32) -> np.ndarray:
        return (self._gen.standard_normal(shape) * std).astype(dtype)

    def uniform(self, shape, dtype=np.float64) -> np.ndarray:
        return self._gen.random(shape, dtype=dtype)

    def integers(self, low: int, high: int, size=None):
        return self._gen.integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def __repr__(self):
        return f"SeededRng(seed={self.seed}, stream={self.stream})"


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product over the last two axes (leading axes are batch axes)."""
    if a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise DimMismatch(f"matmul inner dims differ: {a.shape} x {b.shape}")
    return check_finite(a @ b, "matmul")


def softmax_lastdim(x: np.ndarray) -> np.ndarray:
    # -inf entries (causal mask) are allowed in the input, not in the output
    z = x - np.max(x, axis=-1, keepdims=True)
    e = np.exp(z)
    return check_finite(e / np.sum(e, axis=-1, keepdims=True), "softmax")


def log_softmax_lastdim(x: np.ndarray) -> np.ndarray:
    z = x - np.max(x, axis=-1, keepdims=True)
    return check_finite(z - np.log(np.sum(np.exp(z), axis=-1, keepdims=True)), "log_softmax")


def rmsnorm(x: np.ndarray, w: np.ndarray, eps: float) -> np.ndarray:
    """``w * x / sqrt(mean(x**2) + eps)`` over the last axis."""
    if x.shape[-1] != w.shape[-1] or w.ndim != 1:
        raise DimMismatch(f"rmsnorm: last dim {x.shape[-1]} vs weight {w.shape}")
    ms = np.mean(x * x, axis=-1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / np.sqrt(ms + eps)
    if eps == 0:
        inv = np.where(ms == 0, 0.0, inv).astype(x.dtype)
    return check_finite(w * (x * inv), "rmsnorm")


def sigmoid(x: np.ndarray) -> np.ndarray:
    # exp(min(x, 0)) / (1 + exp(-|x|)): neither exp overflows, and the
    # numerator is exactly 1 for x >= 0 (branch-free, much faster than where)
    return np.exp(np.minimum(x, 0)) / (1 + np.exp(-np.abs(x)))


def silu(x: np.ndarray) -> np.ndarray:
    return x * sigmoid(x)


def dropout_mask(shape, p: float, rng: SeededRng, dtype=F32) -> np.ndarray:
    """Inverted-dropout mask: 0 with probability p, else 1/(1-p)."""
    if not 0.0 <= p < 1.0:
        raise BadProbability(f"dropout probability must be in [0, 1), got {p}")
    if p == 0.0:
        return np.ones(shape, dtype=dtype)
    keep = rng.uniform(shape, np.float32) >= np.float32(p)
    return (keep * (1.0 / (1.0 - p))).astype(dtype)
