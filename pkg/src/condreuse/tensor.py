"""Dense float64 kernels shared by the rest of the package.

Matrices are plain ``numpy.ndarray`` objects of dtype float64. Every kernel
that does arithmetic accepts an optional :class:`FlopCounter` and charges it
according to the fixed convention below, so analytic cost formulas can be
checked against what a forward pass actually executed.

FLOP convention (one multiply-accumulate = 2 FLOPs):

    matmul          2*m*k*n
    rms_norm        3 per element   (square, accumulate, rescale)
    modulate        2 per element   (scale, shift)
    add             1 per element
    gelu            8 per element   (tanh approximation, fixed constant)
    rope            3 per element   (6 per rotated pair)
    scale           1 per element
    masked_softmax  6 per element   (bias add, max, subtract, exp, sum, divide)
"""

from __future__ import annotations

import math
from collections import defaultdict
from contextlib import contextmanager
from typing import NamedTuple

import numpy as np

RMS_NORM_FLOPS = 3
MODULATE_FLOPS = 2
ADD_FLOPS = 1
GELU_FLOPS = 8
ROPE_FLOPS = 3
SCALE_FLOPS = 1
SOFTMAX_FLOPS = 6


class FlopCounter:
    """Per-run FLOP accumulator with named categories.

    Kernels charge whatever category is active; callers switch it with
    :meth:`scope`. Not thread-safe: one counter belongs to one run.
    """

    def __init__(self, category: str = "token"):
        self.category = category
        self.counts: dict[str, int] = defaultdict(int)

    @contextmanager
    def scope(self, category: str):
        previous = self.category
        self.category = category
        try:
            yield self
        finally:
            self.category = previous

    def add(self, flops: int) -> None:
        self.counts[self.category] += int(flops)

    def total(self) -> int:
        return sum(self.counts.values())

    def snapshot(self) -> dict[str, int]:
        return dict(self.counts)

    def __getitem__(self, category: str) -> int:
        return self.counts.get(category, 0)


def _charge(flops: FlopCounter | None, amount: int) -> None:
    if flops is not None:
        flops.add(amount)


def matmul(a: np.ndarray, b: np.ndarray, flops: FlopCounter | None = None) -> np.ndarray:
    """Matrix product with a fixed left-to-right reduction over the inner axis.

    BLAS is avoided on purpose: the accumulation order here is the same on
    every machine, so two runs of the same build agree bit for bit.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    m, k = a.shape
    n = b.shape[1]
    out = np.zeros((m, n), dtype=np.float64)
    for kk in range(k):
        out += a[:, kk : kk + 1] * b[kk : kk + 1, :]
    _charge(flops, 2 * m * k * n)
    return out


def masked_softmax_rows(
    scores: np.ndarray, mask: np.ndarray | None = None, flops: FlopCounter | None = None
) -> np.ndarray:
    """Row-wise softmax of ``scores + mask`` where mask entries are 0 or -inf."""
    scores = np.asarray(scores, dtype=np.float64)
    if mask is None:
        mask = np.zeros_like(scores)
    elif mask.shape != scores.shape:
        raise ValueError(f"mask shape {mask.shape} does not match scores {scores.shape}")
    biased = scores + mask
    if scores.size and np.any(np.all(np.isneginf(biased), axis=1)):
        bad = np.flatnonzero(np.all(np.isneginf(biased), axis=1))
        raise ValueError(f"fully masked attention rows: {bad.tolist()}")
    row_max = np.max(biased, axis=1, keepdims=True)
    e = np.exp(biased - row_max)
    out = e / np.sum(e, axis=1, keepdims=True)
    _charge(flops, SOFTMAX_FLOPS * scores.size)
    return out


def rms_norm(v: np.ndarray, eps: float = 1e-6, flops: FlopCounter | None = None) -> np.ndarray:
    """Normalize along the last axis: ``v / sqrt(mean(v**2) + eps)``."""
    v = np.asarray(v, dtype=np.float64)
    if eps <= 0:
        raise ValueError("eps must be positive")
    out = v / np.sqrt(np.mean(v * v, axis=-1, keepdims=True) + eps)
    _charge(flops, RMS_NORM_FLOPS * v.size)
    return out


def modulate(x: np.ndarray, scale: np.ndarray, shift: np.ndarray, flops: FlopCounter | None = None) -> np.ndarray:
    out = x * (1.0 + scale) + shift
    _charge(flops, MODULATE_FLOPS * x.size)
    return out


def add(a: np.ndarray, b: np.ndarray, flops: FlopCounter | None = None) -> np.ndarray:
    _charge(flops, ADD_FLOPS * a.size)
    return a + b


def scale(a: np.ndarray, factor: float, flops: FlopCounter | None = None) -> np.ndarray:
    _charge(flops, SCALE_FLOPS * a.size)
    return a * factor


def gelu(x: np.ndarray, flops: FlopCounter | None = None) -> np.ndarray:
    _charge(flops, GELU_FLOPS * x.size)
    return 0.5 * x * (1.0 + np.tanh(math.sqrt(2.0 / math.pi) * (x + 0.044715 * x**3)))


class PositionIndex(NamedTuple):
    """Integer latent-grid coordinate ``(i, j)``."""

    i: int
    j: int


def _rope_angles(coord: np.ndarray, half: int, base: float) -> np.ndarray:
    # one frequency per rotated pair inside a half of size ``half``
    freqs = base ** (-np.arange(0, half, 2, dtype=np.float64) / half)
    return np.asarray(coord, dtype=np.float64)[:, None] * freqs[None, :]


def _rotate_pairs(x: np.ndarray, angles: np.ndarray) -> np.ndarray:
    even = x[:, 0::2]
    odd = x[:, 1::2]
    cos = np.cos(angles)
    sin = np.sin(angles)
    out = np.empty_like(x)
    out[:, 0::2] = even * cos - odd * sin
    out[:, 1::2] = even * sin + odd * cos
    return out


def apply_rope2d(
    x: np.ndarray, positions: np.ndarray, base: float = 10000.0, flops: FlopCounter | None = None
) -> np.ndarray:
    """Rotate each row of ``x`` by its 2D position.

    The first half of the head dimension is rotated by row coordinate ``i``,
    the second half by column coordinate ``j``; each half uses the standard
    1-D pairwise rotary schedule. Angle tables are position-only and are not
    charged to the counter.
    """
    x = np.asarray(x, dtype=np.float64)
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 2)
    n, d_head = x.shape
    if d_head % 4:
        raise ValueError(f"rotary head dimension must be divisible by 4, got {d_head}")
    if positions.shape[0] != n:
        raise ValueError(f"{positions.shape[0]} positions for {n} rows")
    half = d_head // 2
    out = np.empty_like(x)
    out[:, :half] = _rotate_pairs(x[:, :half], _rope_angles(positions[:, 0], half, base))
    out[:, half:] = _rotate_pairs(x[:, half:], _rope_angles(positions[:, 1], half, base))
    _charge(flops, ROPE_FLOPS * x.size)
    return out


def rope2d(vec: np.ndarray, pos: PositionIndex | tuple[int, int], base: float = 10000.0) -> np.ndarray:
    """Single-vector form of :func:`apply_rope2d`."""
    vec = np.asarray(vec, dtype=np.float64)
    return apply_rope2d(vec[None, :], np.asarray([pos]), base)[0]


def cosine_similarity(u: np.ndarray, v: np.ndarray) -> float:
    u = np.ravel(np.asarray(u, dtype=np.float64))
    v = np.ravel(np.asarray(v, dtype=np.float64))
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise ValueError("cosine similarity is undefined for a zero vector")
    return float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))
