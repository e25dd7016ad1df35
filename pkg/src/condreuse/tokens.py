"""Unified token sequence ``[X; C_T; C_I(1..K)]`` with 2D position indices."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .tensor import PositionIndex

__all__ = [
    "PositionIndex",
    "SegmentKind",
    "Placement",
    "TokenSegment",
    "UnifiedSequence",
    "noisy_positions",
    "text_positions",
    "condition_positions",
    "build_sequence",
    "PatchEmbedder",
    "text_tokens",
]


class SegmentKind(str, enum.Enum):
    NOISY = "noisy"
    TEXT = "text"
    IMAGE_COND = "image_cond"


@dataclass(frozen=True)
class Placement:
    """Aligned placement is ``Placement()``; offset placement shifts every index."""

    di: int = 0
    dj: int = 0

    def __post_init__(self):
        if self.di < 0 or self.dj < 0:
            raise ValueError(f"placement offsets must be non-negative, got ({self.di}, {self.dj})")

    @property
    def aligned(self) -> bool:
        return self.di == 0 and self.dj == 0


def noisy_positions(h: int, w: int) -> list[PositionIndex]:
    if h < 1 or w < 1:
        raise ValueError(f"grid dimensions must be positive, got {h}x{w}")
    return [PositionIndex(i, j) for i in range(h) for j in range(w)]


def text_positions(count: int) -> list[PositionIndex]:
    if count < 0:
        raise ValueError("token count must be non-negative")
    return [PositionIndex(0, 0)] * count


def condition_positions(h: int, w: int, placement: Placement | None = None) -> list[PositionIndex]:
    placement = placement or Placement()
    return [PositionIndex(p.i + placement.di, p.j + placement.dj) for p in noisy_positions(h, w)]


@dataclass(frozen=True, eq=False)
class TokenSegment:
    """A contiguous run of tokens of one kind.

    ``frozen`` is per token: frozen tokens take part in attention but are
    never touched by the denoising update.
    """

    kind: SegmentKind
    tokens: np.ndarray
    positions: np.ndarray
    frozen: np.ndarray = None
    index: int = 0  # condition ordinal k for IMAGE_COND segments

    def __post_init__(self):
        tokens = np.asarray(self.tokens, dtype=np.float64)
        if tokens.ndim != 2:
            raise ValueError(f"tokens must be a 2D matrix, got shape {tokens.shape}")
        positions = np.asarray(self.positions, dtype=np.int64).reshape(-1, 2)
        if positions.shape[0] != tokens.shape[0]:
            raise ValueError(f"{positions.shape[0]} positions for {tokens.shape[0]} tokens")
        frozen = self.frozen
        if frozen is None:
            frozen = np.zeros(tokens.shape[0], dtype=bool)
        frozen = np.asarray(frozen, dtype=bool).reshape(-1)
        if frozen.shape[0] != tokens.shape[0]:
            raise ValueError("frozen flags must match token count")
        if frozen.any() and self.kind is SegmentKind.TEXT:
            raise ValueError("text tokens cannot be frozen")
        object.__setattr__(self, "tokens", tokens)
        object.__setattr__(self, "positions", positions)
        object.__setattr__(self, "frozen", frozen)

    def __len__(self) -> int:
        return self.tokens.shape[0]

    @property
    def dim(self) -> int:
        return self.tokens.shape[1]

    def position_list(self) -> list[PositionIndex]:
        return [PositionIndex(int(i), int(j)) for i, j in self.positions]

    def select(self, keep: np.ndarray) -> "TokenSegment":
        return TokenSegment(self.kind, self.tokens[keep], self.positions[keep], self.frozen[keep], self.index)

    def with_tokens(self, tokens: np.ndarray) -> "TokenSegment":
        return TokenSegment(self.kind, tokens, self.positions, self.frozen, self.index)


@dataclass(frozen=True, eq=False)
class UnifiedSequence:
    segments: tuple[TokenSegment, ...]
    d: int
    offsets: tuple[int, ...] = field(init=False)

    def __post_init__(self):
        starts, total = [], 0
        for seg in self.segments:
            starts.append(total)
            total += len(seg)
        starts.append(total)
        object.__setattr__(self, "offsets", tuple(starts))

    @property
    def n_tokens(self) -> int:
        return self.offsets[-1]

    @property
    def noisy(self) -> TokenSegment:
        return self.segments[0]

    @property
    def text(self) -> TokenSegment:
        return self.segments[1]

    @property
    def conditions(self) -> tuple[TokenSegment, ...]:
        return self.segments[2:]

    @property
    def n_noisy(self) -> int:
        return len(self.segments[0])

    @property
    def n_text(self) -> int:
        return len(self.segments[1])

    @property
    def n_condition(self) -> int:
        return self.n_tokens - self.n_noisy - self.n_text

    def segment_slice(self, index: int) -> slice:
        return slice(self.offsets[index], self.offsets[index + 1])

    def live_end(self, freeze_text: bool = True) -> int:
        """End of the recomputed prefix; rows from here on form the reusable block."""
        return self.n_noisy if freeze_text else self.n_noisy + self.n_text

    def tokens(self) -> np.ndarray:
        return np.concatenate([s.tokens for s in self.segments], axis=0)

    def positions(self) -> np.ndarray:
        return np.concatenate([s.positions for s in self.segments], axis=0)

    def with_noisy(self, tokens: np.ndarray) -> "UnifiedSequence":
        return UnifiedSequence((self.noisy.with_tokens(tokens),) + self.segments[1:], self.d)


def build_sequence(
    noisy: TokenSegment, text: TokenSegment, conds: Sequence[TokenSegment] = ()
) -> UnifiedSequence:
    segments = (noisy, text, *conds)
    expected = [SegmentKind.NOISY, SegmentKind.TEXT] + [SegmentKind.IMAGE_COND] * len(conds)
    for seg, kind in zip(segments, expected):
        if seg.kind is not kind:
            raise ValueError(f"segment order must be [noisy; text; conditions], got {seg.kind.value} in a {kind.value} slot")
    d = noisy.dim
    for seg in segments:
        if seg.dim != d:
            raise ValueError(f"embedding dimension mismatch: {seg.dim} != {d}")
    return UnifiedSequence(segments, d)


class PatchEmbedder:
    """Fixed random linear projection of non-overlapping ``p x p`` patches.

    Stands in for a VAE encoder: spatial layout is kept (one token per patch,
    row-major) and the output is a deterministic function of ``seed``.
    """

    def __init__(self, patch: int, d: int, seed: int = 0):
        if patch < 1:
            raise ValueError("patch size must be >= 1")
        self.patch = patch
        self.d = d
        rng = np.random.default_rng([seed, 0x9A7C])
        self.weight = rng.normal(0.0, 1.0 / patch, size=(patch * patch, d))

    def grid(self, raster: np.ndarray) -> tuple[int, int]:
        h, w = np.shape(raster)
        p = self.patch
        if h % p or w % p:
            raise ValueError(f"raster {h}x{w} is not divisible by patch size {p}")
        return h // p, w // p

    def patches(self, raster: np.ndarray) -> np.ndarray:
        raster = np.asarray(raster, dtype=np.float64)
        gh, gw = self.grid(raster)
        p = self.patch
        return raster.reshape(gh, p, gw, p).transpose(0, 2, 1, 3).reshape(gh * gw, p * p)

    def embed(self, raster: np.ndarray) -> np.ndarray:
        return self.patches(raster) @ self.weight


def text_tokens(count: int, d: int, seed: int = 0, vocab: int = 256) -> TokenSegment:
    """Synthetic text segment: seeded token ids looked up in a seeded table."""
    rng = np.random.default_rng([seed, 0x7E47])
    table = rng.normal(0.0, 1.0, size=(vocab, d))
    ids = rng.integers(0, vocab, size=count)
    return TokenSegment(SegmentKind.TEXT, table[ids].reshape(count, d), text_positions(count))
