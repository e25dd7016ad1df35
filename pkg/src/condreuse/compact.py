"""Compact condition tokens: compression, position correcting, pruning, integration."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .tensor import PositionIndex
from .tokens import SegmentKind, TokenSegment


class PruneWarning(UserWarning):
    """Every token of a condition fell below the relevance threshold."""


@dataclass(frozen=True)
class CompressionSpec:
    a: int = 1

    def __post_init__(self):
        if self.a < 1:
            raise ValueError(f"compression factor must be >= 1, got {self.a}")

    @property
    def retained_fraction(self) -> float:
        return 1.0 / (self.a * self.a)


@dataclass(frozen=True)
class PruneSpec:
    tau: float = 0.0
    rule: str = "mean_abs"

    def __post_init__(self):
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError(f"prune threshold must lie in [0, 1], got {self.tau}")
        if self.rule not in RELEVANCE_RULES:
            raise ValueError(f"unknown relevance rule {self.rule!r}")


def compress(raster: np.ndarray, spec: CompressionSpec | int) -> np.ndarray:
    """Area-average downsample by ``a`` along both axes."""
    a = spec.a if isinstance(spec, CompressionSpec) else int(spec)
    raster = np.asarray(raster, dtype=np.float64)
    h, w = raster.shape
    if h % a or w % a:
        pad_h, pad_w = (-h) % a, (-w) % a
        raise ValueError(
            f"raster {h}x{w} is not divisible by compression factor {a}; "
            f"pad by {pad_h} rows and {pad_w} columns"
        )
    if a == 1:
        return raster.copy()
    return raster.reshape(h // a, a, w // a, a).mean(axis=(1, 3))


def correct_positions(positions, a: int) -> list[PositionIndex]:
    """Map compressed-grid indices onto the target grid: ``(i, j) -> (a*i, a*j)``."""
    if a < 1:
        raise ValueError("compression factor must be >= 1")
    return [PositionIndex(a * int(i), a * int(j)) for i, j in positions]


def _mean_abs(patches: np.ndarray) -> np.ndarray:
    return np.clip(np.mean(np.abs(patches), axis=1), 0.0, 1.0)


def _max_abs(patches: np.ndarray) -> np.ndarray:
    return np.clip(np.max(np.abs(patches), axis=1), 0.0, 1.0)


RELEVANCE_RULES = {"mean_abs": _mean_abs, "max_abs": _max_abs}


def patch_relevance(raster: np.ndarray, patch: int, rule: str = "mean_abs") -> np.ndarray:
    """Per-patch relevance in [0, 1], row-major over the patch grid."""
    raster = np.asarray(raster, dtype=np.float64)
    h, w = raster.shape
    if h % patch or w % patch:
        raise ValueError(f"raster {h}x{w} is not divisible by patch size {patch}")
    gh, gw = h // patch, w // patch
    patches = raster.reshape(gh, patch, gw, patch).transpose(0, 2, 1, 3).reshape(gh * gw, patch * patch)
    return RELEVANCE_RULES[rule](patches)


def prune(segment: TokenSegment, raster: np.ndarray, spec: PruneSpec, patch: int = 1) -> TokenSegment:
    """Drop tokens whose source patch relevance is below ``tau``.

    Survivors keep their positions and relative order. Pruning everything is
    legal; a :class:`PruneWarning` is emitted and an empty segment returned.
    """
    relevance = patch_relevance(raster, patch, spec.rule)
    if relevance.shape[0] != len(segment):
        raise ValueError(f"raster yields {relevance.shape[0]} patches for {len(segment)} tokens")
    if spec.tau == 0.0:
        return segment
    keep = relevance >= spec.tau
    if not keep.any():
        warnings.warn(f"all {len(segment)} condition tokens pruned at tau={spec.tau}", PruneWarning, stacklevel=2)
    return segment.select(keep)


@dataclass(frozen=True, eq=False)
class IntegrationMask:
    """Binary latent-grid mask: 1 marks cells to generate, 0 marks preserved context."""

    m: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.m)
        if m.ndim != 2:
            raise ValueError("integration mask must be a 2D grid")
        object.__setattr__(self, "m", m.astype(bool))

    @property
    def shape(self) -> tuple[int, int]:
        return self.m.shape

    def flat(self) -> np.ndarray:
        return self.m.reshape(-1)

    @classmethod
    def from_raster(cls, raster: np.ndarray, grid: tuple[int, int], threshold: float = 128 / 255) -> "IntegrationMask":
        """Threshold a [0, 1] raster and reduce it to ``grid``; a cell is 1 if any pixel in it is."""
        binary = np.asarray(raster, dtype=np.float64) >= threshold
        gh, gw = grid
        h, w = binary.shape
        if (h, w) == (gh, gw):
            return cls(binary)
        if h % gh or w % gw:
            raise ValueError(f"mask {h}x{w} cannot be reduced to a {gh}x{gw} latent grid")
        return cls(binary.reshape(gh, h // gh, gw, w // gw).any(axis=(1, 3)))


def _check_integration(noise_tokens: TokenSegment, cond_tokens: TokenSegment, mask: IntegrationMask):
    if noise_tokens.tokens.shape != cond_tokens.tokens.shape:
        raise ValueError(f"noise grid {noise_tokens.tokens.shape} and condition grid {cond_tokens.tokens.shape} differ")
    if not np.array_equal(noise_tokens.positions, cond_tokens.positions):
        raise ValueError("noise and condition tokens must share grid positions")
    if mask.m.size != len(noise_tokens):
        raise ValueError(f"mask of {mask.m.size} cells for {len(noise_tokens)} tokens")


def integrate(noise_tokens: TokenSegment, cond_tokens: TokenSegment, mask: IntegrationMask) -> TokenSegment:
    """Merge noise and context into one N-token noisy segment (instead of 2N).

    Cells with mask=1 carry the noise token; cells with mask=0 carry the
    condition token and are frozen.
    """
    _check_integration(noise_tokens, cond_tokens, mask)
    generate = mask.flat()
    tokens = np.where(generate[:, None], noise_tokens.tokens, cond_tokens.tokens)
    return TokenSegment(SegmentKind.NOISY, tokens, noise_tokens.positions, frozen=~generate)


def reassemble(final: TokenSegment, mask: IntegrationMask, original_cond: TokenSegment) -> TokenSegment:
    """Output grid: original context at mask=0 cells, denoised values at mask=1 cells."""
    _check_integration(final, original_cond, mask)
    generate = mask.flat()
    tokens = np.where(generate[:, None], final.tokens, original_cond.tokens)
    return TokenSegment(SegmentKind.NOISY, tokens, final.positions)
