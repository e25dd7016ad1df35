"""Turn rasters and per-condition settings into a ready-to-denoise sequence."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .compact import CompressionSpec, IntegrationMask, PruneSpec, compress, correct_positions, integrate, prune
from .pipeline import ModelConfig, initial_noise
from .tensor import PositionIndex
from .tokens import (
    PatchEmbedder,
    Placement,
    SegmentKind,
    TokenSegment,
    UnifiedSequence,
    build_sequence,
    noisy_positions,
    text_tokens,
)


@dataclass(frozen=True, eq=False)
class ConditionInput:
    """One image condition.

    With ``mask`` set the condition is an inpainting context: it is merged
    into the noisy segment instead of being appended as its own segment.
    """

    raster: np.ndarray
    placement: Placement = field(default_factory=Placement)
    a: int = 1
    tau: float = 0.0
    mask: np.ndarray | None = None
    rule: str = "mean_abs"


@dataclass(eq=False)
class Scene:
    seq: UnifiedSequence
    grid: tuple[int, int]
    integration_mask: IntegrationMask | None = None
    context: TokenSegment | None = None
    uncompressed_condition_tokens: int = 0

    @property
    def retained_fraction(self) -> float:
        if self.uncompressed_condition_tokens == 0:
            return 1.0
        return self.seq.n_condition / self.uncompressed_condition_tokens


def condition_segment(
    cond: ConditionInput, embedder: PatchEmbedder, index: int
) -> tuple[TokenSegment, int]:
    """Compress, embed, position-correct and prune one condition.

    Relevance for pruning is scored on the compressed raster. Returns the
    segment and the token count it would have had without compression.
    """
    p = embedder.patch
    full_h, full_w = embedder.grid(cond.raster)
    spec = CompressionSpec(cond.a)
    small = compress(cond.raster, spec)
    gh, gw = embedder.grid(small)
    positions = correct_positions(noisy_positions(gh, gw), spec.a)
    positions = [PositionIndex(i + cond.placement.di, j + cond.placement.dj) for i, j in positions]
    seg = TokenSegment(SegmentKind.IMAGE_COND, embedder.embed(small), positions, index=index)
    seg = prune(seg, small, PruneSpec(cond.tau, cond.rule), patch=p)
    return seg, full_h * full_w


def build_scene(
    model: ModelConfig,
    height: int,
    width: int,
    conditions: list[ConditionInput] = (),
    text_count: int = 8,
    seed: int = 42,
) -> Scene:
    """Assemble ``[X; C_T; C_I]`` for a ``height x width`` target raster."""
    embedder = PatchEmbedder(model.patch, model.d, seed=model.seed)
    gh, gw = embedder.grid(np.zeros((height, width)))
    grid_positions = noisy_positions(gh, gw)
    noise = initial_noise(gh * gw, model.d, seed)
    noisy = TokenSegment(SegmentKind.NOISY, noise, grid_positions)

    mask = context = None
    segs, uncompressed = [], 0
    for k, cond in enumerate(conditions):
        if cond.mask is not None:
            if context is not None:
                raise ValueError("at most one inpainting condition is supported")
            if cond.a != 1 or cond.tau != 0.0:
                raise ValueError("inpainting context cannot be compressed or pruned")
            if np.shape(cond.raster) != (height, width):
                raise ValueError(f"inpainting context must be {height}x{width}, got {np.shape(cond.raster)}")
            mask = IntegrationMask.from_raster(cond.mask, (gh, gw))
            context = TokenSegment(SegmentKind.NOISY, embedder.embed(cond.raster), grid_positions)
            noisy = integrate(noisy, context, mask)
            continue
        seg, full = condition_segment(cond, embedder, index=len(segs) + 1)
        segs.append(seg)
        uncompressed += full

    text = text_tokens(text_count, model.d, seed=seed)
    return Scene(build_sequence(noisy, text, segs), (gh, gw), mask, context, uncompressed)


def synthetic_raster(height: int, width: int, seed: int = 0, kind: str = "blobs") -> np.ndarray:
    """Deterministic stand-in condition image in [0, 1].

    ``blobs`` is a smooth random field (depth-map-like); ``edges`` draws a
    few axis-aligned lines on black (edge-map-like, sparse).
    """
    rng = np.random.default_rng([seed, 0xC0D1])
    if kind == "edges":
        img = np.zeros((height, width))
        for _ in range(max(1, (height + width) // 16)):
            if rng.random() < 0.5:
                img[rng.integers(height), :] = 1.0
            else:
                img[:, rng.integers(width)] = 1.0
        return img
    if kind != "blobs":
        raise ValueError(f"unknown synthetic raster kind {kind!r}")
    yy, xx = np.mgrid[0:height, 0:width] / max(height, width)
    img = np.zeros((height, width))
    for _ in range(4):
        cy, cx = rng.random(2)
        s = 0.1 + 0.3 * rng.random()
        img += np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * s * s))
    return img / img.max()
