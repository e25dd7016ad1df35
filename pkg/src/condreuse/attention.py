"""Multi-modal attention with 2D rotary positions, asymmetric masking and KV reuse."""

from __future__ import annotations

import enum
import math
from contextlib import nullcontext
from dataclasses import dataclass, field

import numpy as np

from .tensor import FlopCounter, apply_rope2d, masked_softmax_rows, matmul, scale
from .tokens import UnifiedSequence


class MaskMode(str, enum.Enum):
    FULL = "full"
    ASYMMETRIC = "asymmetric"


@dataclass(frozen=True, eq=False)
class MaskSpec:
    mode: MaskMode
    bias: np.ndarray
    live_end: int

    @property
    def masked_entries(self) -> int:
        return int(np.isneginf(self.bias).sum())


def build_mask(layout: UnifiedSequence, mode: MaskMode | str, freeze_text: bool = True) -> MaskSpec:
    """Additive attention bias for ``layout``.

    In asymmetric mode rows of the reusable block (text and conditions, or
    conditions only when ``freeze_text`` is off) get ``-inf`` on every noisy
    column. Noisy rows are never masked.
    """
    mode = MaskMode(mode)
    n = layout.n_tokens
    live_end = layout.live_end(freeze_text)
    bias = np.zeros((n, n), dtype=np.float64)
    if mode is MaskMode.ASYMMETRIC:
        bias[live_end:, : layout.n_noisy] = -np.inf
    return MaskSpec(mode, bias, live_end)


@dataclass(frozen=True, eq=False)
class AttentionWeights:
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    heads: int

    @property
    def d(self) -> int:
        return self.wq.shape[0]

    @property
    def d_head(self) -> int:
        return self.d // self.heads


def _project_kv(x, positions, w: AttentionWeights, rope_base, flops):
    k = matmul(x, w.wk, flops)
    v = matmul(x, w.wv, flops)
    dh = w.d_head
    k_rot = np.empty_like(k)
    for h in range(w.heads):
        cols = slice(h * dh, (h + 1) * dh)
        k_rot[:, cols] = apply_rope2d(k[:, cols], positions, rope_base, flops)
    return k_rot, v


def _attend(q, q_positions, k_rot, v, w: AttentionWeights, bias, rope_base, flops):
    dh = w.d_head
    out = np.empty((q.shape[0], w.d), dtype=np.float64)
    inv_sqrt = 1.0 / math.sqrt(dh)
    for h in range(w.heads):
        cols = slice(h * dh, (h + 1) * dh)
        with _category(flops, "token"):
            qh = apply_rope2d(q[:, cols], q_positions, rope_base, flops)
        with _category(flops, "attention"):
            scores = scale(matmul(qh, k_rot[:, cols].T, flops), inv_sqrt, flops)
            probs = masked_softmax_rows(scores, bias, flops)
            out[:, cols] = matmul(probs, v[:, cols], flops)
    return out


def _category(flops: FlopCounter | None, category: str):
    return flops.scope(category) if flops is not None else nullcontext()


def attend_full(
    x: np.ndarray,
    positions: np.ndarray,
    w: AttentionWeights,
    mask: MaskSpec | np.ndarray | None = None,
    rope_base: float = 10000.0,
    flops: FlopCounter | None = None,
    kv_out: list | None = None,
) -> np.ndarray:
    """Scaled dot-product attention over the whole sequence.

    Returns the output-projected rows. When ``kv_out`` is given, the
    post-rotary keys and the values of every row are appended to it as a
    ``(k_rot, v)`` pair so a caller can keep the reusable-block slice.
    """
    bias = mask.bias if isinstance(mask, MaskSpec) else mask
    with _category(flops, "token"):
        q = matmul(x, w.wq, flops)
        k_rot, v = _project_kv(x, positions, w, rope_base, flops)
    out = _attend(q, positions, k_rot, v, w, bias, rope_base, flops)
    if kv_out is not None:
        kv_out.append((k_rot, v))
    with _category(flops, "token"):
        return matmul(out, w.wo, flops)


@dataclass
class KVCache:
    """Post-rotary keys and values of the reusable block, one pair per layer.

    Written once during the first denoising step, read-only afterwards.
    """

    layers: int
    keys: list = field(default_factory=list)
    values: list = field(default_factory=list)
    populated: bool = False

    def store(self, keys: list[np.ndarray], values: list[np.ndarray]) -> None:
        if self.populated:
            raise RuntimeError("KV cache is write-once and already populated")
        if len(keys) != self.layers or len(values) != self.layers:
            raise ValueError(f"expected {self.layers} layers, got {len(keys)}")
        sizes = {k.shape[0] for k in keys}
        if len(sizes) > 1:
            raise ValueError(f"reusable block size differs across layers: {sorted(sizes)}")
        self.keys = [np.array(k, copy=True) for k in keys]
        self.values = [np.array(v, copy=True) for v in values]
        for arr in self.keys + self.values:
            arr.setflags(write=False)
        self.populated = True

    @property
    def block_size(self) -> int:
        return self.keys[0].shape[0] if self.keys else 0

    def values_per_layer(self) -> int:
        if not self.populated:
            return 0
        return self.keys[0].size + self.values[0].size


def attend_cached(
    x_live: np.ndarray,
    live_positions: np.ndarray,
    w: AttentionWeights,
    cache: KVCache,
    layer: int,
    rope_base: float = 10000.0,
    flops: FlopCounter | None = None,
) -> np.ndarray:
    """Attention for the recomputed rows only.

    Live queries attend to ``[K_live; K_cached]``; no reusable-block
    projection is computed.
    """
    if not cache.populated:
        raise RuntimeError("attend_cached needs a populated KV cache")
    with _category(flops, "token"):
        q = matmul(x_live, w.wq, flops)
        k_live, v_live = _project_kv(x_live, live_positions, w, rope_base, flops)
    k_rot = np.concatenate([k_live, cache.keys[layer]], axis=0)
    v = np.concatenate([v_live, cache.values[layer]], axis=0)
    bias = np.zeros((x_live.shape[0], k_rot.shape[0]), dtype=np.float64)
    out = _attend(q, live_positions, k_rot, v, w, bias, rope_base, flops)
    with _category(flops, "token"):
        return matmul(out, w.wo, flops)
