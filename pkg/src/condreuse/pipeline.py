"""Toy DiT block stack, Euler denoising loop and the feature-similarity probe.

Weights are random (seeded), so nothing here is about image quality. What
matters is that the three execution modes are wired exactly as the feature
reuse scheme requires:

* ``full``         every step recomputes every row (optionally under the
                   asymmetric mask),
* ``naive_cache``  step 1 runs unmasked, later steps reuse its reusable-block
                   keys/values (the mismatched configuration),
* ``reuse_masked`` step 1 runs under the asymmetric mask, later steps reuse
                   its keys/values; equal to ``full`` + asymmetric mask.
"""

from __future__ import annotations

import enum
import math
from contextlib import nullcontext
from dataclasses import dataclass, field

import numpy as np

from .attention import (
    AttentionWeights,
    KVCache,
    MaskMode,
    MaskSpec,
    attend_cached,
    attend_full,
    build_mask,
)
from .tensor import FlopCounter, add, cosine_similarity, gelu, matmul, modulate, rms_norm
from .tokens import TokenSegment, UnifiedSequence

NORM_EPS = 1e-6


class ExecutionMode(str, enum.Enum):
    FULL = "full"
    NAIVE_CACHE = "naive_cache"
    REUSE_MASKED = "reuse_masked"


@dataclass(frozen=True)
class ModelConfig:
    layers: int = 4
    d: int = 64
    heads: int = 4
    mlp_ratio: int = 4
    patch: int = 2
    seed: int = 42
    init_std: float | None = None  # None: fan-in scaling 1/sqrt(d)
    rope_base: float = 10000.0

    def __post_init__(self):
        if self.layers < 1 or self.d < 1 or self.heads < 1 or self.mlp_ratio < 1 or self.patch < 1:
            raise ValueError("model dimensions must be positive")
        if self.d % self.heads:
            raise ValueError(f"d={self.d} is not divisible by heads={self.heads}")
        if self.d_head % 4:
            raise ValueError(f"head dimension {self.d_head} must be divisible by 4 for 2D rotary")

    @property
    def d_head(self) -> int:
        return self.d // self.heads

    @property
    def weight_std(self) -> float:
        return self.init_std if self.init_std is not None else self.d**-0.5

    @property
    def d_mlp(self) -> int:
        return self.mlp_ratio * self.d


@dataclass(frozen=True, eq=False)
class LayerWeights:
    attn: AttentionWeights
    w1: np.ndarray
    w2: np.ndarray
    w_mod: np.ndarray  # (d, 4): pre-attention scale/shift, pre-MLP scale/shift


@dataclass(frozen=True, eq=False)
class Model:
    config: ModelConfig
    layers: tuple[LayerWeights, ...]
    w_out: np.ndarray

    def arrays(self) -> list[np.ndarray]:
        out = []
        for lw in self.layers:
            out += [lw.attn.wq, lw.attn.wk, lw.attn.wv, lw.attn.wo, lw.w1, lw.w2, lw.w_mod]
        out.append(self.w_out)
        return out

    def parameter_count(self) -> int:
        return sum(a.size for a in self.arrays())


def init_model(config: ModelConfig) -> Model:
    """Draw every weight from N(0, weight_std) with a generator seeded by ``config.seed``."""
    rng = np.random.default_rng(config.seed)
    d, dm, std = config.d, config.d_mlp, config.weight_std

    def draw(*shape):
        return rng.normal(0.0, std, size=shape)

    layers = []
    for _ in range(config.layers):
        attn = AttentionWeights(draw(d, d), draw(d, d), draw(d, d), draw(d, d), config.heads)
        layers.append(LayerWeights(attn, draw(d, dm), draw(dm, d), draw(d, 4)))
    return Model(config, tuple(layers), draw(d, d))


def zero_model(config: ModelConfig) -> Model:
    m = init_model(config)
    z = np.zeros_like
    layers = tuple(
        LayerWeights(
            AttentionWeights(z(lw.attn.wq), z(lw.attn.wk), z(lw.attn.wv), z(lw.attn.wo), config.heads),
            z(lw.w1),
            z(lw.w2),
            z(lw.w_mod),
        )
        for lw in m.layers
    )
    return Model(config, layers, z(m.w_out))


def timestep_embedding(sigma: float, d: int) -> np.ndarray:
    half = d // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half, dtype=np.float64) / half)
    args = 1000.0 * sigma * freqs
    emb = np.concatenate([np.cos(args), np.sin(args)])
    return np.pad(emb, (0, d - emb.size))


def step_modulation(model: Model, sigma: float) -> np.ndarray:
    """Per-layer scalar ``(scale1, shift1, scale2, shift2)`` for noise level ``sigma``.

    Scalar work independent of the token count; not charged to FLOP counters.
    """
    emb = timestep_embedding(sigma, model.config.d)
    return np.stack([emb @ lw.w_mod for lw in model.layers])


def _row_params(mod_live: np.ndarray, mod_reuse: np.ndarray, n: int, live_end: int, col: int) -> np.ndarray:
    vals = np.empty((n, 1), dtype=np.float64)
    vals[:live_end] = mod_live[col]
    vals[live_end:] = mod_reuse[col]
    return vals


def block_forward(
    h: np.ndarray,
    positions: np.ndarray,
    lw: LayerWeights,
    mask: MaskSpec | np.ndarray | None,
    mod_live: np.ndarray,
    mod_reuse: np.ndarray,
    live_end: int,
    rope_base: float = 10000.0,
    flops: FlopCounter | None = None,
    kv_out: list | None = None,
) -> np.ndarray:
    """norm -> attention -> residual -> norm -> MLP -> residual, all rows.

    Rows ``[0, live_end)`` use ``mod_live`` (step dependent), the rest use
    ``mod_reuse`` (fixed for the whole run).
    """
    n = h.shape[0]
    p = [_row_params(mod_live, mod_reuse, n, live_end, c) for c in range(4)]
    with _scope(flops, "token"):
        a_in = modulate(rms_norm(h, NORM_EPS, flops), p[0], p[1], flops)
    attn = attend_full(a_in, positions, lw.attn, mask, rope_base, flops, kv_out)
    return _mlp_residual(h, attn, lw, p[2], p[3], flops)


def block_forward_cached(
    h_live: np.ndarray,
    live_positions: np.ndarray,
    lw: LayerWeights,
    cache: KVCache,
    layer: int,
    mod_live: np.ndarray,
    rope_base: float = 10000.0,
    flops: FlopCounter | None = None,
) -> np.ndarray:
    with _scope(flops, "token"):
        a_in = modulate(rms_norm(h_live, NORM_EPS, flops), mod_live[0], mod_live[1], flops)
    attn = attend_cached(a_in, live_positions, lw.attn, cache, layer, rope_base, flops)
    return _mlp_residual(h_live, attn, lw, mod_live[2], mod_live[3], flops)


def _mlp_residual(h, attn, lw: LayerWeights, scale2, shift2, flops):
    with _scope(flops, "token"):
        h = add(h, attn, flops)
        m_in = modulate(rms_norm(h, NORM_EPS, flops), scale2, shift2, flops)
        hidden = gelu(matmul(m_in, lw.w1, flops), flops)
        return add(h, matmul(hidden, lw.w2, flops), flops)


def _scope(flops: FlopCounter | None, category: str):
    return flops.scope(category) if flops is not None else nullcontext()


def forward_full(
    seq: UnifiedSequence,
    model: Model,
    mask: MaskSpec,
    mod_live: np.ndarray,
    mod_reuse: np.ndarray,
    flops: FlopCounter | None = None,
    cache: KVCache | None = None,
    layer_states: list | None = None,
) -> np.ndarray:
    """Run every layer over the whole sequence; returns final hidden states.

    If ``cache`` is given, the reusable-block slice of each layer's keys and
    values is written into it.
    """
    h = seq.tokens()
    positions = seq.positions()
    live_end = mask.live_end
    kv: list | None = [] if cache is not None else None
    for layer, lw in enumerate(model.layers):
        h = block_forward(
            h, positions, lw, mask, mod_live[layer], mod_reuse[layer], live_end,
            model.config.rope_base, flops, kv,
        )
        if layer_states is not None:
            layer_states.append(h.copy())
    if cache is not None:
        cache.store([k[live_end:] for k, _ in kv], [v[live_end:] for _, v in kv])
    return h


def forward_cached(
    seq: UnifiedSequence,
    model: Model,
    cache: KVCache,
    live_end: int,
    mod_live: np.ndarray,
    flops: FlopCounter | None = None,
    layer_states: list | None = None,
) -> np.ndarray:
    """Run every layer over the live prefix only, reading reusable K/V from ``cache``."""
    h = seq.tokens()[:live_end]
    positions = seq.positions()[:live_end]
    for layer, lw in enumerate(model.layers):
        h = block_forward_cached(h, positions, lw, cache, layer, mod_live[layer], model.config.rope_base, flops)
        if layer_states is not None:
            layer_states.append(h.copy())
    return h


def populate_cache(
    seq: UnifiedSequence,
    model: Model,
    mask: MaskSpec,
    sigma: float = 1.0,
    flops: FlopCounter | None = None,
    naive: bool = False,
) -> KVCache:
    """Full forward at noise level ``sigma`` that fills a fresh KV cache.

    Only the asymmetric mask makes the cached block exact; pass
    ``naive=True`` to cache from an unmasked pass anyway.
    """
    if mask.mode is not MaskMode.ASYMMETRIC and not naive:
        raise ValueError("populating a reusable cache requires the asymmetric mask")
    cache = KVCache(model.config.layers)
    mod = step_modulation(model, sigma)
    forward_full(seq, model, mask, mod, mod, flops, cache)
    return cache


def output_head(model: Model, h_noisy: np.ndarray, flops: FlopCounter | None = None) -> np.ndarray:
    with _scope(flops, "output"):
        return matmul(rms_norm(h_noisy, NORM_EPS, flops), model.w_out, flops)


@dataclass(frozen=True)
class DenoiseConfig:
    steps: int = 8
    mode: ExecutionMode = ExecutionMode.REUSE_MASKED
    mask: MaskMode = MaskMode.FULL  # only consulted in full mode
    sigma_max: float = 1.0
    sigma_min: float = 0.0
    seed: int = 42
    freeze_text: bool = True
    schedule_override: tuple[float, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "mode", ExecutionMode(self.mode))
        object.__setattr__(self, "mask", MaskMode(self.mask))
        if self.steps < 1:
            raise ValueError("at least one denoising step is required")
        sched = self.schedule()
        if sched.shape[0] != self.steps + 1:
            raise ValueError(f"schedule has {sched.shape[0]} sigmas for {self.steps} steps (need steps + 1)")
        if np.any(np.diff(sched) >= 0):
            raise ValueError("sigma schedule must be strictly decreasing")
        if sched[-1] < 0:
            raise ValueError("sigmas must be non-negative")

    def schedule(self) -> np.ndarray:
        if self.schedule_override is not None:
            return np.asarray(self.schedule_override, dtype=np.float64)
        return np.linspace(self.sigma_max, self.sigma_min, self.steps + 1)

    def first_step_mask(self) -> MaskMode:
        if self.mode is ExecutionMode.FULL:
            return self.mask
        if self.mode is ExecutionMode.NAIVE_CACHE:
            return MaskMode.FULL
        return MaskMode.ASYMMETRIC


@dataclass
class StepTrace:
    """Hidden states after every layer, per step (full ``N x d`` matrices).

    For cached steps the reusable-block rows are the step-1 values that were
    actually reused; ``recomputed[t]`` tells which case applies.
    """

    offsets: tuple[int, ...]
    n_noisy: int
    n_text: int
    states: list[list[np.ndarray]] = field(default_factory=list)
    recomputed: list[bool] = field(default_factory=list)

    def segment(self, step: int, layer: int, name: str) -> np.ndarray:
        h = self.states[step][layer]
        nx, nt = self.n_noisy, self.n_text
        return {"X": h[:nx], "T": h[nx : nx + nt], "C": h[nx + nt :]}[name]

    @property
    def layers(self) -> int:
        return len(self.states[0]) if self.states else 0


@dataclass
class DenoiseResult:
    final: TokenSegment
    step_flops: list[dict[str, int]]
    trace: StepTrace | None = None
    cache: KVCache | None = None

    @property
    def latents(self) -> np.ndarray:
        return self.final.tokens

    def total_flops(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for step in self.step_flops:
            for k, v in step.items():
                out[k] = out.get(k, 0) + v
        return out


def initial_noise(count: int, d: int, seed: int) -> np.ndarray:
    return np.random.default_rng([seed, 0x5EED]).standard_normal((count, d))


def denoise(
    seq0: UnifiedSequence,
    model: Model,
    cfg: DenoiseConfig,
    probe: bool = False,
) -> DenoiseResult:
    """Euler integration ``x <- x + (sigma_next - sigma) * v`` over the noisy segment.

    Frozen noisy tokens are never written. FLOPs are tallied per step.
    """
    sigmas = cfg.schedule()
    noisy = seq0.noisy
    x = noisy.tokens.copy()
    update = ~noisy.frozen
    live_end = seq0.live_end(cfg.freeze_text)
    mod_reuse = step_modulation(model, float(sigmas[0]))
    first_mask = build_mask(seq0, cfg.first_step_mask(), cfg.freeze_text)
    trace = StepTrace(seq0.offsets, seq0.n_noisy, seq0.n_text) if probe else None
    cache = None
    step_flops = []

    for t in range(cfg.steps):
        flops = FlopCounter()
        seq = seq0.with_noisy(x)
        mod_live = step_modulation(model, float(sigmas[t]))
        states = [] if probe else None
        if t == 0 or cfg.mode is ExecutionMode.FULL:
            if t == 0 and cfg.mode is not ExecutionMode.FULL:
                cache = KVCache(model.config.layers)
            h = forward_full(seq, model, first_mask, mod_live, mod_reuse, flops, cache if t == 0 else None, states)
            h_noisy = h[: seq0.n_noisy]
        else:
            h = forward_cached(seq, model, cache, live_end, mod_live, flops, states)
            h_noisy = h[: seq0.n_noisy]
            if probe:
                states = [np.concatenate([s, ref[live_end:]], axis=0) for s, ref in zip(states, trace.states[0])]
        if probe:
            trace.states.append(states)
            trace.recomputed.append(t == 0 or cfg.mode is ExecutionMode.FULL)

        v = output_head(model, h_noisy, flops)
        dsigma = float(sigmas[t + 1] - sigmas[t])
        x[update] = x[update] + dsigma * v[update]
        with flops.scope("output"):
            flops.add(2 * v[update].size)
        step_flops.append(flops.snapshot())

    final = TokenSegment(noisy.kind, x, noisy.positions, noisy.frozen)
    return DenoiseResult(final, step_flops, trace, cache)


def probe_layer(layers: int) -> int:
    """Zero-based index of the mid-stack layer ``ceil(L / 2)``."""
    return math.ceil(layers / 2) - 1


def similarity_probe(trace: StepTrace, layer: int | None = None) -> list[tuple[int, str, float]]:
    """Cosine similarity of each segment's features at step ``t`` against step 1.

    Rows are ``(step, segment, cosine)`` with 1-based steps; empty segments
    are skipped.
    """
    if not trace.states:
        raise ValueError("trace is empty; run denoise with probe=True")
    layer = probe_layer(trace.layers) if layer is None else layer
    rows = []
    for t in range(len(trace.states)):
        for name in ("X", "T", "C"):
            ref = trace.segment(0, layer, name)
            if ref.size == 0:
                continue
            rows.append((t + 1, name, cosine_similarity(trace.segment(t, layer, name), ref)))
    return rows
