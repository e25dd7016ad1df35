"""Invariant suite behind ``condreuse verify``."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .assembly import ConditionInput, build_scene, synthetic_raster
from .attention import AttentionWeights, KVCache, MaskMode, attend_cached, attend_full, build_mask
from .compact import CompressionSpec, IntegrationMask, compress, correct_positions, integrate
from .config import RunConfig
from .costmodel import CostInputs, flops_step, output_flops, speedups
from .pipeline import ExecutionMode, Model, denoise, init_model, similarity_probe
from .tokens import PatchEmbedder, SegmentKind, TokenSegment, build_sequence, noisy_positions

EQUIVALENCE_TOL = 1e-8
CONSTANCY_TOL = 1e-10
ORACLE_TOL = 1e-12
CACHED_TOL = 1e-10
DIVERGENCE_MIN = 1e-3


@dataclass
class CheckResult:
    name: str
    status: str  # "pass", "fail" or "expected-divergence"
    message: str
    detail: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status != "fail"

    def as_dict(self) -> dict:
        return {"check": self.name, "status": self.status, "message": self.message, **self.detail}


def _status(ok: bool) -> str:
    return "pass" if ok else "fail"


def reference_attention(x, positions, w: AttentionWeights, bias=None, base=10000.0) -> np.ndarray:
    """Token-by-token scaled dot-product attention written straight from the formula.

    Deliberately shares nothing with the vectorised kernels: rotary is built
    from explicit 2x2 rotations and softmax from ``math.exp``.
    """
    n, d = x.shape
    dh = d // w.heads
    bias = np.zeros((n, n)) if bias is None else bias
    q = [[sum(x[t, a] * w.wq[a, c] for a in range(d)) for c in range(d)] for t in range(n)]
    k = [[sum(x[t, a] * w.wk[a, c] for a in range(d)) for c in range(d)] for t in range(n)]
    v = [[sum(x[t, a] * w.wv[a, c] for a in range(d)) for c in range(d)] for t in range(n)]

    def rotate(vec, pos):
        out = list(vec)
        half = dh // 2
        for part, coord in ((0, pos[0]), (1, pos[1])):
            for m in range(half // 2):
                theta = coord * base ** (-(2 * m) / half)
                a_idx = part * half + 2 * m
                x0, x1 = vec[a_idx], vec[a_idx + 1]
                out[a_idx] = x0 * math.cos(theta) - x1 * math.sin(theta)
                out[a_idx + 1] = x0 * math.sin(theta) + x1 * math.cos(theta)
        return out

    concat = np.zeros((n, d))
    for h in range(w.heads):
        cols = range(h * dh, (h + 1) * dh)
        qh = [rotate([q[t][c] for c in cols], positions[t]) for t in range(n)]
        kh = [rotate([k[t][c] for c in cols], positions[t]) for t in range(n)]
        for t in range(n):
            logits = [sum(qh[t][c] * kh[s][c] for c in range(dh)) / math.sqrt(dh) + bias[t, s] for s in range(n)]
            top = max(logits)
            weights = [math.exp(l - top) if l != -math.inf else 0.0 for l in logits]
            z = sum(weights)
            for c in cols:
                concat[t, c] = sum(weights[s] / z * v[s][c] for s in range(n))
    return np.array([[sum(concat[t, a] * w.wo[a, c] for a in range(d)) for c in range(d)] for t in range(n)])


def random_layout(rng, n_noisy: int, n_text: int, cond_sizes: list[int], d: int):
    """Random small sequence with valid positions, for attention checks."""
    side = max(1, math.isqrt(max(n_noisy, 1)))
    pos = noisy_positions(side, max(1, math.ceil(n_noisy / side)))[:n_noisy]
    noisy = TokenSegment(SegmentKind.NOISY, rng.normal(size=(n_noisy, d)), pos)
    text = TokenSegment(SegmentKind.TEXT, rng.normal(size=(n_text, d)), [(0, 0)] * n_text)
    conds = [
        TokenSegment(SegmentKind.IMAGE_COND, rng.normal(size=(c, d)), rng.integers(0, 6, size=(c, 2)), index=k + 1)
        for k, c in enumerate(cond_sizes)
    ]
    return build_sequence(noisy, text, conds)


def random_weights(rng, d: int, heads: int, std: float = 0.3) -> AttentionWeights:
    return AttentionWeights(*(rng.normal(0, std, size=(d, d)) for _ in range(4)), heads=heads)


def check_mask_structure(cfg: RunConfig, scene) -> CheckResult:
    seq = scene.seq
    asym = build_mask(seq, MaskMode.ASYMMETRIC, cfg.denoise.freeze_text)
    full = build_mask(seq, MaskMode.FULL)
    live = seq.live_end(cfg.denoise.freeze_text)
    expected = (seq.n_tokens - live) * seq.n_noisy
    ok = (
        asym.masked_entries == expected
        and not np.isneginf(asym.bias[:live]).any()
        and np.isneginf(asym.bias[live:, : seq.n_noisy]).all()
        and not np.any(full.bias)
    )
    return CheckResult(
        "mask_structure", _status(ok),
        f"{asym.masked_entries} masked entries, expected |R|*|X| = {expected}",
        {"masked": asym.masked_entries, "expected": expected},
    )


def check_attention_oracle(cfg: RunConfig, seeds: int = 5) -> CheckResult:
    worst_full = worst_cached = 0.0
    for seed in range(seeds):
        rng = np.random.default_rng(seed)
        seq = random_layout(rng, 3, 1, [2], 8)
        w = random_weights(rng, 8, 2)
        mask = build_mask(seq, MaskMode.ASYMMETRIC)
        got = attend_full(seq.tokens(), seq.positions(), w, mask)
        ref = reference_attention(seq.tokens(), seq.positions(), w, mask.bias)
        worst_full = max(worst_full, float(np.abs(got - ref).max()))
        kv = []
        attend_full(seq.tokens(), seq.positions(), w, mask, kv_out=kv)
        cache = KVCache(1)
        cache.store([kv[0][0][mask.live_end :]], [kv[0][1][mask.live_end :]])
        cached = attend_cached(seq.tokens()[: mask.live_end], seq.positions()[: mask.live_end], w, cache, 0)
        worst_cached = max(worst_cached, float(np.abs(cached - got[: mask.live_end]).max()))
    ok = worst_full <= ORACLE_TOL and worst_cached <= CACHED_TOL
    return CheckResult(
        "attention_oracle", _status(ok),
        f"full vs direct formula {worst_full:.3e}, cached vs full {worst_cached:.3e}",
        {"max_abs_full": worst_full, "max_abs_cached": worst_cached},
    )


def check_equivalence(cfg: RunConfig, scene, model: Model) -> CheckResult:
    dn = cfg.denoise
    if dn.mode == "naive_cache":
        naive = denoise(scene.seq, model, dn.build(mode="naive_cache"))
        ref = denoise(scene.seq, model, dn.build(mode="full", mask="full"))
        diff = float(np.abs(naive.latents - ref.latents).max())
        return CheckResult(
            "cached_equivalence", "expected-divergence",
            f"naive cache differs from full recompute by {diff:.3e} (divergence is the documented behaviour)",
            {"max_abs_diff": diff, "diverges": diff > DIVERGENCE_MIN},
        )
    reuse = denoise(scene.seq, model, dn.build(mode="reuse_masked"))
    ref = denoise(scene.seq, model, dn.build(mode="full", mask="asymmetric"))
    diff = float(np.abs(reuse.latents - ref.latents).max())
    ok = diff <= EQUIVALENCE_TOL if dn.freeze_text else True
    status = _status(ok) if dn.freeze_text else "expected-divergence"
    return CheckResult(
        "cached_equivalence", status,
        f"reuse_masked vs full+asymmetric max abs diff {diff:.3e} (tol {EQUIVALENCE_TOL:g})",
        {"max_abs_diff": diff, "tol": EQUIVALENCE_TOL},
    )


def check_naive_divergence(cfg: RunConfig, scene, model: Model) -> CheckResult:
    dn = cfg.denoise
    naive = denoise(scene.seq, model, dn.build(mode="naive_cache"))
    ref = denoise(scene.seq, model, dn.build(mode="full", mask="full"))
    diff = float(np.abs(naive.latents - ref.latents).max())
    ok = diff > DIVERGENCE_MIN or dn.steps == 1
    return CheckResult(
        "naive_divergence", _status(ok),
        f"naive cache vs unmasked full recompute max abs diff {diff:.3e} (must exceed {DIVERGENCE_MIN:g})",
        {"max_abs_diff": diff},
    )


def check_condition_constancy(cfg: RunConfig, scene, model: Model) -> CheckResult:
    dn = cfg.denoise
    live = scene.seq.live_end(dn.freeze_text)
    run = denoise(scene.seq, model, dn.build(mode="full", mask="asymmetric"), probe=True)
    worst = 0.0
    for step in run.trace.states[1:]:
        for layer, h in enumerate(step):
            worst = max(worst, float(np.abs(h[live:] - run.trace.states[0][layer][live:]).max(initial=0.0)))
    reuse = denoise(scene.seq, model, dn.build(mode="reuse_masked"), probe=True)
    sims = [s for _, seg, s in similarity_probe(reuse.trace) if seg == "C"]
    sim_err = max((abs(s - 1.0) for s in sims), default=0.0)
    ok = (worst <= CONSTANCY_TOL and sim_err <= CONSTANCY_TOL) if dn.freeze_text else True
    status = _status(ok) if dn.freeze_text else "expected-divergence"
    return CheckResult(
        "condition_constancy", status,
        f"reusable-block drift across steps {worst:.3e}; condition similarity error {sim_err:.3e}",
        {"max_abs_drift": worst, "similarity_error": sim_err},
    )


def check_frozen_conservation(cfg: RunConfig, scene, model: Model) -> CheckResult:
    if scene.integration_mask is None:
        mc = model.config
        size = 4 * mc.patch
        m = np.zeros((size, size))
        m[: size // 2] = 1.0
        scene = build_scene(mc, size, size, [ConditionInput(synthetic_raster(size, size, 7), mask=m)], 2, cfg.denoise.seed)
        model = init_model(mc)
        steps = min(cfg.denoise.steps, 3)
    else:
        steps = cfg.denoise.steps
    result = denoise(scene.seq, model, cfg.denoise.build(steps=steps))
    keep = ~scene.integration_mask.flat()
    same = np.array_equal(result.latents[keep], scene.context.tokens[keep])
    return CheckResult(
        "frozen_conservation", _status(bool(same)),
        f"{int(keep.sum())} preserved cells bit-identical after {steps} steps: {bool(same)}",
        {"preserved_cells": int(keep.sum())},
    )


def check_compact_counts(cfg: RunConfig) -> CheckResult:
    p = cfg.model.patch
    raster = np.full((8 * p, 8 * p), 0.5)
    emb = PatchEmbedder(p, 8)
    before = len(emb.patches(raster))
    after = len(emb.patches(compress(raster, CompressionSpec(2))))
    corrected = correct_positions(noisy_positions(4, 4), 2)
    pos_ok = all(c == (2 * q.i, 2 * q.j) for c, q in zip(corrected, noisy_positions(4, 4)))
    rng = np.random.default_rng(0)
    seg = TokenSegment(SegmentKind.NOISY, rng.normal(size=(16, 8)), noisy_positions(4, 4))
    mask = IntegrationMask(rng.random((4, 4)) < 0.4)
    merged = integrate(seg, seg.with_tokens(rng.normal(size=(16, 8))), mask)
    ok = after * 4 == before and pos_ok and len(merged) == 16
    return CheckResult(
        "compact_counts", _status(ok),
        f"compression {before}->{after} tokens, integration {len(merged)} tokens, position correcting ok: {pos_ok}",
    )


def check_cost_identities(cfg: RunConfig, scene, model: Model) -> CheckResult:
    a112 = speedups(CostInputs(28, 1024, 512, 1024, r=0.25)).alpha_total
    a16 = speedups(CostInputs(4, 1024, 512, 1024, r=0.25)).alpha_total
    mc = model.config
    seq = scene.seq
    dn = cfg.denoise.build()
    run = denoise(seq, model, dn)
    params = CostInputs(dn.steps, seq.n_noisy, seq.n_text, seq.n_condition, mc.d, mc.layers, mc.heads, mc.mlp_ratio)
    live = seq.live_end(dn.freeze_text)
    mismatches = 0
    for t, counted in enumerate(run.step_flops):
        cached = t > 0 and dn.mode is not ExecutionMode.FULL
        expect = flops_step(seq.n_tokens, params, queries=live if cached else None)
        updated = int((~seq.noisy.frozen).sum())
        if (
            counted.get("token", 0) != expect.token_independent
            or counted.get("attention", 0) != expect.attention
            or counted.get("output", 0) != output_flops(seq.n_noisy, mc.d, updated)
        ):
            mismatches += 1
    ok = a112 == 112 and a16 == 16 and mismatches == 0
    return CheckResult(
        "cost_identities", _status(ok),
        f"alpha_total(28, 0.25)={a112:g}, alpha_total(4, 0.25)={a16:g}, {mismatches} steps where counter != model",
        {"alpha_112": a112, "alpha_16": a16, "step_mismatches": mismatches},
    )


def check_determinism(cfg: RunConfig, scene, model: Model) -> CheckResult:
    dn = cfg.denoise.build(steps=min(cfg.denoise.steps, 2))
    a = denoise(scene.seq, model, dn).latents
    b = denoise(cfg.scene().seq, init_model(cfg.model.build()), dn).latents
    same = a.tobytes() == b.tobytes()
    return CheckResult("determinism", _status(same), f"two identical runs bit-identical: {same}")


def run_suite(cfg: RunConfig) -> list[CheckResult]:
    scene = cfg.scene()
    model = init_model(cfg.model.build())
    results = [
        check_mask_structure(cfg, scene),
        check_attention_oracle(cfg),
        check_equivalence(cfg, scene, model),
        check_condition_constancy(cfg, scene, model),
        check_frozen_conservation(cfg, scene, model),
        check_compact_counts(cfg),
        check_cost_identities(cfg, scene, model),
        check_determinism(cfg, scene, model),
    ]
    if cfg.denoise.mode != "naive_cache":
        results.insert(3, check_naive_divergence(cfg, scene, model))
    return results
