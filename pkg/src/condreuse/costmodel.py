"""Analytic FLOP model of a controllable DiT run and the condition-overhead speedups.

Per step the model costs ``c1 * N`` for token-independent work plus
``c2 * N**2`` for attention. With the counting convention of
:mod:`condreuse.tensor` the constants are, per layer::

    c1 = (8 + 4m) d^2 + (18 + 8m) d
         6d^2 QKV, 2d^2 output projection, 4m d^2 MLP,
         10d two modulated RMS norms, 6d rotary on Q and K,
         2d residual adds, 8m d GELU
    c2 = 4d + 7h
         per head: 2d_h logits, 2d_h weighted sum, 1 scale, 6 softmax

and both are multiplied by the layer count. When the reusable block is
served from the KV cache only the live rows are queried, so a later step
costs ``c1 * live + c2 * live * N``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .tensor import (
    ADD_FLOPS,
    GELU_FLOPS,
    MODULATE_FLOPS,
    RMS_NORM_FLOPS,
    ROPE_FLOPS,
    SCALE_FLOPS,
    SOFTMAX_FLOPS,
)


@dataclass(frozen=True)
class CostInputs:
    n: int
    x_tokens: int
    text_tokens: int
    cond_tokens: int
    d: int = 64
    layers: int = 4
    heads: int = 4
    mlp_ratio: int = 4
    r: float = 1.0

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if not 0.0 < self.r <= 1.0:
            raise ValueError(f"retained fraction r must lie in (0, 1], got {self.r}")
        if min(self.x_tokens, self.text_tokens, self.cond_tokens) < 0:
            raise ValueError("token counts must be non-negative")

    @property
    def N(self) -> int:
        return self.x_tokens + self.text_tokens + self.cond_tokens

    @property
    def compact_cond_tokens(self) -> int:
        return math.floor(self.r * self.cond_tokens)

    def replace(self, **changes) -> "CostInputs":
        fields = dict(self.__dict__)
        fields.update(changes)
        return CostInputs(**fields)


def token_flops_per_token(d: int, layers: int, mlp_ratio: int) -> int:
    """The ``c1`` constant: token-independent FLOPs per token per step."""
    m = mlp_ratio
    per_layer = (
        2 * 3 * d * d
        + 2 * d * d
        + 2 * 2 * m * d * d
        + 2 * (RMS_NORM_FLOPS + MODULATE_FLOPS) * d
        + 2 * ROPE_FLOPS * d
        + 2 * ADD_FLOPS * d
        + GELU_FLOPS * m * d
    )
    return layers * per_layer


def attention_flops_per_pair(d: int, layers: int, heads: int) -> int:
    """The ``c2`` constant: attention FLOPs per (query, key) pair per step."""
    d_head = d // heads
    per_head = 4 * d_head + SCALE_FLOPS + SOFTMAX_FLOPS
    return layers * heads * per_head


def output_flops(x_tokens: int, d: int, updated: int | None = None) -> int:
    """Final norm + projection on every noisy row plus the Euler update on updated rows."""
    updated = x_tokens if updated is None else updated
    return x_tokens * (RMS_NORM_FLOPS * d + 2 * d * d) + 2 * d * updated


@dataclass(frozen=True)
class StepFlops:
    token_independent: int
    attention: int
    c1: int
    c2: int

    @property
    def total(self) -> int:
        return self.token_independent + self.attention


def flops_step(n_tokens: int, params: CostInputs, queries: int | None = None) -> StepFlops:
    """Per-step cost with ``n_tokens`` keys and ``queries`` recomputed rows (default: all)."""
    if n_tokens < 1:
        raise ValueError("need at least one token")
    queries = n_tokens if queries is None else queries
    c1 = token_flops_per_token(params.d, params.layers, params.mlp_ratio)
    c2 = attention_flops_per_pair(params.d, params.layers, params.heads)
    return StepFlops(c1 * queries, c2 * queries * n_tokens, c1, c2)


@dataclass(frozen=True)
class RunFlops:
    token_independent: int
    attention: int
    output: int

    @property
    def total(self) -> int:
        return self.token_independent + self.attention + self.output


def run_flops(inputs: CostInputs, compact: bool = False, reuse: bool = False, freeze_text: bool = True) -> RunFlops:
    """Whole-run FLOPs. ``reuse`` serves the reusable block from cache after step 1."""
    cond = inputs.compact_cond_tokens if compact else inputs.cond_tokens
    n_tok = inputs.x_tokens + inputs.text_tokens + cond
    first = flops_step(n_tok, inputs)
    if reuse and inputs.n > 1:
        live = inputs.x_tokens if freeze_text else inputs.x_tokens + inputs.text_tokens
        later = flops_step(n_tok, inputs, queries=live)
    else:
        later = first
    rest = inputs.n - 1
    return RunFlops(
        first.token_independent + rest * later.token_independent,
        first.attention + rest * later.attention,
        inputs.n * output_flops(inputs.x_tokens, inputs.d),
    )


@dataclass(frozen=True)
class Overhead:
    token_independent: int
    attention: int

    @property
    def total(self) -> int:
        return self.token_independent + self.attention


def condition_overhead(inputs: CostInputs, compact: bool = False, reuse: bool = False) -> Overhead:
    """FLOPs with the image conditions minus FLOPs of the same run without them."""
    with_c = run_flops(inputs, compact, reuse)
    without = run_flops(inputs.replace(cond_tokens=0), compact, reuse)
    return Overhead(
        with_c.token_independent - without.token_independent,
        with_c.attention - without.attention,
    )


@dataclass(frozen=True)
class SpeedupReport:
    alpha_compact: float
    alpha_reuse: float
    alpha_total: float
    flops_baseline: int
    flops_optimized: int
    condition_overhead_baseline: int
    condition_overhead_optimized: int
    c1: int
    c2: int

    def rows(self) -> list[tuple[str, object]]:
        return list(self.__dict__.items())


def speedups(inputs: CostInputs) -> SpeedupReport:
    alpha_compact = 1.0 / inputs.r
    alpha_reuse = float(inputs.n)
    base = condition_overhead(inputs)
    opt = condition_overhead(inputs, compact=True, reuse=True)
    step = flops_step(max(inputs.N, 1), inputs)
    return SpeedupReport(
        alpha_compact=alpha_compact,
        alpha_reuse=alpha_reuse,
        alpha_total=alpha_reuse / inputs.r,
        flops_baseline=run_flops(inputs).total,
        flops_optimized=run_flops(inputs, compact=True, reuse=True).total,
        condition_overhead_baseline=base.total,
        condition_overhead_optimized=opt.total,
        c1=step.c1,
        c2=step.c2,
    )


@dataclass(frozen=True)
class Reduction:
    token_independent: float
    total: float


def overhead_reduction(inputs: CostInputs, compact: bool = True, reuse: bool = True) -> Reduction:
    """``1 - optimized / baseline`` condition overhead; the token term is the gated one."""
    base = condition_overhead(inputs)
    opt = condition_overhead(inputs, compact, reuse)
    if base.token_independent == 0 or base.total == 0:
        raise ValueError("baseline condition overhead is zero; reduction is undefined")
    return Reduction(
        1.0 - opt.token_independent / base.token_independent,
        1.0 - opt.total / base.total,
    )


@dataclass(frozen=True)
class OverheadDecomposition:
    per_condition: tuple[Overhead, ...]
    cross: Overhead
    combined: Overhead


def overhead_decomposition(
    inputs: CostInputs, cond_counts: list[int], compact: bool = False, reuse: bool = False
) -> OverheadDecomposition:
    """Split the overhead of several conditions into solo terms plus cross-attention pairs.

    ``inputs.cond_tokens`` is ignored; ``cond_counts`` gives each condition's
    token count (before compaction).
    """
    solo = tuple(condition_overhead(inputs.replace(cond_tokens=c), compact, reuse) for c in cond_counts)
    combined = condition_overhead(inputs.replace(cond_tokens=sum(cond_counts)), compact, reuse)
    cross = Overhead(
        combined.token_independent - sum(o.token_independent for o in solo),
        combined.attention - sum(o.attention for o in solo),
    )
    return OverheadDecomposition(solo, cross, combined)
