"""Sweep harness: instrumented FLOPs (and optional wall time) over a grid of runs."""

from __future__ import annotations

import csv
import io
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

from .assembly import ConditionInput, build_scene, synthetic_raster
from .config import RunConfig
from .pipeline import ExecutionMode, denoise, init_model, similarity_probe

BENCH_COLUMNS = [
    "h", "w", "K", "mode", "n", "r",
    "flops_total", "flops_condition_overhead", "wall_ms_median",
    "alpha_compact", "alpha_reuse", "alpha_total",
    "flops_first_step", "flops_later_step_token", "flops_later_step_attention",
]
PROBE_COLUMNS = ["step", "segment", "cosine_vs_step1"]


@dataclass(frozen=True)
class GridPoint:
    h: int
    w: int
    k: int
    mode: str


def fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return format(value, ".12g")
    return str(value)


def _scene(cfg: RunConfig, point: GridPoint, k: int | None = None):
    b = cfg.bench
    k = point.k if k is None else k
    conds = [
        ConditionInput(synthetic_raster(point.h, point.w, seed=i + 1), a=b.a, tau=b.tau)
        for i in range(k)
    ]
    return build_scene(cfg.model.build(), point.h, point.w, conds, cfg.text_tokens, cfg.denoise.seed)


def _flops(cfg: RunConfig, point: GridPoint, k: int | None = None):
    scene = _scene(cfg, point, k)
    model = init_model(cfg.model.build())
    run = denoise(scene.seq, model, cfg.denoise.build(mode=point.mode))
    return scene, run


def _wall_ms(cfg: RunConfig, point: GridPoint) -> float:
    b = cfg.bench
    scene = _scene(cfg, point)
    model = init_model(cfg.model.build())
    dn = cfg.denoise.build(mode=point.mode)
    for _ in range(b.warmup):
        denoise(scene.seq, model, dn)
    samples = []
    for _ in range(b.repeats):
        start = time.perf_counter()
        denoise(scene.seq, model, dn)
        samples.append((time.perf_counter() - start) * 1e3)
    return statistics.median(samples)


def _total(run) -> int:
    return sum(run.total_flops().values())


def bench_row(cfg: RunConfig, point: GridPoint, empty_total: int | None = None) -> dict:
    """Measure one grid point; ``empty_total`` is the K=0 total for the same resolution and mode."""
    scene, run = _flops(cfg, point)
    total = _total(run)
    if point.k == 0:
        overhead = 0
    else:
        if empty_total is None:
            empty_total = _total(_flops(cfg, point, k=0)[1])
        overhead = total - empty_total
    n = cfg.denoise.steps
    r = scene.retained_fraction
    alpha_compact = 1.0 / r
    alpha_reuse = 1.0 if point.mode == ExecutionMode.FULL.value else float(n)
    later = run.step_flops[1] if n > 1 else None
    return {
        "h": point.h,
        "w": point.w,
        "K": point.k,
        "mode": point.mode,
        "n": n,
        "r": r,
        "flops_total": total,
        "flops_condition_overhead": overhead,
        "wall_ms_median": round(_wall_ms(cfg, point), 3) if cfg.bench.timing else None,
        "alpha_compact": alpha_compact,
        "alpha_reuse": alpha_reuse,
        "alpha_total": alpha_compact * alpha_reuse,
        "flops_first_step": sum(run.step_flops[0].values()),
        "flops_later_step_token": later.get("token", 0) if later else None,
        "flops_later_step_attention": later.get("attention", 0) if later else None,
    }


def grid(cfg: RunConfig) -> list[GridPoint]:
    b = cfg.bench
    return [GridPoint(h, w, k, mode) for h, w in b.resolutions for k in b.condition_counts for mode in b.modes]


def run_bench(cfg: RunConfig) -> list[dict]:
    """One row per grid point, in grid order regardless of worker count."""
    points = grid(cfg)
    refs = {(p.h, p.w, p.mode): GridPoint(p.h, p.w, 0, p.mode) for p in points}
    empty = {key: _total(_flops(cfg, ref)[1]) for key, ref in refs.items()}
    baselines = [empty[(p.h, p.w, p.mode)] for p in points]
    if cfg.bench.workers > 1:
        with ProcessPoolExecutor(cfg.bench.workers) as pool:
            return list(pool.map(bench_row, [cfg] * len(points), points, baselines))
    return [bench_row(cfg, p, e) for p, e in zip(points, baselines)]


def probe_rows(cfg: RunConfig) -> list[dict]:
    scene = cfg.scene()
    model = init_model(cfg.model.build())
    run = denoise(scene.seq, model, cfg.denoise.build(), probe=True)
    return [{"step": t, "segment": seg, "cosine_vs_step1": s} for t, seg, s in similarity_probe(run.trace)]


def to_csv(rows: list[dict], columns: list[str]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([fmt(row[c]) for c in columns])
    return buf.getvalue()
