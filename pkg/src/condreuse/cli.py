"""``condreuse`` command line: verify, bench, probe, cost.

Exit codes: 0 success, 1 check or I/O failure, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from pydantic import ValidationError

from .bench import BENCH_COLUMNS, PROBE_COLUMNS, probe_rows, run_bench, to_csv
from .config import RunConfig
from .costmodel import CostInputs, speedups
from .files import PGMError, save_latents

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class ConfigError(Exception):
    pass


def _int_list(text: str) -> list[int]:
    return [int(t) for t in text.split(",") if t]


def _resolutions(text: str) -> list[tuple[int, int]]:
    out = []
    for item in text.split(","):
        h, _, w = item.lower().partition("x")
        out.append((int(h), int(w or h)))
    return out


def _load(args) -> RunConfig:
    try:
        cfg = RunConfig.load(args.config)
        cfg = cfg.override(
            **{
                "denoise.steps": getattr(args, "steps", None),
                "denoise.mode": getattr(args, "mode", None),
                "denoise.seed": getattr(args, "seed", None),
            }
        )
        bench = {}
        if getattr(args, "resolutions", None):
            bench["bench.resolutions"] = args.resolutions
        if getattr(args, "conditions", None) is not None:
            bench["bench.condition_counts"] = args.conditions
        if getattr(args, "modes", None):
            bench["bench.modes"] = args.modes.split(",")
        if getattr(args, "timing", False):
            bench["bench.timing"] = True
        if getattr(args, "workers", None):
            bench["bench.workers"] = args.workers
        return cfg.override(**bench) if bench else cfg
    except ValidationError as exc:
        raise ConfigError(f"invalid config:\n{exc}") from exc
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc


def _scene(cfg: RunConfig):
    try:
        return cfg.scene()
    except (OSError, PGMError, ValueError) as exc:
        raise ConfigError(f"cannot build inputs: {exc}") from exc


def _write(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    return path


def cmd_verify(args) -> int:
    from .checks import run_suite
    from .pipeline import denoise, init_model

    cfg = _load(args)
    scene = _scene(cfg)
    out_dir = cfg.resolve_output_dir(args.output_dir)
    results = run_suite(cfg)
    lines = [json.dumps(r.as_dict(), sort_keys=True) for r in results]
    for r in results:
        print(f"{r.status.upper():>20}  {r.name}: {r.message}")
    _write(out_dir / "verify.jsonl", "\n".join(lines) + "\n")
    if args.json:
        print("\n".join(lines))
    if cfg.save_latents:
        run = denoise(scene.seq, init_model(cfg.model.build()), cfg.denoise.build())
        save_latents(out_dir / "latents.f32", run.latents, scene.seq.offsets, scene.seq.noisy.positions)
    failed = [r.name for r in results if not r.ok]
    print(f"{len(results) - len(failed)}/{len(results)} checks ok" + (f"; failed: {', '.join(failed)}" if failed else ""))
    return EXIT_FAIL if failed else EXIT_OK


def cmd_bench(args) -> int:
    cfg = _load(args)
    _scene(cfg)
    rows = run_bench(cfg)
    path = _write(cfg.resolve_output_dir(args.output_dir) / "bench.csv", to_csv(rows, BENCH_COLUMNS))
    print(f"wrote {len(rows)} rows to {path}")
    return EXIT_OK


def cmd_probe(args) -> int:
    cfg = _load(args)
    _scene(cfg)
    rows = probe_rows(cfg)
    path = _write(cfg.resolve_output_dir(args.output_dir) / "probe.csv", to_csv(rows, PROBE_COLUMNS))
    print(f"wrote {len(rows)} rows to {path}")
    return EXIT_OK


def cmd_cost(args) -> int:
    try:
        inputs = CostInputs(
            n=args.steps, x_tokens=args.x_tokens, text_tokens=args.text_tokens, cond_tokens=args.cond_tokens,
            d=args.dim, layers=args.layers, heads=args.heads, mlp_ratio=args.mlp_ratio, r=args.ratio,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    report = speedups(inputs)
    if args.json:
        print(json.dumps(report.__dict__, sort_keys=True))
    else:
        for key, value in report.rows():
            print(f"{key:<30} {value:g}" if isinstance(value, float) else f"{key:<30} {value}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="condreuse", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def run_options(p):
        p.add_argument("--config", help="JSON run config (defaults used when omitted)")
        p.add_argument("--output-dir", help="overrides CONDREUSE_OUTPUT_DIR and the config's output_dir")
        p.add_argument("--steps", type=int)
        p.add_argument("--mode", choices=["full", "naive_cache", "reuse_masked"])
        p.add_argument("--seed", type=int, help="denoising seed (noise and text tokens)")

    p = sub.add_parser("verify", help="run the invariant suite")
    run_options(p)
    p.add_argument("--json", action="store_true", help="also print JSON lines to stdout")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("bench", help="FLOP/latency sweep to CSV")
    run_options(p)
    p.add_argument("--resolutions", type=_resolutions, help="e.g. 32x32,64x64 (raster pixels)")
    p.add_argument("--conditions", type=_int_list, help="condition counts, e.g. 0,1,2,3,4")
    p.add_argument("--modes", help="comma-separated execution modes")
    p.add_argument("--timing", action="store_true", help="measure wall time (makes the CSV non-reproducible)")
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("probe", help="per-step feature similarity to CSV")
    run_options(p)
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("cost", help="analytic speedup report")
    p.add_argument("--steps", "-n", type=int, default=28)
    p.add_argument("--ratio", "-r", type=float, default=0.25, help="retained condition-token fraction")
    p.add_argument("--x-tokens", type=int, default=1024)
    p.add_argument("--text-tokens", type=int, default=512)
    p.add_argument("--cond-tokens", type=int, default=1024)
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--layers", type=int, default=4)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--mlp-ratio", type=int, default=4)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_cost)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
