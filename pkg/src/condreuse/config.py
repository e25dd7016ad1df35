"""JSON run configuration.

Precedence, highest first: command-line flags, the ``CONDREUSE_OUTPUT_DIR``
environment variable (output directory only), the config file, defaults.
"""

from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .assembly import ConditionInput, Scene, build_scene, synthetic_raster
from .files import read_pgm
from .pipeline import DenoiseConfig, ModelConfig
from .tokens import Placement

OUTPUT_DIR_ENV = "CONDREUSE_OUTPUT_DIR"


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class ModelSection(_Strict):
    layers: int = Field(4, ge=1)
    dim: int = Field(64, ge=4)
    heads: int = Field(4, ge=1)
    mlp_ratio: int = Field(4, ge=1)
    patch: int = Field(2, ge=1)
    seed: int = 42
    init_std: Optional[float] = Field(None, gt=0)
    rope_base: float = Field(10000.0, gt=1)

    @model_validator(mode="after")
    def _dims(self):
        ModelConfig(self.layers, self.dim, self.heads, self.mlp_ratio, self.patch)
        return self

    def build(self) -> ModelConfig:
        return ModelConfig(
            self.layers, self.dim, self.heads, self.mlp_ratio, self.patch, self.seed, self.init_std, self.rope_base
        )


class DenoiseSection(_Strict):
    steps: int = Field(8, ge=1)
    mode: Literal["full", "naive_cache", "reuse_masked"] = "reuse_masked"
    mask: Literal["full", "asymmetric"] = "full"
    sigma_max: float = 1.0
    sigma_min: float = Field(0.0, ge=0)
    seed: int = 42
    freeze_text: bool = True

    @model_validator(mode="after")
    def _schedule(self):
        if self.sigma_max <= self.sigma_min:
            raise ValueError("sigma_max must exceed sigma_min")
        return self

    def build(self, **overrides) -> DenoiseConfig:
        fields = self.model_dump()
        fields.update(overrides)
        return DenoiseConfig(**fields)


class ConditionSection(_Strict):
    raster: Optional[str] = None
    synthetic: Literal["blobs", "edges"] = "blobs"
    synthetic_seed: int = 0
    size: Optional[tuple[int, int]] = None
    placement: Literal["aligned", "offset"] = "aligned"
    offset: tuple[int, int] = (0, 0)
    a: int = Field(1, ge=1)
    tau: float = Field(0.0, ge=0, le=1)
    rule: Literal["mean_abs", "max_abs"] = "mean_abs"
    mask: Optional[str] = None

    @field_validator("offset")
    @classmethod
    def _non_negative(cls, v):
        if min(v) < 0:
            raise ValueError("offsets must be non-negative")
        return v


class LatentSection(_Strict):
    height: int = Field(32, ge=1)
    width: int = Field(32, ge=1)


class BenchSection(_Strict):
    resolutions: list[tuple[int, int]] = [(32, 32)]
    condition_counts: list[int] = [0, 1, 2, 3, 4]
    modes: list[Literal["full", "naive_cache", "reuse_masked"]] = ["full", "naive_cache", "reuse_masked"]
    a: int = Field(2, ge=1)
    tau: float = Field(0.0, ge=0, le=1)
    timing: bool = False
    repeats: int = Field(5, ge=1)
    warmup: int = Field(2, ge=0)
    workers: int = Field(1, ge=1)

    @field_validator("condition_counts")
    @classmethod
    def _counts(cls, v):
        if any(k < 0 for k in v):
            raise ValueError("condition counts must be non-negative")
        return v


def _default_conditions() -> list[ConditionSection]:
    return [ConditionSection(a=2)]


class RunConfig(_Strict):
    model: ModelSection = ModelSection()
    denoise: DenoiseSection = DenoiseSection()
    latent: LatentSection = LatentSection()
    text_tokens: int = Field(8, ge=0)
    conditions: list[ConditionSection] = Field(default_factory=_default_conditions)
    probe: bool = False
    save_latents: bool = False
    output_dir: str = "out"
    bench: BenchSection = BenchSection()

    # directory used to resolve relative raster/mask paths; not part of the schema
    _base_dir: Path = Path(".")

    @classmethod
    def load(cls, path: str | Path | None = None) -> "RunConfig":
        if path is None:
            return cls()
        path = Path(path)
        cfg = cls.model_validate(json.loads(path.read_text()))
        cfg._base_dir = path.parent
        return cfg

    def override(self, **changes) -> "RunConfig":
        """Apply dotted-key overrides such as ``{"denoise.steps": 4}``; ``None`` values are skipped."""
        data = self.model_dump()
        for key, value in changes.items():
            if value is None:
                continue
            node = data
            *parents, leaf = key.split(".")
            for p in parents:
                node = node[p]
            node[leaf] = value
        cfg = type(self).model_validate(data)
        cfg._base_dir = self._base_dir
        return cfg

    def resolve_output_dir(self, flag: str | None = None) -> Path:
        return Path(flag or os.environ.get(OUTPUT_DIR_ENV) or self.output_dir)

    def _raster(self, ref: str) -> object:
        p = Path(ref)
        return read_pgm(p if p.is_absolute() else self._base_dir / p)

    def condition_inputs(self) -> list[ConditionInput]:
        out = []
        h, w = self.latent.height, self.latent.width
        for c in self.conditions:
            if c.raster is not None:
                raster = self._raster(c.raster)
            else:
                ch, cw = c.size or (h, w)
                raster = synthetic_raster(ch, cw, c.synthetic_seed, c.synthetic)
            placement = Placement(*c.offset) if c.placement == "offset" else Placement()
            mask = self._raster(c.mask) if c.mask is not None else None
            out.append(ConditionInput(raster, placement, c.a, c.tau, mask, c.rule))
        return out

    def scene(self) -> Scene:
        return build_scene(
            self.model.build(),
            self.latent.height,
            self.latent.width,
            self.condition_inputs(),
            self.text_tokens,
            self.denoise.seed,
        )
