"""Pipeline configuration with JSON-schema validation."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema

from .engine import OptimConfig
from .errors import ValidationError
from .losses import LossWeights


def _load_schema() -> dict:
    text = resources.files("rigidda").joinpath("schemas/pipeline_config.schema.json").read_text()
    return json.loads(text)


@dataclass
class PipelineConfig:
    seed: int = 0
    iso_mm: float = 1.5
    grid: tuple[int, int, int] = (64, 64, 64)
    quantile: float = 0.999
    z_shift_mm: float = -10.0
    mode: str = "full"
    weights: LossWeights = field(default_factory=LossWeights)
    optim: OptimConfig = field(default_factory=OptimConfig)

    @classmethod
    def from_json(cls, text: str) -> "PipelineConfig":
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"config is not valid JSON: {exc}") from exc
        try:
            jsonschema.validate(raw, _load_schema())
        except jsonschema.ValidationError as exc:
            raise ValidationError(f"config rejected by schema: {exc.message}") from exc
        cfg = cls()
        for key in ("seed", "iso_mm", "quantile", "z_shift_mm", "mode"):
            if key in raw:
                setattr(cfg, key, raw[key])
        if "grid" in raw:
            cfg.grid = tuple(raw["grid"])
        if "weights" in raw:
            cfg.weights = LossWeights(**raw["weights"])
        if "optim" in raw:
            cfg.optim = OptimConfig(**raw["optim"])
        # pipeline seed is the single source of randomness unless overridden
        if "optim" not in raw or "seed" not in raw.get("optim", {}):
            cfg.optim.seed = cfg.seed
        return cfg

    @classmethod
    def from_file(cls, path: str | Path) -> "PipelineConfig":
        return cls.from_json(Path(path).read_text())
