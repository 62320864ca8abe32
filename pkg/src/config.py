"""Configuration management: environment settings and flat key=value run configs."""

import os
from pathlib import Path
from typing import Dict, Optional, Union

from dotenv import dotenv_values, load_dotenv
from pydantic import BaseModel, Field, ValidationError

from .errors import ConfigurationError
from .models import (RESERVED_TOKENS, FeatureSpec, MemoryConfig, ModelConfig, ScheduleConfig,
                     SyntheticTask, TrainConfig)

# Load environment variables from .env file
load_dotenv()


class Settings:
    """Application settings loaded from environment variables."""

    def __init__(self):
        self.log_level = os.getenv("SANM_LOG_LEVEL", "INFO")
        self.seed = int(os.getenv("SANM_SEED", "0"))
        self.output_dir = os.getenv("SANM_OUTPUT_DIR", "runs")
        self.bench_reps = int(os.getenv("SANM_BENCH_REPS", "5"))
        self.heldout_corpus = os.getenv("SANM_HELDOUT_CORPUS",
                                        str(Path(self.output_dir) / "data" / "heldout.feats"))

        if self.bench_reps < 5:
            raise ConfigurationError("SANM_BENCH_REPS must be >= 5")


# Global settings instance
settings = Settings()

PREFIXES = {"mem_": "mem", "schedule_": "schedule", "task_": "task"}


class RunConfig(BaseModel):
    """Everything a training run needs."""

    model: ModelConfig = Field(default_factory=lambda: ModelConfig.preset("desk_sanm"))
    train: TrainConfig = Field(default_factory=TrainConfig)
    schedule: ScheduleConfig = Field(default_factory=ScheduleConfig)
    task: SyntheticTask = Field(default_factory=SyntheticTask)

    @property
    def features(self) -> FeatureSpec:
        return FeatureSpec(base_dim=self.task.base_dim)


def _render(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if hasattr(value, "value"):
        return str(value.value)
    return str(value)


def flatten_model_config(cfg: ModelConfig) -> Dict[str, str]:
    """ModelConfig as flat text pairs; ``mem_cfg`` fields get the ``mem_`` prefix, None values are omitted."""
    flat: Dict[str, str] = {}
    for name, value in cfg.model_dump(exclude={"mem_cfg"}).items():
        if value is not None:
            flat[name] = _render(value)
    for name, value in cfg.mem_cfg.model_dump().items():
        flat[f"mem_{name}"] = _render(value)
    return flat


def unflatten_model_config(flat: Dict[str, str]) -> ModelConfig:
    model_fields: Dict[str, str] = {}
    mem_fields: Dict[str, str] = {}
    for key, value in flat.items():
        if key.startswith("mem_"):
            mem_fields[key[len("mem_"):]] = value
        else:
            model_fields[key] = value
    try:
        return ModelConfig(mem_cfg=MemoryConfig(**mem_fields), **model_fields)
    except ValidationError as exc:
        raise ConfigurationError(f"invalid model config: {exc}") from exc


def _split_keys(raw: Dict[str, Optional[str]]) -> Dict[str, Dict[str, str]]:
    groups: Dict[str, Dict[str, str]] = {"model": {}, "mem": {}, "train": {}, "schedule": {}, "task": {}}
    model_keys = set(ModelConfig.model_fields) - {"mem_cfg"}
    train_keys = set(TrainConfig.model_fields)
    for key, value in raw.items():
        key = key.strip().lower()
        if value is None or key == "preset":
            continue
        prefix = next((p for p in PREFIXES if key.startswith(p)), None)
        if prefix is not None:
            groups[PREFIXES[prefix]][key[len(prefix):]] = value
            continue
        if key not in model_keys and key not in train_keys:
            raise ConfigurationError(f"unknown config key {key!r}")
        if key in model_keys:
            groups["model"][key] = value
        if key in train_keys:
            groups["train"][key] = value
    return groups


def build_run_config(raw: Dict[str, Optional[str]]) -> RunConfig:
    """Validate flat pairs into a RunConfig; a ``preset`` key seeds the model fields."""
    groups = _split_keys(raw)
    preset = raw.get("preset") or "desk_sanm"
    try:
        base = ModelConfig.preset(preset).model_dump()
    except KeyError as exc:
        raise ConfigurationError(str(exc)) from exc

    try:
        base.update(groups["model"])
        mem = dict(base.pop("mem_cfg"))
        mem["d"] = base["d_basic"]
        mem.update(groups["mem"])
        model = ModelConfig(mem_cfg=MemoryConfig(**mem), **base)
        train = TrainConfig(**groups["train"])
        schedule_fields = {"d_model": model.d_model, **groups["schedule"]}
        schedule = ScheduleConfig(**schedule_fields)
        task = SyntheticTask(**groups["task"])
    except ValidationError as exc:
        raise ConfigurationError(f"invalid run config: {exc}") from exc

    run = RunConfig(model=model, train=train, schedule=schedule, task=task)
    if model.input_dim != run.features.stacked_dim:
        raise ConfigurationError(
            f"input_dim={model.input_dim} does not match stacked feature width {run.features.stacked_dim}")
    if model.vocab_size < len(RESERVED_TOKENS) + task.alphabet_size:
        raise ConfigurationError(
            f"vocab_size={model.vocab_size} cannot hold {task.alphabet_size} tokens plus reserved ids")
    return run


def load_run_config(path: Union[str, Path]) -> RunConfig:
    """Parse a flat ``key=value`` config file (``#`` comments allowed)."""
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"config file not found: {path}")
    return build_run_config(dotenv_values(path))
