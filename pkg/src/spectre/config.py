"""Run configuration: one JSON document per run, overridable by ``--set key=value``."""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .errors import ConfigError
from .nn import PRESETS, ModelConfig, model_config
from .signal import PreprocessConfig, SynthConfig
from .spectral import StftConfig
from .train import PRETRAIN_TARGETS, OptimConfig

# desk-scale schedules; chosen so the learning-signal checks finish within budget
DESK_PRETRAIN = {"steps": 200, "warmup_steps": 10, "batch_size": 16, "lr_peak": 2e-3}
DESK_FINETUNE = {"steps": 500, "warmup_steps": 25, "batch_size": 8, "lr_peak": 1e-3}

MODES = ("synth", "codebook", "pretrain", "finetune", "eval", "ablate")


@dataclass
class Seeds:
    data: int = 0
    model: int = 0
    mask: int = 0

    def as_dict(self) -> dict:
        return {"data": self.data, "model": self.model, "mask": self.mask}


@dataclass
class RunConfig:
    mode: str = "pretrain"
    preset: str = "desk"
    model: dict = field(default_factory=dict)
    preprocess: dict = field(default_factory=dict)
    stft: dict = field(default_factory=dict)
    synth: dict = field(default_factory=dict)
    test_segments: int = 0
    seeds: dict = field(default_factory=dict)
    pretrain: dict = field(default_factory=lambda: dict(DESK_PRETRAIN))
    finetune: dict = field(default_factory=lambda: dict(DESK_FINETUNE))
    pretrain_target: str = "stft_clusters"
    train_data: str = ""
    test_data: str = ""
    codebook: str = ""
    checkpoint: str = ""
    out_dir: str = "runs"
    ablate_seeds: list = field(default_factory=lambda: [0, 1, 2])
    ablate_pe_types: list = field(default_factory=lambda: ["cyrope", "absolute"])
    ablate_targets: list = field(default_factory=lambda: list(PRETRAIN_TARGETS))
    log_every: int = 0

    # -- typed views (each validates) ------------------------------------------

    def model_cfg(self) -> ModelConfig:
        return model_config(self.preset, **self.model)

    def preprocess_cfg(self) -> PreprocessConfig:
        cfg = _build(PreprocessConfig, self.preprocess, "preprocess")
        cfg.validate()
        return cfg

    def stft_cfg(self) -> StftConfig:
        return _build(StftConfig, self.stft, "stft")

    def synth_cfg(self) -> SynthConfig:
        cfg = _build(SynthConfig, self.synth, "synth")
        cfg.validate()
        return cfg

    def seeds_obj(self) -> Seeds:
        return _build(Seeds, self.seeds, "seeds")

    def optim_cfg(self, stage: str) -> OptimConfig:
        return _build(OptimConfig, getattr(self, stage), stage).validate()

    def validate(self) -> "RunConfig":
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.preset not in PRESETS:
            raise ConfigError(f"unknown preset {self.preset!r}")
        if self.pretrain_target not in PRETRAIN_TARGETS:
            raise ConfigError(f"pretrain_target must be one of {PRETRAIN_TARGETS}")
        if self.test_segments < 0:
            raise ConfigError("test_segments must be non-negative")
        for pe in self.ablate_pe_types:
            if pe not in ("cyrope", "absolute"):
                raise ConfigError(f"unknown pe_type {pe!r} in ablate_pe_types")
        for t in self.ablate_targets:
            if t not in PRETRAIN_TARGETS:
                raise ConfigError(f"unknown pretrain target {t!r} in ablate_targets")
        if not self.ablate_seeds:
            raise ConfigError("ablate_seeds must not be empty")
        self.model_cfg()
        self.preprocess_cfg()
        self.stft_cfg().validate(self.model_cfg().patch_len)
        self.synth_cfg()
        self.seeds_obj()
        self.optim_cfg("pretrain")
        self.optim_cfg("finetune")
        return self

    # -- serialization ---------------------------------------------------------

    def to_dict(self) -> dict:
        return asdict(self)

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()[:16]

    def output_root(self) -> Path:
        return Path(os.environ.get("SPECTRE_OUT") or self.out_dir)


def _build(cls, values: dict, section: str):
    if not isinstance(values, dict):
        raise ConfigError(f"section {section!r} must be an object")
    known = {f.name for f in fields(cls)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"unknown key(s) in {section!r}: {sorted(unknown)}")
    vals = {k: tuple(v) if isinstance(v, list) else v for k, v in values.items()}
    try:
        return replace(cls(), **vals)
    except TypeError as exc:
        raise ConfigError(f"bad value in {section!r}: {exc}") from exc


def from_dict(data: dict) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    known = {f.name for f in fields(RunConfig)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown config key(s): {sorted(unknown)}")
    return RunConfig(**data)


def load(path) -> RunConfig:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    try:
        data = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {p} is not valid JSON: {exc}") from exc
    return from_dict(data)


def parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(cfg: RunConfig, overrides) -> RunConfig:
    """Apply ``key=value`` strings in order; dotted keys reach into sections."""
    data = cfg.to_dict()
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        parts = key.strip().split(".")
        if parts[0] not in data:
            raise ConfigError(f"unknown config key {parts[0]!r}")
        if len(parts) == 1:
            data[parts[0]] = parse_value(raw)
        elif len(parts) == 2 and isinstance(data[parts[0]], dict):
            data[parts[0]][parts[1]] = parse_value(raw)
        else:
            raise ConfigError(f"cannot set {key!r}")
    return from_dict(data)
