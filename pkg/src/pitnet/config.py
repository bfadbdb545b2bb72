"""Run configuration: defaults, profiles, JSON loading, seed derivation."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass

import numpy as np

from .data import AugmentConfig
from .errors import ConfigError
from .network import MODEL_BUILDERS, ModelConfig
from .optim import OptimizerConfig


@dataclass
class RunConfig:
    model: str = "proposed"
    epochs: int = 150
    batch_size: int = 4
    lr1: float = 0.001
    lr2: float = 0.01
    bound_mode: str = "adabound"
    seed: int = 0
    manifest: str = "dataset/manifest.csv"
    out_dir: str = "run"
    image_size: int = 224
    folds: int = 5
    stem_channels: tuple = (32, 32, 64)
    module_channels: tuple = (64, 128, 256)
    augment_probability: float = 0.5
    crop_area_range: tuple = (0.85, 1.0)
    rotation_range_deg: tuple = (-45.0, 45.0)
    transfer_checkpoint: str = ""
    freeze_prefixes: tuple = ()
    skip_prefixes: tuple = ("classifier",)

    def __post_init__(self):
        if self.model not in MODEL_BUILDERS:
            raise ConfigError(f"model must be one of {sorted(MODEL_BUILDERS)}")
        if self.epochs < 0 or self.batch_size < 1 or self.folds < 1:
            raise ConfigError("epochs >= 0, batch_size >= 1, folds >= 1 required")
        for name in ("stem_channels", "module_channels", "crop_area_range",
                     "rotation_range_deg", "freeze_prefixes", "skip_prefixes"):
            setattr(self, name, tuple(getattr(self, name)))


# The desk profile is the full pipeline shrunk to commodity-CPU scale.
PROFILES = {
    "paper": {},
    "desk": {"epochs": 30, "image_size": 64,
             "stem_channels": (8, 8, 16), "module_channels": (16, 32, 64)},
}


def make_run_config(profile: str = "paper", file_values: dict = None,
                    overrides: dict = None) -> RunConfig:
    """Defaults, then profile, then config file, then explicit flags."""
    if profile not in PROFILES:
        raise ConfigError(f"profile must be one of {sorted(PROFILES)}")
    values = dict(PROFILES[profile])
    field_names = {f.name for f in dataclasses.fields(RunConfig)}
    for source, tag in ((file_values, "config file"), (overrides, "flag")):
        if not source:
            continue
        unknown = set(source) - field_names
        if unknown:
            raise ConfigError(f"unknown {tag} keys: {sorted(unknown)}")
        values.update(source)
    return RunConfig(**values)


def load_config_file(path: str) -> dict:
    try:
        with open(path) as fh:
            values = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(values, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    return values


def model_config(rc: RunConfig) -> ModelConfig:
    return ModelConfig(input_size=(rc.image_size, rc.image_size),
                       stem_channels=rc.stem_channels,
                       module_channels=rc.module_channels)


def optimizer_config(rc: RunConfig) -> OptimizerConfig:
    return OptimizerConfig(lr1=rc.lr1, lr2=rc.lr2, bound_mode=rc.bound_mode)


def augment_config(rc: RunConfig) -> AugmentConfig:
    return AugmentConfig(probability=rc.augment_probability,
                         crop_area_range=rc.crop_area_range,
                         rotation_range_deg=rc.rotation_range_deg)


def config_hash(rc: RunConfig) -> str:
    blob = json.dumps(dataclasses.asdict(rc), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def derive_seed(master: int, fold: int, epoch: int) -> int:
    """Independent child seed per (run, fold, epoch); epoch 0 is reserved
    for model initialization."""
    ss = np.random.SeedSequence([master, fold, epoch])
    return int(ss.generate_state(1, dtype=np.uint64)[0])
