"""Pipeline configuration: INI file + flag overrides -> typed configs.

Precedence, lowest to highest: built-in defaults, the --config file, then
command-line flags. Every stage that writes artifacts also writes the fully
resolved configuration next to them, so a run can be reproduced from its
output directory alone.
"""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass
from pathlib import Path

from .classifier import ModelConfig, TrainConfig
from .features import FeatureConfig

WORKDIR_ENV = "SPPG_WORKDIR"

# section -> key -> default (as INI strings)
DEFAULTS: dict[str, dict[str, str]] = {
    "paths": {
        "workdir": ".",
    },
    "features": {
        "window_ms": "25.0",
        "hop_ms": "10.0",
        "n_mel_filters": "26",
        "n_coeffs": "13",
        "pre_emphasis": "0.97",
        "sample_rate_hz": "16000",
    },
    "model": {
        "n_conv_layers": "3",
        "conv_channels": "64",
        "kernel": "3,3",
        "gru_hidden": "128",
        "n_dense": "3",
        "dense_units": "512",
        "dropout_rate": "0.2",
    },
    "train": {
        "learning_rate": "0.001",
        "batch_size": "32",
        "max_epochs": "50",
        "patience": "5",
        "seed": "0",
    },
    "discovery": {
        "theta": "0.4",
        "confidence": "0.9",
        "min_support": "20",
        "seed": "0",
    },
}


@dataclass(frozen=True)
class PipelineConfig:
    workdir: Path
    sample_rate_hz: int
    features: FeatureConfig
    model_values: dict  # ModelConfig fields except n_coeffs / inventory_size
    train: TrainConfig
    theta: float
    confidence: float
    min_support: int
    group_seed: int
    raw: dict[str, dict[str, str]]  # resolved INI view

    def model_config(self, inventory_size: int) -> ModelConfig:
        return ModelConfig(n_coeffs=self.features.n_coeffs,
                           inventory_size=inventory_size, **self.model_values)


def _parse_kernel(text: str) -> tuple[int, int]:
    parts = [p.strip() for p in text.split(",")]
    if len(parts) != 2:
        raise ValueError(f"kernel must be `h,w`, got {text!r}")
    return int(parts[0]), int(parts[1])


def load_config(path: str | Path | None = None,
                overrides: dict[tuple[str, str], str] | None = None) -> PipelineConfig:
    values = {section: dict(keys) for section, keys in DEFAULTS.items()}
    if env_workdir := os.environ.get(WORKDIR_ENV):
        values["paths"]["workdir"] = env_workdir

    if path is not None:
        parser = configparser.ConfigParser()
        read = parser.read(str(path))
        if not read:
            raise FileNotFoundError(f"config file not found: {path}")
        for section in parser.sections():
            if section == "inputs":  # resolved-snapshot bookkeeping, not tunables
                continue
            if section not in values:
                raise ValueError(f"{path}: unknown config section [{section}]")
            for key, value in parser.items(section):
                if key not in values[section]:
                    raise ValueError(f"{path}: unknown key {key!r} in [{section}]")
                values[section][key] = value

    for (section, key), value in (overrides or {}).items():
        if section not in values or key not in values[section]:
            raise ValueError(f"unknown config override {section}.{key}")
        values[section][key] = value

    feats = values["features"]
    features = FeatureConfig(
        window_ms=float(feats["window_ms"]),
        hop_ms=float(feats["hop_ms"]),
        n_mel_filters=int(feats["n_mel_filters"]),
        n_coeffs=int(feats["n_coeffs"]),
        pre_emphasis=float(feats["pre_emphasis"]),
    )
    model = values["model"]
    model_values = dict(
        n_conv_layers=int(model["n_conv_layers"]),
        conv_channels=int(model["conv_channels"]),
        kernel=_parse_kernel(model["kernel"]),
        gru_hidden=int(model["gru_hidden"]),
        n_dense=int(model["n_dense"]),
        dense_units=int(model["dense_units"]),
        dropout_rate=float(model["dropout_rate"]),
    )
    tr = values["train"]
    train = TrainConfig(
        learning_rate=float(tr["learning_rate"]),
        batch_size=int(tr["batch_size"]),
        max_epochs=int(tr["max_epochs"]),
        patience=int(tr["patience"]),
        seed=int(tr["seed"]),
    )
    disc = values["discovery"]
    return PipelineConfig(
        workdir=Path(values["paths"]["workdir"]),
        sample_rate_hz=int(feats["sample_rate_hz"]),
        features=features,
        model_values=model_values,
        train=train,
        theta=float(disc["theta"]),
        confidence=float(disc["confidence"]),
        min_support=int(disc["min_support"]),
        group_seed=int(disc["seed"]),
        raw=values,
    )


def resolved_ini(cfg: PipelineConfig, inputs: dict[str, str] | None = None) -> str:
    """Deterministic INI text of every effective value, plus the stage inputs."""
    lines: list[str] = []
    sections = dict(cfg.raw)
    if inputs:
        sections = {**sections, "inputs": {k: str(v) for k, v in inputs.items()}}
    for section in sorted(sections):
        lines.append(f"[{section}]")
        for key in sorted(sections[section]):
            lines.append(f"{key} = {sections[section][key]}")
        lines.append("")
    return "\n".join(lines)
