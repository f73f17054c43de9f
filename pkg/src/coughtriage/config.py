"""Flat key=value pipeline configuration with typed keys and CLI overrides."""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path


class ConfigError(Exception):
    pass


@dataclass
class PipelineConfig:
    # paths
    manifest: str = ""
    tabular: str = ""
    audio_dir: str = ""  # defaults to the manifest's directory
    cache_dir: str = "cache"
    model_out: str = "model.json"
    report_dir: str = "reports"
    # ingestion
    gate: float = 0.85
    sample_rate: int = 44100
    # features
    n_fft: int = 2048
    hop: int = 512
    n_mels: int = 128
    n_mfcc: int = 20
    contrast_bands: int = 8
    contrast_quantile: float = 0.02
    contrast_base_hz: float = 80.0
    # augmentation
    augment: bool = True
    aug_fraction: float = 0.5
    aug_split: float = 0.5
    aug_ratio_low: float = 0.0
    aug_ratio_high: float = 0.9
    ir_pool_size: int = 5
    # models
    model: str = "extratrees"  # extratrees | hgb | cnn | ensemble
    et_trees: int = 300
    et_min_leaf: int = 2
    et_max_depth: int = 0  # 0 = unlimited
    et_k_features: int = 0  # 0 = ceil(sqrt(d))
    hgb_iters: int = 200
    hgb_lr: float = 0.1
    hgb_depth: int = 6
    hgb_leaf: int = 31
    hgb_l2: float = 1.0
    cnn_channels: str = "16,32,64,128,256,256"
    cnn_kernel: int = 5
    cnn_freq_pool: int = 1  # average this many adjacent mel rows at the input
    cnn_input_width: int = 64  # time frames after padding/trimming
    cnn_epochs: int = 150
    cnn_lr: float = 6e-5
    cnn_batch: int = 16
    cnn_dropout: float = 0.25
    cnn_weight_decay: float = 0.01
    # evaluation
    k: int = 5
    holdout: float = 0.2
    threshold: float = 0.5
    # execution
    seed: int = -1  # mandatory: no wall-clock default
    jobs: int = 1

    def require_seed(self) -> int:
        if self.seed < 0:
            raise ConfigError("seed is mandatory (set seed= in config or --seed)")
        return self.seed

    def cnn_channel_tuple(self) -> tuple[int, ...]:
        try:
            return tuple(int(c) for c in self.cnn_channels.split(","))
        except ValueError as exc:
            raise ConfigError(f"bad cnn_channels {self.cnn_channels!r}") from exc


_FIELD_TYPES = {f.name: f.type for f in fields(PipelineConfig)}


def _parse_value(key: str, raw: str):
    kind = _FIELD_TYPES[key]
    raw = raw.strip()
    if kind == "bool":
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    return raw


def load_config(path: str | Path | None = None,
                overrides: dict | None = None) -> PipelineConfig:
    """Build a config from an optional file plus explicit overrides
    (overrides win; unknown keys are errors, never silently ignored)."""
    cfg = PipelineConfig()
    if path is not None:
        for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key = value")
            key, _, raw = line.partition("=")
            key = key.strip()
            if key not in _FIELD_TYPES:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            setattr(cfg, key, _parse_value(key, raw))
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in _FIELD_TYPES:
            raise ConfigError(f"unknown config key {key!r}")
        setattr(cfg, key, value)
    return cfg
