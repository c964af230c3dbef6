"""Single structured run configuration.

One JSON file with sections {data, confmap, filter, detector, semisup, expand,
segment, metrics} (+ synth for dataset generation); CLI flags override keys.
Unknown keys are rejected so typos fail loudly.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .boxgeom import ExpansionConfig, ExtractConfig
from .confmap import ConfMapConfig, FilterConfig
from .detector import TrainConfig
from .metrics import NsdConfig
from .segmenter import SegmenterConfig
from .semisup import AugConfig, SemiSupConfig
from .synthgen import SynthConfig
from .types import ConfigError, GridShape


@dataclass(frozen=True)
class DataConfig:
    manifest: str = "manifest.json"
    root: Optional[str] = None
    prompt_dir: Optional[str] = None


@dataclass(frozen=True)
class DetectorSection:
    """Detector architecture/training knobs exposed to the CLI."""

    # desk-scale schedule by default; configs/full_scale.json restores the
    # 10000-iteration schedule. features: "raw" feeds the stored
    # grid; "confidence" feeds the tau_high sigmoid map (1-channel grids only),
    # the same representation the extraction stage binarizes.
    k: int = 3
    anchor_scale: float = 3.0
    nms_iou: float = 0.7
    min_score: float = 0.05
    lr: float = 0.004
    iters: int = 2000
    pos_iou: float = 0.5
    reg_weight: float = 1.0
    use_student: bool = False
    features: str = "raw"

    def __post_init__(self):
        if self.features not in ("raw", "confidence"):
            raise ConfigError(f"detector.features must be raw|confidence, got {self.features!r}")

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(
            lr=self.lr,
            iters=self.iters,
            pos_iou=self.pos_iou,
            reg_weight=self.reg_weight,
            seed=seed,
        )


@dataclass(frozen=True)
class FilterSection:
    """Filtering plus pseudo-box extraction (one CLI stage)."""

    mode: str = "percentile"
    keep_fraction: float = 0.30
    tau_kl: Optional[float] = None
    binarize_threshold: float = 0.5
    upsample: str = "bilinear"

    def filter_config(self) -> FilterConfig:
        return FilterConfig(self.mode, self.keep_fraction, self.tau_kl)

    def extract_config(self) -> ExtractConfig:
        return ExtractConfig(self.binarize_threshold, self.upsample)


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    jobs: int = 1
    data: DataConfig = field(default_factory=DataConfig)
    confmap: ConfMapConfig = field(default_factory=ConfMapConfig)
    filter: FilterSection = field(default_factory=FilterSection)
    detector: DetectorSection = field(default_factory=DetectorSection)
    semisup: SemiSupConfig = field(default_factory=SemiSupConfig)
    expand: ExpansionConfig = field(default_factory=ExpansionConfig)
    segment: SegmenterConfig = field(default_factory=SegmenterConfig)
    metrics: NsdConfig = field(default_factory=NsdConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)


_SECTIONS = {
    "data": DataConfig,
    "confmap": ConfMapConfig,
    "filter": FilterSection,
    "detector": DetectorSection,
    "semisup": SemiSupConfig,
    "expand": ExpansionConfig,
    "segment": SegmenterConfig,
    "metrics": NsdConfig,
    "synth": SynthConfig,
}


def _build_section(cls, payload: dict, section: str):
    if not isinstance(payload, dict):
        raise ConfigError(f"config section {section!r} must be an object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(payload) - names
    if unknown:
        raise ConfigError(f"unknown keys in section {section!r}: {sorted(unknown)}")
    kwargs = dict(payload)
    if section == "semisup" and "aug" in kwargs:
        kwargs["aug"] = _build_section(AugConfig, kwargs["aug"], "semisup.aug")
    if section == "synth":
        if "grid" in kwargs:
            kwargs["grid"] = GridShape.from_dict(kwargs["grid"])
        for key in ("size_range", "noise_sigma_range"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
    return cls(**kwargs)


def load_config(path=None, overrides: Optional[dict] = None) -> RunConfig:
    """Config file (optional) + nested {section: {key: value}} overrides."""
    payload: dict = {}
    if path is not None:
        try:
            payload = json.loads(Path(path).read_text())
        except FileNotFoundError as exc:
            raise ConfigError(f"{path}: no such config file") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        if not isinstance(payload, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
    for section, values in (overrides or {}).items():
        if values is None:
            continue
        merged = dict(payload.get(section, {})) if section in _SECTIONS else payload.get(section)
        if section in _SECTIONS:
            merged.update({k: v for k, v in values.items() if v is not None})
            payload[section] = merged
        else:
            payload[section] = values

    unknown = set(payload) - set(_SECTIONS) - {"seed", "jobs"}
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    kwargs = {}
    for section, cls in _SECTIONS.items():
        if section in payload:
            kwargs[section] = _build_section(cls, payload[section], section)
    if "seed" in payload and payload["seed"] is not None:
        kwargs["seed"] = int(payload["seed"])
    if "jobs" in payload and payload["jobs"] is not None:
        kwargs["jobs"] = int(payload["jobs"])
    return RunConfig(**kwargs)


def config_to_dict(cfg: RunConfig) -> dict:
    def enc(obj):
        if isinstance(obj, GridShape):
            return obj.to_dict()
        if dataclasses.is_dataclass(obj):
            return {f.name: enc(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
        if isinstance(obj, tuple):
            return list(obj)
        return obj

    return enc(cfg)


def config_hash(cfg: RunConfig) -> str:
    canon = json.dumps(config_to_dict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()
