"""Shared domain types and the error hierarchy used across the toolkit."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np


class PPBoostError(Exception):
    """Base class for all toolkit errors."""


class ParseError(PPBoostError):
    """A file failed to parse or violated the on-disk format contract."""


class ValidationError(PPBoostError):
    """Structurally invalid inputs: manifests, shapes, degenerate geometry."""


class ConfigError(PPBoostError):
    """A configuration value is outside its legal range."""


class NumericDomainError(PPBoostError):
    """An operation left its numeric domain (zero norms, non-finite values)."""


class EmptyForeground(PPBoostError):
    """No pixel cleared the binarization threshold; no box can be extracted."""


class TrainingDiverged(PPBoostError):
    """Loss became non-finite during detector training."""


@dataclass(frozen=True)
class GridShape:
    """Patch-grid dimensions: rows x cols cells, each holding `channels` floats."""

    rows: int
    cols: int
    channels: int = 1

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1 or self.channels < 1:
            raise ValidationError(f"grid shape must be positive, got {self}")

    @property
    def cells(self) -> int:
        return self.rows * self.cols

    def to_dict(self) -> dict:
        return {"rows": self.rows, "cols": self.cols, "channels": self.channels}

    @classmethod
    def from_dict(cls, d: dict) -> "GridShape":
        for key in ("rows", "cols", "channels"):
            if key not in d:
                raise ValidationError(f"missing field {key}")
        return cls(int(d["rows"]), int(d["cols"]), int(d["channels"]))


@dataclass(frozen=True, eq=False)
class GridMap:
    """Dense float grid, row-major; 2-D (rows, cols) or 3-D (rows, cols, channels)."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim not in (2, 3):
            raise ValidationError(f"grid must be 2-D or 3-D, got ndim={v.ndim}")
        if not np.all(np.isfinite(v)):
            raise NumericDomainError("grid contains non-finite values")
        object.__setattr__(self, "values", v)

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def cols(self) -> int:
        return self.values.shape[1]

    @property
    def channels(self) -> int:
        return 1 if self.values.ndim == 2 else self.values.shape[2]

    @property
    def shape(self) -> GridShape:
        return GridShape(self.rows, self.cols, self.channels)

    def plane(self) -> np.ndarray:
        """The single-channel 2-D view; error when channels > 1."""
        if self.channels != 1:
            raise ValidationError(f"expected 1-channel grid, got {self.channels}")
        return self.values if self.values.ndim == 2 else self.values[:, :, 0]

    def is_distribution(self, tol: float = 1e-6) -> bool:
        v = self.values
        return bool(np.all(v >= 0.0) and abs(float(v.sum()) - 1.0) <= tol)


@dataclass(frozen=True)
class PromptEmbedding:
    """Text-side embedding paired to images by opaque prompt id."""

    prompt_id: str
    vector: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vector, dtype=np.float64)
        if v.ndim != 1:
            raise ValidationError("prompt embedding must be 1-D")
        if not np.all(np.isfinite(v)):
            raise NumericDomainError(f"prompt {self.prompt_id!r} embedding has non-finite values")
        object.__setattr__(self, "vector", v)


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box: (x, y) top-left corner, continuous pixel units, y down.

    Pixel (c, r) occupies the unit square [c, c+1) x [r, r+1).
    """

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise ValidationError(f"box sides must be positive, got w={self.w} h={self.h}")

    @property
    def x2(self) -> float:
        return self.x + self.w

    @property
    def y2(self) -> float:
        return self.y + self.h

    @property
    def cx(self) -> float:
        return self.x + 0.5 * self.w

    @property
    def cy(self) -> float:
        return self.y + 0.5 * self.h

    @property
    def area(self) -> float:
        return self.w * self.h

    def to_dict(self) -> dict:
        return {"x": self.x, "y": self.y, "w": self.w, "h": self.h}

    @classmethod
    def from_dict(cls, d: dict) -> "BBox":
        return cls(float(d["x"]), float(d["y"]), float(d["w"]), float(d["h"]))


@dataclass(frozen=True)
class Detection:
    """A box with its confidence score."""

    box: BBox
    score: float

    def __post_init__(self):
        if not (0.0 <= self.score <= 1.0):
            raise ValidationError(f"score must be in [0, 1], got {self.score}")


@dataclass(frozen=True, eq=False)
class Mask:
    """Binary H x W mask; bits are uint8 in {0, 1}."""

    bits: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.bits)
        if b.ndim != 2:
            raise ValidationError(f"mask must be 2-D, got ndim={b.ndim}")
        if b.dtype != np.uint8:
            b = b.astype(np.uint8)
        if b.size and int(b.max(initial=0)) > 1:
            raise ValidationError("mask bits must be 0/1")
        object.__setattr__(self, "bits", b)

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def foreground_count(self) -> int:
        return int(self.bits.sum())


SPLITS = ("train", "infer")


@dataclass(frozen=True)
class SampleRecord:
    """One image's manifest entry; paths are relative to the dataset root."""

    sample_id: str
    image_h: int
    image_w: int
    grid: GridShape
    logits_path: str
    prompt_id: str
    split: str
    gt_mask_path: Optional[str] = None
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.split not in SPLITS:
            raise ValidationError(f"sample {self.sample_id!r}: split must be one of {SPLITS}")
        if self.image_h < 1 or self.image_w < 1:
            raise ValidationError(f"sample {self.sample_id!r}: image dims must be positive")

    @property
    def gt_bbox(self) -> Optional[BBox]:
        d = self.extras.get("gt_bbox")
        return BBox.from_dict(d) if d else None

    @property
    def noise_sigma(self) -> Optional[float]:
        v = self.extras.get("noise_sigma")
        return float(v) if v is not None else None


def full_image_box(image_h: int, image_w: int) -> BBox:
    return BBox(0.0, 0.0, float(image_w), float(image_h))
