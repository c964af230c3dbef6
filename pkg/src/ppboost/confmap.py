"""Confidence maps and the uncertainty filter.

Per-patch cosine logits against a prompt embedding, temperature-scaled maps
(spatial softmax for diagnostics, low/high-temperature sigmoids for
filtering), KL stability scores, and percentile/absolute dataset filtering.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import npyio
from .manifest import record_path
from .types import (
    ConfigError,
    GridMap,
    NumericDomainError,
    PromptEmbedding,
    SampleRecord,
    ValidationError,
)


@dataclass(frozen=True)
class ConfMapConfig:
    """Temperatures for the softmax/sigmoid maps; epsilon floors distributions."""

    tau_softmax: float = 1.0
    tau_low: float = 0.1
    tau_high: float = 1.0
    epsilon: float = 1e-12

    def __post_init__(self):
        for name in ("tau_softmax", "tau_low", "tau_high", "epsilon"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be > 0")
        if not self.tau_low < self.tau_high:
            raise ConfigError("tau_low must be < tau_high")


@dataclass(frozen=True)
class FilterConfig:
    """Keep the most stable samples: bottom fraction by KL, or an absolute cap."""

    mode: str = "percentile"
    keep_fraction: float = 0.30
    tau_kl: Optional[float] = None

    def __post_init__(self):
        if self.mode not in ("percentile", "absolute"):
            raise ConfigError(f"filter mode must be percentile|absolute, got {self.mode!r}")
        if self.mode == "percentile":
            if not 0.0 < self.keep_fraction <= 1.0:
                raise ConfigError("keep_fraction must be in (0, 1]")
        else:
            if self.tau_kl is None or self.tau_kl < 0:
                raise ConfigError("absolute mode needs tau_kl >= 0")


@dataclass(frozen=True)
class StabilityScore:
    sample_id: str
    kl: float
    kept: bool

    def to_dict(self) -> dict:
        return {"sample_id": self.sample_id, "kl": self.kl, "kept": self.kept}


def cosine_logits(features: GridMap, prompt: PromptEmbedding) -> GridMap:
    """Cosine similarity between every patch vector and the prompt embedding."""
    if features.values.ndim != 3:
        raise ValidationError("features grid must be 3-D (rows, cols, channels)")
    f = features.values.astype(np.float64)
    t = prompt.vector
    if f.shape[2] != t.shape[0]:
        raise ValidationError(
            f"feature channels {f.shape[2]} != prompt dimension {t.shape[0]}"
        )
    t_norm = float(np.linalg.norm(t))
    if t_norm == 0.0:
        raise NumericDomainError(f"prompt {prompt.prompt_id!r} has zero norm")
    norms = np.linalg.norm(f, axis=2)
    if np.any(norms == 0.0):
        r, c = np.argwhere(norms == 0.0)[0]
        raise NumericDomainError(f"zero-norm patch vector at (row={r}, col={c})")
    sims = (f @ t) / (norms * t_norm)
    return GridMap(np.clip(sims, -1.0, 1.0))


def softmax_map(logits: GridMap, tau: float) -> GridMap:
    """Spatial softmax over all patches with temperature tau (max-subtracted)."""
    if tau <= 0:
        raise ConfigError("softmax temperature must be > 0")
    s = logits.plane().astype(np.float64) / tau
    s = s - s.max()
    e = np.exp(s)
    return GridMap(e / e.sum())


def sigmoid_maps(logits: GridMap, cfg: ConfMapConfig) -> tuple[GridMap, GridMap]:
    """Elementwise sigmoid confidence maps at the low and high temperatures."""
    s = logits.plane().astype(np.float64)
    low = _sigmoid(s / cfg.tau_low)
    high = _sigmoid(s / cfg.tau_high)
    return GridMap(low), GridMap(high)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def normalize_distribution(grid: GridMap, epsilon: float) -> GridMap:
    """Floor at epsilon, then divide by the sum; output sums to 1, no zeros."""
    v = np.maximum(grid.plane().astype(np.float64), epsilon)
    return GridMap(v / v.sum())


def kl_divergence(p: GridMap, q: GridMap) -> float:
    """Sum of p * log(p/q) over cells, with 0*log 0 taken as 0."""
    pv = p.plane().astype(np.float64)
    qv = q.plane().astype(np.float64)
    if pv.shape != qv.shape:
        raise ValidationError(f"distribution shapes differ: {pv.shape} vs {qv.shape}")
    nz = pv > 0.0
    return float(np.sum(pv[nz] * (np.log(pv[nz]) - np.log(qv[nz]))))


def stability_kl(logits: GridMap, cfg: ConfMapConfig) -> float:
    """KL between the normalized low- and high-temperature sigmoid maps."""
    low, high = sigmoid_maps(logits, cfg)
    p = normalize_distribution(low, cfg.epsilon)
    q = normalize_distribution(high, cfg.epsilon)
    return kl_divergence(p, q)


def load_sample_logits(
    record: SampleRecord, root, prompt_dir: Optional[str] = None
) -> GridMap:
    """A sample's 1-channel logit grid, via cosine similarity when the
    stored grid is a multi-channel feature map."""
    grid = npyio.read_grid(record_path(record, root))
    if grid.channels == 1:
        return GridMap(grid.plane().astype(np.float64))
    if prompt_dir is None:
        raise ValidationError(
            f"sample {record.sample_id!r} stores {grid.channels}-channel features "
            "but no prompt embedding directory was given"
        )
    emb_path = Path(prompt_dir) / f"{record.prompt_id}.npy"
    prompt = npyio.read_embedding(emb_path, record.prompt_id)
    return cosine_logits(grid, prompt)


def score_and_filter(
    samples: list[SampleRecord],
    cfg: ConfMapConfig,
    fcfg: FilterConfig,
    root=None,
    prompt_dir: Optional[str] = None,
    jobs: int = 1,
) -> list[StabilityScore]:
    """Score every sample's temperature stability and mark the kept subset.

    Percentile mode keeps the ceil(keep_fraction * N) lowest-KL samples with
    ties broken by ascending sample_id; absolute mode keeps kl <= tau_kl.
    Results come back in input (manifest) order.
    """
    if not samples:
        raise ValidationError("score_and_filter: empty dataset")
    base = Path(root) if root is not None else Path(os.environ.get("PPBOOST_ROOT", "."))

    def one(rec: SampleRecord) -> float:
        return stability_kl(load_sample_logits(rec, base, prompt_dir), cfg)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            kls = list(pool.map(one, samples))
    else:
        kls = [one(rec) for rec in samples]

    if fcfg.mode == "percentile":
        m = math.ceil(fcfg.keep_fraction * len(samples))
        order = sorted(range(len(samples)), key=lambda i: (kls[i], samples[i].sample_id))
        kept_idx = set(order[:m])
        kept = [i in kept_idx for i in range(len(samples))]
    else:
        kept = [kl <= fcfg.tau_kl for kl in kls]
    return [
        StabilityScore(rec.sample_id, float(kl), bool(k))
        for rec, kl, k in zip(samples, kls, kept)
    ]
