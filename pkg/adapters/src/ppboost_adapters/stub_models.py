"""Deterministic stand-ins for heavyweight checkpoints.

Real text-promptable encoders and box-prompted segmenters are plugged in by
implementing the same two call surfaces; the stubs keep the export and
exchange code paths fully exercisable offline.
"""
from __future__ import annotations

import hashlib

import numpy as np


def _seeded_rng(*parts: str) -> np.random.Generator:
    digest = hashlib.sha256("\x1f".join(parts).encode()).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "big"))


class StubEncoder:
    """Deterministic image/text encoder pair.

    Per-patch features: a constant channel (keeps norms nonzero), patch mean
    intensity, patch std, and seeded random projections of the two stats. The
    text embedding points along the intensity channel plus prompt-specific
    seeded jitter, so bright regions score high cosine similarity.
    """

    def __init__(self, model_id: str, rows: int = 16, cols: int = 16, dim: int = 8):
        if dim < 3:
            raise ValueError("stub encoder needs dim >= 3")
        self.model_id = model_id
        self.rows = rows
        self.cols = cols
        self.dim = dim
        rng = _seeded_rng("proj", model_id)
        self._proj = rng.normal(0.0, 0.5, size=(2, dim - 3))

    def encode_image(self, image: np.ndarray) -> np.ndarray:
        img = np.asarray(image, dtype=np.float64)
        if img.ndim != 2:
            raise ValueError(f"stub encoder expects 2-D grayscale images, got {img.shape}")
        h, w = img.shape
        rs = np.minimum((np.arange(h) * self.rows) // max(h, 1), self.rows - 1)
        cs = np.minimum((np.arange(w) * self.cols) // max(w, 1), self.cols - 1)
        flat = rs[:, None] * self.cols + cs[None, :]
        counts = np.bincount(flat.ravel(), minlength=self.rows * self.cols)
        sums = np.bincount(flat.ravel(), weights=img.ravel(), minlength=self.rows * self.cols)
        sq = np.bincount(flat.ravel(), weights=(img**2).ravel(), minlength=self.rows * self.cols)
        mean = sums / counts
        std = np.sqrt(np.maximum(sq / counts - mean**2, 0.0))
        feats = np.empty((self.rows * self.cols, self.dim))
        feats[:, 0] = 1.0
        feats[:, 1] = mean
        feats[:, 2] = std
        feats[:, 3:] = np.stack([mean, std], axis=1) @ self._proj
        return feats.reshape(self.rows, self.cols, self.dim).astype(np.float32)

    def encode_text(self, prompt: str) -> np.ndarray:
        rng = _seeded_rng("text", self.model_id, prompt)
        vec = np.zeros(self.dim)
        vec[1] = 1.0
        vec += 0.05 * rng.normal(0.0, 1.0, self.dim)
        return (vec / np.linalg.norm(vec)).astype(np.float32)


class IdentitySegmenter:
    """Probability 1 for pixels whose centers fall inside the prompt box."""

    def predict_probability(self, image_ref: str, box: dict, h: int, w: int) -> np.ndarray:
        prob = np.zeros((h, w), dtype=np.float32)
        ys = (np.arange(h) + 0.5 >= box["y"]) & (np.arange(h) + 0.5 < box["y"] + box["h"])
        xs = (np.arange(w) + 0.5 >= box["x"]) & (np.arange(w) + 0.5 < box["x"] + box["w"])
        prob[np.ix_(ys, xs)] = 1.0
        return prob


class LogitBlobSegmenter:
    """Toy checkpoint-like model emitting mask logits; the runner applies the
    sigmoid itself, matching the exchange contract of probabilities in [0,1]."""

    def __init__(self, sharpness: float = 6.0):
        self.sharpness = sharpness

    def predict_probability(self, image_ref: str, box: dict, h: int, w: int) -> np.ndarray:
        yy, xx = np.meshgrid(np.arange(h) + 0.5, np.arange(w) + 0.5, indexing="ij")
        cx = box["x"] + 0.5 * box["w"]
        cy = box["y"] + 0.5 * box["h"]
        rho = np.sqrt(((xx - cx) / (0.5 * box["w"])) ** 2 + ((yy - cy) / (0.5 * box["h"])) ** 2)
        logits = self.sharpness * (1.0 - rho)
        return (1.0 / (1.0 + np.exp(-logits))).astype(np.float32)


def load_segmenter(checkpoint: str | None):
    """Resolve a 'checkpoint' name to a model; stubs only in this build."""
    name = (checkpoint or "identity").lower()
    if name in ("identity", "box"):
        return IdentitySegmenter()
    if name in ("blob", "logit-blob"):
        return LogitBlobSegmenter()
    raise ValueError(f"unknown segmenter checkpoint {checkpoint!r}; stubs: identity, blob")
