"""External-segmenter runner: serves the toolkit's exchange-directory protocol.

Reads requests.jsonl, answers each request with <sample_id>_prob.npy (float32
probabilities in [0, 1]) plus a <sample_id>.done marker, logs per-request
failures to errors.jsonl, and touches done.marker when the batch is finished.
Restarting resumes: requests whose .done marker already exists are skipped.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .formats import append_jsonl, write_npy_f32
from .stub_models import load_segmenter


def run_external_segmenter(exchange_dir, checkpoint: str | None = None) -> dict:
    """Process every pending request once; returns counters for logging."""
    exchange = Path(exchange_dir)
    requests_path = exchange / "requests.jsonl"
    if not requests_path.is_file():
        raise FileNotFoundError(f"{requests_path}: no requests to serve")
    model = load_segmenter(checkpoint)

    served = skipped = failed = 0
    with open(requests_path) as fp:
        for line_no, line in enumerate(fp, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                req = json.loads(line)
                sid = str(req["sample_id"])
            except (json.JSONDecodeError, KeyError) as exc:
                append_jsonl(
                    exchange / "errors.jsonl",
                    {"line": line_no, "error": f"malformed request: {exc}"},
                )
                failed += 1
                continue
            if (exchange / f"{sid}.done").exists():
                skipped += 1
                continue
            try:
                h, w = int(req["image_h"]), int(req["image_w"])
                box = {k: float(req[k]) for k in ("x", "y", "w", "h")}
                prob = model.predict_probability(req.get("image_ref", ""), box, h, w)
                prob = np.clip(np.asarray(prob, dtype=np.float32), 0.0, 1.0)
                if prob.shape != (h, w):
                    raise ValueError(f"model produced {prob.shape}, expected {(h, w)}")
                write_npy_f32(exchange / f"{sid}_prob.npy", prob)
                (exchange / f"{sid}.done").touch()
                served += 1
            except Exception as exc:  # noqa: BLE001  (per-request isolation)
                append_jsonl(exchange / "errors.jsonl", {"sample_id": sid, "error": str(exc)})
                failed += 1
    (exchange / "done.marker").touch()
    return {"served": served, "skipped": skipped, "failed": failed}
