"""Manifest and JSONL serialization.

The manifest is a JSON array of sample records; box-like artifacts
(pseudo-boxes, detections, stability scores) are JSONL, one object per line.
All paths in a manifest are relative to a dataset root: an explicit argument,
else the PPBOOST_ROOT environment variable, else the manifest's directory.
"""
from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Iterable, Optional

from .types import BBox, Detection, GridShape, SampleRecord, ValidationError

_REQUIRED = ("sample_id", "image_h", "image_w", "grid", "logits_path", "prompt_id", "split")
_KNOWN = _REQUIRED + ("gt_mask_path",)


def resolve_root(manifest_path, root=None) -> Path:
    if root is not None:
        return Path(root)
    env = os.environ.get("PPBOOST_ROOT")
    if env:
        return Path(env)
    return Path(manifest_path).resolve().parent


def record_path(record: SampleRecord, root, which: str = "logits") -> Path:
    rel = record.logits_path if which == "logits" else record.gt_mask_path
    if rel is None:
        raise ValidationError(f"sample {record.sample_id!r} has no {which} path")
    return Path(root) / rel


def read_manifest(path, root=None, check_files: bool = True) -> list[SampleRecord]:
    """Read and validate a manifest; duplicate ids and dangling paths are errors."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError as exc:
        raise ValidationError(f"{path}: no such manifest") from exc
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(raw, list):
        raise ValidationError(f"{path}: manifest must be a JSON array")

    records = []
    seen: set[str] = set()
    duplicates: list[str] = []
    for i, entry in enumerate(raw):
        if not isinstance(entry, dict):
            raise ValidationError(f"{path}: entry {i} is not an object")
        for key in _REQUIRED:
            if key not in entry:
                raise ValidationError(
                    f"{path}: entry {entry.get('sample_id', i)!r}: missing field {key}"
                )
        sid = str(entry["sample_id"])
        if sid in seen:
            duplicates.append(sid)
        seen.add(sid)
        extras = {k: v for k, v in entry.items() if k not in _KNOWN}
        records.append(
            SampleRecord(
                sample_id=sid,
                image_h=int(entry["image_h"]),
                image_w=int(entry["image_w"]),
                grid=GridShape.from_dict(entry["grid"]),
                logits_path=str(entry["logits_path"]),
                prompt_id=str(entry["prompt_id"]),
                split=str(entry["split"]),
                gt_mask_path=entry.get("gt_mask_path"),
                extras=extras,
            )
        )
    if duplicates:
        raise ValidationError(f"{path}: duplicate sample_id(s): {sorted(set(duplicates))}")

    if check_files:
        base = resolve_root(path, root)
        dangling = []
        for rec in records:
            if not record_path(rec, base).is_file():
                dangling.append(rec.sample_id)
            elif rec.gt_mask_path and not record_path(rec, base, "gt_mask").is_file():
                dangling.append(rec.sample_id)
        if dangling:
            raise ValidationError(f"{path}: dangling file paths for sample_id(s): {dangling}")
    return records


def _record_to_dict(rec: SampleRecord) -> dict:
    d = {
        "sample_id": rec.sample_id,
        "image_h": rec.image_h,
        "image_w": rec.image_w,
        "grid": rec.grid.to_dict(),
        "logits_path": rec.logits_path,
        "prompt_id": rec.prompt_id,
        "split": rec.split,
    }
    if rec.gt_mask_path is not None:
        d["gt_mask_path"] = rec.gt_mask_path
    d.update(rec.extras)
    return d


def write_manifest(path, records: Iterable[SampleRecord]) -> None:
    payload = json.dumps([_record_to_dict(r) for r in records], indent=2, sort_keys=True)
    _atomic_write_text(path, payload + "\n")


def _atomic_write_text(path, text: str) -> None:
    path = os.fspath(path)
    tmp = path + ".tmp"
    with open(tmp, "w") as fp:
        fp.write(text)
    os.replace(tmp, path)


def dumps_jsonl_line(obj: dict) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def write_jsonl(path, objects: Iterable[dict]) -> None:
    _atomic_write_text(path, "".join(dumps_jsonl_line(o) + "\n" for o in objects))


def read_jsonl(path) -> list[dict]:
    out = []
    with open(path) as fp:
        for line in fp:
            line = line.strip()
            if line:
                out.append(json.loads(line))
    return out


def write_boxes_jsonl(path, rows: Iterable[tuple]) -> None:
    """Rows are (sample_id, BBox) or (sample_id, BBox, score) or dicts with extras."""
    objs = []
    for row in rows:
        if isinstance(row, dict):
            objs.append(row)
            continue
        sid, box = row[0], row[1]
        obj = {"sample_id": sid, **box.to_dict()}
        if len(row) > 2 and row[2] is not None:
            obj["score"] = float(row[2])
        objs.append(obj)
    write_jsonl(path, objs)


def read_boxes_jsonl(path) -> list[tuple[str, BBox, Optional[float]]]:
    rows = []
    for obj in read_jsonl(path):
        box = BBox.from_dict(obj)
        score = obj.get("score")
        rows.append((str(obj["sample_id"]), box, None if score is None else float(score)))
    return rows


def read_detections_jsonl(path) -> list[tuple[str, Detection]]:
    out = []
    for sid, box, score in read_boxes_jsonl(path):
        if score is None:
            raise ValidationError(f"{path}: detection line for {sid!r} lacks a score")
        out.append((sid, Detection(box, score)))
    return out
