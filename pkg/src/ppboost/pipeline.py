"""Stage orchestration shared by the CLI subcommands and the end-to-end
`pipeline` command (with its ablation toggles)."""
from __future__ import annotations

import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Optional

import numpy as np

from . import boxgeom, confmap, npyio, segmenter
from .config import RunConfig
from .detector import AnchorGrid, infer_top1, load_checkpoint, save_checkpoint
from .manifest import (
    read_manifest,
    record_path,
    resolve_root,
    write_boxes_jsonl,
    write_jsonl,
)
from .metrics import (
    NsdConfig,
    build_eval_report,
    detection_metrics,
    dice,
    nsd,
)
from .rng import rng_from
from .semisup import TrainSample, split_dataset, train_semisup
from .types import (
    BBox,
    Detection,
    EmptyForeground,
    Mask,
    SampleRecord,
    ValidationError,
    full_image_box,
)


def load_features(record: SampleRecord, root, cfg: Optional[RunConfig] = None) -> np.ndarray:
    """Detector-side features as float64 (rows, cols, C).

    In "confidence" mode the 1-channel logit grid is passed through the
    high-temperature sigmoid, so the detector sees the same bounded
    representation the extraction stage binarizes (and stays insensitive to
    per-sample logit amplitude)."""
    if cfg is not None and cfg.detector.features == "confidence":
        logits = confmap.load_sample_logits(record, root, cfg.data.prompt_dir)
        _, high = confmap.sigmoid_maps(logits, cfg.confmap)
        return np.ascontiguousarray(high.values[:, :, None])
    v = npyio.read_grid(record_path(record, root)).values.astype(np.float64)
    if v.ndim == 2:
        v = v[:, :, None]
    return np.ascontiguousarray(v)


def confidence_map(record: SampleRecord, root, cfg: RunConfig):
    """Upsampled high-temperature sigmoid map used for pseudo-box extraction."""
    logits = confmap.load_sample_logits(record, root, cfg.data.prompt_dir)
    _, high = confmap.sigmoid_maps(logits, cfg.confmap)
    return boxgeom.upsample_map(high, record.image_h, record.image_w, cfg.filter.upsample)


def extract_boxes(
    records: list[SampleRecord], root, cfg: RunConfig, jobs: int = 1
) -> tuple[dict[str, BBox], int]:
    """Pseudo-boxes per sample id; EmptyForeground samples are skipped and counted."""
    ecfg = cfg.filter.extract_config()

    def one(rec: SampleRecord):
        try:
            return rec.sample_id, boxgeom.extract_pseudo_bbox(confidence_map(rec, root, cfg), ecfg)
        except EmptyForeground:
            return rec.sample_id, None

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(one, records))
    else:
        results = [one(rec) for rec in records]
    boxes = {sid: box for sid, box in results if box is not None}
    return boxes, len(results) - len(boxes)


def train_stage(
    train_records: list[SampleRecord],
    pseudo_boxes: dict[str, BBox],
    kept_ids: set[str],
    root,
    cfg: RunConfig,
    out_dir: Path,
) -> tuple[Path, Path]:
    """Split, run teacher-student training, write checkpoints and the log."""
    kept_pairs = [
        (rec, pseudo_boxes[rec.sample_id])
        for rec in train_records
        if rec.sample_id in kept_ids and rec.sample_id in pseudo_boxes
    ]
    labeled_pairs, unlabeled_recs = split_dataset(
        kept_pairs, train_records, cfg.semisup.labeled_fraction, cfg.semisup.seed
    )
    labeled = [
        TrainSample(rec.sample_id, load_features(rec, root, cfg), box) for rec, box in labeled_pairs
    ]
    unlabeled = [
        TrainSample(rec.sample_id, load_features(rec, root, cfg)) for rec in unlabeled_recs
    ]
    image_h, image_w = train_records[0].image_h, train_records[0].image_w
    student, teacher, log = train_semisup(
        labeled,
        unlabeled,
        cfg.semisup,
        cfg.detector.train_config(cfg.semisup.seed),
        image_h,
        image_w,
        k=cfg.detector.k,
        anchor_scale=cfg.detector.anchor_scale,
    )
    meta = {"iters": cfg.detector.iters, "seed": cfg.semisup.seed}
    student_path = out_dir / "student.json"
    teacher_path = out_dir / "teacher.json"
    save_checkpoint(student_path, student, cfg.detector.anchor_scale, meta)
    save_checkpoint(teacher_path, teacher, cfg.detector.anchor_scale, meta)
    write_jsonl(out_dir / "train_log.jsonl", log)
    return student_path, teacher_path


def detect_stage(
    records: list[SampleRecord], root, checkpoint_path, cfg: RunConfig
) -> dict[str, Optional[Detection]]:
    """Top-1 detection per sample (None when nothing clears min_score)."""
    params, anchor_scale, _ = load_checkpoint(checkpoint_path)
    out: dict[str, Optional[Detection]] = {}
    anchors_cache: dict[tuple, AnchorGrid] = {}
    for rec in records:
        key = (rec.grid.rows, rec.grid.cols, rec.image_h, rec.image_w)
        if key not in anchors_cache:
            anchors_cache[key] = AnchorGrid(rec.grid, rec.image_h, rec.image_w, anchor_scale)
        det = infer_top1(
            load_features(rec, root, cfg),
            params,
            anchors_cache[key],
            nms_iou=cfg.detector.nms_iou,
            min_score=cfg.detector.min_score,
        )
        # a box entirely outside the image is not a usable detection
        if det is not None and boxgeom.clamp_box_or_none(det.box, rec.image_h, rec.image_w) is None:
            det = None
        out[rec.sample_id] = det
    return out


def segment_stage(
    records: list[SampleRecord],
    prompts: dict[str, BBox],
    root,
    cfg: RunConfig,
    masks_dir: Path,
    exchange_dir=None,
) -> dict[str, Mask]:
    """Run the configured segmenter over prompt boxes and persist the masks."""
    npyio.ensure_dir(masks_dir)
    masks: dict[str, Mask] = {}
    if cfg.segment.backend == "mock":
        for rec in records:
            if rec.gt_mask_path is None:
                raise ValidationError(
                    f"mock segmenter needs gt_mask_path (sample {rec.sample_id!r})"
                )
            gt = npyio.read_mask(record_path(rec, root, "gt_mask"))
            rng = rng_from(cfg.seed, 1, _stable_id(rec.sample_id))
            prob = segmenter.mock_segment(gt, prompts[rec.sample_id], cfg.segment, rng)
            masks[rec.sample_id] = segmenter.binarize_probability(prob, cfg.segment.tau_seg)
    else:
        if exchange_dir is None:
            raise ValidationError("external segmenter needs an exchange directory")
        batch = [(rec, prompts[rec.sample_id]) for rec in records]
        masks, errors = segmenter.external_segment(batch, exchange_dir, cfg.segment)
        if errors:
            write_jsonl(Path(exchange_dir) / "errors.jsonl", errors)
            for err in errors:
                print(f"segment error: {err['sample_id']}: {err['error']}", file=sys.stderr)
    for sid, mask in masks.items():
        npyio.write_mask(masks_dir / f"{sid}_mask.npy", mask)
    return masks


def _stable_id(sample_id: str) -> int:
    import hashlib

    return int.from_bytes(hashlib.sha256(sample_id.encode()).digest()[:6], "big")


def eval_stage(
    records: list[SampleRecord],
    masks: dict[str, Mask],
    root,
    cfg: RunConfig,
    detections: Optional[dict[str, Optional[Detection]]] = None,
    config_snapshot: Optional[dict] = None,
) -> dict:
    """Per-sample Dice/NSD plus detection APs when detections are given."""
    missing = [rec.sample_id for rec in records if rec.sample_id not in masks]
    if missing:
        raise ValidationError(f"missing predicted masks for sample_id(s): {sorted(missing)}")
    rows = []
    ncfg = NsdConfig(cfg.metrics.tolerance_px)
    for rec in records:
        if rec.gt_mask_path is None:
            raise ValidationError(f"eval needs gt_mask_path (sample {rec.sample_id!r})")
        gt = npyio.read_mask(record_path(rec, root, "gt_mask"))
        pred = masks[rec.sample_id]
        rows.append(
            {
                "sample_id": rec.sample_id,
                "dice": dice(pred, gt),
                "nsd": nsd(pred, gt, ncfg),
            }
        )
    det_block = None
    if detections is not None:
        dets = [
            (sid, d) for sid, d in sorted(detections.items()) if d is not None
        ]
        gts = []
        for rec in records:
            box = rec.gt_bbox
            if box is None:
                gt = npyio.read_mask(record_path(rec, root, "gt_mask"))
                from .synthgen import tight_bbox

                box = tight_bbox(gt.bits > 0)
            gts.append((rec.sample_id, box))
        det_block = detection_metrics(dets, gts)
    return build_eval_report(rows, det_block, config_snapshot or {})


def run_pipeline(
    cfg: RunConfig,
    out_dir,
    no_filter: bool = False,
    no_detector: bool = False,
    no_expand: bool = False,
    config_snapshot: Optional[dict] = None,
) -> dict:
    """End-to-end: filter -> extract -> train -> detect -> expand -> segment -> eval.

    Ablations: --no-filter keeps every extractable training sample; --no-detector
    prompts the segmenter directly with extracted pseudo-boxes (no expansion);
    --no-expand passes raw detector boxes through. Samples with no usable box
    fall back to a full-image prompt so every eval sample is segmented.
    """
    out = npyio.ensure_dir(out_dir)
    manifest_path = Path(cfg.data.manifest)
    root = resolve_root(manifest_path, cfg.data.root)
    records = read_manifest(manifest_path, root)
    train_records = [r for r in records if r.split == "train"]
    infer_records = [r for r in records if r.split == "infer"]
    if not infer_records:
        raise ValidationError("pipeline needs at least one infer-split sample")

    snapshot = dict(config_snapshot or {})
    snapshot["ablation"] = {
        "no_filter": no_filter,
        "no_detector": no_detector,
        "no_expand": no_expand,
    }

    detections: Optional[dict[str, Optional[Detection]]] = None
    if no_detector:
        boxes, n_empty = extract_boxes(infer_records, root, cfg, cfg.jobs)
        if n_empty:
            print(f"warning: {n_empty} infer sample(s) had empty foreground", file=sys.stderr)
        prompts = {
            rec.sample_id: boxes.get(rec.sample_id, full_image_box(rec.image_h, rec.image_w))
            for rec in infer_records
        }
    else:
        if not train_records:
            raise ValidationError("pipeline needs train-split samples to fit the detector")
        scores = confmap.score_and_filter(
            train_records,
            cfg.confmap,
            cfg.filter.filter_config(),
            root=root,
            prompt_dir=cfg.data.prompt_dir,
            jobs=cfg.jobs,
        )
        write_jsonl(out / "scores.jsonl", [s.to_dict() for s in scores])
        kept_ids = (
            {s.sample_id for s in scores} if no_filter else {s.sample_id for s in scores if s.kept}
        )
        pool = [r for r in train_records if r.sample_id in kept_ids]
        boxes, n_empty = extract_boxes(pool, root, cfg, cfg.jobs)
        if n_empty:
            print(f"warning: {n_empty} train sample(s) had empty foreground", file=sys.stderr)
        write_boxes_jsonl(
            out / "pseudo_boxes.jsonl",
            [(sid, box) for sid, box in sorted(boxes.items())],
        )
        student_path, teacher_path = train_stage(
            train_records, boxes, kept_ids, root, cfg, out
        )
        ckpt = student_path if cfg.detector.use_student else teacher_path
        detections = detect_stage(infer_records, root, ckpt, cfg)
        write_boxes_jsonl(
            out / "detections.jsonl",
            [
                (sid, d.box, d.score)
                for sid, d in sorted(detections.items())
                if d is not None
            ],
        )
        prompts = {}
        if no_expand:
            for rec in infer_records:
                d = detections[rec.sample_id]
                prompts[rec.sample_id] = (
                    boxgeom.clamp_box(d.box, rec.image_h, rec.image_w)
                    if d is not None
                    else full_image_box(rec.image_h, rec.image_w)
                )
        else:
            # two-pass: all scores first so phi is the inference-set median
            have = [rec for rec in infer_records if detections[rec.sample_id] is not None]
            dets = [detections[rec.sample_id] for rec in have]
            phi = (
                boxgeom.resolve_phi([d.score for d in dets], cfg.expand)
                if cfg.expand.phi_mode == "median" and dets
                else (cfg.expand.phi if cfg.expand.phi_mode == "fixed" else 0.0)
            )
            for rec in infer_records:
                d = detections[rec.sample_id]
                if d is None:
                    prompts[rec.sample_id] = full_image_box(rec.image_h, rec.image_w)
                else:
                    prompts[rec.sample_id] = boxgeom.selective_expand(
                        [d], cfg.expand, rec.image_h, rec.image_w, phi=phi
                    )[0]
            write_boxes_jsonl(
                out / "expanded_boxes.jsonl",
                [
                    {
                        "sample_id": rec.sample_id,
                        **prompts[rec.sample_id].to_dict(),
                        **(
                            {"oob": True}
                            if boxgeom.is_out_of_bounds(
                                prompts[rec.sample_id], rec.image_h, rec.image_w
                            )
                            else {}
                        ),
                    }
                    for rec in infer_records
                ],
            )

    exchange = out / "exchange" if cfg.segment.backend == "external" else None
    masks = segment_stage(infer_records, prompts, root, cfg, out / "masks", exchange_dir=exchange)
    report = eval_stage(
        infer_records, masks, root, cfg, detections=detections, config_snapshot=snapshot
    )
    return report
