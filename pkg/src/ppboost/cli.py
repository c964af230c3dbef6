"""Subcommand CLI for the whole pipeline.

Every subcommand reads one JSON config (flags override config keys), validates
inputs before writing, writes outputs atomically, and drops a run_manifest.json
(config hash, seeds, version, input digests) next to its primary output.
Exit codes: 0 ok, 1 validation/config error, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__, boxgeom, confmap, npyio, pipeline, segmenter, synthgen
from .config import RunConfig, config_hash, config_to_dict, load_config
from .manifest import (
    read_boxes_jsonl,
    read_detections_jsonl,
    read_manifest,
    record_path,
    resolve_root,
    write_boxes_jsonl,
    write_jsonl,
)
from .metrics import write_eval_report, write_metric_svg, write_per_sample_csv
from .rng import rng_from
from .types import ConfigError, Detection, ParseError, PPBoostError, ValidationError


def _write_run_manifest(out_dir, cfg: RunConfig, inputs: dict) -> None:
    out_dir = npyio.ensure_dir(out_dir)
    digests = {}
    for name, path in inputs.items():
        p = Path(path)
        digests[name] = npyio.sha256_file(p) if p.is_file() else None
    payload = {
        "version": __version__,
        "config": config_to_dict(cfg),
        "config_hash": config_hash(cfg),
        "seed": cfg.seed,
        "input_digests": digests,
    }
    tmp = out_dir / "run_manifest.json.tmp"
    tmp.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    tmp.replace(out_dir / "run_manifest.json")


def _overrides_from_args(args) -> dict:
    ov: dict = {"data": {}, "filter": {}, "semisup": {}, "expand": {}, "segment": {}, "detector": {}, "synth": {}}
    if getattr(args, "root", None):
        ov["data"]["root"] = args.root
    if getattr(args, "manifest", None):
        ov["data"]["manifest"] = args.manifest
    if getattr(args, "keep", None) is not None:
        ov["filter"]["keep_fraction"] = args.keep
    if getattr(args, "labeled_fraction", None) is not None:
        ov["semisup"]["labeled_fraction"] = args.labeled_fraction
    if getattr(args, "burn_in", None) is not None:
        ov["semisup"]["burn_in_iters"] = args.burn_in
    if getattr(args, "lambda_", None) is not None:
        ov["semisup"]["unsup_weight"] = args.lambda_
    if getattr(args, "ema", None) is not None:
        ov["semisup"]["ema_decay"] = args.ema
    if getattr(args, "iters", None) is not None:
        ov["detector"]["iters"] = args.iters
    if getattr(args, "ratio", None) is not None:
        ov["expand"]["ratio"] = args.ratio
    if getattr(args, "phi", None) is not None:
        if args.phi == "median":
            ov["expand"]["phi_mode"] = "median"
        elif args.phi.startswith("fixed:"):
            ov["expand"]["phi_mode"] = "fixed"
            ov["expand"]["phi"] = float(args.phi.split(":", 1)[1])
        else:
            raise ConfigError(f"--phi must be median or fixed:<value>, got {args.phi!r}")
    if getattr(args, "backend", None):
        ov["segment"]["backend"] = args.backend
    if getattr(args, "seed", None) is not None:
        ov["seed"] = args.seed
        ov["semisup"]["seed"] = args.seed
        ov["synth"]["seed"] = args.seed
    if getattr(args, "jobs", None) is not None:
        ov["jobs"] = args.jobs
    return ov


def _load(args) -> RunConfig:
    return load_config(getattr(args, "config", None), _overrides_from_args(args))


def _records(cfg: RunConfig):
    manifest = Path(cfg.data.manifest)
    root = resolve_root(manifest, cfg.data.root)
    return read_manifest(manifest, root), root, manifest


def cmd_gen_synthetic(args) -> int:
    cfg = _load(args)
    manifest = synthgen.generate(cfg.synth, args.out)
    _write_run_manifest(args.out, cfg, {"manifest": manifest})
    print(f"wrote {manifest}")
    return 0


def cmd_confmap(args) -> int:
    cfg = _load(args)
    records, root, manifest = _records(cfg)
    out = npyio.ensure_dir(args.out)
    from .types import GridMap

    for rec in records:
        logits = confmap.load_sample_logits(rec, root, cfg.data.prompt_dir)
        low, high = confmap.sigmoid_maps(logits, cfg.confmap)
        soft = confmap.softmax_map(logits, cfg.confmap.tau_softmax)
        npyio.write_grid(out / f"{rec.sample_id}_low.npy", GridMap(low.values.astype(np.float32)))
        npyio.write_grid(out / f"{rec.sample_id}_high.npy", GridMap(high.values.astype(np.float32)))
        npyio.write_grid(out / f"{rec.sample_id}_softmax.npy", GridMap(soft.values.astype(np.float32)))
    _write_run_manifest(out, cfg, {"manifest": manifest})
    print(f"wrote {3 * len(records)} maps to {out}")
    return 0


def cmd_filter(args) -> int:
    cfg = _load(args)
    records, root, manifest = _records(cfg)
    train = [r for r in records if r.split == "train"] if args.split == "train" else records
    scores = confmap.score_and_filter(
        train, cfg.confmap, cfg.filter.filter_config(), root, cfg.data.prompt_dir, cfg.jobs
    )
    out = Path(args.out)
    npyio.ensure_dir(out.parent)
    write_jsonl(out, [s.to_dict() for s in scores])
    _write_run_manifest(out.parent, cfg, {"manifest": manifest})
    print(f"kept {sum(s.kept for s in scores)}/{len(scores)} samples -> {out}")
    return 0


def cmd_extract_bbox(args) -> int:
    cfg = _load(args)
    records, root, manifest = _records(cfg)
    kept_ids = None
    if args.scores:
        from .manifest import read_jsonl

        kept_ids = {row["sample_id"] for row in read_jsonl(args.scores) if row.get("kept")}
    pool = [r for r in records if kept_ids is None or r.sample_id in kept_ids]
    boxes, n_empty = pipeline.extract_boxes(pool, root, cfg, cfg.jobs)
    out = Path(args.out)
    npyio.ensure_dir(out.parent)
    write_boxes_jsonl(out, [(sid, box) for sid, box in sorted(boxes.items())])
    if n_empty:
        print(f"warning: skipped {n_empty} sample(s) with empty foreground", file=sys.stderr)
    _write_run_manifest(out.parent, cfg, {"manifest": manifest})
    print(f"wrote {len(boxes)} pseudo-boxes -> {out}")
    return 0


def cmd_train_detector(args) -> int:
    cfg = _load(args)
    records, root, manifest = _records(cfg)
    train_records = [r for r in records if r.split == "train"]
    from .manifest import read_jsonl

    kept_ids = {row["sample_id"] for row in read_jsonl(args.scores) if row.get("kept")}
    boxes = {sid: box for sid, box, _ in read_boxes_jsonl(args.boxes)}
    out = npyio.ensure_dir(args.out)
    pipeline.train_stage(train_records, boxes, kept_ids, root, cfg, out)
    _write_run_manifest(out, cfg, {"manifest": manifest, "scores": args.scores, "boxes": args.boxes})
    print(f"wrote checkpoints and train_log.jsonl to {out}")
    return 0


def cmd_detect(args) -> int:
    cfg = _load(args)
    records, root, manifest = _records(cfg)
    subset = [r for r in records if r.split == args.split] if args.split else records
    detections = pipeline.detect_stage(subset, root, args.checkpoint, cfg)
    out = Path(args.out)
    npyio.ensure_dir(out.parent)
    write_boxes_jsonl(
        out, [(sid, d.box, d.score) for sid, d in sorted(detections.items()) if d is not None]
    )
    _write_run_manifest(out.parent, cfg, {"manifest": manifest, "checkpoint": args.checkpoint})
    n_none = sum(1 for d in detections.values() if d is None)
    if n_none:
        print(f"warning: {n_none} sample(s) had no detection above min_score", file=sys.stderr)
    print(f"wrote {len(detections) - n_none} detections -> {out}")
    return 0


def cmd_expand(args) -> int:
    cfg = _load(args)
    records, root, manifest = _records(cfg)
    by_id = {r.sample_id: r for r in records}
    dets = read_detections_jsonl(args.dets)
    # pass 1: collect every score so phi is the inference-set median
    phi = boxgeom.resolve_phi([d.score for _, d in dets], cfg.expand)
    rows = []
    for sid, det in dets:
        rec = by_id.get(sid)
        if rec is None:
            raise ValidationError(f"{args.dets}: unknown sample_id {sid!r}")
        box = boxgeom.selective_expand([det], cfg.expand, rec.image_h, rec.image_w, phi=phi)[0]
        row = {"sample_id": sid, **box.to_dict()}
        if boxgeom.is_out_of_bounds(box, rec.image_h, rec.image_w):
            row["oob"] = True
        rows.append(row)
    out = Path(args.out)
    npyio.ensure_dir(out.parent)
    write_boxes_jsonl(out, rows)
    _write_run_manifest(out.parent, cfg, {"manifest": manifest, "dets": args.dets})
    print(f"phi={phi:.6g}; wrote {len(rows)} boxes -> {out}")
    return 0


def cmd_segment(args) -> int:
    cfg = _load(args)
    records, root, manifest = _records(cfg)
    by_id = {r.sample_id: r for r in records}
    prompts = {}
    for sid, box, _ in read_boxes_jsonl(args.boxes):
        if sid not in by_id:
            raise ValidationError(f"{args.boxes}: unknown sample_id {sid!r}")
        prompts[sid] = box
    subset = [by_id[sid] for sid in sorted(prompts)]
    masks = pipeline.segment_stage(
        subset, prompts, root, cfg, Path(args.out), exchange_dir=args.exchange_dir
    )
    _write_run_manifest(args.out, cfg, {"manifest": manifest, "boxes": args.boxes})
    print(f"wrote {len(masks)} masks to {args.out}")
    return 0


def cmd_eval(args) -> int:
    cfg = _load(args)
    records, root, manifest = _records(cfg)
    subset = [r for r in records if r.split == args.split] if args.split else records
    masks_dir = Path(args.pred_masks)
    masks = {}
    missing = []
    for rec in subset:
        p = masks_dir / f"{rec.sample_id}_mask.npy"
        if p.is_file():
            masks[rec.sample_id] = npyio.read_mask(p)
        else:
            missing.append(rec.sample_id)
    if missing:
        raise ValidationError(f"{masks_dir}: missing predicted masks for: {sorted(missing)}")
    detections = None
    if args.dets:
        detections = {sid: d for sid, d in read_detections_jsonl(args.dets)}
    report = pipeline.eval_stage(
        subset, masks, root, cfg, detections=detections, config_snapshot=config_to_dict(cfg)
    )
    out = Path(args.out)
    npyio.ensure_dir(out.parent)
    write_eval_report(out, report)
    if args.csv:
        write_per_sample_csv(args.csv, report)
    if args.svg:
        write_metric_svg(args.svg, report)
    _write_run_manifest(out.parent, cfg, {"manifest": manifest})
    agg = report["aggregates"]
    print(f"mDSC={agg['mDSC']:.4f} mNSD={agg['mNSD']:.4f} -> {out}")
    return 0


def cmd_perturb_study(args) -> int:
    cfg = _load(args)
    records, root, manifest = _records(cfg)
    ratios = [float(tok) for tok in args.ratios.split(",") if tok.strip() != ""]
    usable = [r for r in records if r.gt_mask_path is not None]
    if not usable:
        raise ValidationError("perturb-study needs samples with GT masks")
    from .metrics import dice as dice_fn

    table = {}
    for rho in ratios:
        vals = []
        for rec in usable:
            gt = npyio.read_mask(record_path(rec, root, "gt_mask"))
            base = rec.gt_bbox
            if base is None:
                from .synthgen import tight_bbox

                base = tight_bbox(gt.bits > 0)
            box = boxgeom.perturb_box(base, rho)
            rng = rng_from(cfg.seed, 2, pipeline._stable_id(rec.sample_id))
            prob = segmenter.mock_segment(gt, box, cfg.segment, rng)
            pred = segmenter.binarize_probability(prob, cfg.segment.tau_seg)
            vals.append(dice_fn(pred, gt))
        table[f"{rho:+.2f}"] = float(np.mean(vals))
    out = Path(args.out)
    npyio.ensure_dir(out.parent)
    tmp = Path(str(out) + ".tmp")
    tmp.write_text(json.dumps({"mdsc_by_ratio": table}, indent=2, sort_keys=True) + "\n")
    tmp.replace(out)
    _write_run_manifest(out.parent, cfg, {"manifest": manifest})
    for key in sorted(table):
        print(f"ratio {key}: mDSC {table[key]:.4f}")
    return 0


def cmd_pipeline(args) -> int:
    cfg = _load(args)
    report = pipeline.run_pipeline(
        cfg,
        args.out,
        no_filter=args.no_filter,
        no_detector=args.no_detector,
        no_expand=args.no_expand,
        config_snapshot=config_to_dict(cfg),
    )
    out = Path(args.out)
    write_eval_report(out / "eval_report.json", report)
    if args.csv:
        write_per_sample_csv(out / "per_sample.csv", report)
    if args.svg:
        write_metric_svg(out / "metrics.svg", report)
    _write_run_manifest(out, cfg, {"manifest": Path(cfg.data.manifest)})
    agg = report["aggregates"]
    det = report["detection"]
    det_str = f" AP50={det['AP50']:.4f}" if det else ""
    print(f"mDSC={agg['mDSC']:.4f} mNSD={agg['mNSD']:.4f}{det_str} -> {out / 'eval_report.json'}")
    return 0


def _add_common(p, manifest=True):
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--root", help="dataset root (default: PPBOOST_ROOT or manifest dir)")
    p.add_argument("--seed", type=int, help="master seed override")
    p.add_argument("--jobs", type=int, help="worker parallelism for per-sample stages")
    if manifest:
        p.add_argument("--manifest", help="dataset manifest path")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ppboost", description=__doc__)
    ap.add_argument("--version", action="version", version=f"ppboost {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synthetic", help="generate the synthetic benchmark tree")
    _add_common(p, manifest=False)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_synthetic)

    p = sub.add_parser("confmap", help="dump per-sample sigmoid/softmax maps")
    _add_common(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_confmap)

    p = sub.add_parser("filter", help="score temperature stability and mark kept samples")
    _add_common(p)
    p.add_argument("--keep", type=float, help="keep fraction (percentile mode)")
    p.add_argument("--split", default="train", choices=["train", "all"])
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("extract-bbox", help="extract pseudo-boxes from confidence maps")
    _add_common(p)
    p.add_argument("--scores", help="stability-score JSONL; only kept samples are used")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_extract_bbox)

    p = sub.add_parser("train-detector", help="teacher-student training on pseudo-boxes")
    _add_common(p)
    p.add_argument("--scores", required=True)
    p.add_argument("--boxes", required=True)
    p.add_argument("--labeled-fraction", type=float, dest="labeled_fraction")
    p.add_argument("--burn-in", type=int, dest="burn_in")
    p.add_argument("--lambda", type=float, dest="lambda_")
    p.add_argument("--ema", type=float)
    p.add_argument("--iters", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_detector)

    p = sub.add_parser("detect", help="run a checkpoint over a split")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="infer", choices=["train", "infer", ""])
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("expand", help="selectively expand detection boxes")
    _add_common(p)
    p.add_argument("--dets", required=True)
    p.add_argument("--ratio", type=float)
    p.add_argument("--phi", help="median or fixed:<value>")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_expand)

    p = sub.add_parser("segment", help="turn box prompts into masks")
    _add_common(p)
    p.add_argument("--boxes", required=True)
    p.add_argument("--backend", choices=["mock", "external"])
    p.add_argument("--exchange-dir", dest="exchange_dir")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("eval", help="Dice/NSD (+ AP when detections given)")
    _add_common(p)
    p.add_argument("--pred-masks", required=True, dest="pred_masks")
    p.add_argument("--dets")
    p.add_argument("--split", default="infer", choices=["train", "infer", ""])
    p.add_argument("--out", required=True)
    p.add_argument("--csv")
    p.add_argument("--svg")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("perturb-study", help="mDSC under GT-box shrink/grow perturbations")
    _add_common(p)
    p.add_argument("--ratios", default="-0.2,-0.15,-0.1,0,0.1,0.15,0.2")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_perturb_study)

    p = sub.add_parser("pipeline", help="end-to-end run with ablation toggles")
    _add_common(p)
    p.add_argument("--no-filter", action="store_true")
    p.add_argument("--no-detector", action="store_true")
    p.add_argument("--no-expand", action="store_true")
    p.add_argument("--keep", type=float)
    p.add_argument("--labeled-fraction", type=float, dest="labeled_fraction")
    p.add_argument("--burn-in", type=int, dest="burn_in")
    p.add_argument("--lambda", type=float, dest="lambda_")
    p.add_argument("--ema", type=float)
    p.add_argument("--iters", type=int)
    p.add_argument("--ratio", type=float)
    p.add_argument("--phi")
    p.add_argument("--backend", choices=["mock", "external"])
    p.add_argument("--csv", action="store_true")
    p.add_argument("--svg", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_pipeline)

    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except (ValidationError, ConfigError, ParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except PPBoostError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
