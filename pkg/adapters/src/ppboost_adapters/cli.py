"""Adapter CLI: export confidence inputs, serve the segmenter exchange
protocol, slice volumes."""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .export import export_confidence_inputs
from .runner import run_external_segmenter
from .slicer import slice_volume


def cmd_export(args) -> int:
    prompts = Path(args.prompts).read_text().splitlines()
    prompts = [p.strip() for p in prompts if p.strip()]
    manifest = export_confidence_inputs(
        args.model_id,
        args.images,
        prompts,
        args.out,
        rows=args.rows,
        cols=args.cols,
        dim=args.dim,
        seed=args.seed,
    )
    print(f"wrote {manifest}")
    return 0


def cmd_serve(args) -> int:
    stats = run_external_segmenter(args.exchange_dir, args.checkpoint)
    print(f"served={stats['served']} skipped={stats['skipped']} failed={stats['failed']}")
    return 0


def cmd_slice(args) -> int:
    index = slice_volume(
        args.volume,
        args.out,
        mask_path=args.mask,
        axis=args.axis,
        dataset=args.dataset,
        mask_dataset=args.mask_dataset,
        skip_empty_masks=args.skip_empty_masks,
    )
    print(f"wrote {index}")
    return 0


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="ppboost-adapters", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("export", help="encode images + prompt pool into a toolkit dataset")
    p.add_argument("--model-id", default="stub-v1")
    p.add_argument("--images", required=True, help="directory of .png/.npy images")
    p.add_argument("--prompts", required=True, help="text file, one prompt per line")
    p.add_argument("--rows", type=int, default=16)
    p.add_argument("--cols", type=int, default=16)
    p.add_argument("--dim", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("serve-segmenter", help="answer one exchange-directory batch")
    p.add_argument("--exchange-dir", required=True, dest="exchange_dir")
    p.add_argument("--checkpoint", default="identity", help="identity | blob")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("slice", help="split a 3-D volume into 2-D NPY slices")
    p.add_argument("--volume", required=True)
    p.add_argument("--mask")
    p.add_argument("--axis", type=int, default=0)
    p.add_argument("--dataset", help="HDF5 dataset name for the volume")
    p.add_argument("--mask-dataset", dest="mask_dataset")
    p.add_argument("--skip-empty-masks", action="store_true", dest="skip_empty_masks")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_slice)

    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
