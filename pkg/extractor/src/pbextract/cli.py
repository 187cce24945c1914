"""pbextract command line: export model features and COCO masks into the
benchmark's file formats.

    pbextract extract-features --model vit-b-16 --images DIR --out DIR
    pbextract export-masks --ann instances.json --out DIR
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from PIL import Image, UnidentifiedImageError

from . import __version__, formats, masks, models

log = logging.getLogger("pbextract")

IMAGE_SUFFIXES = {".jpg", ".jpeg", ".png", ".bmp", ".webp"}


def cmd_extract_features(args) -> int:
    spec = models.get_spec(args.model)
    images_dir = Path(args.images)
    paths = sorted(p for p in images_dir.iterdir()
                   if p.suffix.lower() in IMAGE_SUFFIXES)
    if not paths:
        print(f"no images found in {images_dir}", file=sys.stderr)
        return 2
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    model = models.load_model(spec, random_init=args.random_init,
                              seed=args.seed)
    layers = (list(range(spec.n_layers)) if args.all_layers else None)
    n_files = 0
    for path in paths:
        image_id = path.stem
        with Image.open(path) as image:
            original_size = image.size
            grids = models.extract(model, spec, image, layers=layers,
                                   per_head=args.per_head)
        for variant, grid in grids.items():
            suffix = "" if variant == "final" else f".{variant}"
            formats.write_feature_map(out_dir / f"{image_id}{suffix}.pbft",
                                      image_id, grid)
            n_files += 1
        log.info("exported %s (%d variants)", image_id, len(grids))

    formats.write_json(out_dir / "extraction.json", {
        "tool_version": __version__,
        "model": spec.name,
        "weights": "random-init" if args.random_init else spec.weights,
        "input_resize": [spec.input_size, spec.input_size],
        "resize_rule": ("square bilinear resize; conv inputs sized so the "
                        "feature grid matches ViT-B/16 on the same image"),
        "last_original_size": list(original_size),
        "grid": [spec.grid, spec.grid],
        "depth": spec.depth,
        "per_head": args.per_head,
        "layers": "all" if args.all_layers else "final",
    })
    print(f"wrote {n_files} feature containers to {out_dir}")
    return 0


def cmd_export_masks(args) -> int:
    instances = masks.read_instances(args.ann)
    if not instances:
        print(f"no decodable instances in {args.ann}", file=sys.stderr)
        return 2
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for inst in instances:
        name = f"{inst.image_id}__{inst.object_id}.pgm"
        formats.write_pgm(out_dir / name, inst.mask)
        rows.append({
            "image_id": inst.image_id,
            "object_id": inst.object_id,
            "category_id": inst.category_id,
            "area": inst.area,
            "mask": name,
        })
    formats.write_jsonl(out_dir / "index.jsonl", rows)
    print(f"wrote {len(rows)} masks + index.jsonl to {out_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pbextract",
        description="Export model patch features and COCO masks into "
                    "patch-benchmark file formats.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract-features",
                       help="patch features from a registered backbone")
    p.add_argument("--model", required=True,
                   help=f"one of {sorted(models.REGISTRY)}")
    p.add_argument("--images", required=True, help="directory of images")
    p.add_argument("--out", required=True)
    p.add_argument("--all-layers", action="store_true",
                   help="export every encoder layer (ViT only)")
    p.add_argument("--per-head", action="store_true",
                   help="split features into per-attention-head containers")
    p.add_argument("--random-init", action="store_true",
                   help="skip weight download; random weights for testing")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_extract_features)

    p = sub.add_parser("export-masks",
                       help="COCO instance annotations to PGM masks")
    p.add_argument("--ann", required=True, help="COCO-format JSON file")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_masks)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("PB_LOG", "WARNING").upper())
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except SystemExit as exc:
        return 1 if exc.code not in (0, None) else 0
    except models.UnknownModelError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (models.WeightsFetchError, FileNotFoundError,
            UnidentifiedImageError, formats.ExportError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
