"""COCO instance annotations to per-object pixel masks.

Supports polygon segmentations (rasterized with Pillow) and uncompressed
RLE ({"counts": [...], "size": [h, w]}, column-major runs starting with
background, as in the COCO spec). Malformed records are skipped with a
warning so one bad annotation cannot sink a whole export.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass

import numpy as np
from PIL import Image, ImageDraw

log = logging.getLogger("pbextract.masks")


@dataclass(frozen=True)
class InstanceMask:
    image_id: str
    object_id: int
    category_id: int
    area: int
    mask: np.ndarray  # (h, w) bool


def rasterize_polygons(polygons: list[list[float]], height: int,
                       width: int) -> np.ndarray:
    """Union of filled polygons; each polygon is a flat [x0, y0, x1, y1, ...]."""
    canvas = Image.new("1", (width, height), 0)
    draw = ImageDraw.Draw(canvas)
    for poly in polygons:
        if len(poly) < 6 or len(poly) % 2 != 0:
            raise ValueError(f"polygon needs >= 3 (x, y) pairs, got {len(poly)} values")
        draw.polygon([(poly[i], poly[i + 1]) for i in range(0, len(poly), 2)],
                     outline=1, fill=1)
    return np.asarray(canvas, dtype=bool)


def decode_rle(counts: list[int], height: int, width: int) -> np.ndarray:
    """Uncompressed COCO RLE: alternating background/object run lengths in
    column-major order, starting with background."""
    if sum(counts) != height * width:
        raise ValueError(
            f"RLE runs sum to {sum(counts)}, expected {height * width}")
    flat = np.zeros(height * width, dtype=bool)
    pos = 0
    value = False
    for run in counts:
        if run < 0:
            raise ValueError("negative RLE run length")
        flat[pos:pos + run] = value
        pos += run
        value = not value
    return flat.reshape((width, height)).T  # column-major to (h, w)


def segmentation_to_mask(segmentation, height: int, width: int) -> np.ndarray:
    if isinstance(segmentation, dict):
        size = segmentation.get("size")
        if size != [height, width]:
            raise ValueError(f"RLE size {size} != image size {[height, width]}")
        return decode_rle(segmentation["counts"], height, width)
    if isinstance(segmentation, list):
        return rasterize_polygons(segmentation, height, width)
    raise ValueError(f"unsupported segmentation type {type(segmentation).__name__}")


def read_instances(annotation_path) -> list[InstanceMask]:
    """Decode every instance of a COCO-format annotation file."""
    with open(annotation_path) as f:
        payload = json.load(f)
    images = {img["id"]: img for img in payload.get("images", [])}
    out = []
    for ann in payload.get("annotations", []):
        try:
            img = images[ann["image_id"]]
            mask = segmentation_to_mask(ann["segmentation"],
                                        img["height"], img["width"])
            out.append(InstanceMask(
                image_id=str(img.get("file_name", img["id"])).rsplit(".", 1)[0],
                object_id=int(ann["id"]),
                category_id=int(ann.get("category_id", -1)),
                area=int(mask.sum()),
                mask=mask,
            ))
        except (KeyError, ValueError, TypeError) as exc:
            log.warning("skipping annotation %s: %s", ann.get("id"), exc)
    return out
