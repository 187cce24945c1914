"""Writers for the benchmark's on-disk formats.

Implemented independently of the consumer package on purpose: the byte layout
is the contract, and this package must not depend on the consumer's code.

PBFT container layout (all integers little-endian u32):
    magic 'PBFT' | version=1 | height | width | depth |
    image_id byte length | image_id UTF-8 | float32 LE payload, (h, w, d)

PGM masks are binary P5, maxval 255, nonzero = object.
"""
from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

PBFT_MAGIC = b"PBFT"
PBFT_VERSION = 1


class ExportError(ValueError):
    """Data cannot be represented in the target format."""


def atomic_write(path: Path, payload: bytes) -> None:
    """Write via temp-and-rename so readers never see a partial file."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def feature_map_bytes(image_id: str, data: np.ndarray) -> bytes:
    data = np.asarray(data)
    if data.ndim != 3 or min(data.shape) < 1:
        raise ExportError(f"feature tensor must be (h, w, d) nonempty, got {data.shape}")
    if not np.all(np.isfinite(data)):
        raise ExportError(f"non-finite value in features for {image_id!r}")
    h, w, d = data.shape
    ident = image_id.encode("utf-8")
    header = PBFT_MAGIC + struct.pack("<IIIII", PBFT_VERSION, h, w, d, len(ident))
    payload = np.ascontiguousarray(data, dtype="<f4").tobytes()
    return header + ident + payload


def write_feature_map(path: Path, image_id: str, data: np.ndarray) -> None:
    atomic_write(path, feature_map_bytes(image_id, data))


def pgm_bytes(mask: np.ndarray) -> bytes:
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ExportError(f"mask must be 2-D, got shape {mask.shape}")
    h, w = mask.shape
    body = (np.where(mask != 0, 255, 0)).astype(np.uint8).tobytes()
    return f"P5\n{w} {h}\n255\n".encode("ascii") + body


def write_pgm(path: Path, mask: np.ndarray) -> None:
    atomic_write(path, pgm_bytes(mask))


def write_jsonl(path: Path, rows: list[dict]) -> None:
    text = "".join(json.dumps(row, sort_keys=True) + "\n" for row in rows)
    atomic_write(path, text.encode("utf-8"))


def write_json(path: Path, payload: dict) -> None:
    atomic_write(path, (json.dumps(payload, indent=2, sort_keys=True) + "\n")
                 .encode("utf-8"))
