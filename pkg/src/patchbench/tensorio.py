"""Serialization layer: feature tensors (.pbft), patch masks, trial manifests,
behavioral records (.jsonl), and binary PGM pixel masks.

All containers are little-endian and round-trip bit-exactly.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, asdict
from typing import BinaryIO, Iterable, TextIO

import numpy as np

PBFT_MAGIC = b"PBFT"
PBFT_VERSION = 1

CONDITIONS = ("same-close", "same-far", "different-close", "different-far")
LABELS = ("same", "different")


class FormatError(ValueError):
    """Container header or structure is not what the format demands."""


class DataError(ValueError):
    """Payload parsed but violates a data invariant (NaN/Inf, bad field)."""


class ManifestError(ValueError):
    """A manifest record is malformed or violates a record invariant."""


class SinkError(IOError):
    """Write failed; carries the byte offset reached before the failure."""

    def __init__(self, offset: int, cause: Exception):
        super().__init__(f"write failed at byte offset {offset}: {cause}")
        self.offset = offset


@dataclass(frozen=True)
class FeatureMap:
    """h x w grid of d-dimensional patch feature vectors for one image."""

    image_id: str
    data: np.ndarray  # (h, w, d) float32

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float32)
        if arr.ndim != 3:
            raise DataError(f"feature data must be (h, w, d), got shape {arr.shape}")
        h, w, d = arr.shape
        if h < 1 or w < 1 or d < 1:
            raise DataError(f"h, w, d must all be >= 1, got {(h, w, d)}")
        if not np.all(np.isfinite(arr)):
            bad = int(np.flatnonzero(~np.isfinite(arr))[0])
            raise DataError(f"non-finite value at flat index {bad}")
        arr = np.ascontiguousarray(arr)
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def h(self) -> int:
        return self.data.shape[0]

    @property
    def w(self) -> int:
        return self.data.shape[1]

    @property
    def d(self) -> int:
        return self.data.shape[2]

    def tokens(self) -> np.ndarray:
        """Token matrix view, shape (h*w, d); row-major patch order."""
        return self.data.reshape(self.h * self.w, self.d)


@dataclass(frozen=True)
class PatchMask:
    """h x w boolean grid marking which patches belong to one object."""

    image_id: str
    object_id: int
    bits: np.ndarray  # (h, w) bool

    def __post_init__(self):
        arr = np.asarray(self.bits, dtype=bool)
        if arr.ndim != 2:
            raise DataError(f"mask bits must be (h, w), got shape {arr.shape}")
        arr = np.ascontiguousarray(arr)
        arr.flags.writeable = False
        object.__setattr__(self, "bits", arr)

    @property
    def h(self) -> int:
        return self.bits.shape[0]

    @property
    def w(self) -> int:
        return self.bits.shape[1]

    def require_object(self) -> "PatchMask":
        """Raise unless at least one patch bit is set (valid object mask)."""
        if not self.bits.any():
            raise DataError(
                f"object mask for object {self.object_id} has no set bits"
            )
        return self


@dataclass(frozen=True)
class TrialSpec:
    """One two-dot trial: a center dot, a peripheral dot, and the answer."""

    trial_id: str
    image_id: str
    center_px: tuple[int, int]
    peripheral_px: tuple[int, int]
    condition: str
    label: str
    center_object_id: int
    peripheral_object_id: int

    def __post_init__(self):
        if self.condition not in CONDITIONS:
            raise ManifestError(
                f"trial {self.trial_id}: unknown condition {self.condition!r}"
            )
        if self.label not in LABELS:
            raise ManifestError(f"trial {self.trial_id}: unknown label {self.label!r}")
        if self.condition.split("-")[0] != self.label:
            raise ManifestError(
                f"trial {self.trial_id}: condition {self.condition!r} "
                f"inconsistent with label {self.label!r}"
            )
        for name, (x, y) in (("center_px", self.center_px),
                             ("peripheral_px", self.peripheral_px)):
            if x < 0 or y < 0:
                raise ManifestError(f"trial {self.trial_id}: {name} out of bounds")
        object.__setattr__(self, "center_px", (int(self.center_px[0]), int(self.center_px[1])))
        object.__setattr__(self, "peripheral_px",
                           (int(self.peripheral_px[0]), int(self.peripheral_px[1])))


@dataclass(frozen=True)
class BehavioralRecord:
    """One subject's response to one trial."""

    trial_id: str
    subject_id: str
    rt_ms: float
    correct: bool

    def __post_init__(self):
        if not (self.rt_ms > 0):
            raise ManifestError(
                f"trial {self.trial_id}: rt_ms must be positive, got {self.rt_ms}"
            )


# ---------------------------------------------------------------------------
# .pbft feature containers
# ---------------------------------------------------------------------------

def write_feature_map(fmap: FeatureMap, sink: BinaryIO) -> int:
    """Write a FeatureMap container; returns total bytes written."""
    name = fmap.image_id.encode("utf-8")
    header = PBFT_MAGIC + struct.pack(
        "<IIIII", PBFT_VERSION, fmap.h, fmap.w, fmap.d, len(name)
    )
    payload = np.ascontiguousarray(fmap.data, dtype="<f4").tobytes()
    written = 0
    for chunk in (header, name, payload):
        try:
            sink.write(chunk)
        except OSError as exc:
            raise SinkError(written, exc) from exc
        written += len(chunk)
    return written


def read_feature_map(source: BinaryIO) -> FeatureMap:
    """Read and validate a FeatureMap container."""
    magic = source.read(4)
    if magic != PBFT_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {PBFT_MAGIC!r}")
    head = source.read(20)
    if len(head) != 20:
        raise FormatError("truncated header")
    version, h, w, d, name_len = struct.unpack("<IIIII", head)
    if version != PBFT_VERSION:
        raise FormatError(f"unsupported version {version}")
    if h < 1 or w < 1 or d < 1:
        raise FormatError(f"invalid dims {(h, w, d)}")
    name = source.read(name_len)
    if len(name) != name_len:
        raise FormatError("truncated image_id")
    n_bytes = h * w * d * 4
    payload = source.read(n_bytes)
    if len(payload) != n_bytes:
        raise FormatError(
            f"truncated payload: expected {n_bytes} bytes, got {len(payload)}"
        )
    data = np.frombuffer(payload, dtype="<f4").reshape(h, w, d)
    if not np.all(np.isfinite(data)):
        bad = int(np.flatnonzero(~np.isfinite(data.ravel()))[0])
        raise DataError(f"non-finite value at flat index {bad}")
    return FeatureMap(image_id=name.decode("utf-8"), data=data.astype(np.float32))


# ---------------------------------------------------------------------------
# JSONL manifests
# ---------------------------------------------------------------------------

def _trial_from_obj(obj: dict) -> TrialSpec:
    trial_id = obj.get("trial_id", "<missing>")
    try:
        return TrialSpec(
            trial_id=obj["trial_id"],
            image_id=obj["image_id"],
            center_px=tuple(obj["center_px"]),
            peripheral_px=tuple(obj["peripheral_px"]),
            condition=obj["condition"],
            label=obj["label"],
            center_object_id=int(obj["center_object_id"]),
            peripheral_object_id=int(obj["peripheral_object_id"]),
        )
    except KeyError as exc:
        raise ManifestError(f"trial {trial_id}: missing field {exc.args[0]}") from exc


def read_trial_manifest(source: TextIO) -> list[TrialSpec]:
    trials = []
    for lineno, line in enumerate(source, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ManifestError(f"line {lineno}: invalid JSON: {exc}") from exc
        trials.append(_trial_from_obj(obj))
    return trials


def write_trial_manifest(trials: Iterable[TrialSpec], sink: TextIO) -> int:
    n = 0
    for t in trials:
        obj = asdict(t)
        obj["center_px"] = list(t.center_px)
        obj["peripheral_px"] = list(t.peripheral_px)
        sink.write(json.dumps(obj, sort_keys=True) + "\n")
        n += 1
    return n


def read_behavioral_records(source: TextIO) -> list[BehavioralRecord]:
    records = []
    for lineno, line in enumerate(source, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ManifestError(f"line {lineno}: invalid JSON: {exc}") from exc
        trial_id = obj.get("trial_id", "<missing>")
        try:
            records.append(BehavioralRecord(
                trial_id=obj["trial_id"],
                subject_id=obj["subject_id"],
                rt_ms=float(obj["rt_ms"]),
                correct=bool(obj["correct"]),
            ))
        except KeyError as exc:
            raise ManifestError(
                f"trial {trial_id}: missing field {exc.args[0]}"
            ) from exc
    return records


def write_behavioral_records(records: Iterable[BehavioralRecord], sink: TextIO) -> int:
    n = 0
    for r in records:
        sink.write(json.dumps(asdict(r), sort_keys=True) + "\n")
        n += 1
    return n


# ---------------------------------------------------------------------------
# Pixel masks (binary PGM) and rasterization to the patch grid
# ---------------------------------------------------------------------------

def write_pgm(mask: np.ndarray, sink: BinaryIO) -> None:
    """Write a boolean pixel mask as binary (P5) PGM; object pixels are 255."""
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    sink.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
    sink.write((mask.astype(np.uint8) * 255).tobytes())


def read_pgm(source: BinaryIO) -> np.ndarray:
    """Read a binary (P5) PGM; nonzero pixels become True."""
    data = source.read()
    if not data.startswith(b"P5"):
        raise FormatError("not a binary PGM (P5) file")
    # Header: magic, width, height, maxval as whitespace-separated tokens,
    # comments (#...) allowed between them.
    pos = 2
    fields = []
    while len(fields) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError("truncated PGM header")
        fields.append(int(data[start:pos]))
    pos += 1  # single whitespace after maxval
    w, h, maxval = fields
    if maxval > 255:
        raise FormatError("16-bit PGM not supported")
    raster = data[pos:pos + w * h]
    if len(raster) != w * h:
        raise FormatError(f"truncated raster: expected {w * h}, got {len(raster)}")
    return np.frombuffer(raster, dtype=np.uint8).reshape(h, w) != 0


def rasterize_mask_to_patches(
    pixel_mask: np.ndarray, patch_size: int, image_id: str = "", object_id: int = 0
) -> PatchMask:
    """Downsample a pixel mask to the patch grid by the >=50% majority rule.

    The pixel grid is padded bottom/right with False to the next multiple of
    patch_size. Ties (exactly half the pixels) count as object.
    """
    if patch_size <= 0:
        raise ValueError(f"patch_size must be positive, got {patch_size}")
    mask = np.asarray(pixel_mask, dtype=bool)
    H, W = mask.shape
    h = -(-H // patch_size)
    w = -(-W // patch_size)
    padded = np.zeros((h * patch_size, w * patch_size), dtype=bool)
    padded[:H, :W] = mask
    counts = padded.reshape(h, patch_size, w, patch_size).sum(axis=(1, 3))
    bits = 2 * counts >= patch_size * patch_size
    return PatchMask(image_id=image_id, object_id=object_id, bits=bits)
