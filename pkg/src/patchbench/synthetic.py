"""Synthetic planted worlds for end-to-end checks and demo scripts.

Each image has two objects splitting the patch grid; tokens of the same
object share a latent direction plus isotropic noise of controllable scale.
Synthetic subjects produce RTs driven by the token similarity at the two dot
locations, so behavioral alignment is measurable without human data.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensorio import BehavioralRecord, FeatureMap, PatchMask, TrialSpec


@dataclass
class SyntheticWorld:
    patch_size: int
    maps: dict[str, FeatureMap]
    masks: dict[str, PatchMask]  # center-object mask per image
    trials: list[TrialSpec]


def _unit(rng: np.random.Generator, d: int) -> np.ndarray:
    v = rng.normal(size=d)
    return v / np.linalg.norm(v)


def _pick_peripheral(rng, cells, center, near: bool):
    dists = np.asarray([np.hypot(r - center[0], c - center[1]) for r, c in cells])
    order = np.argsort(dists, kind="stable")
    half = max(1, len(cells) // 2)
    pool = order[:half] if near else order[-half:]
    return cells[pool[rng.integers(len(pool))]]


def make_world(n_images: int, grid: tuple[int, int] = (12, 12), d: int = 16,
               sigma: float = 0.1, patch_size: int = 16,
               rng_seed: int = 0) -> SyntheticWorld:
    """Planted two-object world: object A always covers the image center."""
    h, w = grid
    rng = np.random.default_rng(rng_seed)
    maps, masks, trials = {}, {}, []
    center_patch = (h // 2, w // 2)
    for i in range(n_images):
        image_id = f"synth-{i:04d}"
        # Vertical boundary strictly right of the center column.
        split = int(rng.integers(w // 2 + 1, w - 1))
        obj_a = np.zeros((h, w), dtype=bool)
        obj_a[:, :split] = True
        latent_a = _unit(rng, d)
        latent_b = _unit(rng, d)
        noise = rng.normal(scale=sigma / np.sqrt(d), size=(h, w, d))
        data = np.where(obj_a[:, :, None], latent_a, latent_b) + noise
        maps[image_id] = FeatureMap(image_id=image_id, data=data.astype(np.float32))
        masks[image_id] = PatchMask(image_id=image_id, object_id=0, bits=obj_a)

        cells_a = [(r, c) for r in range(h) for c in range(split)
                   if (r, c) != center_patch]
        cells_b = [(r, c) for r in range(h) for c in range(split, w)]
        center_px = (center_patch[1] * patch_size + patch_size // 2,
                     center_patch[0] * patch_size + patch_size // 2)
        for condition in ("same-close", "same-far", "different-close", "different-far"):
            label, sep = condition.split("-")
            cells = cells_a if label == "same" else cells_b
            pr, pc = _pick_peripheral(rng, cells, center_patch, near=(sep == "close"))
            trials.append(TrialSpec(
                trial_id=f"{image_id}:{condition}",
                image_id=image_id,
                center_px=center_px,
                peripheral_px=(pc * patch_size + patch_size // 2,
                               pr * patch_size + patch_size // 2),
                condition=condition,
                label=label,
                center_object_id=0,
                peripheral_object_id=0 if label == "same" else 1,
            ))
    return SyntheticWorld(patch_size=patch_size, maps=maps, masks=masks, trials=trials)


def trial_difficulty(world: SyntheticWorld) -> np.ndarray:
    """1 - cosine similarity between the two dot tokens of each trial."""
    out = []
    for t in world.trials:
        fmap = world.maps[t.image_id]
        ps = world.patch_size
        a = fmap.data[t.center_px[1] // ps, t.center_px[0] // ps].astype(np.float64)
        b = fmap.data[t.peripheral_px[1] // ps, t.peripheral_px[0] // ps].astype(np.float64)
        out.append(1.0 - float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b))))
    return np.asarray(out)


def make_records(world: SyntheticWorld, n_subjects: int = 12,
                 base_ms: float = 600.0, effect_ms: float = 400.0,
                 subject_noise_ms: float = 60.0,
                 rng_seed: int = 0) -> list[BehavioralRecord]:
    """Synthetic subjects whose RTs track the planted grouping difficulty."""
    rng = np.random.default_rng(rng_seed)
    difficulty = trial_difficulty(world)
    records = []
    for s in range(n_subjects):
        noise = rng.normal(scale=subject_noise_ms, size=len(world.trials))
        for t, diff, eps in zip(world.trials, difficulty, noise):
            rt = max(150.0, base_ms + effect_ms * diff + eps)
            records.append(BehavioralRecord(
                trial_id=t.trial_id, subject_id=f"subj-{s:03d}",
                rt_ms=float(rt), correct=True,
            ))
    return records


def mix_world(world: SyntheticWorld, rng_seed: int = 0,
              condition_number: float = 30.0) -> dict[str, FeatureMap]:
    """Corrupt every token with one shared ill-conditioned mixing matrix,
    scrambling the cosine Gram structure while keeping the information."""
    rng = np.random.default_rng(rng_seed)
    d = next(iter(world.maps.values())).d
    u, _ = np.linalg.qr(rng.normal(size=(d, d)))
    v, _ = np.linalg.qr(rng.normal(size=(d, d)))
    scales = np.geomspace(1.0, condition_number, d)
    m = u @ np.diag(scales) @ v.T
    return {
        image_id: FeatureMap(
            image_id=image_id,
            data=(fmap.tokens().astype(np.float64) @ m.T)
            .reshape(fmap.h, fmap.w, d).astype(np.float32),
        )
        for image_id, fmap in world.maps.items()
    }


def export_world(world: SyntheticWorld, root, records=None) -> None:
    """Write a synthetic world to disk in the pipeline's file formats:
    features/*.pbft, masks/*.pgm + masks/index.jsonl, trials.jsonl, and
    optionally records.jsonl."""
    import json
    from pathlib import Path

    from . import tensorio as tio

    root = Path(root)
    (root / "features").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    ps = world.patch_size
    with open(root / "masks" / "index.jsonl", "w") as index:
        for image_id in sorted(world.maps):
            fmap = world.maps[image_id]
            with open(root / "features" / f"{image_id}.pbft", "wb") as f:
                tio.write_feature_map(fmap, f)
            bits = world.masks[image_id].bits
            pixel_a = np.repeat(np.repeat(bits, ps, axis=0), ps, axis=1)
            for object_id, pixels in ((0, pixel_a), (1, ~pixel_a)):
                name = f"{image_id}__{object_id}.pgm"
                with open(root / "masks" / name, "wb") as f:
                    tio.write_pgm(pixels, f)
                index.write(json.dumps({
                    "image_id": image_id, "object_id": object_id,
                    "mask": name, "area": int(pixels.sum()),
                }) + "\n")
    with open(root / "trials.jsonl", "w") as f:
        tio.write_trial_manifest(world.trials, f)
    if records is not None:
        with open(root / "records.jsonl", "w") as f:
            tio.write_behavioral_records(records, f)


def rotate_world(world: SyntheticWorld, rng_seed: int = 0) -> dict[str, FeatureMap]:
    """Apply one shared orthogonal rotation; Gram structure is preserved."""
    rng = np.random.default_rng(rng_seed)
    d = next(iter(world.maps.values())).d
    q, _ = np.linalg.qr(rng.normal(size=(d, d)))
    return {
        image_id: FeatureMap(
            image_id=image_id,
            data=(fmap.tokens().astype(np.float64) @ q.T)
            .reshape(fmap.h, fmap.w, d).astype(np.float32),
        )
        for image_id, fmap in world.maps.items()
    }
