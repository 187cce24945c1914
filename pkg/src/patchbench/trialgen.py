"""Two-dot trial generation from object masks: center-object selection,
overlapping-object search, distance-matched peripheral dot placement, and
Latin-square counterbalancing.

All randomness is drawn from a per-image stream derived from (rng_seed,
image_id), so generation order and parallelism cannot change outputs.
"""
from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .tensorio import CONDITIONS, TrialSpec


class PlacementError(RuntimeError):
    """Trial generation failed for one image; .reason names the failure."""

    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


@dataclass(frozen=True)
class PlacementConfig:
    """Geometry and sampling parameters for peripheral dot placement."""

    px_per_degree: float = 34.0
    close_deg: float = 3.0
    far_deg: float = 6.0
    distance_tol_px: float = 8.0
    boundary_margin_px: float = 6.0
    max_attempts: int = 2000
    rng_seed: int = 0

    def __post_init__(self):
        if not (0 < self.close_deg < self.far_deg):
            raise ValueError("need 0 < close_deg < far_deg")
        if self.distance_tol_px < 0 or self.boundary_margin_px < 0:
            raise ValueError("tolerances must be nonnegative")


@dataclass(frozen=True)
class TrialQuad:
    """The four distance-matched trials of one image, one per condition."""

    image_id: str
    trials: tuple[TrialSpec, TrialSpec, TrialSpec, TrialSpec]

    def __post_init__(self):
        centers = {t.center_px for t in self.trials}
        if len(centers) != 1:
            raise ValueError("all four trials must share one center dot")
        conds = [t.condition for t in self.trials]
        if sorted(conds) != sorted(CONDITIONS):
            raise ValueError("need exactly one trial per condition")

    def by_condition(self, condition: str) -> TrialSpec:
        return next(t for t in self.trials if t.condition == condition)


def _disk(radius: float) -> np.ndarray:
    r = int(np.ceil(radius))
    yy, xx = np.mgrid[-r:r + 1, -r:r + 1]
    return (xx * xx + yy * yy) <= radius * radius


def erode(mask: np.ndarray, radius: float) -> np.ndarray:
    if radius <= 0:
        return np.asarray(mask, dtype=bool)
    return ndimage.binary_erosion(mask, structure=_disk(radius))


def dilate(mask: np.ndarray, radius: float) -> np.ndarray:
    if radius <= 0:
        return np.asarray(mask, dtype=bool)
    return ndimage.binary_dilation(mask, structure=_disk(radius))


def image_rng(rng_seed: int, image_id: str) -> np.random.Generator:
    """Per-image RNG stream; stable across processes and generation order."""
    return np.random.default_rng(
        np.random.SeedSequence([rng_seed, zlib.crc32(image_id.encode("utf-8"))])
    )


def select_center_object(masks: list[tuple[int, np.ndarray]],
                         image_dims: tuple[int, int]) -> int | None:
    """Object whose mask covers the center pixel; smallest area wins ties."""
    W, H = image_dims
    cx, cy = W // 2, H // 2
    best = None
    best_area = None
    for object_id, mask in masks:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (H, W):
            raise ValueError(
                f"mask for object {object_id} has shape {mask.shape}, "
                f"expected {(H, W)}"
            )
        if mask[cy, cx]:
            area = int(mask.sum())
            if best_area is None or area < best_area:
                best, best_area = object_id, area
    return best


def find_overlapping_object(center_id: int, masks: list[tuple[int, np.ndarray]],
                            margin_px: float = 6.0) -> int | None:
    """Distinct object whose dilated mask intersects the center object's mask;
    the candidate with the largest intersection wins."""
    by_id = {oid: np.asarray(m, dtype=bool) for oid, m in masks}
    center = by_id[center_id]
    best = None
    best_overlap = 0
    for object_id, mask in masks:
        if object_id == center_id:
            continue
        overlap = int((dilate(np.asarray(mask, dtype=bool), margin_px) & center).sum())
        if overlap > best_overlap:
            best, best_overlap = object_id, overlap
    return best


def _sample_dot(rng: np.random.Generator, center: tuple[int, int], radius_px: float,
                tol_px: float, allowed: np.ndarray, max_attempts: int) -> tuple[int, int] | None:
    """Rejection-sample a dot on the annulus radius +/- tol/2 inside `allowed`.

    Radii stay within half the tolerance of the nominal radius so any two
    conditions at the same separation level are matched within tol_px.
    """
    H, W = allowed.shape
    cx, cy = center
    for _ in range(max_attempts):
        r = radius_px + (rng.random() - 0.5) * tol_px
        theta = rng.random() * 2.0 * np.pi
        x = int(round(cx + r * np.cos(theta)))
        y = int(round(cy + r * np.sin(theta)))
        if not (0 <= x < W and 0 <= y < H):
            continue
        if (x, y) == (cx, cy):
            continue
        # Re-check after pixel rounding so matched distances stay within tol.
        if abs(np.hypot(x - cx, y - cy) - radius_px) > tol_px / 2.0:
            continue
        if allowed[y, x]:
            return (x, y)
    return None


def place_dots(center_id: int, second_id: int, masks: list[tuple[int, np.ndarray]],
               cfg: PlacementConfig, image_id: str = "") -> TrialQuad:
    """Place the four peripheral dots for one image.

    Raises PlacementError with reason `placement-exhausted(<condition>)` when a
    condition's annulus has no admissible pixels within max_attempts.
    """
    by_id = {oid: np.asarray(m, dtype=bool) for oid, m in masks}
    center_mask = by_id[center_id]
    H, W = center_mask.shape
    center_px = (W // 2, H // 2)
    if not center_mask[center_px[1], center_px[0]]:
        raise PlacementError("no-center-object")
    eroded = {
        "same": erode(center_mask, cfg.boundary_margin_px),
        "different": erode(by_id[second_id], cfg.boundary_margin_px),
    }
    rng = image_rng(cfg.rng_seed, image_id)
    trials = []
    for condition in CONDITIONS:
        label, separation = condition.split("-")
        radius = (cfg.close_deg if separation == "close" else cfg.far_deg) * cfg.px_per_degree
        dot = _sample_dot(rng, center_px, radius, cfg.distance_tol_px,
                          eroded[label], cfg.max_attempts)
        if dot is None:
            raise PlacementError(f"placement-exhausted({condition})")
        trials.append(TrialSpec(
            trial_id=f"{image_id}:{condition}",
            image_id=image_id,
            center_px=center_px,
            peripheral_px=dot,
            condition=condition,
            label=label,
            center_object_id=center_id,
            peripheral_object_id=center_id if label == "same" else second_id,
        ))
    quad = TrialQuad(image_id=image_id, trials=tuple(trials))
    _check_distance_matching(quad, cfg)
    return quad


def _check_distance_matching(quad: TrialQuad, cfg: PlacementConfig) -> None:
    def dist(t: TrialSpec) -> float:
        (cx, cy), (px, py) = t.center_px, t.peripheral_px
        return float(np.hypot(px - cx, py - cy))

    for sep in ("close", "far"):
        gap = abs(dist(quad.by_condition(f"same-{sep}"))
                  - dist(quad.by_condition(f"different-{sep}")))
        if gap > cfg.distance_tol_px:
            raise PlacementError(f"placement-exhausted({sep})")


def generate_quad(image_id: str, masks: list[tuple[int, np.ndarray]],
                  image_dims: tuple[int, int], cfg: PlacementConfig) -> TrialQuad:
    """Full per-image pipeline: center object, overlap partner, four dots."""
    center_id = select_center_object(masks, image_dims)
    if center_id is None:
        raise PlacementError("no-center-object")
    second_id = find_overlapping_object(center_id, masks, cfg.boundary_margin_px)
    if second_id is None:
        raise PlacementError("no-overlap-object")
    return place_dots(center_id, second_id, masks, cfg, image_id=image_id)


def counterbalance(images: list[TrialQuad], n_groups: int = 4,
                   rng_seed: int = 0) -> list[list[tuple[str, str]]]:
    """Latin-square condition assignment over a cycle of n_groups participants.

    Returns one list of (image_id, condition) pairs per participant slot;
    each image appears in every condition exactly once across the cycle.
    Row (image) order is seeded-shuffled.
    """
    if n_groups != len(CONDITIONS):
        raise ValueError(
            f"unsupported design: n_groups must be {len(CONDITIONS)}, got {n_groups}"
        )
    rng = np.random.default_rng(rng_seed)
    order = rng.permutation(len(images))
    assignment: list[list[tuple[str, str]]] = [[] for _ in range(n_groups)]
    for pos, idx in enumerate(order):
        quad = images[idx]
        for g in range(n_groups):
            cond = CONDITIONS[(pos + g) % n_groups]
            assignment[g].append((quad.image_id, cond))
    return assignment
