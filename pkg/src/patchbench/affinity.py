"""Cosine-similarity affinity maps from a seed patch and full Gram matrices.

Zero-norm tokens stay zero after normalization, so any cosine involving a
degenerate token is 0 rather than NaN.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensorio import FeatureMap


@dataclass(frozen=True)
class AffinityMap:
    """Per-patch cosine similarities between a seed patch and all patches."""

    h: int
    w: int
    seed: tuple[int, int]  # (row, col)
    values: np.ndarray  # (h, w) in [-1, 1]

    def __post_init__(self):
        arr = np.ascontiguousarray(np.asarray(self.values, dtype=np.float64))
        arr.flags.writeable = False
        object.__setattr__(self, "values", arr)


@dataclass(frozen=True)
class GramMatrix:
    """(h*w) x (h*w) symmetric matrix of pairwise cosine similarities."""

    n: int
    values: np.ndarray

    def __post_init__(self):
        arr = np.ascontiguousarray(np.asarray(self.values, dtype=np.float64))
        arr.flags.writeable = False
        object.__setattr__(self, "values", arr)


def normalized_tokens(fmap: FeatureMap) -> tuple[np.ndarray, int]:
    """L2-normalized token matrix (h*w, d) in float64 and the zero-token count."""
    tokens = fmap.tokens().astype(np.float64)
    norms = np.linalg.norm(tokens, axis=1)
    zero = norms == 0.0
    safe = np.where(zero, 1.0, norms)
    return tokens / safe[:, None], int(zero.sum())


def l2_normalize_tokens(fmap: FeatureMap) -> tuple[FeatureMap, int]:
    """Divide each token by its norm; zero tokens stay zero and are counted."""
    normed, n_zero = normalized_tokens(fmap)
    data = normed.reshape(fmap.h, fmap.w, fmap.d).astype(np.float32)
    return FeatureMap(image_id=fmap.image_id, data=data), n_zero


def affinity_from_patch(fmap: FeatureMap, seed: tuple[int, int]) -> AffinityMap:
    """Cosine similarity between the seed patch token and every token."""
    row, col = seed
    if not (0 <= row < fmap.h and 0 <= col < fmap.w):
        raise ValueError(f"seed {seed} out of bounds for {fmap.h}x{fmap.w} grid")
    normed, _ = normalized_tokens(fmap)
    values = normed @ normed[row * fmap.w + col]
    return AffinityMap(h=fmap.h, w=fmap.w, seed=(row, col),
                       values=values.reshape(fmap.h, fmap.w))


def pixel_to_patch(dot_px: tuple[int, int], patch_size: int) -> tuple[int, int]:
    """Map an (x, y) pixel coordinate to its (row, col) patch index."""
    x, y = dot_px
    if patch_size <= 0:
        raise ValueError(f"patch_size must be positive, got {patch_size}")
    if x < 0 or y < 0:
        raise ValueError(f"dot {dot_px} out of bounds")
    return (y // patch_size, x // patch_size)


def gram(fmap: FeatureMap) -> GramMatrix:
    """Gram matrix N @ N.T of the L2-normalized token matrix N."""
    normed, _ = normalized_tokens(fmap)
    return GramMatrix(n=fmap.h * fmap.w, values=normed @ normed.T)
