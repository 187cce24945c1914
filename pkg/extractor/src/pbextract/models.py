"""Model registry and patch-feature extraction.

Each registry entry declares how a backbone maps an image to a patch-feature
grid: input resize rule, grid dimensions, and where to hook the features.
ViT backbones export the patch tokens of a chosen encoder layer (class token
dropped); convolutional backbones are resized so their final feature grid
matches what a ViT-B/16 would produce on the same input, per the grid-match
rule. Optional per-layer and per-head exports are supported for ViTs.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from PIL import Image

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


class WeightsFetchError(RuntimeError):
    """Pretrained weights could not be obtained."""


class UnknownModelError(ValueError):
    """Model name is not in the registry."""


@dataclass(frozen=True)
class ModelSpec:
    """How one backbone becomes a patch-feature grid."""

    name: str
    builder: str           # torchvision constructor name
    weights: str | None    # torchvision weights enum name, None = random init
    input_size: int        # square resize fed to the model
    grid: int              # output feature grid is grid x grid
    depth: int             # feature dimension per patch
    kind: str              # "vit" (token hooks) or "conv" (final conv map)
    n_layers: int
    n_heads: int


# ViT-B/16: 224 / 16 = 14. ResNet-50 final stride is 32, so a 448 px input
# yields the same 14x14 grid that ViT-B/16 yields at 224 px.
REGISTRY: dict[str, ModelSpec] = {
    spec.name: spec for spec in (
        ModelSpec("vit-b-16", "vit_b_16", "ViT_B_16_Weights.IMAGENET1K_V1",
                  input_size=224, grid=14, depth=768, kind="vit",
                  n_layers=12, n_heads=12),
        ModelSpec("vit-l-16", "vit_l_16", "ViT_L_16_Weights.IMAGENET1K_V1",
                  input_size=224, grid=14, depth=1024, kind="vit",
                  n_layers=24, n_heads=16),
        ModelSpec("resnet50", "resnet50", "ResNet50_Weights.IMAGENET1K_V2",
                  input_size=448, grid=14, depth=2048, kind="conv",
                  n_layers=4, n_heads=1),
    )
}


def get_spec(name: str) -> ModelSpec:
    try:
        return REGISTRY[name]
    except KeyError:
        raise UnknownModelError(
            f"unknown model {name!r}; available: {sorted(REGISTRY)}")


def load_model(spec: ModelSpec, random_init: bool = False,
               seed: int = 0) -> torch.nn.Module:
    """Build the backbone; random_init skips the weight download entirely."""
    import torchvision.models as tvm

    builder = getattr(tvm, spec.builder)
    if random_init:
        torch.manual_seed(seed)
        model = builder(weights=None)
    else:
        enum_name, member = spec.weights.split(".")
        weights = getattr(getattr(tvm, enum_name), member)
        try:
            model = builder(weights=weights)
        except Exception as exc:  # urllib errors vary by cause
            raise WeightsFetchError(
                f"could not fetch weights for {spec.name}: {exc}") from exc
    model.eval()
    return model


def preprocess(image: Image.Image, input_size: int) -> torch.Tensor:
    image = image.convert("RGB").resize((input_size, input_size),
                                        Image.BILINEAR)
    arr = np.asarray(image, dtype=np.float32) / 255.0
    arr = (arr - np.asarray(IMAGENET_MEAN, dtype=np.float32)) \
        / np.asarray(IMAGENET_STD, dtype=np.float32)
    return torch.from_numpy(arr).permute(2, 0, 1).unsqueeze(0)


def _vit_layer_tokens(model: torch.nn.Module, batch: torch.Tensor,
                      layers: list[int], grid: int) -> dict[int, np.ndarray]:
    """Patch tokens after each requested encoder layer, as (grid, grid, d)."""
    captured: dict[int, torch.Tensor] = {}
    hooks = []
    encoder_layers = list(model.encoder.layers)
    for i in layers:
        if not 0 <= i < len(encoder_layers):
            raise ValueError(f"layer {i} out of range 0..{len(encoder_layers) - 1}")

        def make_hook(index):
            def hook(_module, _inputs, output):
                captured[index] = output.detach()
            return hook

        hooks.append(encoder_layers[i].register_forward_hook(make_hook(i)))
    try:
        with torch.no_grad():
            model(batch)
    finally:
        for h in hooks:
            h.remove()
    out = {}
    for i, tokens in captured.items():
        patch_tokens = tokens[0, 1:, :]  # drop the class token
        out[i] = patch_tokens.reshape(grid, grid, -1).numpy()
    return out


def _conv_features(model: torch.nn.Module, batch: torch.Tensor) -> np.ndarray:
    captured = {}

    def hook(_module, _inputs, output):
        captured["features"] = output.detach()

    handle = model.layer4.register_forward_hook(hook)
    try:
        with torch.no_grad():
            model(batch)
    finally:
        handle.remove()
    fmap = captured["features"][0]  # (c, h, w)
    return fmap.permute(1, 2, 0).numpy()


def extract(model: torch.nn.Module, spec: ModelSpec, image: Image.Image,
            layers: list[int] | None = None,
            per_head: bool = False) -> dict[str, np.ndarray]:
    """Feature grids for one image, keyed by variant name.

    The default export is the final layer under the key "final". With
    `layers`, one entry per requested layer ("layer00", ...). With
    `per_head`, each exported grid is additionally split along the feature
    dimension into equal per-head grids ("...head00", ...).
    """
    batch = preprocess(image, spec.input_size)
    grids: dict[str, np.ndarray] = {}
    if spec.kind == "vit":
        wanted = layers if layers is not None else [spec.n_layers - 1]
        tokens = _vit_layer_tokens(model, batch, wanted, spec.grid)
        for i, grid in tokens.items():
            key = "final" if layers is None else f"layer{i:02d}"
            grids[key] = grid
    else:
        if layers is not None:
            raise ValueError(f"{spec.name}: per-layer export is ViT-only")
        grids["final"] = _conv_features(model, batch)

    for key, grid in grids.items():
        if grid.shape[:2] != (spec.grid, spec.grid):
            raise RuntimeError(
                f"{spec.name}/{key}: grid {grid.shape[:2]} does not match "
                f"declared {spec.grid}x{spec.grid}")

    if per_head:
        if spec.n_heads < 2:
            raise ValueError(f"{spec.name}: per-head export needs a ViT")
        split: dict[str, np.ndarray] = {}
        for key, grid in grids.items():
            head_dim = grid.shape[2] // spec.n_heads
            for h in range(spec.n_heads):
                split[f"{key}.head{h:02d}"] = \
                    grid[:, :, h * head_dim:(h + 1) * head_dim]
        grids = split
    return grids
