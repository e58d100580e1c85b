"""Turn a directory of images into a CAPF feature file.

Pipeline per image: decode to RGB, resize the short side to 256, center
crop 224x224, scale to [0, 1], normalize with the ImageNet channel
statistics, run the full classifier in eval mode, capture the last
spatial feature map, adaptive-average-pool it onto a rows x cols grid,
and flatten row-major into rows*cols region vectors of length
feature_dim.

Unreadable images are skipped with a warning and listed under
"skipped_images" in the manifest sidecar; the CAPF reader ignores keys it
does not know, so augmented sidecars stay fully compatible.
"""

from __future__ import annotations

import json
import warnings
from pathlib import Path

import numpy as np
import torch
from PIL import Image, UnidentifiedImageError
from torch.nn import functional as F
from torchvision import transforms

from caplab.features import ExtractorManifest, FeatureSet, FeatureStore, manifest_path, write_capf

from . import encoders
from .exceptions import DataError, UsageError

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)
PREPROCESSING = "resize_short=256, center_crop=224, rgb, scale=1/255, imagenet_norm"
IMAGE_SUFFIXES = {".jpg", ".jpeg", ".png", ".bmp", ".webp"}


def make_preprocessor() -> transforms.Compose:
    return transforms.Compose([
        transforms.Resize(256),
        transforms.CenterCrop(224),
        transforms.ToTensor(),
        transforms.Normalize(IMAGENET_MEAN, IMAGENET_STD),
    ])


def parse_grid(text: str) -> tuple[int, int]:
    """'RxC' -> (rows, cols), e.g. '7x7' -> (7, 7)."""
    parts = str(text).lower().split("x")
    try:
        rows, cols = (int(p) for p in parts)
    except ValueError:
        raise UsageError(f"grid must look like '7x7', got {text!r}") from None
    if rows < 1 or cols < 1:
        raise UsageError(f"grid sides must be >= 1, got {text!r}")
    return rows, cols


def discover_images(image_dir) -> list[Path]:
    d = Path(image_dir)
    if not d.is_dir():
        raise DataError(f"image directory not found: {d}")
    found = sorted(p for p in d.iterdir()
                   if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)
    if not found:
        raise DataError(f"no images ({'/'.join(sorted(IMAGE_SUFFIXES))}) in {d}")
    return found


def _load_tensor(path: Path, preprocess) -> torch.Tensor | None:
    try:
        with Image.open(path) as img:
            return preprocess(img.convert("RGB"))
    except (UnidentifiedImageError, OSError, ValueError) as exc:
        warnings.warn(f"skipping unreadable image {path.name}: {exc}", stacklevel=2)
        return None


class _Tap:
    """Forward hook that keeps the most recent output of one submodule."""

    def __init__(self, module):
        self.out = None
        self._handle = module.register_forward_hook(self._grab)

    def _grab(self, module, inputs, output):
        self.out = output

    def remove(self):
        self._handle.remove()


def _pooled_grid(feature_map: torch.Tensor, spec, grid) -> torch.Tensor:
    if feature_map.ndim != 4:
        raise DataError(
            f"{spec.name}: captured activation has shape "
            f"{tuple(feature_map.shape)}, expected a batch of 2-D maps"
        )
    if feature_map.shape[1] != spec.feature_dim:
        raise DataError(
            f"{spec.name}: captured {feature_map.shape[1]} channels, "
            f"registry declares {spec.feature_dim}"
        )
    if spec.relu_after:
        feature_map = F.relu(feature_map)
    pooled = F.adaptive_avg_pool2d(feature_map, grid)
    batch = pooled.shape[0]
    return pooled.permute(0, 2, 3, 1).reshape(batch, grid[0] * grid[1], spec.feature_dim)


def extract_features(image_paths, cnn_name: str, grid=(7, 7),
                     weights: str = "pretrained", seed: int = 0,
                     batch_size: int = 8, progress=None):
    """Extract pooled region features for every readable image.

    Returns (FeatureStore, skipped) where skipped lists the file names
    that could not be decoded. Image ids are file names including the
    extension, matching the keys caption datasets use.
    """
    spec = encoders.encoder_spec(cnn_name)
    rows, cols = grid
    if batch_size < 1:
        raise UsageError(f"batch_size must be >= 1, got {batch_size}")
    paths = [Path(p) for p in image_paths]
    if not paths:
        raise DataError("no images to extract")

    model = encoders.build_model(cnn_name, weights=weights, seed=seed)
    tap = _Tap(encoders.capture_module(model, spec))

    from capfeat import __version__
    manifest = ExtractorManifest(
        cnn_name=cnn_name,
        parameter_count_thousands=round(encoders.exact_parameter_count(model) / 1000),
        regions=rows * cols,
        dim=spec.feature_dim,
        preprocessing=PREPROCESSING,
        extractor_version=f"capfeat-{__version__} weights={weights}",
    )
    store = FeatureStore(manifest)
    preprocess = make_preprocessor()
    skipped: list[str] = []

    try:
        pending: list[tuple[str, torch.Tensor]] = []

        def flush():
            if not pending:
                return
            batch = torch.stack([t for _, t in pending])
            with torch.no_grad():
                model(batch)
                grids = _pooled_grid(tap.out, spec, (rows, cols))
            for (image_id, _), g in zip(pending, grids):
                store.add(FeatureSet(image_id, g.numpy().astype(np.float32)))
                if progress:
                    progress(image_id)
            pending.clear()

        for path in paths:
            tensor = _load_tensor(path, preprocess)
            if tensor is None:
                skipped.append(path.name)
                continue
            pending.append((path.name, tensor))
            if len(pending) == batch_size:
                flush()
        flush()
    finally:
        tap.remove()

    if len(store) == 0:
        raise DataError("every input image was unreadable; nothing to write")
    return store, skipped


def save_features(store: FeatureStore, out_path, skipped=(), truncation=None):
    """Write the CAPF file, then record skip list and truncation rule as
    extra sidecar keys (ignored by readers that do not know them)."""
    out_path = Path(out_path)
    write_capf(store, out_path)
    side = manifest_path(out_path)
    blob = json.loads(side.read_text(encoding="utf-8"))
    blob["skipped_images"] = sorted(skipped)
    if truncation:
        blob["truncation"] = truncation
    side.write_text(json.dumps(blob, indent=2), encoding="utf-8")
    return out_path
