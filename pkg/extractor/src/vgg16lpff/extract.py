"""Image to feature-vector pipeline: decode, crop, forward, pool, write."""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import torch
from PIL import Image, UnidentifiedImageError

from .backbone import FEATURE_DIM, load_backbone
from .formats import (
    _atomic_write,
    write_descriptor,
    write_feature_file,
    write_manifest,
)

CROP_SIZE = 224
# Standard input statistics of the pretrained backbone.
_CHANNEL_MEAN = np.array([0.485, 0.456, 0.406], dtype=np.float32)
_CHANNEL_STD = np.array([0.229, 0.224, 0.225], dtype=np.float32)

POOLING_MODES = ("avg", "max")


@dataclass(frozen=True)
class ExtractionJob:
    """One extraction run: which images, which backbone, which crops."""

    images: list[tuple[str, Path]]
    crop_seed: int = 0
    crop_size: int = CROP_SIZE
    weights: str = "imagenet"
    pooling: str = "avg"
    scores: dict[str, float] | None = None
    polarity: str = "higher"
    name: str | None = None

    def __post_init__(self) -> None:
        if not self.images:
            raise ValueError("image list is empty")
        if self.crop_size < 32:
            raise ValueError(f"crop_size must be >= 32, got {self.crop_size}")
        if self.pooling not in POOLING_MODES:
            raise ValueError(f"pooling must be one of {POOLING_MODES}, got {self.pooling!r}")
        if self.polarity not in ("higher", "lower"):
            raise ValueError(f"polarity must be 'higher' or 'lower', got {self.polarity!r}")


def load_rgb(path: Path) -> np.ndarray:
    """Decode an image to an (H, W, 3) uint8 array."""
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"))


def crop_window(height: int, width: int, size: int, rng: np.random.Generator) -> tuple[int, int]:
    """Uniform top-left corner of a size x size window inside (height, width)."""
    if height < size or width < size:
        raise ValueError(f"image {height}x{width} smaller than crop {size}")
    top = int(rng.integers(0, height - size + 1))
    left = int(rng.integers(0, width - size + 1))
    return top, left


def prepare(image: np.ndarray, size: int, rng: np.random.Generator) -> torch.Tensor:
    """Random-crop and normalise one decoded image to a (3, size, size) tensor.

    Images smaller than the crop in either direction are bilinearly upscaled
    until the short side reaches the crop size; typical IQA photographs are
    all larger than the crop, so this is a robustness fallback, not a hot
    path.
    """
    height, width = image.shape[:2]
    if min(height, width) < size:
        scale = size / min(height, width)
        new_w = max(size, int(round(width * scale)))
        new_h = max(size, int(round(height * scale)))
        with Image.fromarray(image) as img:
            image = np.asarray(img.resize((new_w, new_h), Image.BILINEAR))
        height, width = image.shape[:2]
    top, left = crop_window(height, width, size, rng)
    crop = image[top : top + size, left : left + size].astype(np.float32) / 255.0
    crop = (crop - _CHANNEL_MEAN) / _CHANNEL_STD
    return torch.from_numpy(np.ascontiguousarray(crop.transpose(2, 0, 1)))


def _pool(feature_map: torch.Tensor, pooling: str) -> np.ndarray:
    # (C, H, W) -> (C,): collapse the spatial grid.
    if pooling == "avg":
        pooled = feature_map.mean(dim=(1, 2))
    else:
        pooled = feature_map.amax(dim=(1, 2))
    return pooled.numpy().astype(np.float32)


def extract_features(
    job: ExtractionJob, backbone: torch.nn.Module | None = None
) -> tuple[list[str], np.ndarray, list[str]]:
    """Run the backbone over every decodable image.

    Returns (ids, features, skipped_ids). Undecodable images are skipped
    with a warning; each image's crop stream is keyed by its position in
    the job list, so one bad file does not move anyone else's crop.
    """
    if backbone is None:
        backbone = load_backbone(job.weights)
    ids: list[str] = []
    rows: list[np.ndarray] = []
    skipped: list[str] = []
    with torch.no_grad():
        for index, (image_id, path) in enumerate(job.images):
            try:
                image = load_rgb(path)
            except (OSError, UnidentifiedImageError, ValueError) as exc:
                warnings.warn(f"skipping undecodable image {path}: {exc}", stacklevel=2)
                skipped.append(image_id)
                continue
            rng = np.random.default_rng([job.crop_seed, index])
            tensor = prepare(image, job.crop_size, rng)
            feature_map = backbone(tensor.unsqueeze(0))[0]
            row = _pool(feature_map, job.pooling)
            if row.shape != (FEATURE_DIM,):
                raise RuntimeError(
                    f"backbone produced dim {row.shape}, expected ({FEATURE_DIM},)"
                )
            ids.append(image_id)
            rows.append(row)
    if not rows:
        raise RuntimeError("no image could be decoded; nothing to write")
    return ids, np.stack(rows), skipped


def run_extraction(job: ExtractionJob, out_dir: str | Path) -> Path:
    """Extract and write the dataset files; returns the descriptor path.

    With scores, all three files are written and every extracted image must
    have a score. Without scores only the feature file is written (enough
    for the engine's predict command).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    started = datetime.now(timezone.utc).isoformat()
    ids, features, skipped = extract_features(job)

    if job.scores is not None:
        missing = [sample_id for sample_id in ids if sample_id not in job.scores]
        if missing:
            raise ValueError(f"no score for extracted images: {missing[:5]}")

    write_feature_file(out_dir / "features.lpff", features)
    outputs = ["features.lpff"]
    if job.scores is not None:
        write_manifest(
            out_dir / "manifest.csv", ids, [job.scores[sample_id] for sample_id in ids]
        )
        write_descriptor(
            out_dir / "dataset.lpfd",
            "features.lpff",
            "manifest.csv",
            job.polarity,
            job.name,
        )
        outputs += ["manifest.csv", "dataset.lpfd"]

    payload = {
        "command": "extract",
        "config": {
            "crop_seed": job.crop_seed,
            "crop_size": job.crop_size,
            "weights": job.weights,
            "pooling": job.pooling,
            "polarity": job.polarity,
            "name": job.name,
        },
        "images": len(job.images),
        "extracted": len(ids),
        "skipped": skipped,
        "outputs": outputs,
        "started_at": started,
        "ended_at": datetime.now(timezone.utc).isoformat(),
    }
    _atomic_write(
        out_dir / "run_manifest.json",
        (json.dumps(payload, indent=2, sort_keys=True) + "\n").encode("utf-8"),
    )
    return out_dir / ("dataset.lpfd" if job.scores is not None else "features.lpff")
