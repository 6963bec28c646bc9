"""Writers for the engine's dataset files.

The byte layout is the interface between this package and the engine, so it
is restated here in full rather than imported:

* feature file: header ``<4sIQIB7x`` little-endian = magic ``LPFF``,
  u32 version (1), u64 row count, u32 feature dimension, u8 dtype code
  (0 = float32), 7 reserved zero bytes; then count x dim row-major float32
  little-endian values. Row order defines sample order.
* manifest: UTF-8 CSV with header ``id,score``; row i aligns with feature
  row i.
* descriptor: ``key=value`` lines with keys ``features``, ``manifest``,
  ``polarity`` and optional ``name``; relative paths resolve against the
  descriptor's directory.

All writes go to a temp name in the target directory and are renamed into
place, so a failed run leaves no partial artifact.
"""

from __future__ import annotations

import os
import struct
import tempfile
from pathlib import Path

import numpy as np

FEATURE_MAGIC = b"LPFF"
FEATURE_VERSION = 1
_HEADER = struct.Struct("<4sIQIB7x")


def _atomic_write(path: Path, data: bytes) -> None:
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp_name, path)
    except BaseException:
        os.unlink(tmp_name)
        raise


def write_feature_file(path: str | Path, features: np.ndarray) -> None:
    path = Path(path)
    features = np.asarray(features)
    if features.ndim != 2 or features.shape[0] < 1 or features.shape[1] < 1:
        raise ValueError(f"features must be a non-empty 2-D array, got {features.shape}")
    if not np.all(np.isfinite(features)):
        raise ValueError("features contain non-finite values")
    payload = np.ascontiguousarray(features, dtype="<f4")
    header = _HEADER.pack(
        FEATURE_MAGIC, FEATURE_VERSION, features.shape[0], features.shape[1], 0
    )
    _atomic_write(path, header + payload.tobytes())


def write_manifest(path: str | Path, ids: list[str], scores: list[float]) -> None:
    path = Path(path)
    if len(ids) != len(scores):
        raise ValueError(f"{len(ids)} ids but {len(scores)} scores")
    seen: set[str] = set()
    for sample_id in ids:
        if not sample_id or "," in sample_id or "\n" in sample_id:
            raise ValueError(f"invalid sample id {sample_id!r}")
        if sample_id in seen:
            raise ValueError(f"duplicate sample id {sample_id!r}")
        seen.add(sample_id)
    if not all(np.isfinite(scores)):
        raise ValueError("scores contain non-finite values")
    lines = ["id,score"]
    lines += [f"{sample_id},{float(score)!r}" for sample_id, score in zip(ids, scores)]
    _atomic_write(path, ("\n".join(lines) + "\n").encode("utf-8"))


def write_descriptor(
    path: str | Path,
    features_name: str,
    manifest_name: str,
    polarity: str,
    name: str | None = None,
) -> None:
    path = Path(path)
    if polarity not in ("higher", "lower"):
        raise ValueError(f"polarity must be 'higher' or 'lower', got {polarity!r}")
    lines = [
        f"features={features_name}",
        f"manifest={manifest_name}",
        f"polarity={polarity}",
    ]
    if name is not None:
        lines.append(f"name={name}")
    _atomic_write(path, ("\n".join(lines) + "\n").encode("utf-8"))
