"""Dataset handling: file formats, score labelling, splitting, batching.

A dataset on disk is three files:

* a feature file (``.lpff``): fixed 28-byte header followed by a row-major
  little-endian float32 payload. Header layout: magic ``LPFF``, u32 version
  (currently 1), u64 row count, u32 feature dimension, u8 dtype code
  (0 = float32), 7 reserved zero bytes.
* a manifest (``.csv``): header ``id,score``, one row per feature row, in
  feature-file order. Ids are non-empty and unique; scores are finite.
* a descriptor (``.lpfd``): ``key=value`` lines naming the other two files
  (relative paths resolve against the descriptor's directory), the score
  polarity, and a display name. ``#`` comments and blank lines are ignored.

In memory a dataset always carries, next to the raw scores, their min-max
normalised form in [0, 1] (flipped when lower raw scores mean better
quality) and a four-way category label from quartile boundaries. The
boundaries default to the dataset's own score distribution but can be
imposed from another population, which is how a held-out split inherits
its labels from the training split without leaking its own statistics.
"""

from __future__ import annotations

import csv
import io
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataFormatError, ShapeError, TruncatedFileError, VersionError
from .fileio import atomic_write_bytes, atomic_write_text

FEATURE_MAGIC = b"LPFF"
FEATURE_VERSION = 1
_HEADER = struct.Struct("<4sIQIB7x")

POLARITIES = ("higher", "lower")
SCORE_RULES = ("linear", "norm")
NUM_CATEGORIES = 4

# Parameters of the synthetic score rules are drawn from this fixed seed,
# never from the dataset seed, so every synthetic dataset with the same
# (rule, dim) samples the same underlying target function.
_RULE_SEED = 7153
_RULE_CODES = {"linear": 1, "norm": 2}

# Rule scales picked empirically so both targets spread well over [0, 1]
# and are learnable by the default model within the default epoch budget.
_LINEAR_GAIN = 3.0
_NORM_CENTER_DIST = 6.0
_NORM_TEMPERATURE = 8.0


# ---------------------------------------------------------------------------
# score labelling


def normalize_scores(raw_scores: np.ndarray, polarity: str = "higher") -> np.ndarray:
    """Min-max normalise scores to [0, 1], where 1 always means best quality.

    With ``polarity="lower"`` (distortion-style scores) the scale is
    flipped. A constant input has no scale; it maps to all 0.5 with a
    warning.
    """
    if polarity not in POLARITIES:
        raise ValueError(f"polarity must be one of {POLARITIES}, got {polarity!r}")
    raw = np.asarray(raw_scores, dtype=np.float64)
    if raw.ndim != 1 or raw.size == 0:
        raise ShapeError(f"scores must be a non-empty vector, got shape {raw.shape}")
    if not np.all(np.isfinite(raw)):
        raise ValueError("scores must be finite")
    lo = raw.min()
    hi = raw.max()
    if hi == lo:
        warnings.warn("all scores are equal; normalised scores set to 0.5")
        return np.full(raw.shape, 0.5)
    norm = (raw - lo) / (hi - lo)
    if polarity == "lower":
        norm = 1.0 - norm
    return norm


@dataclass(frozen=True)
class QuartileBoundaries:
    q1: float
    q2: float
    q3: float

    def __post_init__(self) -> None:
        if not self.q1 <= self.q2 <= self.q3:
            raise ValueError(f"quartiles must be non-decreasing, got {self}")


def quartile_boundaries(norm_scores: np.ndarray) -> QuartileBoundaries:
    """Quartiles of the normalised scores, linearly interpolated."""
    norm = np.asarray(norm_scores, dtype=np.float64)
    if norm.ndim != 1 or norm.size < 4:
        raise ShapeError(
            f"quartiles need at least 4 samples, got shape {norm.shape}"
        )
    q1, q2, q3 = np.quantile(norm, [0.25, 0.5, 0.75], method="linear")
    return QuartileBoundaries(float(q1), float(q2), float(q3))


def assign_categories(
    norm_scores: np.ndarray, boundaries: QuartileBoundaries
) -> np.ndarray:
    """Map each normalised score to a quality category in {0, 1, 2, 3}.

    Intervals are closed above: scores equal to a boundary fall in the lower
    category, so category 3 is the strictly-above-q3 tail.
    """
    norm = np.asarray(norm_scores, dtype=np.float64)
    cats = (
        3
        - (norm <= boundaries.q3).astype(np.int64)
        - (norm <= boundaries.q2).astype(np.int64)
        - (norm <= boundaries.q1).astype(np.int64)
    )
    return cats


# ---------------------------------------------------------------------------
# in-memory dataset


@dataclass
class FeatureDataset:
    """Aligned features and scores plus the labels derived from them.

    ``norm_scores`` is always the min-max map of this instance's own raw
    scores. Category labels come from ``boundaries``: left at None they are
    derived from this instance's scores, or a caller can impose boundaries
    from another population (how a test split inherits the training split's
    quartiles). After construction ``boundaries`` always holds the values
    actually used.
    """

    ids: list[str]
    features: np.ndarray
    raw_scores: np.ndarray
    polarity: str = "higher"
    name: str = "dataset"
    boundaries: QuartileBoundaries | None = None
    norm_scores: np.ndarray = field(init=False)
    categories: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        self.features = np.asarray(self.features, dtype=np.float64)
        self.raw_scores = np.asarray(self.raw_scores, dtype=np.float64)
        if self.features.ndim != 2:
            raise ShapeError(f"features must be 2-d, got shape {self.features.shape}")
        n = self.features.shape[0]
        if len(self.ids) != n or self.raw_scores.shape != (n,):
            raise ShapeError(
                f"misaligned dataset: {len(self.ids)} ids, "
                f"{self.features.shape[0]} feature rows, "
                f"{self.raw_scores.shape[0]} scores"
            )
        if not np.all(np.isfinite(self.features)):
            raise ValueError("features must be finite")
        self.norm_scores = normalize_scores(self.raw_scores, self.polarity)
        if self.boundaries is None:
            self.boundaries = quartile_boundaries(self.norm_scores)
        self.categories = assign_categories(self.norm_scores, self.boundaries)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(
        self,
        indices: np.ndarray,
        name: str | None = None,
        boundaries: QuartileBoundaries | None = None,
    ) -> "FeatureDataset":
        indices = np.asarray(indices)
        return FeatureDataset(
            ids=[self.ids[i] for i in indices],
            features=self.features[indices],
            raw_scores=self.raw_scores[indices],
            polarity=self.polarity,
            name=name if name is not None else self.name,
            boundaries=boundaries,
        )


def split_train_test(
    ds: FeatureDataset, train_fraction: float, seed: int
) -> tuple[FeatureDataset, FeatureDataset]:
    """Seeded-shuffle partition; train gets ``floor(train_fraction * n)``.

    Quartile labels are recomputed on the training side only; the test side
    is labelled with the training side's boundaries, so no test information
    leaks into the labels the model trains on.
    """
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must be in (0, 1), got {train_fraction}")
    perm = np.random.default_rng(seed).permutation(ds.n)
    n_train = int(np.floor(train_fraction * ds.n))
    if n_train < 1 or ds.n - n_train < 1:
        raise ValueError(
            f"split of {ds.n} samples at fraction {train_fraction} leaves an "
            "empty side"
        )
    train = ds.subset(perm[:n_train], name=f"{ds.name}/train")
    test = ds.subset(perm[n_train:], name=f"{ds.name}/test", boundaries=train.boundaries)
    return train, test


@dataclass(frozen=True)
class Batch:
    ids: list[str]
    indices: np.ndarray
    features: np.ndarray
    norm_scores: np.ndarray
    categories: np.ndarray


def iterate_batches(
    ds: FeatureDataset, batch_size: int, seed: int, epoch: int
) -> list[Batch]:
    """Batches of one epoch, in a per-epoch shuffled order.

    The shuffle is a pure function of ``(seed, epoch)``. A short final
    batch is kept unless it has fewer than 2 samples (a single sample
    admits no pairs), in which case it is dropped.
    """
    if batch_size < 2:
        raise ValueError(f"batch_size must be >= 2, got {batch_size}")
    perm = np.random.default_rng([seed, epoch]).permutation(ds.n)
    batches = []
    for start in range(0, ds.n, batch_size):
        idx = perm[start : start + batch_size]
        if idx.size < 2:
            break
        batches.append(
            Batch(
                ids=[ds.ids[i] for i in idx],
                indices=idx,
                features=ds.features[idx],
                norm_scores=ds.norm_scores[idx],
                categories=ds.categories[idx],
            )
        )
    return batches


# ---------------------------------------------------------------------------
# synthetic data


def _rule_params(rule: str, dim: int) -> np.ndarray:
    rng = np.random.default_rng([_RULE_SEED, _RULE_CODES[rule], dim])
    direction = rng.normal(size=dim)
    direction /= np.linalg.norm(direction)
    if rule == "linear":
        return _LINEAR_GAIN * direction
    # "norm": a fixed centre; quality decays with squared distance from it.
    return _NORM_CENTER_DIST * direction


def synthesize_dataset(
    n: int, dim: int, seed: int, rule: str = "linear", name: str = "synthetic"
) -> FeatureDataset:
    """Standard-normal features with scores from a fixed deterministic rule.

    Rules: ``linear`` scores ``sigmoid(w . x)`` with a fixed direction
    ``w``; ``norm`` scores ``exp(-||x - c||^2 / tau)`` with a fixed
    centre ``c``. ``seed`` controls only the feature draw; the rule
    parameters depend on (rule, dim) alone, so datasets with different
    seeds are fresh samples of the same underlying score function.
    """
    if rule not in SCORE_RULES:
        raise ValueError(f"rule must be one of {SCORE_RULES}, got {rule!r}")
    if n < 8 or dim < 1:
        raise ValueError(f"need n >= 8 and dim >= 1, got n={n}, dim={dim}")
    rng = np.random.default_rng([seed, _RULE_CODES[rule], dim])
    features = rng.normal(size=(n, dim))
    params = _rule_params(rule, dim)
    if rule == "linear":
        raw = 1.0 / (1.0 + np.exp(-(features @ params)))
    else:
        sq_dist = ((features - params) ** 2).sum(axis=1)
        raw = np.exp(-sq_dist / _NORM_TEMPERATURE)
    ids = [f"synth-{i:06d}" for i in range(n)]
    return FeatureDataset(
        ids=ids, features=features, raw_scores=raw, polarity="higher", name=name
    )


# ---------------------------------------------------------------------------
# feature file


@dataclass(frozen=True)
class FeatureFileInfo:
    version: int
    count: int
    dim: int
    dtype_code: int


def write_feature_file(path: str | Path, features: np.ndarray) -> None:
    features = np.asarray(features)
    if features.ndim != 2:
        raise ShapeError(f"features must be 2-d, got shape {features.shape}")
    if not np.all(np.isfinite(features)):
        raise ValueError("features must be finite")
    if np.abs(features).max(initial=0.0) > np.finfo(np.float32).max:
        raise ValueError("features overflow float32 storage")
    payload = np.ascontiguousarray(features, dtype="<f4")
    header = _HEADER.pack(
        FEATURE_MAGIC, FEATURE_VERSION, features.shape[0], features.shape[1], 0
    )
    atomic_write_bytes(path, header + payload.tobytes())


def read_feature_header(blob: bytes, origin: str) -> FeatureFileInfo:
    if len(blob) < _HEADER.size:
        raise TruncatedFileError(f"{origin}: truncated header ({len(blob)} bytes)")
    magic, version, count, dim, dtype_code = _HEADER.unpack_from(blob)
    if magic != FEATURE_MAGIC:
        raise DataFormatError(f"{origin}: bad magic {magic!r}")
    if version != FEATURE_VERSION:
        raise VersionError(f"{origin}: unsupported version {version}")
    if dtype_code != 0:
        raise DataFormatError(f"{origin}: unsupported dtype code {dtype_code}")
    return FeatureFileInfo(version=version, count=count, dim=dim, dtype_code=dtype_code)


def inspect_feature_file(path: str | Path) -> FeatureFileInfo:
    blob = Path(path).read_bytes()
    return read_feature_header(blob, str(path))


def read_feature_file(path: str | Path) -> np.ndarray:
    """Load a feature file as float64, validating header and payload size."""
    path = Path(path)
    blob = path.read_bytes()
    info = read_feature_header(blob, str(path))
    expected = info.count * info.dim * 4
    payload = blob[_HEADER.size :]
    if len(payload) < expected:
        raise TruncatedFileError(
            f"{path}: payload is {len(payload)} bytes, expected {expected} "
            f"for {info.count} rows of dim {info.dim}"
        )
    if len(payload) > expected:
        raise DataFormatError(
            f"{path}: {len(payload) - expected} stray bytes after the payload"
        )
    data = np.frombuffer(payload, dtype="<f4").astype(np.float64)
    return data.reshape(info.count, info.dim)


# ---------------------------------------------------------------------------
# manifest


def write_manifest(path: str | Path, ids: list[str], scores: np.ndarray) -> None:
    scores = np.asarray(scores, dtype=np.float64)
    if len(ids) != scores.shape[0]:
        raise ShapeError(f"{len(ids)} ids but {scores.shape[0]} scores")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["id", "score"])
    for sample_id, score in zip(ids, scores):
        writer.writerow([sample_id, repr(float(score))])
    atomic_write_text(path, buf.getvalue())


def read_manifest(path: str | Path) -> tuple[list[str], np.ndarray]:
    path = Path(path)
    with open(path, newline="") as handle:
        rows = list(csv.reader(handle))
    if not rows or rows[0] != ["id", "score"]:
        raise DataFormatError(f"{path}: first line must be the header 'id,score'")
    ids: list[str] = []
    scores: list[float] = []
    seen: set[str] = set()
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != 2:
            raise DataFormatError(f"{path}:{lineno}: expected 2 fields, got {len(row)}")
        sample_id, score_text = row
        if not sample_id:
            raise DataFormatError(f"{path}:{lineno}: empty id")
        if sample_id in seen:
            raise DataFormatError(f"{path}:{lineno}: duplicate id {sample_id!r}")
        seen.add(sample_id)
        try:
            score = float(score_text)
        except ValueError as exc:
            raise DataFormatError(
                f"{path}:{lineno}: unparsable score {score_text!r}"
            ) from exc
        if not np.isfinite(score):
            raise DataFormatError(f"{path}:{lineno}: non-finite score {score_text!r}")
        ids.append(sample_id)
        scores.append(score)
    if not ids:
        raise DataFormatError(f"{path}: manifest has no data rows")
    return ids, np.asarray(scores, dtype=np.float64)


# ---------------------------------------------------------------------------
# descriptor


@dataclass(frozen=True)
class DatasetDescriptor:
    features_path: Path
    manifest_path: Path
    polarity: str
    name: str


_DESCRIPTOR_KEYS = {"features", "manifest", "polarity", "name"}
_DESCRIPTOR_REQUIRED = {"features", "manifest", "polarity"}


def write_descriptor(
    path: str | Path,
    features_name: str,
    manifest_name: str,
    polarity: str,
    name: str,
) -> None:
    if polarity not in POLARITIES:
        raise ValueError(f"polarity must be one of {POLARITIES}, got {polarity!r}")
    lines = [
        f"features={features_name}",
        f"manifest={manifest_name}",
        f"polarity={polarity}",
        f"name={name}",
        "",
    ]
    atomic_write_text(path, "\n".join(lines))


def read_descriptor(path: str | Path) -> DatasetDescriptor:
    path = Path(path)
    pairs: dict[str, str] = {}
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise DataFormatError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key = key.strip()
        value = value.strip()
        if key not in _DESCRIPTOR_KEYS:
            raise DataFormatError(f"{path}:{lineno}: unknown key {key!r}")
        if key in pairs:
            raise DataFormatError(f"{path}:{lineno}: duplicate key {key!r}")
        pairs[key] = value
    missing = _DESCRIPTOR_REQUIRED - pairs.keys()
    if missing:
        raise DataFormatError(f"{path}: missing keys {sorted(missing)}")
    if pairs["polarity"] not in POLARITIES:
        raise DataFormatError(
            f"{path}: polarity must be one of {POLARITIES}, got {pairs['polarity']!r}"
        )
    base = path.parent
    return DatasetDescriptor(
        features_path=(base / pairs["features"]).resolve(),
        manifest_path=(base / pairs["manifest"]).resolve(),
        polarity=pairs["polarity"],
        name=pairs.get("name", "dataset"),
    )


def load_dataset(descriptor_path: str | Path) -> FeatureDataset:
    """Assemble a FeatureDataset from a descriptor and its referenced files."""
    desc = read_descriptor(descriptor_path)
    features = read_feature_file(desc.features_path)
    ids, scores = read_manifest(desc.manifest_path)
    if features.shape[0] != len(ids):
        raise DataFormatError(
            f"{descriptor_path}: feature file has {features.shape[0]} rows but "
            f"manifest lists {len(ids)} samples"
        )
    return FeatureDataset(
        ids=ids,
        features=features,
        raw_scores=scores,
        polarity=desc.polarity,
        name=desc.name,
    )


def write_dataset_files(out_dir: str | Path, ds: FeatureDataset) -> Path:
    """Write the three dataset files into ``out_dir``; returns the descriptor path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_feature_file(out_dir / "features.lpff", ds.features)
    write_manifest(out_dir / "manifest.csv", ds.ids, ds.raw_scores)
    descriptor = out_dir / "dataset.lpfd"
    write_descriptor(descriptor, "features.lpff", "manifest.csv", ds.polarity, ds.name)
    return descriptor
