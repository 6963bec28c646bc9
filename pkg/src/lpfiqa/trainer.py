"""Training loop, optimiser, evaluation, and checkpoint persistence.

The loop is plain full-batch-gradient stochastic training: for every batch
the trunk runs once, each enabled head runs on the shared latent, head
gradients are summed at the latent and pushed through the trunk, and one
Adam step updates every trainable parameter. The direct regression head
always trains; the class and pair heads train only while enabled and then
contribute their weighted loss terms.

Checkpoints use a small sectioned binary format (``.lpfc``): magic ``LPFC``,
u32 version, three u64-length-prefixed sections (JSON metadata, parameter
payload, optimiser payload), and a trailing 8-byte integrity checksum (the
first 8 bytes of the SHA-256 of everything before it). All numbers are
little-endian; array payloads are float64. Serialisation is canonical, so
two checkpoints of identical state are byte-identical.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable

import numpy as np

from .dataset import FeatureDataset, iterate_batches
from .errors import (
    ChecksumError,
    ConfigError,
    DataFormatError,
    NumericalError,
    ShapeError,
    TruncatedFileError,
    VersionError,
)
from .fileio import atomic_write_bytes
from .layers import Param
from .losses import LossWeights, cross_entropy_loss, mse_loss, total_loss
from .metrics import ClassificationReport, classification_report, plcc, srocc
from .model import LpfModel, ModelConfig, make_pair_batch

CHECKPOINT_MAGIC = b"LPFC"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    """Optimisation hyperparameters plus everything needed to replay a run.

    ``seed`` drives model initialisation, the train/test split, batch
    shuffling, and the dropout streams; a (dataset, TrainConfig) pair fully
    determines the trained model.
    """

    learning_rate: float = 8e-5
    weight_decay: float = 1e-5
    batch_size: int = 16
    epochs: int = 100
    class_weight: float = 1.0
    pair_weight: float = 1.0
    train_fraction: float = 0.8
    seed: int = 0
    deterministic: bool = True

    def __post_init__(self) -> None:
        if not (np.isfinite(self.learning_rate) and self.learning_rate > 0.0):
            raise ConfigError(
                f"learning_rate must be finite and positive, got {self.learning_rate}"
            )
        if not (np.isfinite(self.weight_decay) and self.weight_decay >= 0.0):
            raise ConfigError(
                f"weight_decay must be finite and >= 0, got {self.weight_decay}"
            )
        if not isinstance(self.batch_size, int) or self.batch_size < 2:
            raise ConfigError(f"batch_size must be an integer >= 2, got {self.batch_size}")
        if not isinstance(self.epochs, int) or self.epochs < 1:
            raise ConfigError(f"epochs must be a positive integer, got {self.epochs}")
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigError(
                f"train_fraction must be in (0, 1), got {self.train_fraction}"
            )
        # Reuses the loss-weight range checks.
        self.loss_weights()

    def loss_weights(self) -> LossWeights:
        return LossWeights(class_weight=self.class_weight, pair_weight=self.pair_weight)


# ---------------------------------------------------------------------------
# optimiser


@dataclass
class AdamState:
    """First/second moment estimates keyed by parameter name, plus the step."""

    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: list[Param],
    state: AdamState,
    learning_rate: float,
    weight_decay: float,
) -> None:
    """One bias-corrected Adam update, in place.

    Weight decay is the classic coupled form: it is added to the gradient
    before the moment updates. Moment buffers appear lazily keyed by
    parameter name, so the same state object follows whatever parameter
    subset the head toggles select.
    """
    state.t += 1
    correction1 = 1.0 - state.beta1**state.t
    correction2 = 1.0 - state.beta2**state.t
    for name, value, grad in params:
        if value.shape != grad.shape:
            raise ShapeError(
                f"parameter {name}: value shape {value.shape} != grad {grad.shape}"
            )
        g = grad + weight_decay * value if weight_decay != 0.0 else grad
        m = state.m.setdefault(name, np.zeros_like(value))
        v = state.v.setdefault(name, np.zeros_like(value))
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        m_hat = m / correction1
        v_hat = v / correction2
        value -= learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)


# ---------------------------------------------------------------------------
# evaluation


@dataclass(frozen=True)
class EvalResult:
    plcc: float
    srocc: float
    report: ClassificationReport
    predictions: np.ndarray
    pred_classes: np.ndarray


def evaluate(model: LpfModel, ds: FeatureDataset) -> EvalResult:
    """Correlations of predicted vs normalised scores, plus class metrics.

    Runs in eval mode (restoring the previous mode afterwards), so it never
    draws from the dropout streams. Correlations may be NaN when the
    predictions are constant; that is reported as-is.
    """
    was_training = model.training
    model.set_eval()
    try:
        latent = model.embed(ds.features)
        _, _, predictions = model.quality(latent)
        probs = model.class_probs(latent)
    finally:
        if was_training:
            model.set_train()
    pred_classes = probs.argmax(axis=1)
    report = classification_report(ds.categories, pred_classes, model.config.num_classes)
    return EvalResult(
        plcc=plcc(predictions, ds.norm_scores),
        srocc=srocc(predictions, ds.norm_scores),
        report=report,
        predictions=predictions,
        pred_classes=pred_classes,
    )


# ---------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class EpochRecord:
    """Telemetry of one epoch: mean batch losses and split metrics."""

    epoch: int
    class_loss: float
    pair_loss: float
    direct_loss: float
    total_loss: float
    train_plcc: float
    train_srocc: float
    test_plcc: float
    test_srocc: float
    test_accuracy: float


# Column names of the telemetry file, part of the on-disk contract.
TELEMETRY_HEADER = (
    "epoch,l_cp,l_qc,l_sp,total,train_plcc,train_srocc,test_plcc,test_srocc,test_acc"
)
_RECORD_FIELDS = tuple(f.name for f in fields(EpochRecord))


def records_to_csv(records: list[EpochRecord]) -> str:
    lines = [TELEMETRY_HEADER]
    for rec in records:
        row = [repr(getattr(rec, name)) for name in _RECORD_FIELDS]
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def format_epoch_line(rec: EpochRecord, epochs: int) -> str:
    return (
        f"epoch {rec.epoch}/{epochs} "
        f"class={rec.class_loss:.6f} pair={rec.pair_loss:.6f} "
        f"direct={rec.direct_loss:.6f} total={rec.total_loss:.6f} "
        f"train_plcc={rec.train_plcc:.4f} test_plcc={rec.test_plcc:.4f} "
        f"test_srocc={rec.test_srocc:.4f} test_acc={rec.test_accuracy:.4f}"
    )


@dataclass
class TrainResult:
    model: LpfModel
    records: list[EpochRecord]
    adam: AdamState
    final_checkpoint: "Checkpoint"
    best_checkpoint: "Checkpoint"
    best_epoch: int


BatchHook = Callable[[int, int, float, float, float, float], None]


def _train_batch(
    model: LpfModel,
    features: np.ndarray,
    norm_scores: np.ndarray,
    categories: np.ndarray,
    weights: LossWeights,
) -> tuple[float, float, float, float]:
    """Forward, backward, and loss bookkeeping for one batch.

    Returns (class_loss, pair_loss, direct_loss, total). Gradients are left
    accumulated on the model; the caller applies the optimiser step.
    Disabled heads are never run, contribute exactly zero to the total, and
    their loss is recorded as zero.
    """
    cfg = model.config
    model.zero_grad()
    latent = model.embed(features)

    # Direct regression: estimate = weight * raw, so each stream's upstream
    # gradient is the loss gradient times the other stream's output.
    sample_weights, raw, estimate = model.quality(latent)
    direct_loss, g_est = mse_loss(estimate, norm_scores)
    grad_latent = model.score_stream.backward((g_est * sample_weights)[:, None])
    if cfg.weight_stream_enabled:
        grad_latent = grad_latent + model.weight_stream.backward((g_est * raw)[:, None])

    class_loss = 0.0
    if cfg.class_head_enabled:
        probs = model.class_probs(latent)
        class_loss, g_logits = cross_entropy_loss(probs, categories)
        grad_latent = grad_latent + model.class_backward_from_logits(
            weights.class_weight * g_logits
        )

    pair_loss = 0.0
    if cfg.pair_head_enabled:
        pair_batch = make_pair_batch(latent, norm_scores)
        pair_scores = model.pair_scores(pair_batch)
        pair_loss, g_pairs = mse_loss(pair_scores, pair_batch.score_gaps)
        g_gaps = model.pair_head.backward((weights.pair_weight * g_pairs)[:, None])
        # Each pair row is latent[i] - latent[j]; scatter the gap gradient
        # back with opposite signs.
        np.add.at(grad_latent, pair_batch.index_pairs[:, 0], g_gaps)
        np.subtract.at(grad_latent, pair_batch.index_pairs[:, 1], g_gaps)

    model.trunk.backward(grad_latent)
    total = total_loss(
        class_loss,
        pair_loss,
        direct_loss,
        weights,
        class_enabled=cfg.class_head_enabled,
        pair_enabled=cfg.pair_head_enabled,
    )
    return class_loss, pair_loss, direct_loss, total


def train(
    ds_train: FeatureDataset,
    ds_test: FeatureDataset,
    model_config: ModelConfig,
    train_config: TrainConfig,
    log: Callable[[str], None] | None = None,
    on_batch: BatchHook | None = None,
) -> TrainResult:
    """Train a fresh model and report per-epoch telemetry.

    The best checkpoint tracks the highest test rank correlation seen so
    far (first epoch wins ties and NaN). A non-finite loss aborts the run
    with NumericalError rather than letting garbage propagate into files.
    """
    if ds_train.dim != ds_test.dim:
        raise ShapeError(
            f"train dim {ds_train.dim} != test dim {ds_test.dim}"
        )
    if ds_train.dim != model_config.input_dim:
        raise ShapeError(
            f"dataset dim {ds_train.dim} != model input_dim {model_config.input_dim}"
        )
    weights = train_config.loss_weights()
    model = LpfModel(
        model_config, seed=train_config.seed, deterministic=train_config.deterministic
    )
    adam = AdamState()
    records: list[EpochRecord] = []
    best_checkpoint: Checkpoint | None = None
    best_epoch = 0
    best_srocc = -np.inf

    for epoch in range(1, train_config.epochs + 1):
        model.set_train()
        sums = np.zeros(4)
        batches = iterate_batches(
            ds_train, train_config.batch_size, train_config.seed, epoch
        )
        if not batches:
            raise ShapeError(
                f"training split of {ds_train.n} samples yields no usable batch"
            )
        for batch_index, batch in enumerate(batches):
            losses = _train_batch(
                model, batch.features, batch.norm_scores, batch.categories, weights
            )
            if not np.isfinite(losses[3]):
                raise NumericalError(
                    f"non-finite loss at epoch {epoch} batch {batch_index}: "
                    f"class={losses[0]} pair={losses[1]} direct={losses[2]}"
                )
            adam_step(
                model.trainable_parameters(),
                adam,
                train_config.learning_rate,
                train_config.weight_decay,
            )
            if on_batch is not None:
                on_batch(epoch, batch_index, *losses)
            sums += losses

        means = sums / len(batches)
        ev_train = evaluate(model, ds_train)
        ev_test = evaluate(model, ds_test)
        record = EpochRecord(
            epoch=epoch,
            class_loss=float(means[0]),
            pair_loss=float(means[1]),
            direct_loss=float(means[2]),
            total_loss=float(means[3]),
            train_plcc=ev_train.plcc,
            train_srocc=ev_train.srocc,
            test_plcc=ev_test.plcc,
            test_srocc=ev_test.srocc,
            test_accuracy=ev_test.report.accuracy,
        )
        records.append(record)
        if log is not None:
            log(format_epoch_line(record, train_config.epochs))
        if best_checkpoint is None or (
            np.isfinite(ev_test.srocc) and ev_test.srocc > best_srocc
        ):
            best_checkpoint = make_checkpoint(model, train_config, adam, epoch)
            best_epoch = epoch
            best_srocc = ev_test.srocc if np.isfinite(ev_test.srocc) else -np.inf

    final_checkpoint = make_checkpoint(model, train_config, adam, train_config.epochs)
    assert best_checkpoint is not None
    return TrainResult(
        model=model,
        records=records,
        adam=adam,
        final_checkpoint=final_checkpoint,
        best_checkpoint=best_checkpoint,
        best_epoch=best_epoch,
    )


# ---------------------------------------------------------------------------
# checkpoints


@dataclass
class Checkpoint:
    """A self-describing snapshot: configs, parameters, optimiser, RNG."""

    model_config: ModelConfig
    train_config: TrainConfig
    epoch: int
    params: dict[str, np.ndarray]
    rng_states: dict[str, dict]
    adam: AdamState | None = None
    version: int = CHECKPOINT_VERSION


def make_checkpoint(
    model: LpfModel, train_config: TrainConfig, adam: AdamState | None, epoch: int
) -> Checkpoint:
    return Checkpoint(
        model_config=model.config,
        train_config=train_config,
        epoch=epoch,
        params={name: value.copy() for name, value, _ in model.parameters()},
        rng_states=model.rng_states(),
        adam=AdamState(
            beta1=adam.beta1,
            beta2=adam.beta2,
            epsilon=adam.epsilon,
            t=adam.t,
            m={k: v.copy() for k, v in adam.m.items()},
            v={k: v.copy() for k, v in adam.v.items()},
        )
        if adam is not None
        else None,
    )


def restore_model(ckpt: Checkpoint, deterministic: bool | None = None) -> LpfModel:
    """Rebuild the model of a checkpoint, in eval mode."""
    model = LpfModel(
        ckpt.model_config,
        seed=ckpt.train_config.seed,
        deterministic=ckpt.train_config.deterministic
        if deterministic is None
        else deterministic,
    )
    model.load_param_dict(ckpt.params)
    model.set_rng_states(ckpt.rng_states)
    model.set_eval()
    return model


def _pack_section(payload: bytes) -> bytes:
    return struct.pack("<Q", len(payload)) + payload


def serialize_checkpoint(ckpt: Checkpoint) -> bytes:
    param_names = list(ckpt.params)
    adam_names = sorted(ckpt.adam.m) if ckpt.adam is not None else []
    meta = {
        "model_config": asdict(ckpt.model_config),
        "train_config": asdict(ckpt.train_config),
        "epoch": ckpt.epoch,
        "params": [
            {"name": name, "shape": list(ckpt.params[name].shape)}
            for name in param_names
        ],
        "rng_states": ckpt.rng_states,
        "adam": {
            "beta1": ckpt.adam.beta1,
            "beta2": ckpt.adam.beta2,
            "epsilon": ckpt.adam.epsilon,
            "t": ckpt.adam.t,
            "params": adam_names,
        }
        if ckpt.adam is not None
        else None,
    }
    meta_blob = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    param_blob = b"".join(
        np.ascontiguousarray(ckpt.params[name], dtype="<f8").tobytes()
        for name in param_names
    )
    adam_blob = b""
    if ckpt.adam is not None:
        adam_blob = b"".join(
            np.ascontiguousarray(buf[name], dtype="<f8").tobytes()
            for buf in (ckpt.adam.m, ckpt.adam.v)
            for name in adam_names
        )
    body = (
        CHECKPOINT_MAGIC
        + struct.pack("<I", ckpt.version)
        + _pack_section(meta_blob)
        + _pack_section(param_blob)
        + _pack_section(adam_blob)
    )
    return body + hashlib.sha256(body).digest()[:8]


def _take_section(blob: bytes, offset: int, origin: str) -> tuple[bytes, int]:
    if offset + 8 > len(blob):
        raise TruncatedFileError(f"{origin}: truncated section header")
    (length,) = struct.unpack_from("<Q", blob, offset)
    offset += 8
    if offset + length > len(blob):
        raise TruncatedFileError(f"{origin}: truncated section payload")
    return blob[offset : offset + length], offset + length


def _read_arrays(
    payload: bytes, specs: list[tuple[str, tuple[int, ...]]], origin: str
) -> dict[str, np.ndarray]:
    arrays: dict[str, np.ndarray] = {}
    offset = 0
    for name, shape in specs:
        if any(not isinstance(d, int) or d < 1 for d in shape):
            raise DataFormatError(f"{origin}: invalid shape {shape} for {name!r}")
        size = int(np.prod(shape, dtype=np.int64)) if shape else 1
        nbytes = size * 8
        if offset + nbytes > len(payload):
            raise DataFormatError(f"{origin}: array payload too short at {name!r}")
        arr = np.frombuffer(payload, dtype="<f8", count=size, offset=offset)
        arrays[name] = arr.reshape(shape).astype(np.float64)
        offset += nbytes
    if offset != len(payload):
        raise DataFormatError(f"{origin}: {len(payload) - offset} stray payload bytes")
    return arrays


def deserialize_checkpoint(blob: bytes, origin: str = "checkpoint") -> Checkpoint:
    # Structure first (magic, version, section extents), then the integrity
    # checksum over the whole body, then content. That way truncation,
    # version mismatch, and corruption each surface as their own error.
    if len(blob) < 16:
        raise TruncatedFileError(f"{origin}: file too short to be a checkpoint")
    body, stored = blob[:-8], blob[-8:]
    if body[:4] != CHECKPOINT_MAGIC:
        raise DataFormatError(f"{origin}: bad magic {body[:4]!r}")
    (version,) = struct.unpack_from("<I", body, 4)
    if version != CHECKPOINT_VERSION:
        raise VersionError(f"{origin}: unsupported version {version}")
    meta_blob, offset = _take_section(body, 8, origin)
    param_blob, offset = _take_section(body, offset, origin)
    adam_blob, offset = _take_section(body, offset, origin)
    if offset != len(body):
        raise DataFormatError(f"{origin}: {len(body) - offset} trailing bytes")
    if hashlib.sha256(body).digest()[:8] != stored:
        raise ChecksumError(f"{origin}: checksum mismatch, file is corrupted")
    try:
        meta = json.loads(meta_blob.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataFormatError(f"{origin}: metadata section is not valid JSON") from exc

    try:
        model_config = ModelConfig(**meta["model_config"])
        train_config = TrainConfig(**meta["train_config"])
        param_specs = [(p["name"], tuple(p["shape"])) for p in meta["params"]]
        epoch = meta["epoch"]
        rng_states = meta["rng_states"]
        adam_meta = meta["adam"]
    except (KeyError, TypeError, ConfigError) as exc:
        raise DataFormatError(f"{origin}: malformed metadata ({exc})") from exc

    params = _read_arrays(param_blob, param_specs, origin)
    shapes = {name: shape for name, shape in param_specs}

    adam = None
    if adam_meta is not None:
        names = adam_meta["params"]
        unknown = [n for n in names if n not in shapes]
        if unknown:
            raise DataFormatError(f"{origin}: optimiser covers unknown params {unknown}")
        specs = [(f"m.{n}", shapes[n]) for n in names]
        specs += [(f"v.{n}", shapes[n]) for n in names]
        buffers = _read_arrays(adam_blob, specs, origin)
        adam = AdamState(
            beta1=adam_meta["beta1"],
            beta2=adam_meta["beta2"],
            epsilon=adam_meta["epsilon"],
            t=adam_meta["t"],
            m={n: buffers[f"m.{n}"] for n in names},
            v={n: buffers[f"v.{n}"] for n in names},
        )
    elif adam_blob:
        raise DataFormatError(f"{origin}: optimiser payload without metadata")

    return Checkpoint(
        model_config=model_config,
        train_config=train_config,
        epoch=epoch,
        params=params,
        rng_states=rng_states,
        adam=adam,
        version=version,
    )


def save_checkpoint(path: str | Path, ckpt: Checkpoint) -> None:
    atomic_write_bytes(path, serialize_checkpoint(ckpt))


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    return deserialize_checkpoint(path.read_bytes(), str(path))
