"""Feature-based blind image quality model with multi-task training heads."""

__version__ = "0.1.0"

from .dataset import (
    FeatureDataset,
    load_dataset,
    read_feature_file,
    split_train_test,
    synthesize_dataset,
    write_feature_file,
)
from .errors import (
    ChecksumError,
    ConfigError,
    DataFormatError,
    EngineError,
    NumericalError,
    ShapeError,
)
from .metrics import classification_report, plcc, srocc
from .model import LpfModel, ModelConfig
from .trainer import (
    Checkpoint,
    TrainConfig,
    evaluate,
    load_checkpoint,
    restore_model,
    save_checkpoint,
    train,
)

__all__ = [
    "__version__",
    "Checkpoint",
    "ChecksumError",
    "ConfigError",
    "DataFormatError",
    "EngineError",
    "FeatureDataset",
    "LpfModel",
    "ModelConfig",
    "NumericalError",
    "ShapeError",
    "TrainConfig",
    "classification_report",
    "evaluate",
    "load_checkpoint",
    "load_dataset",
    "plcc",
    "read_feature_file",
    "restore_model",
    "save_checkpoint",
    "split_train_test",
    "srocc",
    "synthesize_dataset",
    "train",
    "write_feature_file",
]
