"""Self-supervised representation learning for multi-channel ECG time series."""

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import ConfigError, RunConfig
from .data import Dataset, open_dataset, split_folds, synth_ecg, write_dataset
from .metrics import macro_auc
from .records import EcgRecord, LabelSpace, Segment
from .training import (
    MetricsReport,
    finetune_two_step,
    label_efficiency_sweep,
    linear_evaluate,
    noise_robustness_sweep,
    predict_tta,
    pretrain,
    train_supervised,
)

__all__ = [
    "Checkpoint",
    "ConfigError",
    "Dataset",
    "EcgRecord",
    "LabelSpace",
    "MetricsReport",
    "RunConfig",
    "Segment",
    "finetune_two_step",
    "label_efficiency_sweep",
    "linear_evaluate",
    "load_checkpoint",
    "macro_auc",
    "noise_robustness_sweep",
    "open_dataset",
    "predict_tta",
    "pretrain",
    "save_checkpoint",
    "split_folds",
    "synth_ecg",
    "train_supervised",
    "write_dataset",
]
