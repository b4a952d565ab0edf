"""Two-stage RNN domain adaptation for sEMG gesture recognition."""

__version__ = "0.1.0"

from .data import Dataset, DatasetMeta, Split, load_dataset, save_dataset
from .model import Model, classify_forward, init_model
from .signal import Recording, Sequence
from .training import TrainConfig, TrainHistory, adapt_stage2, fine_tune, train_stage1

__all__ = [
    "Dataset",
    "DatasetMeta",
    "Model",
    "Recording",
    "Sequence",
    "Split",
    "TrainConfig",
    "TrainHistory",
    "adapt_stage2",
    "classify_forward",
    "fine_tune",
    "init_model",
    "load_dataset",
    "save_dataset",
    "train_stage1",
]
