"""Targeted sentiment analysis with target markers on a from-scratch transformer."""

from .data import LabeledRecord, SentimentLabel, SplitSpec, load_dataset, preprocess, save_dataset
from .encoder import EncoderConfig
from .models import ModelVariant, build_model, predict
from .tokenizer import Vocabulary, build_vocab
from .training import TrainConfig, load_checkpoint, save_checkpoint, train

__version__ = "0.1.0"

__all__ = [
    "EncoderConfig",
    "LabeledRecord",
    "ModelVariant",
    "SentimentLabel",
    "SplitSpec",
    "TrainConfig",
    "Vocabulary",
    "build_model",
    "build_vocab",
    "load_checkpoint",
    "load_dataset",
    "predict",
    "preprocess",
    "save_checkpoint",
    "save_dataset",
    "train",
]
