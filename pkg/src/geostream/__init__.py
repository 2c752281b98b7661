"""City-level tweet geolocation: model, training, metrics, and stream pipeline."""

from .data import (LabeledExample, Prediction, TweetRecord, build_dataset,
                   gen_synthetic, is_predictable, parse_tweet, serialize_tweet)
from .embeddings import CharVocab, WordVectorStore, load_word_vectors, tokenize
from .gazetteer import CityEntry, Gazetteer, label_of, load_gazetteer, place_within
from .metrics import (MetricsReport, RegionStats, classification_metrics,
                      percent_increase, region_stats)
from .model import GeoModel, ModelConfig
from .stream import PipelineConfig, PipelineCounters, VirtualClock, replay_rate, run_pipeline
from .tensor import NonFiniteError, Param, ShapeError, Tensor, no_grad
from .training import Adam, TrainConfig, cross_entropy, evaluate, grad_check, train, train_epoch

__version__ = "0.1.0"

__all__ = [
    "Adam", "CharVocab", "CityEntry", "Gazetteer", "GeoModel", "LabeledExample",
    "MetricsReport", "ModelConfig", "NonFiniteError", "Param", "PipelineConfig",
    "PipelineCounters", "Prediction", "RegionStats", "ShapeError", "Tensor",
    "TrainConfig", "TweetRecord", "VirtualClock", "WordVectorStore",
    "build_dataset", "classification_metrics", "cross_entropy", "evaluate",
    "gen_synthetic", "grad_check", "is_predictable", "label_of", "load_gazetteer",
    "load_word_vectors", "no_grad", "parse_tweet", "percent_increase",
    "place_within", "region_stats", "replay_rate", "run_pipeline",
    "serialize_tweet", "tokenize", "train", "train_epoch",
]
