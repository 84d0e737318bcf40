"""Heterogeneity-robust heart-rate sequence prediction.

Wearable workout streams vary by device (channels, units, rates) and by user
(physiology). This package normalizes heterogeneous recordings onto a canonical
grid, trains a recurrent predictor with curriculum channel dropout, a
time-aware history encoder, and a contrastive user embedding, and ships a
nonparametric statistics harness that reproduces the published comparison
tables from fixtures.
"""
from .datamodel import (
    ChannelRegistry,
    Segment,
    SegmentStore,
    Session,
    StaticAttributes,
    TrainingExample,
    synthetic_registry,
    wearable_registry,
)
from .trainer import (
    HeartRateRegressor,
    MLPBaseline,
    TrainConfig,
    UserMeanBaseline,
    baseline_mlp,
    baseline_user_mean,
    load_model,
    save_model,
    train,
)
from .synthgen import generate_corpus
from .ingest import default_schemas, ingest_directory
from .cli import main

__version__ = "0.1.0"

__all__ = [
    "ChannelRegistry",
    "HeartRateRegressor",
    "MLPBaseline",
    "Segment",
    "SegmentStore",
    "Session",
    "StaticAttributes",
    "TrainConfig",
    "TrainingExample",
    "UserMeanBaseline",
    "baseline_mlp",
    "baseline_user_mean",
    "default_schemas",
    "generate_corpus",
    "ingest_directory",
    "load_model",
    "main",
    "save_model",
    "synthetic_registry",
    "train",
    "wearable_registry",
    "__version__",
]
