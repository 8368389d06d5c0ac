"""Support-level detection from rolling price-volume rank correlations.

The pipeline scales five price-volume features, turns sliding windows of
them into Spearman correlation matrices, compresses each matrix with a
multi-head attention autoencoder, clusters the embeddings with DBSCAN and
reports the median close of every cluster as a support level. Six classic
detectors and a six-metric evaluation framework sit alongside it.
"""

from .attention_net import ModelConfig, init_model, train
from .baselines import METHODS, DetectorSpec, run_detector
from .clustering import DeepSuppConfig, dbscan, detect_deepsupp, run_deepsupp
from .correlation import rolling_correlation_matrices, spearman_rho
from .evaluation import (
    EventConfig,
    MetricWeights,
    compare_methods,
    evaluate_levels,
    evaluate_method,
    overall_score,
)
from .features import build_feature_matrix, minmax_scale
from .levels import SupportLevel, SupportLevelSet
from .market_data import BarSeries, SyntheticConfig, generate_synthetic_series, load_ohlcv_csv

__version__ = "0.1.0"

__all__ = [
    "BarSeries", "DeepSuppConfig", "DetectorSpec", "EventConfig", "METHODS", "MetricWeights",
    "ModelConfig", "SupportLevel", "SupportLevelSet", "SyntheticConfig", "build_feature_matrix",
    "compare_methods", "dbscan", "detect_deepsupp", "evaluate_levels", "evaluate_method",
    "generate_synthetic_series", "init_model", "load_ohlcv_csv", "minmax_scale", "overall_score",
    "rolling_correlation_matrices", "run_deepsupp", "run_detector", "spearman_rho", "train",
]
