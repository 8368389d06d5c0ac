"""Price-volume features and MinMax scaling."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .market_data import BarSeries

logger = logging.getLogger(__name__)

COLUMNS = ("Close", "VWAP", "Volume", "PriceChangeVolume", "VolumeRatio")
VOLUME_RATIO_WINDOW = 20


def compute_vwap(series: BarSeries) -> np.ndarray:
    """Cumulative volume-weighted close from the first bar.

    Where no volume has traded yet the VWAP falls back to the bar's close.
    """
    p, v = series.close, series.volume
    num = np.cumsum(p * v)
    den = np.cumsum(v)
    out = p.copy()
    ok = den > 0
    out[ok] = num[ok] / den[ok]
    if not ok.all():
        logger.warning("%s: zero cumulative volume on %d bars; VWAP uses close there",
                       series.ticker, int((~ok).sum()))
    # cumulative sums can drift a few ulps outside the running price range
    lo = np.minimum.accumulate(p)
    hi = np.maximum.accumulate(p)
    return np.clip(out, lo, hi)


def compute_price_change_volume(series: BarSeries) -> np.ndarray:
    p, v = series.close, series.volume
    out = np.zeros_like(p)
    out[1:] = (p[1:] - p[:-1]) / p[:-1] * v[1:]
    return out


def compute_volume_ratio(series: BarSeries, window: int = VOLUME_RATIO_WINDOW) -> np.ndarray:
    """Volume over its trailing mean, the current bar included.

    The first ``window - 1`` bars average over whatever history exists. A zero
    trailing mean gives a ratio of 1.
    """
    v = series.volume
    csum = np.concatenate([[0.0], np.cumsum(v)])
    idx = np.arange(len(v))
    start = np.maximum(0, idx - window + 1)
    count = idx - start + 1
    mean = (csum[idx + 1] - csum[start]) / count
    out = np.ones_like(v)
    ok = mean > 0
    out[ok] = v[ok] / mean[ok]
    return out


@dataclass(frozen=True)
class ScalingParams:
    mins: np.ndarray
    maxs: np.ndarray


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    ticker: str
    values: np.ndarray
    scaled: bool = False
    columns: tuple[str, ...] = COLUMNS

    def __post_init__(self):
        vals = np.array(self.values, dtype=np.float64)
        if vals.ndim != 2 or vals.shape[1] != len(COLUMNS):
            raise ValueError(f"feature matrix must be T x {len(COLUMNS)}, got {vals.shape}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("feature matrix contains non-finite values")
        if self.scaled and (vals.min() < 0 or vals.max() > 1):
            raise ValueError("scaled features must lie in [0, 1]")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    def __len__(self) -> int:
        return self.values.shape[0]

    def column(self, name: str) -> np.ndarray:
        return self.values[:, COLUMNS.index(name)]


def build_feature_matrix(series: BarSeries) -> FeatureMatrix:
    if len(series) < 2:
        raise ValueError("feature matrix needs at least 2 bars (price change needs a predecessor)")
    values = np.column_stack([
        series.close,
        compute_vwap(series),
        series.volume,
        compute_price_change_volume(series),
        compute_volume_ratio(series),
    ])
    return FeatureMatrix(series.ticker, values, scaled=False)


def minmax_scale(matrix: FeatureMatrix) -> tuple[FeatureMatrix, ScalingParams]:
    """Scale each column to [0, 1] over the full history; constant columns become 0."""
    if matrix.scaled:
        raise ValueError("matrix is already scaled")
    x = matrix.values
    lo = x.min(axis=0)
    hi = x.max(axis=0)
    span = hi - lo
    out = np.zeros_like(x)
    ok = span > 0
    out[:, ok] = (x[:, ok] - lo[ok]) / span[ok]
    np.clip(out, 0.0, 1.0, out=out)
    return FeatureMatrix(matrix.ticker, out, scaled=True), ScalingParams(lo, hi)
