"""DBSCAN over bottleneck embeddings and median-close support extraction."""

from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .attention_net import Embedding, ModelConfig, embed_sequence, init_model, train
from .correlation import WINDOW, rolling_correlation_matrices
from .features import build_feature_matrix, minmax_scale
from .levels import LEVEL_MERGE_TOL, SupportLevel, SupportLevelSet
from .market_data import BarSeries

logger = logging.getLogger(__name__)

DEFAULT_EPS = 0.1
MIN_SAMPLES_FRACTION = 0.10


@dataclass(frozen=True, eq=False)
class ClusterLabels:
    labels: np.ndarray
    eps: float
    min_samples: int

    @property
    def n_clusters(self) -> int:
        return int(self.labels.max()) + 1 if self.labels.size else 0

    @property
    def noise_count(self) -> int:
        return int((self.labels == -1).sum())


def default_min_samples(n_points: int, fraction: float = MIN_SAMPLES_FRACTION) -> int:
    """``fraction`` of the dataset, rounded half up, never below 2."""
    return max(2, int(math.floor(fraction * n_points + 0.5)))


def pairwise_distances(points: np.ndarray) -> np.ndarray:
    # direct differences, row blocks to bound memory; the expanded |a|^2 - 2ab + |b|^2
    # form cancels badly and can flip points across the eps boundary
    x = np.asarray(points, dtype=float)
    n = x.shape[0]
    d = np.empty((n, n))
    step = max(1, 2_000_000 // max(1, n * x.shape[1]))
    for i in range(0, n, step):
        diff = x[i : i + step, None, :] - x[None, :, :]
        d[i : i + step] = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    return d


def dbscan(points, eps: float = DEFAULT_EPS, min_samples: int | None = None) -> ClusterLabels:
    """Euclidean DBSCAN; a point is core when its closed eps-ball holds min_samples points.

    Core points are joined by breadth-first expansion seeded in index order.
    A border point joins the cluster of its nearest core neighbour (lowest
    index on exact ties), so the partition does not depend on input order.
    """
    x = np.atleast_2d(np.asarray(points, dtype=float))
    n = x.shape[0]
    if n == 0:
        raise ValueError("dbscan needs at least one point")
    if not eps > 0:
        raise ValueError("eps must be positive")
    if min_samples is None:
        min_samples = default_min_samples(n)
    if min_samples < 1:
        raise ValueError("min_samples must be >= 1")

    dist = pairwise_distances(x)
    adj = dist <= eps
    core = adj.sum(axis=1) >= min_samples
    labels = np.full(n, -1, dtype=int)
    cluster = 0
    for seed in range(n):
        if not core[seed] or labels[seed] != -1:
            continue
        labels[seed] = cluster
        queue = deque([seed])
        while queue:
            p = queue.popleft()
            for q in np.flatnonzero(adj[p] & core):
                if labels[q] == -1:
                    labels[q] = cluster
                    queue.append(q)
        cluster += 1

    core_idx = np.flatnonzero(core)
    for b in np.flatnonzero(~core):
        near = core_idx[adj[b, core_idx]]
        if near.size:
            labels[b] = labels[near[np.argmin(dist[b, near])]]
    return ClusterLabels(labels, float(eps), int(min_samples))


@dataclass(frozen=True)
class DeepSuppConfig:
    window: int = WINDOW
    stride: int = 1
    eps: float = DEFAULT_EPS
    min_samples_fraction: float = MIN_SAMPLES_FRACTION
    merge_tol: float = LEVEL_MERGE_TOL
    model: ModelConfig = field(default_factory=ModelConfig)


def extract_support_levels(
    labels: ClusterLabels,
    embeddings: Sequence[Embedding],
    series: BarSeries,
    method: str = "deepsupp",
    merge_tol: float = LEVEL_MERGE_TOL,
) -> SupportLevelSet:
    """One level per cluster: the median close over the cluster's window-end bars.

    Clusters whose medians fall within ``merge_tol`` of each other are pooled
    and the median is taken again over the pooled bars.
    """
    lab = np.asarray(labels.labels)
    if len(lab) != len(embeddings):
        raise ValueError("labels and embeddings are not aligned")
    ends = np.array([e.window_end for e in embeddings], dtype=int)
    groups = []
    for k in range(labels.n_clusters):
        bars = ends[lab == k]
        if bars.size:
            groups.append((k, series.close[bars]))
    if not groups:
        logger.warning("%s: every embedding is noise; no support levels", series.ticker)
        return SupportLevelSet(series.ticker, method, ())

    groups.sort(key=lambda g: (float(np.median(g[1])), g[0]))
    merged = True
    while merged:
        merged = False
        for i in range(len(groups) - 1):
            a, b = float(np.median(groups[i][1])), float(np.median(groups[i + 1][1]))
            if b - a <= merge_tol * abs(a):
                groups[i] = (min(groups[i][0], groups[i + 1][0]),
                             np.concatenate([groups[i][1], groups[i + 1][1]]))
                del groups[i + 1]
                merged = True
                break
        groups.sort(key=lambda g: (float(np.median(g[1])), g[0]))
    levels = tuple(
        SupportLevel(float(np.median(closes)), int(k), int(closes.size), method) for k, closes in groups
    )
    return SupportLevelSet(series.ticker, method, levels)


@dataclass(frozen=True, eq=False)
class DeepSuppResult:
    levels: SupportLevelSet
    labels: ClusterLabels
    embeddings: list
    model: object
    loss_trace: np.ndarray


def run_deepsupp(series: BarSeries, config: DeepSuppConfig | None = None) -> DeepSuppResult:
    """Full pipeline keeping the intermediate products."""
    config = config or DeepSuppConfig()
    minimum = config.window + 1
    if len(series) < minimum:
        raise ValueError(f"deepsupp needs at least {minimum} bars, got {len(series)}")
    scaled, _ = minmax_scale(build_feature_matrix(series))
    seq = rolling_correlation_matrices(scaled, config.window, config.stride)
    model, trace = train(init_model(config.model), seq, config.model)
    emb = embed_sequence(model, seq)
    points = np.stack([e.values for e in emb])
    labels = dbscan(points, config.eps, default_min_samples(len(points), config.min_samples_fraction))
    levels = extract_support_levels(labels, emb, series, merge_tol=config.merge_tol)
    return DeepSuppResult(levels, labels, emb, model, trace)


def detect_deepsupp(series: BarSeries, config: DeepSuppConfig | None = None) -> SupportLevelSet:
    return run_deepsupp(series, config).levels
