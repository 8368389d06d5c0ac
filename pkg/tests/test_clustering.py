from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deepsupp.attention_net import Embedding, ModelConfig
from deepsupp.clustering import (
    ClusterLabels,
    DeepSuppConfig,
    dbscan,
    default_min_samples,
    detect_deepsupp,
    extract_support_levels,
    run_deepsupp,
)
from deepsupp.market_data import series_from_closes

from reference import random_dbscan_instance, reference_dbscan, same_partition


def test_two_blobs():
    rng = np.random.default_rng(0)
    eps = 0.1
    a = rng.uniform(0, eps / 8, (20, 2))
    b = a + np.array([10 * eps, 0])
    lab = dbscan(np.vstack([a, b]), eps, 5)
    assert lab.n_clusters == 2 and lab.noise_count == 0
    assert same_partition(lab.labels, reference_dbscan(np.vstack([a, b]), eps, 5))


def test_identical_points():
    assert dbscan(np.ones((10, 3)), 0.1).n_clusters == 1


def test_isolated_point_is_noise():
    pts = np.vstack([np.zeros((5, 2)), np.full((5, 2), 3.0), [[10.0, -10.0]]])
    lab = dbscan(pts, 0.5, 2)
    assert lab.labels[-1] == -1 and lab.n_clusters == 2


def test_min_samples_default():
    assert default_min_samples(9) == 2
    assert default_min_samples(100) == 10
    assert default_min_samples(115) == 12
    assert default_min_samples(3) == 2


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31))
def test_matches_reference(seed):
    pts, eps, ms = random_dbscan_instance(np.random.default_rng(seed))
    assert same_partition(dbscan(pts, eps, ms).labels, reference_dbscan(pts, eps, ms))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31))
def test_order_invariance(seed):
    rng = np.random.default_rng(seed)
    pts, eps, ms = random_dbscan_instance(rng, allow_ties=False)
    perm = rng.permutation(len(pts))
    base = dbscan(pts, eps, ms).labels
    assert same_partition(base[perm], dbscan(pts[perm], eps, ms).labels)


def _embeddings(ends):
    return [Embedding(int(e), np.zeros(16)) for e in ends]


def test_level_is_cluster_median():
    s = series_from_closes([10.0, 12.0, 11.0, 30.0])
    lab = ClusterLabels(np.array([0, 0, 0, -1]), 0.1, 2)
    levels = extract_support_levels(lab, _embeddings([0, 1, 2, 3]), s)
    assert levels.prices.tolist() == [11.0] and levels.levels[0].member_count == 3


def test_all_noise_is_empty(caplog):
    s = series_from_closes([10.0, 12.0])
    levels = extract_support_levels(ClusterLabels(np.array([-1, -1]), 0.1, 2), _embeddings([0, 1]), s)
    assert len(levels) == 0
    assert "noise" in caplog.text


def test_levels_sorted():
    s = series_from_closes([50.0, 50.0, 40.0, 40.0])
    lab = ClusterLabels(np.array([0, 0, 1, 1]), 0.1, 2)
    assert extract_support_levels(lab, _embeddings([0, 1, 2, 3]), s).prices.tolist() == [40.0, 50.0]


def test_near_levels_merge_over_pooled_closes():
    s = series_from_closes([100.0, 100.02, 100.04, 100.06, 100.08])
    lab = ClusterLabels(np.array([0, 0, 1, 1, 1]), 0.1, 2)
    levels = extract_support_levels(lab, _embeddings(range(5)), s)
    assert levels.prices.tolist() == [100.04] and levels.levels[0].member_count == 5


def test_short_series_rejected():
    with pytest.raises(ValueError, match="33"):
        run_deepsupp(series_from_closes(np.linspace(10, 20, 32)))


def test_pipeline_determinism_and_range():
    rng = np.random.default_rng(1)
    s = series_from_closes(100 * np.exp(np.cumsum(rng.normal(0, 0.01, 90))), rng.uniform(1e5, 1e6, 90))
    cfg = DeepSuppConfig(model=ModelConfig(epochs=5))
    r = run_deepsupp(s, cfg)
    assert len(r.embeddings) == 90 - 31
    assert detect_deepsupp(s, cfg) == r.levels
    assert r.levels.in_range(s.close.min(), s.close.max())
    for lvl in r.levels:
        bars = [e.window_end for e, k in zip(r.embeddings, r.labels.labels) if k == lvl.cluster_id]
        assert lvl.price == np.median(s.close[bars]) or lvl.member_count > len(bars)
