"""Rolling Spearman rank correlation between the scaled features."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .features import FeatureMatrix

WINDOW = 32
MODEL_DIM = 32
#: Diagonal value used for the padding block outside the feature correlations.
PAD_DIAGONAL = 1.0


def average_ranks(x) -> np.ndarray:
    """1-based ranks with ties sharing the mean of their positions."""
    x = np.asarray(x, dtype=float)
    order = np.argsort(x, kind="mergesort")
    xs = x[order]
    # boundaries of tie groups in sorted order
    edges = np.flatnonzero(np.concatenate([[True], xs[1:] != xs[:-1], [True]]))
    ranks = np.empty(len(x))
    for a, b in zip(edges[:-1], edges[1:]):
        ranks[order[a:b]] = 0.5 * (a + b + 1)
    return ranks


def _pearson(a: np.ndarray, b: np.ndarray) -> float:
    a = a - a.mean()
    b = b - b.mean()
    den = np.sqrt((a @ a) * (b @ b))
    if den == 0:
        return 0.0
    return float(np.clip((a @ b) / den, -1.0, 1.0))


def spearman_rho(x, y) -> float:
    """Spearman correlation as the Pearson correlation of average ranks.

    Matches ``1 - 6 sum d^2 / (n (n^2 - 1))`` whenever there are no ties.
    A constant input has no ranking information and yields 0.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("spearman_rho needs two 1-d vectors of equal length")
    if len(x) < 2:
        raise ValueError("spearman_rho needs at least 2 observations")
    if np.all(x == x[0]) or np.all(y == y[0]):
        return 0.0
    return _pearson(average_ranks(x), average_ranks(y))


def spearman_matrix(window: np.ndarray) -> np.ndarray:
    """Pairwise Spearman matrix of the columns of ``window``.

    Constant columns correlate 0 with everything, themselves included.
    """
    n, k = window.shape
    ranks = np.column_stack([average_ranks(window[:, j]) for j in range(k)])
    centered = ranks - ranks.mean(axis=0)
    norms = np.sqrt((centered**2).sum(axis=0))
    live = norms > 0
    out = np.zeros((k, k))
    if live.any():
        z = centered[:, live] / norms[live]
        out[np.ix_(live, live)] = z.T @ z
    np.clip(out, -1.0, 1.0, out=out)
    out = 0.5 * (out + out.T)
    out[np.diag_indices(k)] = live.astype(float)
    return out


def pad_to_model_dim(raw: np.ndarray, dim: int = MODEL_DIM, diagonal: float = PAD_DIAGONAL) -> np.ndarray:
    """Embed ``raw`` in the top-left corner of a ``dim x dim`` identity-like matrix.

    Only padding is supported; a feature count above ``dim`` is rejected.
    """
    raw = np.asarray(raw, dtype=float)
    k = raw.shape[0]
    if raw.shape != (k, k) or k > dim:
        raise ValueError(f"cannot pad a {raw.shape} matrix to {dim} x {dim}")
    out = np.zeros((dim, dim))
    idx = np.arange(k, dim)
    out[idx, idx] = diagonal
    out[:k, :k] = raw
    return out


@dataclass(frozen=True, eq=False)
class CorrMatrix:
    window_end: int  # 0-based index of the window's last bar
    raw: np.ndarray
    padded: np.ndarray


@dataclass(frozen=True, eq=False)
class CorrSequence:
    ticker: str
    window_length: int
    stride: int
    matrices: tuple[CorrMatrix, ...]

    def __len__(self) -> int:
        return len(self.matrices)

    @property
    def window_ends(self) -> np.ndarray:
        return np.array([m.window_end for m in self.matrices], dtype=int)

    def padded_stack(self) -> np.ndarray:
        return np.stack([m.padded for m in self.matrices]) if self.matrices else np.zeros((0, MODEL_DIM, MODEL_DIM))

    def at(self, window_end: int) -> CorrMatrix:
        for m in self.matrices:
            if m.window_end == window_end:
                return m
        raise KeyError(f"no correlation window ends at bar {window_end}")

    def subset(self, count: int) -> "CorrSequence":
        return CorrSequence(self.ticker, self.window_length, self.stride, self.matrices[:count])


def window_count(rows: int, window: int = WINDOW, stride: int = 1) -> int:
    return 0 if rows < window else (rows - window) // stride + 1


def rolling_correlation_matrices(
    matrix: FeatureMatrix, window: int = WINDOW, stride: int = 1, dim: int = MODEL_DIM
) -> CorrSequence:
    """One padded Spearman matrix per window; windows end at bars window-1, window-1+stride, ..."""
    if not matrix.scaled:
        raise ValueError("rolling correlations expect MinMax-scaled features")
    if window < 2 or stride < 1:
        raise ValueError("window must be >= 2 and stride >= 1")
    rows = len(matrix)
    if rows < window:
        raise ValueError(f"need at least {window} rows for a correlation window, got {rows}")
    x = matrix.values
    mats = []
    for end in range(window - 1, rows, stride):
        raw = spearman_matrix(x[end - window + 1 : end + 1])
        raw.setflags(write=False)
        padded = pad_to_model_dim(raw, dim)
        padded.setflags(write=False)
        mats.append(CorrMatrix(end, raw, padded))
    return CorrSequence(matrix.ticker, window, stride, tuple(mats))
