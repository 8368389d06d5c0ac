"""Comparison detectors sharing the DeepSupp output type.

Every detector takes a :class:`BarSeries` and returns a sorted
:class:`SupportLevelSet`. ``run_detector`` dispatches by name.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, fields, replace
from typing import Callable, Sequence

import numpy as np

from .attention_net import ModelConfig
from .clustering import DeepSuppConfig, detect_deepsupp
from .levels import SupportLevelSet
from .market_data import BarSeries

logger = logging.getLogger(__name__)

FIB_RATIOS = (0.236, 0.382, 0.5, 0.618, 0.786)
MA_WINDOWS = (20, 50, 100, 200)
QR_QUANTILES = (0.05, 0.10, 0.20, 0.35)
PIVOT_MERGE_TOL = 0.01


# --------------------------------------------------------------------------- HMM

def _gaussian_logpdf(x: np.ndarray, means: np.ndarray, variances: np.ndarray) -> np.ndarray:
    return -0.5 * (np.log(2 * np.pi * variances) + (x[:, None] - means) ** 2 / variances)


def _forward_backward(logb: np.ndarray, start: np.ndarray, trans: np.ndarray):
    T, K = logb.shape
    shift = logb.max(axis=1, keepdims=True)
    b = np.exp(logb - shift)
    alpha = np.empty((T, K))
    scale = np.empty(T)
    a = start * b[0]
    scale[0] = a.sum()
    alpha[0] = a / scale[0]
    for t in range(1, T):
        a = (alpha[t - 1] @ trans) * b[t]
        scale[t] = a.sum()
        alpha[t] = a / scale[t]
    beta = np.empty((T, K))
    beta[-1] = 1.0
    for t in range(T - 2, -1, -1):
        beta[t] = trans @ (b[t + 1] * beta[t + 1]) / scale[t + 1]
    loglik = float(np.log(scale).sum() + shift.sum())
    gamma = alpha * beta
    gamma /= gamma.sum(axis=1, keepdims=True)
    xi = alpha[:-1, :, None] * trans[None] * (b[1:] * beta[1:])[:, None, :] / scale[1:, None, None]
    return loglik, gamma, xi


def _viterbi(logb: np.ndarray, start: np.ndarray, trans: np.ndarray) -> np.ndarray:
    T, K = logb.shape
    with np.errstate(divide="ignore"):
        logA = np.log(trans)
        delta = np.log(start) + logb[0]
    back = np.zeros((T, K), dtype=int)
    for t in range(1, T):
        cand = delta[:, None] + logA
        back[t] = cand.argmax(axis=0)
        delta = cand.max(axis=0) + logb[t]
    path = np.empty(T, dtype=int)
    path[-1] = int(delta.argmax())
    for t in range(T - 1, 0, -1):
        path[t - 1] = back[t, path[t]]
    return path


@dataclass(frozen=True, eq=False)
class GaussianHMM:
    start: np.ndarray
    trans: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    loglik: float
    converged: bool


def fit_gaussian_hmm(
    obs: np.ndarray, states: int = 3, iterations: int = 50, seed: int = 0, tol: float = 1e-6
) -> GaussianHMM:
    """Baum-Welch for a 1-d Gaussian HMM; returns the best-likelihood iterate."""
    x = np.asarray(obs, dtype=float)
    K = states
    rng = np.random.default_rng(seed)
    var0 = float(x.var())
    floor = max(var0 * 1e-6, 1e-300)
    means = np.quantile(x, (np.arange(K) + 0.5) / K) + rng.normal(0, 0.05, K) * np.sqrt(var0)
    variances = np.full(K, var0)
    trans = 0.8 * np.eye(K) + 0.2 * rng.dirichlet(np.ones(K), size=K)
    trans /= trans.sum(axis=1, keepdims=True)
    start = np.full(K, 1.0 / K)

    best, prev, converged = None, -np.inf, False
    for _ in range(iterations):
        ll, gamma, xi = _forward_backward(_gaussian_logpdf(x, means, variances), start, trans)
        if best is None or ll > best.loglik:
            best = GaussianHMM(start.copy(), trans.copy(), means.copy(), variances.copy(), ll, False)
        if abs(ll - prev) < tol * len(x):
            converged = True
            break
        prev = ll
        occ = gamma.sum(axis=0) + 1e-300
        start = gamma[0] + 1e-12
        start /= start.sum()
        trans = xi.sum(axis=0) + 1e-12
        trans /= trans.sum(axis=1, keepdims=True)
        means = gamma.T @ x / occ
        variances = np.maximum((gamma * (x[:, None] - means) ** 2).sum(axis=0) / occ, floor)
    if not converged:
        logger.warning("Baum-Welch did not converge in %d iterations; using best iterate", iterations)
    return replace(best, converged=converged)


def detect_hmm(
    series: BarSeries, states: int = 3, iterations: int = 50, seed: int = 0, percentile: float = 10.0
) -> SupportLevelSet:
    """Regime lows from a Gaussian HMM on log returns.

    Each bar takes the Viterbi state of the return ending at it (bar 0 copies
    bar 1). A state's level is the given percentile of its bars' closes.
    """
    n = len(series)
    if n < 60:
        raise ValueError(f"hmm detector needs at least 60 bars, got {n}")
    close = series.close
    r = np.diff(np.log(close))
    if np.all(r == r[0]) and r[0] == 0:
        return SupportLevelSet.from_prices(series.ticker, "hmm", [float(np.percentile(close, percentile))])
    model = fit_gaussian_hmm(r, states, iterations, seed)
    path = _viterbi(_gaussian_logpdf(r, model.means, model.variances), model.start, model.trans)
    bar_state = np.concatenate([path[:1], path])
    prices = [float(np.percentile(close[bar_state == k], percentile)) for k in np.unique(bar_state)]
    return SupportLevelSet.from_prices(series.ticker, "hmm", prices)


# --------------------------------------------------------------------------- pivots

def detect_local_minima(series: BarSeries, order: int = 5, merge_tol: float = PIVOT_MERGE_TOL) -> SupportLevelSet:
    """Bars whose low is strictly below every other low within ``order`` bars."""
    low = series.low
    n = len(low)
    if n < 2 * order + 1:
        raise ValueError(f"local minima with order {order} need at least {2 * order + 1} bars")
    minima = []
    for t in range(order, n - order):
        w = low[t - order : t + order + 1]
        if np.sum(w <= low[t]) == 1:
            minima.append(float(low[t]))
    return SupportLevelSet.from_prices(series.ticker, "local_minima", minima, merge_tol)


def detect_fractal(series: BarSeries, merge_tol: float = PIVOT_MERGE_TOL) -> SupportLevelSet:
    """Williams down fractals: a low strictly under the two lows on either side."""
    low = series.low
    if len(low) < 5:
        raise ValueError("fractal detection needs at least 5 bars")
    mid = low[2:-2]
    mask = (mid < low[:-4]) & (mid < low[1:-3]) & (mid < low[3:-1]) & (mid < low[4:])
    return SupportLevelSet.from_prices(series.ticker, "fractal", mid[mask].tolist(), merge_tol)


# --------------------------------------------------------------------------- price-level rules

def detect_fibonacci(
    series: BarSeries, lookback: int | None = None, ratios: Sequence[float] = FIB_RATIOS
) -> SupportLevelSet:
    """Retracements of the lookback swing, plus the swing low itself."""
    if len(series) < 2:
        raise ValueError("fibonacci retracement needs at least 2 bars")
    start = 0 if lookback is None else max(0, len(series) - int(lookback))
    hi = float(series.high[start:].max())
    lo = float(series.low[start:].min())
    if hi == lo:
        return SupportLevelSet.from_prices(series.ticker, "fibonacci", [hi])
    prices = [hi - r * (hi - lo) for r in ratios] + [lo]
    return SupportLevelSet.from_prices(series.ticker, "fibonacci", prices)


def detect_moving_average(series: BarSeries, windows: Sequence[int] = MA_WINDOWS) -> SupportLevelSet:
    """Terminal simple moving averages of the close; windows longer than the series are skipped."""
    n = len(series)
    if n < min(windows):
        raise ValueError(f"moving average needs at least {min(windows)} bars, got {n}")
    prices = [float(series.close[-w:].mean()) for w in sorted(windows) if w <= n]
    return SupportLevelSet.from_prices(series.ticker, "moving_average", prices)


def pinball_loss(residuals: np.ndarray, q: float) -> float:
    r = np.asarray(residuals, dtype=float)
    return float(np.sum(np.where(r >= 0, q * r, (q - 1) * r)))


def quantile_fit(
    y: np.ndarray, q: float, iterations: int = 50, ridge: float = 1e-8, tol: float = 1e-6
) -> tuple[np.ndarray, bool]:
    """Linear quantile regression of ``y`` on a [0, 1] time index by IRLS.

    Weights are ``q / |r|`` above the fit and ``(1 - q) / |r|`` below, with
    ``|r|`` floored relative to the data scale. Returns the coefficients of
    the lowest pinball loss seen and whether the loss settled.
    """
    y = np.asarray(y, dtype=float)
    n = len(y)
    X = np.column_stack([np.ones(n), np.linspace(0.0, 1.0, n)])
    delta = 1e-6 * max(float(np.mean(np.abs(y))), 1e-300)
    beta = np.linalg.lstsq(X, y, rcond=None)[0]
    best, best_loss = beta, pinball_loss(y - X @ beta, q)
    prev = best_loss
    converged = False
    for _ in range(iterations):
        r = y - X @ beta
        w = np.where(r >= 0, q, 1 - q) / np.maximum(np.abs(r), delta)
        xtwx = X.T @ (X * w[:, None])
        xtwx += ridge * np.trace(xtwx) / 2 * np.eye(2)
        beta = np.linalg.solve(xtwx, X.T @ (w * y))
        loss = pinball_loss(y - X @ beta, q)
        if loss < best_loss:
            best, best_loss = beta, loss
        if abs(prev - loss) <= tol * max(best_loss, delta):
            converged = True
            break
        prev = loss
    return best, converged


def detect_quantile_regression(
    series: BarSeries, quantiles: Sequence[float] = QR_QUANTILES, iterations: int = 50, ridge: float = 1e-8
) -> SupportLevelSet:
    """Lower-quantile trend lines of close on bar index, read off at the final bar."""
    n = len(series)
    if n < 30:
        raise ValueError(f"quantile regression needs at least 30 bars, got {n}")
    lo, hi = series.price_range
    prices = []
    for q in sorted(quantiles):
        beta, ok = quantile_fit(series.close, q, iterations, ridge)
        if not ok:
            logger.warning("%s: quantile %.2f IRLS did not settle; using best iterate", series.ticker, q)
        prices.append(float(np.clip(beta[0] + beta[1], lo, hi)))
    # crossing fix: the q-th level is the q-th smallest fitted value
    prices.sort()
    return SupportLevelSet.from_prices(series.ticker, "quantile_regression", prices)


# --------------------------------------------------------------------------- dispatch

def _deepsupp(series: BarSeries, **params) -> SupportLevelSet:
    model_keys = {f.name for f in fields(ModelConfig)}
    model = ModelConfig(**{k: v for k, v in params.items() if k in model_keys})
    rest = {k: v for k, v in params.items() if k not in model_keys}
    return detect_deepsupp(series, DeepSuppConfig(model=model, **rest))


DETECTORS: dict[str, tuple[Callable[..., SupportLevelSet], frozenset]] = {
    "deepsupp": (_deepsupp, frozenset(
        {f.name for f in fields(ModelConfig)} | {f.name for f in fields(DeepSuppConfig)} - {"model"})),
    "hmm": (detect_hmm, frozenset({"states", "iterations", "seed", "percentile"})),
    "local_minima": (detect_local_minima, frozenset({"order", "merge_tol"})),
    "fractal": (detect_fractal, frozenset({"merge_tol"})),
    "fibonacci": (detect_fibonacci, frozenset({"lookback", "ratios"})),
    "moving_average": (detect_moving_average, frozenset({"windows"})),
    "quantile_regression": (detect_quantile_regression, frozenset({"quantiles", "iterations", "ridge"})),
}
METHODS = tuple(DETECTORS)


@dataclass(frozen=True)
class DetectorSpec:
    name: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.name not in DETECTORS:
            raise ValueError(f"unknown detector {self.name!r}; valid names: {', '.join(METHODS)}")
        unknown = set(self.params) - DETECTORS[self.name][1]
        if unknown:
            raise ValueError(f"{self.name}: unknown parameters {sorted(unknown)}")


def run_detector(spec: DetectorSpec | str, series: BarSeries) -> SupportLevelSet:
    if isinstance(spec, str):
        spec = DetectorSpec(spec)
    fn, _ = DETECTORS[spec.name]
    levels = fn(series, **spec.params)
    lo, hi = series.price_range
    if not levels.in_range(lo, hi):
        raise AssertionError(f"{spec.name} emitted a level outside [{lo}, {hi}]")
    return levels
