"""Touch events, the six support-quality metrics and cross-ticker comparison."""

from __future__ import annotations

import csv
import io
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from typing import Sequence

import numpy as np

from .baselines import DetectorSpec, run_detector
from .features import compute_volume_ratio
from .levels import SupportLevelSet
from .market_data import BarSeries

logger = logging.getLogger(__name__)

METRICS = (
    "support_accuracy",
    "price_proximity",
    "volume_confirmation",
    "regime_sensitivity",
    "hold_duration",
    "breakout_recovery",
)
REGIMES = ("bull", "bear", "sideways")
NO_SHALLOW_BREAK_SCORE = 0.8


@dataclass(frozen=True)
class MetricWeights:
    support_accuracy: float = 0.25
    price_proximity: float = 0.20
    volume_confirmation: float = 0.20
    regime_sensitivity: float = 0.15
    hold_duration: float = 0.15
    breakout_recovery: float = 0.05

    def __post_init__(self):
        vals = self.as_tuple()
        if any(v < 0 for v in vals) or abs(math.fsum(vals) - 1.0) > 1e-9:
            raise ValueError(f"metric weights must be non-negative and sum to 1, got {math.fsum(vals)}")

    def as_tuple(self) -> tuple[float, ...]:
        return tuple(getattr(self, m) for m in METRICS)


@dataclass(frozen=True)
class EventConfig:
    touch_tol: float = 0.005
    horizon: int = 10
    break_tol: float = 0.03
    recovery: float = 0.01
    collapse_bars: int = 3
    volume_threshold: float = 1.2
    regime_window: int = 60
    regime_threshold: float = 0.05


@dataclass(frozen=True)
class TouchEvent:
    level: float
    touch_bar: int
    touch_low: float
    outcome: str
    outcome_bar: int
    volume_ratio_at_touch: float


# --------------------------------------------------------------------------- events

def classify_regimes(series: BarSeries, window: int = 60, threshold: float = 0.05) -> np.ndarray:
    """Per-bar label from the trailing ``window``-bar close return; early bars are sideways."""
    close = series.close
    labels = np.full(len(close), "sideways", dtype=object)
    if len(close) > window:
        r = close[window:] / close[:-window] - 1.0
        labels[window:] = np.where(r > threshold, "bull", np.where(r < -threshold, "bear", "sideways"))
    return labels


def _outcome(close: np.ndarray, t: int, level: float, touch_low: float, cfg: EventConfig) -> tuple[str, int]:
    last = min(t + cfg.horizon, len(close) - 1)
    shallow = False
    for k in range(t + 1, last + 1):
        c = close[k]
        if c < level * (1 - cfg.break_tol):
            return "break", k
        if c < level * (1 - cfg.touch_tol):
            shallow = True
        elif shallow:
            if c > level:
                return "shallow_break_recovered", k
        elif c >= touch_low * (1 + cfg.recovery):
            return "bounce", k
    return ("shallow_break_failed" if shallow else "hold"), last


def find_touch_events(
    series: BarSeries, levels: SupportLevelSet | Sequence[float], config: EventConfig | None = None
) -> list[TouchEvent]:
    """Touches of each level from above and what followed within the horizon.

    A touch is a low inside ``level * (1 +/- touch_tol)`` after a close above
    the level. Touches of one level that follow a previous touch of it within
    ``collapse_bars`` bars extend that touch instead of starting an event.
    """
    cfg = config or EventConfig()
    prices = levels.prices if isinstance(levels, SupportLevelSet) else np.asarray(levels, dtype=float)
    low, close = series.low, series.close
    ratio = compute_volume_ratio(series)
    events = []
    for level in prices:
        band = (low >= level * (1 - cfg.touch_tol)) & (low <= level * (1 + cfg.touch_tol))
        band[1:] &= close[:-1] > level
        band[0] = False
        last_touch = None
        for t in np.flatnonzero(band):
            if last_touch is not None and t - last_touch <= cfg.collapse_bars:
                last_touch = t
                continue
            last_touch = t
            outcome, k = _outcome(close, int(t), float(level), float(low[t]), cfg)
            events.append(TouchEvent(float(level), int(t), float(low[t]), outcome, k, float(ratio[t])))
    events.sort(key=lambda e: (e.touch_bar, e.level))
    return events


# --------------------------------------------------------------------------- metrics

def _accuracy(events: Sequence[TouchEvent]) -> float:
    if not events:
        return 0.0
    return sum(e.outcome == "bounce" for e in events) / len(events)


def metric_support_accuracy(events: Sequence[TouchEvent]) -> float:
    return _accuracy(events)


def percentile_of(values: np.ndarray, x: float) -> float:
    """Percentile rank of ``x``: the mean of the strict and weak empirical CDFs, in percent."""
    v = np.asarray(values, dtype=float)
    return 50.0 * (np.sum(v < x) + np.sum(v <= x)) / len(v)


def metric_price_proximity(
    series: BarSeries, levels: SupportLevelSet | Sequence[float], band: tuple[float, float] = (5.0, 35.0)
) -> float:
    prices = levels.prices if isinstance(levels, SupportLevelSet) else np.asarray(levels, dtype=float)
    if len(prices) == 0:
        return 0.0
    lo, hi = band
    scores = []
    for p in prices:
        pct = percentile_of(series.close, p)
        dist = max(lo - pct, pct - hi, 0.0)
        scores.append(max(0.0, 1.0 - dist / hi))
    return float(np.mean(scores))


def metric_volume_confirmation(events: Sequence[TouchEvent], volume_threshold: float = 1.2) -> float:
    bounces = [e for e in events if e.outcome == "bounce"]
    if not bounces:
        return 0.0
    return sum(e.volume_ratio_at_touch >= volume_threshold for e in bounces) / len(bounces)


def metric_regime_sensitivity(events: Sequence[TouchEvent], regimes: Sequence[str]) -> float:
    """Mean per-regime accuracy scaled down by its spread across regimes."""
    accs = []
    for regime in REGIMES:
        sub = [e for e in events if regimes[e.touch_bar] == regime]
        if sub:
            accs.append(_accuracy(sub))
    if not accs:
        return 0.0
    accs = np.array(accs)
    return float(np.clip(accs.mean() * (1.0 - accs.std()), 0.0, 1.0))


def metric_hold_duration(
    series: BarSeries, levels: SupportLevelSet | Sequence[float], events: Sequence[TouchEvent],
    break_tol: float = 0.03,
) -> float:
    """Share of the post-touch span each touched level survives before a deep close below it."""
    prices = levels.prices if isinstance(levels, SupportLevelSet) else np.asarray(levels, dtype=float)
    close = series.close
    end = len(close) - 1
    first_touch = {}
    for e in events:
        first_touch[e.level] = min(first_touch.get(e.level, e.touch_bar), e.touch_bar)
    values = []
    for p in prices:
        f = first_touch.get(float(p))
        if f is None:
            continue
        span = end - f
        if span == 0:
            values.append(1.0)
            continue
        broken = np.flatnonzero(close[f + 1 :] < p * (1 - break_tol))
        duration = broken[0] + 1 if broken.size else span
        values.append(duration / span)
    return float(np.mean(values)) if values else 0.0


def metric_breakout_recovery(events: Sequence[TouchEvent]) -> float:
    rec = sum(e.outcome == "shallow_break_recovered" for e in events)
    fail = sum(e.outcome == "shallow_break_failed" for e in events)
    if rec + fail == 0:
        return NO_SHALLOW_BREAK_SCORE
    return rec / (rec + fail)


def overall_score(metrics, weights: MetricWeights | None = None) -> float:
    """Weighted sum of the six metrics, in METRICS order when given a sequence."""
    weights = weights or MetricWeights()
    vals = [metrics[m] for m in METRICS] if isinstance(metrics, dict) else list(metrics)
    if len(vals) != len(METRICS):
        raise ValueError(f"expected {len(METRICS)} metric values, got {len(vals)}")
    for name, v in zip(METRICS, vals):
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"metric {name}={v} outside [0, 1]")
    return float(sum(w * v for w, v in zip(weights.as_tuple(), vals)))


# --------------------------------------------------------------------------- reports

@dataclass(frozen=True)
class EvaluationReport:
    ticker: str
    method: str
    metrics: dict
    overall: float
    event_counts: dict
    levels: SupportLevelSet | None = None

    def to_dict(self) -> dict:
        return {
            "ticker": self.ticker,
            "method": self.method,
            "metrics": {m: float(self.metrics[m]) for m in METRICS},
            "overall": float(self.overall),
            "event_counts": dict(self.event_counts),
        }


def evaluate_levels(
    series: BarSeries,
    levels: SupportLevelSet,
    config: EventConfig | None = None,
    weights: MetricWeights | None = None,
) -> EvaluationReport:
    cfg = config or EventConfig()
    events = find_touch_events(series, levels, cfg)
    regimes = classify_regimes(series, cfg.regime_window, cfg.regime_threshold)
    metrics = {
        "support_accuracy": metric_support_accuracy(events),
        "price_proximity": metric_price_proximity(series, levels),
        "volume_confirmation": metric_volume_confirmation(events, cfg.volume_threshold),
        "regime_sensitivity": metric_regime_sensitivity(events, regimes),
        "hold_duration": metric_hold_duration(series, levels, events, cfg.break_tol),
        "breakout_recovery": metric_breakout_recovery(events),
    }
    counts = {
        "touches": len(events),
        "bounces": sum(e.outcome == "bounce" for e in events),
        "breaks": sum(e.outcome == "break" for e in events),
        "shallow_breaks": sum(e.outcome.startswith("shallow") for e in events),
    }
    return EvaluationReport(series.ticker, levels.method, metrics, overall_score(metrics, weights), counts, levels)


def evaluate_method(
    spec: DetectorSpec | str,
    series: BarSeries,
    config: EventConfig | None = None,
    weights: MetricWeights | None = None,
) -> EvaluationReport:
    spec = DetectorSpec(spec) if isinstance(spec, str) else spec
    try:
        levels = run_detector(spec, series)
    except Exception as exc:
        raise RuntimeError(f"{spec.name} failed on {series.ticker}: {exc}") from exc
    return evaluate_levels(series, levels, config, weights)


# --------------------------------------------------------------------------- comparison

@dataclass(frozen=True)
class ComparisonRow:
    method: str
    overall_mean: float
    overall_std: float
    metric_means: dict
    tickers: int
    excluded: int


@dataclass(frozen=True)
class ComparisonTable:
    rows: tuple[ComparisonRow, ...]
    reports: dict = field(default_factory=dict)  # (method, ticker) -> EvaluationReport

    CSV_HEADER = ("method", "overall_mean", "overall_std", *METRICS, "excluded_ticker_count")

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.CSV_HEADER)
        for r in self.rows:
            w.writerow([r.method, repr(r.overall_mean), repr(r.overall_std),
                        *(repr(r.metric_means[m]) for m in METRICS), r.excluded])
        return buf.getvalue()

    def to_text(self) -> str:
        head = ["method", "overall", *METRICS, "excluded"]
        body = [[r.method, f"{r.overall_mean:.3f} ± {r.overall_std:.3f}",
                 *(f"{r.metric_means[m]:.3f}" for m in METRICS), str(r.excluded)] for r in self.rows]
        widths = [max(len(row[i]) for row in [head, *body]) for i in range(len(head))]
        lines = ["  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(row, widths)))
                 for row in [head, *body]]
        return "\n".join(lines) + "\n"


def _evaluate_task(args):
    spec, series, config, weights = args
    try:
        return evaluate_method(spec, series, config, weights), None
    except Exception as exc:  # reported per ticker, never fatal for the run
        return None, str(exc)


def compare_methods(
    specs: Sequence[DetectorSpec | str],
    universe: Sequence[BarSeries],
    config: EventConfig | None = None,
    weights: MetricWeights | None = None,
    jobs: int = 1,
) -> ComparisonTable:
    """Per-method mean and population std of the overall score across tickers.

    Results are aggregated in ticker-name order so the table does not depend
    on input order or on worker completion order.
    """
    specs = [DetectorSpec(s) if isinstance(s, str) else s for s in specs]
    if not specs or not universe:
        raise ValueError("compare_methods needs at least one method and one ticker")
    universe = sorted(universe, key=lambda s: s.ticker)
    tasks = [(spec, series, config, weights) for spec in specs for series in universe]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_evaluate_task, tasks))
    else:
        results = [_evaluate_task(t) for t in tasks]

    rows, reports = [], {}
    for i, spec in enumerate(specs):
        chunk = results[i * len(universe) : (i + 1) * len(universe)]
        ok = []
        for series, (report, err) in zip(universe, chunk):
            if report is None:
                logger.warning("excluding %s for %s: %s", series.ticker, spec.name, err)
                continue
            ok.append(report)
            reports[(spec.name, series.ticker)] = report
        if ok:
            overall = np.array([r.overall for r in ok])
            means = {m: float(np.mean([r.metrics[m] for r in ok])) for m in METRICS}
            rows.append(ComparisonRow(spec.name, float(overall.mean()), float(overall.std()), means,
                                      len(ok), len(universe) - len(ok)))
        else:
            rows.append(ComparisonRow(spec.name, float("nan"), float("nan"),
                                      {m: float("nan") for m in METRICS}, 0, len(universe)))
    rows.sort(key=lambda r: (-r.overall_mean if not math.isnan(r.overall_mean) else math.inf, r.method))
    return ComparisonTable(tuple(rows), reports)


def event_config_fields() -> tuple[str, ...]:
    return tuple(f.name for f in fields(EventConfig))


def weights_from_dict(d: dict) -> MetricWeights:
    return MetricWeights(**{m: float(d[m]) for m in METRICS if m in d})

