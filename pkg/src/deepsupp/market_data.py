"""OHLCV bar series: CSV ingestion, validation and scripted synthetic data."""

from __future__ import annotations

import csv
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

logger = logging.getLogger(__name__)

CSV_COLUMNS = ("date", "open", "high", "low", "close", "volume")

OUTCOMES = ("bounce", "hold", "break", "shallow_break_recovered", "shallow_break_failed")


class DataError(ValueError):
    """Raised for unreadable or invalid bar data."""


@dataclass(frozen=True)
class Bar:
    timestamp: np.datetime64
    open: float
    high: float
    low: float
    close: float
    volume: float


def _frozen(a) -> np.ndarray:
    a = np.array(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class BarSeries:
    """Immutable column store of ordered bars for one ticker.

    ``timestamps`` is ``datetime64[D]`` for daily bars and ``datetime64[s]``
    for intraday bars. Bar indices used everywhere else are 0-based positions
    in this series.
    """

    ticker: str
    timestamps: np.ndarray
    open: np.ndarray
    high: np.ndarray
    low: np.ndarray
    close: np.ndarray
    volume: np.ndarray

    def __post_init__(self):
        ts = np.asarray(self.timestamps)
        if ts.dtype.kind != "M":
            raise DataError("timestamps must be datetime64")
        object.__setattr__(self, "timestamps", _frozen(ts))
        cols = {}
        for name in ("open", "high", "low", "close", "volume"):
            col = np.asarray(getattr(self, name), dtype=np.float64)
            if col.shape != ts.shape or col.ndim != 1:
                raise DataError(f"column {name!r} has shape {col.shape}, expected {ts.shape}")
            cols[name] = col
            object.__setattr__(self, name, _frozen(col))
        if len(ts) < 1:
            raise DataError("a bar series needs at least one bar")
        bad = invalid_rows(cols["open"], cols["high"], cols["low"], cols["close"], cols["volume"])
        if bad:
            raise DataError(f"{self.ticker}: invalid bars at indices {bad[:20]}")
        if len(ts) > 1 and not np.all(ts[1:] > ts[:-1]):
            raise DataError(f"{self.ticker}: timestamps must be strictly increasing")

    @classmethod
    def from_bars(cls, ticker: str, bars: Sequence[Bar]) -> "BarSeries":
        return cls(
            ticker=ticker,
            timestamps=np.array([b.timestamp for b in bars]),
            open=[b.open for b in bars],
            high=[b.high for b in bars],
            low=[b.low for b in bars],
            close=[b.close for b in bars],
            volume=[b.volume for b in bars],
        )

    def __len__(self) -> int:
        return len(self.timestamps)

    def __getitem__(self, i: int) -> Bar:
        return Bar(
            self.timestamps[i],
            float(self.open[i]),
            float(self.high[i]),
            float(self.low[i]),
            float(self.close[i]),
            float(self.volume[i]),
        )

    @property
    def bars(self) -> list[Bar]:
        return [self[i] for i in range(len(self))]

    def __iter__(self) -> Iterator[Bar]:
        return iter(self.bars)

    def __eq__(self, other) -> bool:
        if not isinstance(other, BarSeries):
            return NotImplemented
        return self.ticker == other.ticker and all(
            np.array_equal(getattr(self, c), getattr(other, c))
            for c in ("timestamps", "open", "high", "low", "close", "volume")
        )

    def scaled(self, k: float) -> "BarSeries":
        """Copy with every price multiplied by ``k``; volumes untouched."""
        return BarSeries(self.ticker, self.timestamps, self.open * k, self.high * k,
                         self.low * k, self.close * k, self.volume)

    @property
    def price_range(self) -> tuple[float, float]:
        return float(self.low.min()), float(self.high.max())


def invalid_rows(o, h, l, c, v) -> list[int]:
    o, h, l, c, v = (np.asarray(x, dtype=float) for x in (o, h, l, c, v))
    with np.errstate(invalid="ignore"):
        ok = (
            np.isfinite(o) & np.isfinite(h) & np.isfinite(l) & np.isfinite(c) & np.isfinite(v)
            & (l > 0) & (l <= o) & (o <= h) & (l <= c) & (c <= h) & (v >= 0)
        )
    return [int(i) for i in np.flatnonzero(~ok)]


# --------------------------------------------------------------------------- CSV

def _parse_timestamp(text: str) -> np.datetime64:
    text = text.strip()
    if text.lstrip("-").isdigit():
        return np.datetime64(int(text), "s")
    return np.datetime64(text, "D") if len(text) == 10 else np.datetime64(text, "s")


def load_ohlcv_csv(path: str | os.PathLike, ticker: str | None = None) -> BarSeries:
    """Read one ticker's bars from ``date,open,high,low,close,volume`` CSV.

    Header names are matched case-insensitively and may appear in any order.
    Rows are sorted by timestamp. Errors name the 1-based file line.
    """
    path = Path(path)
    if ticker is None:
        ticker = path.stem
    if not path.is_file():
        raise DataError(f"no such file: {path}")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        names = [h.strip().lower() for h in header]
        missing = [c for c in CSV_COLUMNS if c not in names]
        if missing:
            raise DataError(f"{path}: header is missing columns {missing}")
        idx = [names.index(c) for c in CSV_COLUMNS]

        stamps, rows, lines = [], [], []
        for lineno, record in enumerate(reader, start=2):
            if not record or all(not f.strip() for f in record):
                continue
            try:
                fields = [record[i] for i in idx]
                stamp = _parse_timestamp(fields[0])
                values = [float(f) for f in fields[1:]]
            except (IndexError, ValueError) as exc:
                raise DataError(f"{path}: cannot parse line {lineno}: {exc}") from None
            stamps.append(stamp)
            rows.append(values)
            lines.append(lineno)

    if not rows:
        raise DataError(f"{path}: no data rows")
    units = {np.datetime_data(s.dtype)[0] for s in stamps}
    if len(units) > 1:
        raise DataError(f"{path}: mixed date and epoch-second timestamps")
    ts = np.array(stamps)
    arr = np.array(rows, dtype=np.float64)
    bad = invalid_rows(*arr.T)
    if bad:
        raise DataError(f"{path}: invalid bars on lines {[lines[i] for i in bad]}")

    order = np.argsort(ts, kind="stable")
    ts, arr = ts[order], arr[order]
    lines = [lines[i] for i in order]
    dup = np.flatnonzero(ts[1:] == ts[:-1])
    if dup.size:
        pairs = [(lines[i], lines[i + 1]) for i in dup]
        raise DataError(f"{path}: duplicate timestamps on lines {pairs}")
    return BarSeries(ticker, ts, *arr.T)


def format_timestamp(ts: np.datetime64) -> str:
    if np.datetime_data(ts.dtype)[0] == "D":
        return str(ts)
    return str(int(ts.astype("datetime64[s]").astype(np.int64)))


def write_ohlcv_csv(series: BarSeries, path: str | os.PathLike) -> None:
    """Write bars in the ingestion schema; floats round-trip exactly."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for i in range(len(series)):
            w.writerow([format_timestamp(series.timestamps[i])]
                       + [repr(float(getattr(series, c)[i])) for c in CSV_COLUMNS[1:]])


# --------------------------------------------------------------------------- validation

@dataclass(frozen=True)
class Finding:
    kind: str  # "gap" | "zero_volume_run" | "constant_price_run"
    start: int
    end: int  # inclusive bar index
    message: str


@dataclass(frozen=True)
class ValidationReport:
    ticker: str
    findings: tuple[Finding, ...] = ()

    @property
    def clean(self) -> bool:
        return not self.findings


def _runs(mask: np.ndarray, min_len: int) -> list[tuple[int, int]]:
    runs, start = [], None
    for i, m in enumerate(list(mask) + [False]):
        if m and start is None:
            start = i
        elif not m and start is not None:
            if i - start >= min_len:
                runs.append((start, i - 1))
            start = None
    return runs


def validate_series(
    series: BarSeries,
    zero_volume_run: int = 3,
    constant_price_run: int = 20,
    gap_factor: float = 5.0,
) -> ValidationReport:
    """Advisory scan for calendar gaps, zero-volume runs and flat closes.

    A gap is a timestamp step larger than ``gap_factor`` times the median step.
    A constant-close run of ``constant_price_run`` bars or more degrades every
    rank correlation window that covers it.
    """
    findings: list[Finding] = []
    n = len(series)
    if n > 2:
        steps = np.diff(series.timestamps).astype(np.int64)
        med = float(np.median(steps))
        for i in np.flatnonzero(steps > gap_factor * med):
            findings.append(Finding("gap", int(i), int(i + 1),
                                    f"gap of {int(steps[i])} units between bars {i} and {i + 1}"))
    for a, b in _runs(series.volume == 0, zero_volume_run):
        findings.append(Finding("zero_volume_run", a, b, f"{b - a + 1} consecutive zero-volume bars"))
    if n > 1:
        same = np.concatenate([[False], series.close[1:] == series.close[:-1]])
        for a, b in _runs(same, constant_price_run - 1):
            a -= 1
            findings.append(Finding(
                "constant_price_run", a, b,
                f"close constant for {b - a + 1} bars; rank correlations degenerate"))
    findings.sort(key=lambda f: (f.start, f.kind))
    return ValidationReport(series.ticker, tuple(findings))


# --------------------------------------------------------------------------- synthetic data

@dataclass(frozen=True)
class ScriptedEvent:
    level: float
    outcome: str = "bounce"
    volume_spike: bool = False


@dataclass(frozen=True)
class SyntheticConfig:
    """Script for a flat cruise path with planted support touches.

    ``planted_levels`` is a sequence of ``(price, touch_count)``; each touch is
    scripted as a bounce. Pass ``script`` to control outcomes and volume
    spikes explicitly; it overrides the touch counts. Event ``i`` touches its
    level at bar ``warmup + i * block_length``.
    """

    length: int
    base_price: float
    planted_levels: tuple = ()
    noise_scale: float = 0.0
    seed: int = 0
    script: tuple[ScriptedEvent, ...] | None = None
    base_volume: float = 1_000_000.0
    spike_multiplier: float = 2.0
    warmup: int = 30
    block_length: int = 24
    horizon: int = 10
    start_date: str = "2021-01-04"

    def events(self) -> list[ScriptedEvent]:
        if self.script is not None:
            return list(self.script)
        return [ScriptedEvent(float(p), "bounce") for p, k in self.planted_levels for _ in range(int(k))]


@dataclass(frozen=True)
class PlantedEvent:
    level: float
    touch_bar: int
    outcome: str
    outcome_bar: int
    volume_spike: bool


@dataclass(frozen=True)
class PlantedTruth:
    levels: tuple[float, ...]
    events: tuple[PlantedEvent, ...]
    first_touch: dict = field(default_factory=dict)
    first_break: dict = field(default_factory=dict)

    def count(self, outcome: str) -> int:
        return sum(e.outcome == outcome for e in self.events)


# Scripted bar closes relative to the level, per outcome, for bars after the touch.
_TOUCH_CLOSE = 1.008
_BOUNCE_CLOSE = 1.015
_HOLD_CLOSE = 1.007
_SHALLOW_CLOSE = 0.985
_RECOVER_CLOSE = 1.01
_BREAK_CLOSE = 0.96
_MIN_CLEARANCE = 1.05
_MIN_LEVEL_SPACING = 1.05


def _outcome_path(outcome: str, level: float, horizon: int) -> tuple[list[float], int]:
    """Closes for bars touch+1.. and the offset of the deciding bar."""
    if outcome == "bounce":
        return [level * _BOUNCE_CLOSE], 1
    if outcome == "break":
        return [level * _BREAK_CLOSE] * 2, 1
    if outcome == "shallow_break_recovered":
        return [level * _SHALLOW_CLOSE, level * _RECOVER_CLOSE], 2
    if outcome == "shallow_break_failed":
        return [level * _SHALLOW_CLOSE] * horizon, horizon
    if outcome == "hold":
        return [level * _HOLD_CLOSE] * horizon, horizon
    raise ValueError(f"unknown outcome {outcome!r}; expected one of {OUTCOMES}")


def _business_days(start: str, n: int) -> np.ndarray:
    first = np.busday_offset(np.datetime64(start, "D"), 0, roll="forward")
    return np.busday_offset(first, np.arange(n), roll="forward")


def generate_synthetic_series(
    config: SyntheticConfig, ticker: str = "SYN"
) -> tuple[BarSeries, PlantedTruth]:
    """Render a scripted series and the truth it was built from.

    Cruise bars sit at ``base_price`` with multiplicative noise; scripted
    touch and outcome bars are noise-free so every event is realized exactly.
    With ``noise_scale == 0`` each bar's low equals min(open, close).
    """
    cfg = config
    if cfg.length < 60:
        raise ValueError("synthetic series need length >= 60")
    events = cfg.events()
    block = max(cfg.block_length, cfg.horizon + 2)
    if cfg.warmup < 1 or cfg.warmup + len(events) * block > cfg.length:
        raise ValueError(
            f"infeasible script: {len(events)} events need {cfg.warmup + len(events) * block} bars, "
            f"length is {cfg.length}")
    levels = sorted({e.level for e in events} | {float(p) for p, _ in cfg.planted_levels})
    noise_band = (1 + 3 * cfg.noise_scale) ** 2
    for lvl in levels:
        if lvl <= 0 or lvl * _MIN_CLEARANCE * noise_band > cfg.base_price:
            raise ValueError(
                f"infeasible script: level {lvl} must sit at least 5% below the noisy cruise "
                f"path at {cfg.base_price}")
    for a, b in zip(levels, levels[1:]):
        if b < a * _MIN_LEVEL_SPACING:
            raise ValueError(f"infeasible script: levels {a} and {b} are closer than 5%")

    rng = np.random.default_rng(cfg.seed)
    n = cfg.length
    eps = np.clip(rng.standard_normal(n), -3, 3) * cfg.noise_scale
    wick = np.abs(np.clip(rng.standard_normal((2, n)), -3, 3)) * cfg.noise_scale
    vol_noise = np.exp(np.clip(rng.standard_normal(n), -3, 3) * cfg.noise_scale * 10)
    close = cfg.base_price * (1 + eps)
    volume = cfg.base_volume * vol_noise
    scripted = np.zeros(n, dtype=bool)

    planted = []
    for i, ev in enumerate(events):
        s = cfg.warmup + i * block
        path, decide = _outcome_path(ev.outcome, ev.level, cfg.horizon)
        close[s] = ev.level * _TOUCH_CLOSE
        close[s + 1 : s + 1 + len(path)] = path
        scripted[s : s + 1 + len(path)] = True
        volume[s] = cfg.base_volume * (cfg.spike_multiplier if ev.volume_spike else 1.0)
        planted.append(PlantedEvent(ev.level, s, ev.outcome, s + decide, ev.volume_spike))

    open_ = np.empty(n)
    open_[0] = close[0]
    open_[1:] = close[:-1]
    low = np.minimum(open_, close)
    high = np.maximum(open_, close)
    for ev in planted:
        low[ev.touch_bar] = ev.level
    cruise = ~scripted
    # no wick on the bar leaving a scripted block: its low must not graze a lower level
    wicked = cruise & np.concatenate([[True], cruise[:-1]])
    low[wicked] *= 1 - wick[0, wicked]
    high[cruise] *= 1 + wick[1, cruise]
    if cfg.noise_scale == 0:
        volume[cruise] = cfg.base_volume

    series = BarSeries(ticker, _business_days(cfg.start_date, n), open_, high, low, close, volume)
    first_touch, first_break = {}, {}
    for lvl in levels:
        touches = [e.touch_bar for e in planted if e.level == lvl]
        if not touches:
            continue
        f = min(touches)
        first_touch[lvl] = f
        below = np.flatnonzero(close[f + 1 :] < lvl * 0.97)
        first_break[lvl] = int(f + 1 + below[0]) if below.size else None
    truth = PlantedTruth(tuple(levels), tuple(planted), first_touch, first_break)
    return series, truth


def verify_planted_truth(
    series: BarSeries,
    truth: PlantedTruth,
    touch_tol: float = 0.005,
    break_tol: float = 0.03,
    recovery: float = 0.01,
) -> list[str]:
    """Replay each planted event against the bars; returns violated events."""
    problems = []
    c, lo = series.close, series.low
    for ev in truth.events:
        L, s, k = ev.level, ev.touch_bar, ev.outcome_bar
        if not (L * (1 - touch_tol) <= lo[s] <= L * (1 + touch_tol)) or not c[s - 1] > L:
            problems.append(f"no touch at bar {s} for level {L}")
            continue
        span = c[s + 1 : k + 1]
        ok = {
            "bounce": c[k] >= lo[s] * (1 + recovery) and np.all(span >= L * (1 - touch_tol)),
            "break": c[k] < L * (1 - break_tol),
            "shallow_break_recovered": c[k] > L and np.any(span < L * (1 - touch_tol))
            and np.all(span >= L * (1 - break_tol)),
            "shallow_break_failed": np.all(span < L) and np.all(span >= L * (1 - break_tol)),
            "hold": np.all(span >= L * (1 - touch_tol)) and np.all(span < lo[s] * (1 + recovery)),
        }[ev.outcome]
        if not ok:
            problems.append(f"{ev.outcome} at bar {s} for level {L} not realized")
    return problems


def generate_band_series(
    bands: Sequence[tuple[float, int]],
    noise_scale: float = 0.01,
    seed: int = 0,
    ticker: str = "BANDS",
    base_volume: float = 1_000_000.0,
    volume_coupling: Sequence[float] | None = None,
    start_date: str = "2021-01-04",
) -> BarSeries:
    """Consecutive consolidation bands: ``(center_price, bar_count)`` each.

    Closes mean-revert around each band's centre. ``volume_coupling`` sets,
    per band, how strongly volume responds to the signed bar return, which
    gives each band its own price-volume signature.
    """
    rng = np.random.default_rng(seed)
    if volume_coupling is None:
        volume_coupling = [0.0] * len(bands)
    closes = []
    for (center, count), coupling in zip(bands, volume_coupling):
        x = 0.0
        for _ in range(int(count)):
            x = 0.6 * x + rng.standard_normal() * noise_scale
            closes.append(center * (1 + x))
    close = np.array(closes)
    ret = np.concatenate([[0.0], np.diff(close) / close[:-1]])
    couplings = np.concatenate([[c] * int(n) for (_, n), c in zip(bands, volume_coupling)])
    shock = np.exp(0.2 * rng.standard_normal(len(close)))
    volume = base_volume * shock * np.exp(np.clip(couplings * ret / max(noise_scale, 1e-12), -3, 3))
    open_ = np.concatenate([[close[0]], close[:-1]])
    wick = np.abs(rng.standard_normal((2, len(close)))) * noise_scale * 0.5
    low = np.minimum(open_, close) * (1 - wick[0])
    high = np.maximum(open_, close) * (1 + wick[1])
    return BarSeries(ticker, _business_days(start_date, len(close)), open_, high, low, close, volume)


def band_ranges(series_or_closes, bands: Sequence[tuple[float, int]]) -> list[tuple[float, float]]:
    """Close-price range actually realized within each band."""
    closes = np.asarray(getattr(series_or_closes, "close", series_or_closes))
    out, start = [], 0
    for _, count in bands:
        seg = closes[start : start + int(count)]
        out.append((float(seg.min()), float(seg.max())))
        start += int(count)
    return out


def series_from_closes(
    closes: Sequence[float],
    volumes: Sequence[float] | float = 1_000_000.0,
    ticker: str = "TEST",
    lows: Sequence[float] | None = None,
    start_date: str = "2021-01-04",
) -> BarSeries:
    """Bars whose open is the previous close; lows default to min(open, close)."""
    close = np.asarray(closes, dtype=float)
    n = len(close)
    volume = np.broadcast_to(np.asarray(volumes, dtype=float), (n,)).copy()
    open_ = np.concatenate([close[:1], close[:-1]])
    low = np.minimum(open_, close) if lows is None else np.asarray(lows, dtype=float)
    high = np.maximum(np.maximum(open_, close), low)
    open_ = np.maximum(open_, low)
    close_ = np.maximum(close, low)
    return BarSeries(ticker, _business_days(start_date, n), open_, high, low, close_, volume)
