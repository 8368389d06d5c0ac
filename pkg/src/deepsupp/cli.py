"""Batch command line: ``deepsupp <command> [options]``.

Every tunable parameter has a flat key (``eps``, ``touch_tol``,
``weight_support_accuracy`` ...). Values resolve in the order defaults,
``--manifest``, ``--config``, flags. Each run writes ``run_manifest.json``
into the output directory; passing it back with ``--manifest`` reproduces
the run byte for byte.

Exit codes: 0 success, 1 some tickers failed, 2 configuration error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable


from . import __version__
from .attention_net import ModelConfig, export_attention_weights, init_model, load_checkpoint, save_checkpoint, train
from .baselines import METHODS, DetectorSpec, run_detector
from .clustering import DeepSuppConfig
from .correlation import rolling_correlation_matrices
from .evaluation import METRICS, EventConfig, MetricWeights, compare_methods, evaluate_levels
from .features import COLUMNS, build_feature_matrix, minmax_scale
from .market_data import (
    BarSeries,
    ScriptedEvent,
    SyntheticConfig,
    format_timestamp,
    generate_band_series,
    generate_synthetic_series,
    load_ohlcv_csv,
    write_ohlcv_csv,
)

logger = logging.getLogger("deepsupp")

EXIT_OK, EXIT_PARTIAL, EXIT_CONFIG = 0, 1, 2


def _floats(text) -> tuple[float, ...]:
    if isinstance(text, (list, tuple)):
        return tuple(float(x) for x in text)
    return tuple(float(x) for x in str(text).split(",") if x.strip())


def _ints(text) -> tuple[int, ...]:
    return tuple(int(x) for x in _floats(text))


# key -> (parser, default, help)
PARAMS: dict[str, tuple[Callable, object, str]] = {
    "seed": (int, 0, "seed for model init, batch order and HMM init"),
    "window": (int, 32, "rank-correlation window length"),
    "stride": (int, 1, "bars between correlation windows"),
    "eps": (float, 0.1, "DBSCAN radius in embedding space"),
    "min_samples_fraction": (float, 0.10, "DBSCAN min samples as a fraction of windows"),
    "merge_tol": (float, 0.001, "relative distance below which levels merge"),
    "hidden_dim": (int, 24, "autoencoder hidden width"),
    "learning_rate": (float, 1.0, "SGD learning rate"),
    "momentum": (float, 0.9, "SGD momentum"),
    "epochs": (int, 100, "training epochs"),
    "batch_size": (int, 32, "training mini-batch size"),
    "hmm_states": (int, 3, "HMM state count"),
    "hmm_iterations": (int, 50, "Baum-Welch iterations"),
    "hmm_percentile": (float, 10.0, "close percentile per HMM state"),
    "local_minima_order": (int, 5, "bars on each side for local minima"),
    "pivot_merge_tol": (float, 0.01, "merge distance for local minima and fractals"),
    "fib_lookback": (int, 0, "Fibonacci lookback in bars (0 = full series)"),
    "ma_windows": (_ints, (20, 50, 100, 200), "moving average windows"),
    "qr_quantiles": (_floats, (0.05, 0.10, 0.20, 0.35), "quantile regression quantiles"),
    "qr_iterations": (int, 50, "IRLS iterations"),
    "touch_tol": (float, 0.005, "touch band around a level"),
    "horizon": (int, 10, "bars examined after a touch"),
    "break_tol": (float, 0.03, "depth of a deep break"),
    "recovery": (float, 0.01, "rebound that counts as a bounce"),
    "collapse_bars": (int, 3, "touches this close together form one event"),
    "volume_threshold": (float, 1.2, "volume ratio that confirms a bounce"),
    "regime_window": (int, 60, "trailing bars for regime classification"),
    "regime_threshold": (float, 0.05, "trailing return separating bull/bear from sideways"),
    **{f"weight_{m}": (float, getattr(MetricWeights(), m), f"weight of {m}") for m in METRICS},
}
RUN_KEYS = ("data_dir", "methods", "tickers", "jobs")


class ConfigError(ValueError):
    pass


def _plain(v):
    return list(v) if isinstance(v, tuple) else v


@dataclass
class RunConfig:
    params: dict
    data_dir: str | None = None
    methods: tuple[str, ...] = ("deepsupp",)
    tickers: tuple[str, ...] = ()
    jobs: int = 1

    def weights(self) -> MetricWeights:
        try:
            return MetricWeights(**{m: self.params[f"weight_{m}"] for m in METRICS})
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def events(self) -> EventConfig:
        p = self.params
        return EventConfig(**{k: p[k] for k in (
            "touch_tol", "horizon", "break_tol", "recovery", "collapse_bars",
            "volume_threshold", "regime_window", "regime_threshold")})

    def model(self) -> ModelConfig:
        p = self.params
        return ModelConfig(hidden_dim=p["hidden_dim"], seed=p["seed"], learning_rate=p["learning_rate"],
                           momentum=p["momentum"], epochs=p["epochs"], batch_size=p["batch_size"])

    def deepsupp(self) -> DeepSuppConfig:
        p = self.params
        return DeepSuppConfig(window=p["window"], stride=p["stride"], eps=p["eps"],
                              min_samples_fraction=p["min_samples_fraction"], merge_tol=p["merge_tol"],
                              model=self.model())

    def spec(self, method: str) -> DetectorSpec:
        p = self.params
        if method == "deepsupp":
            d = self.deepsupp()
            params = dict(window=d.window, stride=d.stride, eps=d.eps,
                          min_samples_fraction=d.min_samples_fraction, merge_tol=d.merge_tol,
                          hidden_dim=p["hidden_dim"], seed=p["seed"], learning_rate=p["learning_rate"],
                          momentum=p["momentum"], epochs=p["epochs"], batch_size=p["batch_size"])
        elif method == "hmm":
            params = dict(states=p["hmm_states"], iterations=p["hmm_iterations"], seed=p["seed"],
                          percentile=p["hmm_percentile"])
        elif method == "local_minima":
            params = dict(order=p["local_minima_order"], merge_tol=p["pivot_merge_tol"])
        elif method == "fractal":
            params = dict(merge_tol=p["pivot_merge_tol"])
        elif method == "fibonacci":
            params = dict(lookback=p["fib_lookback"] or None)
        elif method == "moving_average":
            params = dict(windows=tuple(p["ma_windows"]))
        elif method == "quantile_regression":
            params = dict(quantiles=tuple(p["qr_quantiles"]), iterations=p["qr_iterations"])
        else:
            raise ConfigError(f"unknown method {method!r}; valid: {', '.join(METHODS)}")
        return DetectorSpec(method, params)

    def manifest(self, command: str) -> dict:
        return {
            "version": __version__,
            "command": command,
            "data_dir": self.data_dir,
            "methods": list(self.methods),
            "tickers": list(self.tickers),
            "params": {k: _plain(self.params[k]) for k in PARAMS},
        }


def read_config_file(path: str | os.PathLike) -> dict[str, str]:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def _apply(cfg: RunConfig, values: dict, source: str) -> None:
    for key, raw in values.items():
        if key in PARAMS:
            try:
                cfg.params[key] = PARAMS[key][0](raw)
            except (TypeError, ValueError):
                raise ConfigError(f"{source}: bad value for {key}: {raw!r}") from None
        elif key == "data_dir":
            cfg.data_dir = None if raw is None else str(raw)
        elif key == "methods":
            cfg.methods = _split_names(raw)
        elif key == "tickers":
            cfg.tickers = _split_names(raw)
        elif key == "jobs":
            cfg.jobs = int(raw)
        else:
            raise ConfigError(f"{source}: unknown key {key!r}")


def _split_names(raw) -> tuple[str, ...]:
    items = raw if isinstance(raw, (list, tuple)) else str(raw).split(",")
    return tuple(s.strip() for s in items if str(s).strip())


def resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig(params={k: v[1] for k, v in PARAMS.items()})
    if getattr(args, "manifest", None):
        try:
            man = json.loads(Path(args.manifest).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read manifest: {exc}") from None
        _apply(cfg, man.get("params", {}), "manifest")
        _apply(cfg, {k: man[k] for k in RUN_KEYS if k in man}, "manifest")
    if getattr(args, "config", None):
        try:
            _apply(cfg, read_config_file(args.config), str(args.config))
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
    flags = {k: getattr(args, k) for k in (*PARAMS, *RUN_KEYS) if getattr(args, k, None) is not None}
    _apply(cfg, flags, "command line")
    if "all" in cfg.methods:
        cfg.methods = METHODS
    for m in cfg.methods:
        if m not in METHODS:
            raise ConfigError(f"unknown method {m!r}; valid: {', '.join(METHODS)}")
    cfg.weights()
    try:
        cfg.events()
        cfg.deepsupp()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return cfg


# --------------------------------------------------------------------------- io helpers

def write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _json(obj) -> str:
    return json.dumps(obj, indent=2) + "\n"


def _csv(rows, header=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if header:
        w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def load_universe(cfg: RunConfig) -> tuple[list[BarSeries], dict[str, str]]:
    if not cfg.data_dir:
        raise ConfigError("data_dir is required")
    root = Path(cfg.data_dir)
    if not root.is_dir():
        raise ConfigError(f"data_dir {root} is not a directory")
    files = sorted(root.glob("*.csv"))
    if cfg.tickers:
        files = [f for f in files if f.stem in cfg.tickers]
        missing = set(cfg.tickers) - {f.stem for f in files}
        if missing:
            raise ConfigError(f"no CSV for tickers {sorted(missing)}")
    if not files:
        raise ConfigError(f"no CSV files in {root}")
    series, errors = [], {}
    for f in files:
        try:
            series.append(load_ohlcv_csv(f, f.stem))
        except ValueError as exc:
            errors[f.stem] = str(exc)
    return series, errors


def _finish(out: Path, cfg: RunConfig, command: str, errors: dict[str, str]) -> int:
    write_atomic(out / "run_manifest.json", _json(cfg.manifest(command)))
    if errors:
        write_atomic(out / "errors.log", "".join(f"{t}: {msg}\n" for t, msg in sorted(errors.items())))
        for t, msg in sorted(errors.items()):
            logger.error("%s: %s", t, msg)
        return EXIT_PARTIAL
    return EXIT_OK


def _detect_task(args):
    spec, series = args
    try:
        return run_detector(spec, series), None
    except Exception as exc:
        return None, f"{spec.name}: {exc}"


def _map(fn, tasks, jobs):
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, tasks))
    return [fn(t) for t in tasks]


# --------------------------------------------------------------------------- commands

def cmd_detect(cfg: RunConfig, out: Path) -> int:
    universe, errors = load_universe(cfg)
    tasks = [(cfg.spec(m), s) for s in universe for m in cfg.methods]
    for (spec, series), (levels, err) in zip(tasks, _map(_detect_task, tasks, cfg.jobs)):
        if err:
            errors[series.ticker] = err
            continue
        write_atomic(out / f"{series.ticker}.{spec.name}.json", _json(levels.to_dict()))
    return _finish(out, cfg, "detect", errors)


def cmd_evaluate(cfg: RunConfig, out: Path) -> int:
    universe, errors = load_universe(cfg)
    tasks = [(cfg.spec(m), s) for s in universe for m in cfg.methods]
    ev, w = cfg.events(), cfg.weights()
    for (spec, series), (levels, err) in zip(tasks, _map(_detect_task, tasks, cfg.jobs)):
        if err:
            errors[series.ticker] = err
            continue
        report = evaluate_levels(series, levels, ev, w).to_dict()
        report["levels"] = levels.to_dict()["levels"]
        write_atomic(out / f"{series.ticker}.{spec.name}.evaluation.json", _json(report))
    return _finish(out, cfg, "evaluate", errors)


def cmd_compare(cfg: RunConfig, out: Path) -> int:
    universe, errors = load_universe(cfg)
    if not universe:
        return _finish(out, cfg, "compare", errors)
    specs = [cfg.spec(m) for m in cfg.methods]
    table = compare_methods(specs, universe, cfg.events(), cfg.weights(), jobs=cfg.jobs)
    write_atomic(out / "comparison.txt", table.to_text())
    write_atomic(out / "comparison.csv", table.to_csv())
    for series in universe:
        rows = [["close", "", format_timestamp(ts), repr(float(c))]
                for ts, c in zip(series.timestamps, series.close)]
        for spec in specs:
            report = table.reports.get((spec.name, series.ticker))
            if report is None:
                errors.setdefault(series.ticker, f"{spec.name} failed")
                continue
            rows += [["level", spec.name, "", repr(float(p))] for p in report.levels.prices]
        write_atomic(out / "plot_data" / f"{series.ticker}.csv", _csv(rows, ["kind", "method", "date", "price"]))
    return _finish(out, cfg, "compare", errors)


def _pick_series(cfg: RunConfig, ticker: str | None) -> BarSeries:
    if ticker:
        cfg.tickers = (ticker,)
    universe, errors = load_universe(cfg)
    if errors:
        raise ConfigError("; ".join(f"{t}: {m}" for t, m in errors.items()))
    if len(universe) != 1:
        raise ConfigError("select exactly one ticker with --ticker")
    return universe[0]


def cmd_dump_attention(cfg: RunConfig, out: Path, ticker: str | None, window_end: int,
                       checkpoint: str | None) -> int:
    series = _pick_series(cfg, ticker)
    dcfg = cfg.deepsupp()
    scaled, _ = minmax_scale(build_feature_matrix(series))
    seq = rolling_correlation_matrices(scaled, dcfg.window, dcfg.stride)
    if window_end not in set(seq.window_ends.tolist()):
        raise ConfigError(f"window_end {window_end} out of range; valid ends are "
                          f"{seq.window_ends[0]}..{seq.window_ends[-1]} step {dcfg.stride}")
    if checkpoint:
        model = load_checkpoint(checkpoint)
    else:
        model, _ = train(init_model(dcfg.model), seq, dcfg.model)
        save_checkpoint(model, out / f"{series.ticker}.model.ckpt")
    export_attention_weights(model, seq, window_end, out / f"{series.ticker}_attention_w{window_end}")
    return _finish(out, cfg, "dump-attention", {})


def cmd_features_dump(cfg: RunConfig, out: Path) -> int:
    universe, errors = load_universe(cfg)
    for series in universe:
        try:
            raw = build_feature_matrix(series)
            scaled, _ = minmax_scale(raw)
        except ValueError as exc:
            errors[series.ticker] = str(exc)
            continue
        dates = [format_timestamp(t) for t in series.timestamps]
        for name, fm in (("raw", raw), ("scaled", scaled)):
            rows = [[d, *(repr(float(v)) for v in row)] for d, row in zip(dates, fm.values)]
            write_atomic(out / f"{series.ticker}.features_{name}.csv", _csv(rows, ["date", *COLUMNS]))
    return _finish(out, cfg, "features dump", errors)


def cmd_corr_dump(cfg: RunConfig, out: Path, ticker: str | None, window_end: int) -> int:
    series = _pick_series(cfg, ticker)
    p = cfg.params
    scaled, _ = minmax_scale(build_feature_matrix(series))
    seq = rolling_correlation_matrices(scaled, p["window"], p["stride"])
    try:
        mat = seq.at(window_end)
    except KeyError as exc:
        raise ConfigError(str(exc.args[0])) from None
    rows = [[repr(float(v)) for v in row] for row in mat.padded]
    write_atomic(out / f"{series.ticker}.corr_{window_end}.csv", _csv(rows))
    return _finish(out, cfg, "corr dump", {})


def cmd_synth(args: argparse.Namespace, out: Path) -> int:
    ticker = args.ticker or "SYN"
    if args.bands:
        bands = [tuple(float(x) for x in b.split(":")) for b in args.bands.split(",")]
        bands = [(c, int(n)) for c, n in bands]
        coupling = _floats(args.coupling) if args.coupling else None
        series = generate_band_series(bands, args.noise, args.seed or 0, ticker, volume_coupling=coupling)
        truth = {"bands": [list(b) for b in bands]}
    else:
        script = None
        if args.script:
            script = []
            for item in args.script.split(","):
                parts = item.split(":")
                script.append(ScriptedEvent(float(parts[0]), parts[1] if len(parts) > 1 else "bounce",
                                            len(parts) > 2 and parts[2] == "spike"))
            script = tuple(script)
        levels = tuple((float(p), int(k)) for p, k in (x.split(":") for x in args.levels.split(","))) \
            if args.levels else ()
        config = SyntheticConfig(length=args.length, base_price=args.base_price, planted_levels=levels,
                                 noise_scale=args.noise, seed=args.seed or 0, script=script)
        try:
            series, planted = generate_synthetic_series(config, ticker)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        truth = {"levels": list(planted.levels),
                 "events": [dict(level=e.level, touch_bar=e.touch_bar, outcome=e.outcome,
                                 outcome_bar=e.outcome_bar, volume_spike=e.volume_spike)
                            for e in planted.events]}
    out.mkdir(parents=True, exist_ok=True)
    tmp = out / f"{ticker}.csv.tmp"
    write_ohlcv_csv(series, tmp)
    os.replace(tmp, out / f"{ticker}.csv")
    write_atomic(out / f"{ticker}.truth.json", _json(truth))
    return EXIT_OK


# --------------------------------------------------------------------------- parser

def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data-dir", "--data_dir", dest="data_dir", help="directory of <TICKER>.csv files")
    p.add_argument("-o", "--output-dir", "--output_dir", dest="output_dir", required=True)
    p.add_argument("--methods", help=f"comma list of {', '.join(METHODS)} or 'all'")
    p.add_argument("--tickers", help="comma list restricting the tickers loaded")
    p.add_argument("--jobs", type=int, help="worker processes (default 1)")
    p.add_argument("--config", help="flat key = value file")
    p.add_argument("--manifest", help="run_manifest.json of an earlier run")
    group = p.add_argument_group("parameters")
    for key, (_, default, help_) in PARAMS.items():
        flags = [f"--{key.replace('_', '-')}"] + ([f"--{key}"] if "_" in key else [])
        group.add_argument(*flags, dest=key, default=None, help=f"{help_} (default {_plain(default)})")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="deepsupp", description="Support level detection and evaluation.")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, help_ in (("detect", "write support levels per ticker and method"),
                        ("evaluate", "score each method's levels per ticker"),
                        ("compare", "cross-ticker comparison table and plot data")):
        _add_common(sub.add_parser(name, help=help_))

    p = sub.add_parser("dump-attention", help="per-head attention maps for one window")
    _add_common(p)
    p.add_argument("--ticker")
    p.add_argument("--window-end", "--window_end", dest="window_end", type=int, required=True,
                   help="0-based bar index of the window's last bar")
    p.add_argument("--checkpoint", help="model checkpoint to use instead of training")

    p = sub.add_parser("features", help="feature matrix tools")
    fsub = p.add_subparsers(dest="action", required=True)
    _add_common(fsub.add_parser("dump", help="raw and scaled feature CSVs"))

    p = sub.add_parser("corr", help="correlation matrix tools")
    csub = p.add_subparsers(dest="action", required=True)
    p = csub.add_parser("dump", help="one padded correlation matrix as CSV")
    _add_common(p)
    p.add_argument("--ticker")
    p.add_argument("--window-end", "--window_end", dest="window_end", type=int, required=True)

    p = sub.add_parser("synth", help="write a synthetic ticker CSV and its planted truth")
    p.add_argument("-o", "--output-dir", "--output_dir", dest="output_dir", required=True)
    p.add_argument("--ticker")
    p.add_argument("--length", type=int, default=300)
    p.add_argument("--base-price", type=float, default=100.0)
    p.add_argument("--levels", help="price:touches,... (each touch a bounce)")
    p.add_argument("--script", help="price:outcome[:spike],... in touch order")
    p.add_argument("--bands", help="centre:bars,... consolidation bands instead of a touch script")
    p.add_argument("--coupling", help="per-band volume coupling, comma list")
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out = Path(args.output_dir)
    try:
        if args.command == "synth":
            return cmd_synth(args, out)
        cfg = resolve_config(args)
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "detect":
            return cmd_detect(cfg, out)
        if args.command == "evaluate":
            return cmd_evaluate(cfg, out)
        if args.command == "compare":
            return cmd_compare(cfg, out)
        if args.command == "dump-attention":
            return cmd_dump_attention(cfg, out, args.ticker, args.window_end, args.checkpoint)
        if args.command == "features":
            return cmd_features_dump(cfg, out)
        if args.command == "corr":
            return cmd_corr_dump(cfg, out, args.ticker, args.window_end)
    except ConfigError as exc:
        print(f"deepsupp: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    parser.error(f"unhandled command {args.command}")
    return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
