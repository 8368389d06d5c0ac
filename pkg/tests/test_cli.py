from __future__ import annotations

import json
import os

import numpy as np
import pytest

from deepsupp.baselines import METHODS
from deepsupp.cli import PARAMS, main, read_config_file
from deepsupp.market_data import write_ohlcv_csv

from conftest import random_walk


@pytest.fixture()
def universe(tmp_path):
    data = tmp_path / "data"
    data.mkdir()
    for i, t in enumerate(("AAA", "BBB", "CCC")):
        write_ohlcv_csv(random_walk(120, seed=i, ticker=t), data / f"{t}.csv")
    return data


def _files(root):
    return sorted(str(p.relative_to(root)) for p in root.rglob("*") if p.is_file())


def _snapshot(root):
    return {name: (root / name).read_bytes() for name in _files(root)}


def test_detect_three_tickers(universe, tmp_path):
    out = tmp_path / "out"
    assert main(["detect", "--data-dir", str(universe), "-o", str(out), "--methods", "fractal"]) == 0
    assert _files(out) == ["AAA.fractal.json", "BBB.fractal.json", "CCC.fractal.json", "run_manifest.json"]
    doc = json.loads((out / "AAA.fractal.json").read_text())
    assert doc["ticker"] == "AAA" and doc["method"] == "fractal"
    prices = [lvl["price"] for lvl in doc["levels"]]
    assert prices == sorted(prices)


def test_detect_is_deterministic(universe, tmp_path):
    args = ["detect", "--data-dir", str(universe), "--methods", "deepsupp,hmm", "--epochs", "3"]
    assert main(args + ["-o", str(tmp_path / "a")]) == 0
    assert main(args + ["-o", str(tmp_path / "b"), "--jobs", "2"]) == 0
    assert _snapshot(tmp_path / "a") == _snapshot(tmp_path / "b")


def test_corrupt_ticker(universe, tmp_path):
    (universe / "BBB.csv").write_text("date,open,high,low,close,volume\n2021-01-04,1,2,3,4,5\n")
    out = tmp_path / "out"
    assert main(["detect", "--data-dir", str(universe), "-o", str(out), "--methods", "fractal"]) == 1
    assert "AAA.fractal.json" in _files(out) and "CCC.fractal.json" in _files(out)
    assert "BBB.fractal.json" not in _files(out)
    assert (out / "errors.log").read_text().startswith("BBB:")


def test_compare_outputs(universe, tmp_path):
    out = tmp_path / "out"
    assert main(["compare", "--data-dir", str(universe), "-o", str(out), "--methods", "all", "--epochs", "3"]) == 0
    lines = (out / "comparison.csv").read_text().splitlines()
    assert lines[0].startswith("method,overall_mean,overall_std,support_accuracy")
    assert len(lines) == 1 + len(METHODS)
    means = [float(line.split(",")[1]) for line in lines[1:]]
    assert means == sorted(means, reverse=True)
    assert (out / "comparison.txt").read_text().count("\n") == 1 + len(METHODS)
    plot = (out / "plot_data" / "AAA.csv").read_text().splitlines()
    assert plot[0] == "kind,method,date,price"
    assert sum(line.startswith("close,") for line in plot) == 120


def test_manifest_rerun(universe, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["compare", "--data-dir", str(universe), "-o", str(a), "--methods", "fractal,hmm",
                 "--eps", "0.2", "--seed", "7"]) == 0
    manifest = json.loads((a / "run_manifest.json").read_text())
    assert set(manifest["params"]) == set(PARAMS)
    assert manifest["params"]["seed"] == 7 and manifest["params"]["eps"] == 0.2
    assert main(["compare", "--manifest", str(a / "run_manifest.json"), "-o", str(b)]) == 0
    assert _snapshot(a) == _snapshot(b)


def test_config_file_and_flag_precedence(universe, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# comment\nmethods = fibonacci\nfib_lookback = 50\nseed = 3\n")
    out = tmp_path / "out"
    assert main(["detect", "--data-dir", str(universe), "-o", str(out), "--config", str(cfg), "--seed", "4"]) == 0
    manifest = json.loads((out / "run_manifest.json").read_text())
    assert manifest["params"]["fib_lookback"] == 50 and manifest["params"]["seed"] == 4
    assert manifest["methods"] == ["fibonacci"]


def test_default_weights_override_is_identity(universe, tmp_path):
    base = ["evaluate", "--data-dir", str(universe), "--methods", "fibonacci"]
    assert main(base + ["-o", str(tmp_path / "a")]) == 0
    weights = ["--weight-support-accuracy", "0.25", "--weight-price-proximity", "0.20",
               "--weight-volume-confirmation", "0.20", "--weight_regime_sensitivity", "0.15",
               "--weight-hold-duration", "0.15", "--weight-breakout-recovery", "0.05"]
    assert main(base + ["-o", str(tmp_path / "b")] + weights) == 0
    assert _snapshot(tmp_path / "a") == _snapshot(tmp_path / "b")


@pytest.mark.parametrize("extra", [
    ["--weight-support-accuracy", "0.15"],
    ["--methods", "nope"],
    ["--eps", "abc"],
])
def test_config_errors(universe, tmp_path, extra):
    out = tmp_path / "out"
    assert main(["compare", "--data-dir", str(universe), "-o", str(out)] + extra) == 2
    assert not out.exists()


def test_unknown_config_key(universe, tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("epsilon = 0.2\n")
    assert main(["detect", "--data-dir", str(universe), "-o", str(tmp_path / "o"), "--config", str(cfg)]) == 2
    with pytest.raises(ValueError):
        (tmp_path / "bad2.cfg").write_text("just text\n")
        read_config_file(tmp_path / "bad2.cfg")


def test_dump_attention(universe, tmp_path):
    out = tmp_path / "out"
    args = ["dump-attention", "--data-dir", str(universe), "--ticker", "AAA", "--window-end", "50", "--epochs", "2"]
    assert main(args + ["-o", str(out)]) == 0
    heads = sorted((out / "AAA_attention_w50").glob("head_*.csv"))
    assert len(heads) == 4
    for h in heads:
        assert np.abs(np.loadtxt(h, delimiter=",").sum(axis=1) - 1).max() <= 1e-9
    again = tmp_path / "again"
    assert main(args + ["-o", str(again), "--checkpoint", str(out / "AAA.model.ckpt")]) == 0
    assert [h.read_bytes() for h in heads] == [
        (again / "AAA_attention_w50" / h.name).read_bytes() for h in heads]
    assert main(args[:-4] + ["--window-end", "5", "-o", str(tmp_path / "x")]) == 2


def test_features_and_corr_dump(universe, tmp_path):
    out = tmp_path / "out"
    assert main(["features", "dump", "--data-dir", str(universe), "--tickers", "AAA", "-o", str(out)]) == 0
    scaled = (out / "AAA.features_scaled.csv").read_text().splitlines()
    assert scaled[0] == "date,Close,VWAP,Volume,PriceChangeVolume,VolumeRatio" and len(scaled) == 121
    assert main(["corr", "dump", "--data-dir", str(universe), "--ticker", "AAA", "--window-end", "31",
                 "-o", str(out)]) == 0
    mat = np.loadtxt(out / "AAA.corr_31.csv", delimiter=",")
    assert mat.shape == (32, 32) and np.array_equal(mat, mat.T)


def test_synth_round_trip(tmp_path):
    out = tmp_path / "data"
    assert main(["synth", "-o", str(out), "--ticker", "SYN", "--length", "120",
                 "--script", "90:bounce:spike,90:break"]) == 0
    truth = json.loads((out / "SYN.truth.json").read_text())
    assert [e["outcome"] for e in truth["events"]] == ["bounce", "break"]
    assert main(["synth", "-o", str(out), "--ticker", "BAND", "--bands", "90:60,110:60"]) == 0
    assert main(["detect", "--data-dir", str(out), "-o", str(tmp_path / "o"), "--methods", "local_minima"]) == 0


def test_writes_stay_in_output_dir(universe, tmp_path):
    out = tmp_path / "out"
    before = set(_files(tmp_path))
    cwd = os.getcwd()
    os.chdir(tmp_path)
    try:
        assert main(["compare", "--data-dir", str(universe), "-o", str(out), "--methods", "fractal"]) == 0
    finally:
        os.chdir(cwd)
    new = set(_files(tmp_path)) - before
    assert new and all(name.startswith("out/") for name in new)
    assert not any(name.endswith(".tmp") for name in new)
