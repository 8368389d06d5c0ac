from __future__ import annotations

import sys

import numpy as np
import pytest

from deepsupp.market_data import ScriptedEvent, SyntheticConfig, generate_synthetic_series, series_from_closes

# Seven scripted touches on two levels, one every 24 bars from bar 30.
SCRIPT = (
    ScriptedEvent(90.0, "bounce", volume_spike=True),
    ScriptedEvent(90.0, "bounce"),
    ScriptedEvent(90.0, "shallow_break_recovered"),
    ScriptedEvent(90.0, "shallow_break_failed"),
    ScriptedEvent(80.0, "bounce", volume_spike=True),
    ScriptedEvent(80.0, "break"),
    ScriptedEvent(80.0, "hold"),
)


@pytest.fixture(scope="session")
def scripted():
    return generate_synthetic_series(SyntheticConfig(length=200, base_price=100.0, script=SCRIPT))


@pytest.fixture(scope="session")
def noisy_scripted():
    cfg = SyntheticConfig(length=300, base_price=100.0, script=SCRIPT, noise_scale=0.004, seed=3)
    return generate_synthetic_series(cfg)


def random_walk(n: int, seed: int = 0, ticker: str = "RW", start: float = 100.0):
    rng = np.random.default_rng(seed)
    closes = start * np.exp(np.cumsum(rng.normal(0, 0.01, n)))
    volumes = rng.uniform(5e5, 2e6, n)
    return series_from_closes(closes, volumes, ticker=ticker)


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
