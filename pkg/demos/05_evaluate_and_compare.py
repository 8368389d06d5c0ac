"""Score detected levels with the six metrics and rank methods over a small universe.

Touch events are found on the scripted series first, so the metric arithmetic
can be followed by hand; then three tickers are compared across all methods.
"""

from __future__ import annotations

from deepsupp.baselines import METHODS, DetectorSpec
from deepsupp.evaluation import compare_methods, evaluate_levels, find_touch_events
from deepsupp.levels import SupportLevelSet
from deepsupp.market_data import ScriptedEvent, SyntheticConfig, generate_band_series, generate_synthetic_series

SCRIPT = (
    ScriptedEvent(90.0, "bounce", volume_spike=True),
    ScriptedEvent(90.0, "shallow_break_recovered"),
    ScriptedEvent(80.0, "bounce"),
    ScriptedEvent(80.0, "break"),
)


def main() -> None:
    series, truth = generate_synthetic_series(SyntheticConfig(length=150, base_price=100.0, script=SCRIPT))
    levels = SupportLevelSet.from_prices(series.ticker, "truth", truth.levels)
    for e in find_touch_events(series, levels):
        print(f"touch of {e.level:.0f} at bar {e.touch_bar}: {e.outcome} (volume ratio {e.volume_ratio_at_touch:.2f})")
    report = evaluate_levels(series, levels)
    for name, value in report.metrics.items():
        print(f"  {name:<20} {value:.3f}")
    print(f"  overall              {report.overall:.3f}")

    universe = [
        generate_band_series([(90.0, 120), (110.0, 120)], seed=i, ticker=f"T{i}", volume_coupling=(1.0, -1.0))
        for i in range(3)
    ]
    specs = [DetectorSpec(m, {"epochs": 20} if m == "deepsupp" else {}) for m in METHODS]
    print()
    print(compare_methods(specs, universe).to_text())


if __name__ == "__main__":
    main()
