"""Build a scripted price series, check its planted truth and run validation.

Seven touches on two support levels are planted on a flat 100 cruise. The
generator records where each touch lands and what happens afterwards, so
every later stage has a known answer to compare against.
"""

from __future__ import annotations

from deepsupp.market_data import (
    ScriptedEvent,
    SyntheticConfig,
    generate_synthetic_series,
    validate_series,
    verify_planted_truth,
)

SCRIPT = (
    ScriptedEvent(90.0, "bounce", volume_spike=True),
    ScriptedEvent(90.0, "bounce"),
    ScriptedEvent(90.0, "shallow_break_recovered"),
    ScriptedEvent(90.0, "shallow_break_failed"),
    ScriptedEvent(80.0, "bounce", volume_spike=True),
    ScriptedEvent(80.0, "break"),
    ScriptedEvent(80.0, "hold"),
)


def main() -> None:
    cfg = SyntheticConfig(length=300, base_price=100.0, script=SCRIPT, noise_scale=0.004, seed=3)
    series, truth = generate_synthetic_series(cfg)
    lo, hi = series.price_range
    print(f"{series.ticker}: {len(series)} bars, prices {lo:.2f} to {hi:.2f}")
    print("planted levels:", list(truth.levels))
    for e in truth.events:
        print(f"  level {e.level:5.1f}  touch bar {e.touch_bar:3d}  {e.outcome:<24} resolved at bar {e.outcome_bar}")
    verify_planted_truth(series, truth)
    print("planted truth re-verified against the bars")
    report = validate_series(series)
    print("validation:", "clean" if report.clean else [f.kind for f in report.findings])


if __name__ == "__main__":
    main()
