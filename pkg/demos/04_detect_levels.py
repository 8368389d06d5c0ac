"""Run the full DeepSupp pipeline on a two-band series and compare with baselines.

Prices spend 150 bars around 90 and 150 bars around 110. Each detector should
put a support level inside each band.
"""

from __future__ import annotations

from deepsupp.baselines import METHODS, run_detector
from deepsupp.clustering import run_deepsupp
from deepsupp.market_data import band_ranges, generate_band_series

BANDS = [(90.0, 150), (110.0, 150)]


def main() -> None:
    series = generate_band_series(BANDS, noise_scale=0.01, seed=0, volume_coupling=(1.0, -1.0))
    ranges = band_ranges(series, BANDS)
    print("bands:", [(round(lo, 2), round(hi, 2)) for lo, hi in ranges])

    result = run_deepsupp(series)
    labels = result.labels.labels
    print(f"deepsupp: {result.labels.n_clusters} clusters, {int((labels == -1).sum())} noise windows")
    for level in result.levels:
        print(f"  level {level.price:.2f} from {level.member_count} windows")

    for method in METHODS[1:]:
        prices = run_detector(method, series).prices
        hits = sum(any(lo <= p <= hi for p in prices) for lo, hi in ranges)
        print(f"{method:<20} {len(prices):2d} levels, bands hit {hits}/{len(ranges)}")


if __name__ == "__main__":
    main()
