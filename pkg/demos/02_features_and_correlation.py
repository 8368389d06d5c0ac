"""Turn bars into scaled features and rolling rank-correlation matrices.

Five features per bar (close, VWAP, volume, price change times volume and
volume ratio) are min-max scaled, then every 30-bar window becomes a 5x5
Spearman matrix padded to the 32x32 model input.
"""

from __future__ import annotations

import numpy as np

from deepsupp.correlation import rolling_correlation_matrices
from deepsupp.features import build_feature_matrix, minmax_scale
from deepsupp.market_data import generate_band_series


def main() -> None:
    series = generate_band_series([(90.0, 100), (110.0, 100)], noise_scale=0.01, seed=0,
                                  volume_coupling=(1.0, -1.0))
    raw = build_feature_matrix(series)
    scaled, params = minmax_scale(raw)
    print("features:", ", ".join(raw.columns))
    print("scaled range:", float(scaled.values.min()), "to", float(scaled.values.max()))

    seq = rolling_correlation_matrices(scaled)
    print(f"{len(seq)} windows, first ends at bar {seq.matrices[0].window_end}")
    for end in (seq.matrices[0].window_end, seq.matrices[-1].window_end):
        m = seq.at(end)
        print(f"window ending at bar {end}, rank correlation of close with volume: {m.raw[0, 2]:+.3f}")
    padded = seq.matrices[0].padded
    print("padded shape", padded.shape, "symmetric", bool(np.array_equal(padded, padded.T)))


if __name__ == "__main__":
    main()
