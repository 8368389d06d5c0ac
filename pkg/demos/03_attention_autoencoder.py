"""Train the attention autoencoder and confirm its gradients by finite differences.

The hand-written backward pass is checked before and after training, then the
loss trace and one window's attention heads are printed.
"""

from __future__ import annotations

import numpy as np

from deepsupp.attention_net import ModelConfig, encode, gradient_check, init_model, multi_head_attention, train
from deepsupp.correlation import rolling_correlation_matrices
from deepsupp.features import build_feature_matrix, minmax_scale
from deepsupp.market_data import generate_band_series


def main() -> None:
    series = generate_band_series([(90.0, 80), (110.0, 80)], noise_scale=0.01, seed=1,
                                  volume_coupling=(1.0, -1.0))
    seq = rolling_correlation_matrices(minmax_scale(build_feature_matrix(series))[0])
    model = init_model(ModelConfig(seed=0, epochs=30))

    err, coverage = gradient_check(model, seq.padded_stack())
    print(f"gradient check at init: max relative error {err:.1e} over {sum(coverage.values())} entries")
    trained, trace = train(model, seq)
    print(f"loss {trace[0]:.5f} -> {trace[-1]:.5f} over {len(trace)} epochs")
    err, _ = gradient_check(trained, seq.padded_stack())
    print(f"gradient check after training: {err:.1e}")

    x = seq.matrices[0].padded
    _, weights = multi_head_attention(trained, x)
    print("attention heads", weights.shape, "row sums within", float(np.abs(weights.sum(-1) - 1).max()))
    perm = np.random.default_rng(0).permutation(32)
    gap = float(np.abs(encode(trained, x[perm]) - encode(trained, x)).max())
    print(f"embedding change under row shuffling: {gap:.1e}")


if __name__ == "__main__":
    main()
