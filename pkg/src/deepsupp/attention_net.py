"""Multi-head attention autoencoder over padded correlation matrices.

Plain numpy with hand-written backpropagation. Each input is a 32 x 32
matrix whose rows are treated as a sequence of 32 positions, each a 32-dim
vector. The forward pass is

    attention (4 heads, no positional encoding) -> residual -> layer norm
    -> mean over positions -> affine -> ReLU -> affine  (16-dim embedding)
    -> affine -> ReLU -> affine -> per-position gain/bias  (32 x 32 reconstruction)

and training minimizes the mean squared reconstruction error with SGD plus
momentum.
"""

from __future__ import annotations

import csv
import io
import json
import os
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .correlation import CorrSequence

LN_EPS = 1e-10

#: Fixed tensor order used by checkpoints and gradient checks.
PARAM_ORDER = (
    "attn_q", "attn_k", "attn_v", "attn_out",
    "ln_gain", "ln_bias",
    "enc_w1", "enc_b1", "enc_w2", "enc_b2",
    "dec_w1", "dec_b1", "dec_w2", "dec_b2",
    "pos_gain", "pos_bias",
)
WEIGHT_TENSORS = ("attn_q", "attn_k", "attn_v", "attn_out", "enc_w1", "enc_w2", "dec_w1", "dec_w2")
#: Dense-layer biases share the init scale of their layer's weight.
AFFINE_BIASES = {"enc_b1": "enc_w1", "enc_b2": "enc_w2", "dec_b1": "dec_w1", "dec_b2": "dec_w2"}

CHECKPOINT_MAGIC = b"DSUPPCKP"
CHECKPOINT_VERSION = 1


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, loss: float):
        super().__init__(f"training diverged at epoch {epoch} (loss={loss})")
        self.epoch = epoch
        self.loss = loss


@dataclass(frozen=True)
class ModelConfig:
    heads: int = 4
    embed_dim: int = 32
    bottleneck_dim: int = 16
    hidden_dim: int = 24
    seed: int = 0
    learning_rate: float = 1.0
    momentum: float = 0.9
    epochs: int = 100
    batch_size: int = 32

    def __post_init__(self):
        if self.heads < 1 or self.embed_dim % self.heads:
            raise ValueError(f"embed_dim {self.embed_dim} is not divisible by heads {self.heads}")
        if not 0 < self.bottleneck_dim < self.embed_dim:
            raise ValueError("bottleneck_dim must be positive and smaller than embed_dim")
        if self.hidden_dim < 1 or self.epochs < 1 or self.batch_size < 1:
            raise ValueError("hidden_dim, epochs and batch_size must be positive")
        if not self.learning_rate > 0 or not 0 <= self.momentum < 1:
            raise ValueError("learning_rate must be > 0 and momentum in [0, 1)")

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.heads

    @property
    def seq_len(self) -> int:
        return self.embed_dim

    def shapes(self) -> dict[str, tuple[int, ...]]:
        H, E, d, Hd, B = self.heads, self.embed_dim, self.head_dim, self.hidden_dim, self.bottleneck_dim
        return {
            "attn_q": (H, E, d), "attn_k": (H, E, d), "attn_v": (H, E, d), "attn_out": (E, E),
            "ln_gain": (E,), "ln_bias": (E,),
            "enc_w1": (E, Hd), "enc_b1": (Hd,), "enc_w2": (Hd, B), "enc_b2": (B,),
            "dec_w1": (B, Hd), "dec_b1": (Hd,), "dec_w2": (Hd, E), "dec_b2": (E,),
            "pos_gain": (self.seq_len, E), "pos_bias": (self.seq_len, E),
        }

    def init_scale(self, name: str) -> float:
        """Half-width of the uniform init for a weight tensor: 1/sqrt(fan_in)."""
        return 1.0 / np.sqrt(self.shapes()[name][-2])


@dataclass(eq=False)
class Model:
    config: ModelConfig
    params: dict[str, np.ndarray]

    def copy(self) -> "Model":
        return Model(self.config, {k: v.copy() for k, v in self.params.items()})

    def flat(self) -> np.ndarray:
        return np.concatenate([self.params[k].ravel() for k in PARAM_ORDER])


TrainedModel = Model


def init_model(config: ModelConfig) -> Model:
    rng = np.random.default_rng(config.seed)
    params = {}
    for name, shape in config.shapes().items():
        if name in WEIGHT_TENSORS or name in AFFINE_BIASES:
            s = config.init_scale(AFFINE_BIASES.get(name, name))
            params[name] = rng.uniform(-s, s, size=shape)
        elif name in ("ln_gain", "pos_gain"):
            params[name] = np.ones(shape)
        else:
            params[name] = np.zeros(shape)
    return Model(config, params)


# --------------------------------------------------------------------------- forward

def _softmax(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _as_batch(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 2:
        x = x[None]
    if not np.all(np.isfinite(x)):
        raise ValueError("attention input contains non-finite values")
    return x


def _attention_block(p: dict, X: np.ndarray, heads: int) -> dict:
    N, S, E = X.shape
    d = E // heads
    Xh = X[:, None]
    Q = Xh @ p["attn_q"]
    K = Xh @ p["attn_k"]
    V = Xh @ p["attn_v"]
    A = _softmax(Q @ K.swapaxes(-1, -2) / np.sqrt(d))
    O = A @ V
    C = O.transpose(0, 2, 1, 3).reshape(N, S, E)
    Z = X + C @ p["attn_out"]
    Zc = Z - Z.mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt((Zc**2).mean(axis=-1, keepdims=True) + LN_EPS)
    Zh = Zc * inv
    out = Zh * p["ln_gain"] + p["ln_bias"]
    return dict(X=X, Q=Q, K=K, V=V, A=A, C=C, inv=inv, Zh=Zh, out=out)


def _encode_block(p: dict, pooled: np.ndarray) -> dict:
    a1 = pooled @ p["enc_w1"] + p["enc_b1"]
    h1 = np.maximum(a1, 0.0)
    emb = h1 @ p["enc_w2"] + p["enc_b2"]
    return dict(pooled=pooled, a1=a1, h1=h1, emb=emb)


def _decode_block(p: dict, emb: np.ndarray) -> dict:
    a2 = emb @ p["dec_w1"] + p["dec_b1"]
    h2 = np.maximum(a2, 0.0)
    z = h2 @ p["dec_w2"] + p["dec_b2"]
    R = z[:, None, :] * p["pos_gain"] + p["pos_bias"]
    return dict(a2=a2, h2=h2, z=z, R=R)


def _forward(model: Model, X: np.ndarray) -> dict:
    p = model.params
    cache = _attention_block(p, X, model.config.heads)
    cache.update(_encode_block(p, cache["out"].mean(axis=1)))
    cache.update(_decode_block(p, cache["emb"]))
    cache["loss"] = float(np.mean((cache["R"] - X) ** 2))
    return cache


def _backward(model: Model, c: dict) -> dict[str, np.ndarray]:
    p = model.params
    X = c["X"]
    N, S, E = X.shape
    H = model.config.heads
    d = E // H
    g = {}

    dR = 2.0 * (c["R"] - X) / X.size
    g["pos_bias"] = dR.sum(axis=0)
    g["pos_gain"] = (dR * c["z"][:, None, :]).sum(axis=0)
    dz = (dR * p["pos_gain"]).sum(axis=1)

    g["dec_w2"] = c["h2"].T @ dz
    g["dec_b2"] = dz.sum(axis=0)
    da2 = (dz @ p["dec_w2"].T) * (c["a2"] > 0)
    g["dec_w1"] = c["emb"].T @ da2
    g["dec_b1"] = da2.sum(axis=0)
    demb = da2 @ p["dec_w1"].T

    g["enc_w2"] = c["h1"].T @ demb
    g["enc_b2"] = demb.sum(axis=0)
    da1 = (demb @ p["enc_w2"].T) * (c["a1"] > 0)
    g["enc_w1"] = c["pooled"].T @ da1
    g["enc_b1"] = da1.sum(axis=0)
    dpooled = da1 @ p["enc_w1"].T

    dout = np.broadcast_to(dpooled[:, None, :] / S, (N, S, E))
    Zh = c["Zh"]
    g["ln_gain"] = (dout * Zh).sum(axis=(0, 1))
    g["ln_bias"] = dout.sum(axis=(0, 1))
    dZh = dout * p["ln_gain"]
    dZ = c["inv"] * (dZh - dZh.mean(axis=-1, keepdims=True)
                     - Zh * (dZh * Zh).mean(axis=-1, keepdims=True))

    g["attn_out"] = c["C"].reshape(N * S, E).T @ dZ.reshape(N * S, E)
    dO = (dZ @ p["attn_out"].T).reshape(N, S, H, d).transpose(0, 2, 1, 3)
    A = c["A"]
    dA = dO @ c["V"].swapaxes(-1, -2)
    dV = A.swapaxes(-1, -2) @ dO
    dscores = A * (dA - (dA * A).sum(axis=-1, keepdims=True)) / np.sqrt(d)
    dQ = dscores @ c["K"]
    dK = dscores.swapaxes(-1, -2) @ c["Q"]
    Xt = X.reshape(N * S, E).T
    for name, dP in (("attn_q", dQ), ("attn_k", dK), ("attn_v", dV)):
        g[name] = np.stack([Xt @ dP[:, h].reshape(N * S, d) for h in range(H)])
    return g


def loss_and_gradients(model: Model, inputs) -> tuple[float, dict[str, np.ndarray]]:
    """Mean squared reconstruction error over a batch and its parameter gradients."""
    cache = _forward(model, _as_batch(inputs))
    return cache["loss"], _backward(model, cache)


def reconstruction_loss(model: Model, inputs) -> float:
    return _forward(model, _as_batch(inputs))["loss"]


def _precise_loss(model: Model, X: np.ndarray) -> tuple[np.longdouble, bytes]:
    """Loss reduced in extended precision, plus the ReLU activation pattern."""
    # extended-precision reduction keeps loss rounding below the finite-difference signal
    c = _forward(model, X)
    diff = (c["R"] - X).astype(np.longdouble)
    mask = np.packbits(np.concatenate([(c["a1"] > 0).ravel(), (c["a2"] > 0).ravel()])).tobytes()
    return np.mean(diff * diff), mask


def multi_head_attention(model: Model, x) -> tuple[np.ndarray, np.ndarray]:
    """Attention block output (32 x 32) and the per-head weight maps (heads x 32 x 32)."""
    X = _as_batch(x)
    if X.shape[0] != 1:
        raise ValueError("multi_head_attention takes a single matrix")
    c = _attention_block(model.params, X, model.config.heads)
    return c["out"][0], c["A"][0]


def encode(model: Model, x) -> np.ndarray:
    X = _as_batch(x)
    c = _attention_block(model.params, X, model.config.heads)
    emb = _encode_block(model.params, c["out"].mean(axis=1))["emb"]
    return emb[0] if np.ndim(x) == 2 else emb


def decode(model: Model, embedding) -> np.ndarray:
    e = np.asarray(embedding, dtype=float)
    R = _decode_block(model.params, np.atleast_2d(e))["R"]
    return R[0] if e.ndim == 1 else R


# --------------------------------------------------------------------------- training

def train(
    model: Model, sequence, config: ModelConfig | None = None
) -> tuple[Model, np.ndarray]:
    """Fit the autoencoder to a correlation sequence; returns a new model and per-epoch losses.

    ``sequence`` may be a :class:`CorrSequence` or an ``(N, 32, 32)`` array.
    Each loss-trace entry is the sample-weighted mean of the batch losses seen
    during that epoch, each measured before its update.
    """
    config = config or model.config
    if config.shapes() != model.config.shapes():
        raise ValueError("training config does not match the model architecture")
    data = sequence.padded_stack() if isinstance(sequence, CorrSequence) else _as_batch(sequence)
    n = data.shape[0]
    if n == 0:
        raise ValueError("cannot train on an empty sequence")
    model = model.copy()
    velocity = {k: np.zeros_like(v) for k, v in model.params.items()}
    rng = np.random.default_rng([config.seed, 1])
    trace = np.empty(config.epochs)
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            batch = data[order[start : start + config.batch_size]]
            loss, grads = loss_and_gradients(model, batch)
            if not np.isfinite(loss):
                raise TrainingDiverged(epoch + 1, loss)
            total += loss * len(batch)
            for k, gk in grads.items():
                v = velocity[k]
                v *= config.momentum
                v += gk
                model.params[k] -= config.learning_rate * v
        trace[epoch] = total / n
        if not np.isfinite(trace[epoch]):
            raise TrainingDiverged(epoch + 1, trace[epoch])
    if any(not np.all(np.isfinite(v)) for v in model.params.values()):
        raise TrainingDiverged(config.epochs, float("nan"))
    return Model(config, model.params), trace


def gradient_check(
    model: Model, x, n_samples: int = 100, step: float = 1e-5, seed: int = 0, max_shrink: int = 3
) -> tuple[float, dict[str, int]]:
    """Largest relative gap between backprop and central differences.

    Samples at least ``n_samples`` parameter entries spread over every tensor.
    When a probe at +/- step flips a ReLU on or off, the difference straddles
    a kink rather than measuring the slope, so the step shrinks tenfold (up to
    ``max_shrink`` times). Returns the max relative error and the number of
    entries checked per tensor.
    """
    X = _as_batch(x)
    _, grads = loss_and_gradients(model, X)
    _, base_mask = _precise_loss(model, X)
    rng = np.random.default_rng(seed)
    per_tensor = -(-n_samples // len(PARAM_ORDER))
    probe = model.copy()
    worst = 0.0
    coverage = {}
    for name in PARAM_ORDER:
        t = probe.params[name]
        flat = t.reshape(-1)
        picks = rng.choice(flat.size, size=min(per_tensor, flat.size), replace=False)
        coverage[name] = len(picks)
        for i in picks:
            orig = flat[i]
            h = step
            for attempt in range(max_shrink + 1):
                flat[i] = orig + h
                up, up_mask = _precise_loss(probe, X)
                flat[i] = orig - h
                down, down_mask = _precise_loss(probe, X)
                flat[i] = orig
                if up_mask == down_mask == base_mask or attempt == max_shrink:
                    break
                h /= 10
            numeric = float((up - down) / (2 * h))
            analytic = grads[name].reshape(-1)[i]
            err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst, coverage


# --------------------------------------------------------------------------- inference

@dataclass(frozen=True, eq=False)
class Embedding:
    window_end: int
    values: np.ndarray


def embed_sequence(model: Model, sequence: CorrSequence) -> list[Embedding]:
    if len(sequence) == 0:
        return []
    emb = encode(model, sequence.padded_stack())
    if not np.all(np.isfinite(emb)):
        raise ValueError("non-finite embedding")
    return [Embedding(int(m.window_end), emb[i].copy()) for i, m in enumerate(sequence.matrices)]


def attention_csv(weights: np.ndarray) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    for row in weights:
        w.writerow([repr(float(v)) for v in row])
    return buf.getvalue()


def export_attention_weights(
    model: Model, sequence: CorrSequence, window_end: int, out_dir: str | os.PathLike
) -> list[Path]:
    """Write one ``head_<h>.csv`` per attention head for the given window."""
    mat = sequence.at(window_end)
    _, weights = multi_head_attention(model, mat.padded)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for h, wmap in enumerate(weights):
        path = out_dir / f"head_{h + 1}.csv"
        _atomic_write(path, attention_csv(wmap).encode())
        paths.append(path)
    return paths


def _atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


# --------------------------------------------------------------------------- checkpoints

def save_checkpoint(model: Model, path: str | os.PathLike) -> None:
    """Layout: magic, u32 version, u32 config length, UTF-8 JSON config,
    then every tensor of PARAM_ORDER as little-endian float64, C order."""
    cfg = json.dumps(asdict(model.config), sort_keys=True).encode()
    parts = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(cfg)), cfg]
    parts += [np.ascontiguousarray(model.params[k], dtype="<f8").tobytes() for k in PARAM_ORDER]
    _atomic_write(Path(path), b"".join(parts))


def load_checkpoint(path: str | os.PathLike) -> Model:
    data = Path(path).read_bytes()
    if data[:8] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a model checkpoint")
    version, n = struct.unpack_from("<II", data, 8)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    config = ModelConfig(**json.loads(data[16 : 16 + n]))
    offset = 16 + n
    params = {}
    for name in PARAM_ORDER:
        shape = config.shapes()[name]
        count = int(np.prod(shape))
        params[name] = np.frombuffer(data, dtype="<f8", count=count, offset=offset).astype(np.float64).reshape(shape)
        offset += 8 * count
    if offset != len(data):
        raise ValueError(f"{path}: trailing bytes in checkpoint")
    return Model(config, params)
