"""Minimal tempo-invariant convolutional stack with analytic gradients.

Tensors run through the stack as (depth, rows, frames, bins). A FeatureMap
enters as depth 1; each convolution consumes the full input depth and emits
one depth slice per filter. Convolution strides by channel_stride across
rows, by 1 across bins (frequency resolution belongs to the transform, not
the stride), and uses valid boundaries only: zero-padding the frequency axis
would fabricate periodicity evidence at the spectrum edges.

Pooling across frequency provides the tempo invariance: the max over the
whole axis (or per octave band) is unchanged when content shifts along the
bin axis. Position-aware pooling is available but excluded from gradient
flow; the position output jumps discontinuously, so it only feeds post-hoc
features.

Everything is plain NumPy with hand-derived backward passes, trained by
fixed-rate SGD, deterministic per seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .phasefeat import FeatureMap

__all__ = [
    "ConvLayerSpec",
    "PoolSpec",
    "SmoothFreqWeights",
    "ModelParams",
    "TrainConfig",
    "conv_forward",
    "max_pool_freq",
    "apply_freq_weights",
    "smoothness_penalty",
    "dense_forward",
    "forward",
    "backward",
    "cross_entropy_over_bins",
    "frame_mse",
    "train_tempo",
    "predict_argmax_bin",
    "init_layer",
]

_ACTIVATIONS = ("relu", "identity")


@dataclass(frozen=True)
class ConvLayerSpec:
    """Shape of one convolutional layer.

    kernel_extent is (rows, frames, bins, depth); depth must equal the input
    depth of the layer.
    """

    kernel_extent: tuple[int, int, int, int]
    n_filters: int
    stride_rows: int = 1
    stride_bins: int = 1
    activation: str = "relu"
    boundary: str = "valid"

    def __post_init__(self):
        if len(self.kernel_extent) != 4 or any(e < 1 for e in self.kernel_extent):
            raise ValueError("kernel_extent must be four extents >= 1")
        if self.n_filters < 1:
            raise ValueError("n_filters must be >= 1")
        if self.stride_rows < 1 or self.stride_bins < 1:
            raise ValueError("strides must be >= 1")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"activation must be one of {_ACTIVATIONS}")
        if self.boundary != "valid":
            raise ValueError("only valid boundaries are supported")

    def weight_shape(self) -> tuple[int, ...]:
        rows, frames, bins, depth = self.kernel_extent
        return (self.n_filters, depth, rows, frames, bins)


@dataclass(frozen=True)
class PoolSpec:
    """Frequency pooling mode."""

    mode: str = "full_range"  # full_range | octave_bands | none
    with_position: bool = False
    band_octaves: float = 1.0

    def __post_init__(self):
        if self.mode not in ("full_range", "octave_bands", "none"):
            raise ValueError("mode must be full_range, octave_bands or none")
        if not self.band_octaves > 0:
            raise ValueError("band_octaves must be > 0")


@dataclass
class SmoothFreqWeights:
    """Per-bin response multipliers with a smoothness penalty.

    Tempo is only quasi-invariant, so the stack may tune its response across
    frequency; the penalty lambda * sum((w[k+1]-w[k])^2) keeps the tuning
    smooth rather than memorising individual bins.
    """

    w: np.ndarray
    smoothness_penalty: float = 0.0

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=np.float64)
        if self.w.ndim != 1:
            raise ValueError("w must be a vector")
        if self.smoothness_penalty < 0:
            raise ValueError("smoothness_penalty must be >= 0")


@dataclass
class ModelParams:
    """Weights of the conv stack plus pooling and head configuration."""

    layers: list[tuple[ConvLayerSpec, np.ndarray, np.ndarray]]
    pool: PoolSpec | None = None
    freq_weights: SmoothFreqWeights | None = None
    head: tuple[np.ndarray, np.ndarray] | None = None

    def __post_init__(self):
        for spec, weights, bias in self.layers:
            if weights.shape != spec.weight_shape():
                raise ValueError(
                    f"weight shape {weights.shape} does not match spec "
                    f"{spec.weight_shape()}"
                )
            if bias.shape != (spec.n_filters,):
                raise ValueError("bias shape must be (n_filters,)")
            if not (np.all(np.isfinite(weights)) and np.all(np.isfinite(bias))):
                raise ValueError("parameters must be finite")

    def bin_offset(self) -> int:
        """Input bin index corresponding to output bin 0 (valid conv)."""
        total = sum(spec.kernel_extent[2] - 1 for spec, _, _ in self.layers)
        return total // 2

    def copy(self) -> "ModelParams":
        layers = [(spec, w.copy(), b.copy()) for spec, w, b in self.layers]
        fw = None
        if self.freq_weights is not None:
            fw = SmoothFreqWeights(
                self.freq_weights.w.copy(), self.freq_weights.smoothness_penalty
            )
        head = None
        if self.head is not None:
            head = (self.head[0].copy(), self.head[1].copy())
        return ModelParams(layers, self.pool, fw, head)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.05
    epochs: int = 100
    batch_size: int = 16
    rng_seed: int = 0
    loss: str = "cross_entropy_over_bins"
    l2: float = 0.0

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be >= 0")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.loss not in ("cross_entropy_over_bins", "frame_mse"):
            raise ValueError("unknown loss")
        if self.l2 < 0:
            raise ValueError("l2 must be >= 0")


def init_layer(
    spec: ConvLayerSpec, rng: np.random.Generator, scale: float | None = None
) -> tuple[ConvLayerSpec, np.ndarray, np.ndarray]:
    """Gaussian-initialised weights sized to the layer's fan-in."""
    fan_in = int(np.prod(spec.kernel_extent))
    if scale is None:
        scale = math.sqrt(2.0 / fan_in)
    weights = rng.normal(0.0, scale, size=spec.weight_shape())
    bias = np.zeros(spec.n_filters)
    return spec, weights, bias


def _as_tensor(x) -> np.ndarray:
    if isinstance(x, FeatureMap):
        return x.as_tensor()
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        return x[None]
    if x.ndim != 4:
        raise ValueError("expected (depth, rows, frames, bins) input")
    return x


def _conv_windows(x: np.ndarray, spec: ConvLayerSpec) -> np.ndarray:
    rows, frames, bins, depth = spec.kernel_extent
    if x.shape[0] != depth:
        raise ValueError(f"input depth {x.shape[0]} != kernel depth {depth}")
    if x.shape[1] < rows or x.shape[2] < frames or x.shape[3] < bins:
        raise ValueError(f"input {x.shape[1:]} smaller than kernel {(rows, frames, bins)}")
    win = np.lib.stride_tricks.sliding_window_view(x, (depth, rows, frames, bins))
    # leading window axes: (1, R', T', B'); drop the depth window axis
    win = win[0, :: spec.stride_rows, :, :: spec.stride_bins]
    return win  # (R_out, T_out, B_out, depth, rows, frames, bins)


def conv_forward(x, spec: ConvLayerSpec, weights: np.ndarray, bias: np.ndarray):
    """Valid convolution over (rows, frames, bins) with per-filter bias.

    Accepts a FeatureMap (lifted to depth 1) or a (depth, rows, frames,
    bins) tensor; returns (n_filters, rows_out, frames_out, bins_out).
    """
    x = _as_tensor(x)
    if weights.shape != spec.weight_shape():
        raise ValueError("weights do not match layer spec")
    win = _conv_windows(x, spec)
    pre = np.einsum("rtbdijk,fdijk->frtb", win, weights, optimize=True)
    pre += bias[:, None, None, None]
    if spec.activation == "relu":
        return np.maximum(pre, 0.0)
    return pre


def _conv_forward_cached(x, spec, weights, bias):
    win = _conv_windows(x, spec)
    pre = np.einsum("rtbdijk,fdijk->frtb", win, weights, optimize=True)
    pre += bias[:, None, None, None]
    out = np.maximum(pre, 0.0) if spec.activation == "relu" else pre
    return out, pre


def _conv_backward(x, spec, weights, pre, d_out, need_input_grad=True):
    """Gradients of a conv layer: (d_weights, d_bias, d_input)."""
    if spec.activation == "relu":
        d_pre = d_out * (pre > 0)
    else:
        d_pre = d_out
    win = _conv_windows(x, spec)
    d_w = np.einsum("frtb,rtbdijk->fdijk", d_pre, win, optimize=True)
    d_b = d_pre.sum(axis=(1, 2, 3))
    if not need_input_grad:
        return d_w, d_b, None

    rows, frames, bins, depth = spec.kernel_extent
    n_r, n_t, n_b = d_pre.shape[1:]
    d_x = np.zeros_like(x)
    sr, sb = spec.stride_rows, spec.stride_bins
    for i in range(rows):
        for j in range(frames):
            for k in range(bins):
                contrib = np.einsum(
                    "frtb,fd->drtb", d_pre, weights[:, :, i, j, k], optimize=True
                )
                d_x[
                    :,
                    i : i + sr * (n_r - 1) + 1 : sr,
                    j : j + n_t,
                    k : k + sb * (n_b - 1) + 1 : sb,
                ] += contrib
    return d_w, d_b, d_x


def _pool_bands(n_bins: int, pool: PoolSpec, bins_per_octave: int):
    if pool.mode == "full_range":
        return [(0, n_bins)]
    width = max(1, int(round(pool.band_octaves * bins_per_octave)))
    return [(lo, min(lo + width, n_bins)) for lo in range(0, n_bins, width)]


def max_pool_freq(x, pool: PoolSpec, bins_per_octave: int = 24):
    """Max over the bin axis, whole-range or per octave band.

    Returns (values, positions): values has a trailing band axis (length 1
    for full_range); positions are global argmax bin indices with ties going
    to the lowest bin, or None unless pool.with_position.
    """
    x = _as_tensor(x)
    if x.size == 0:
        raise ValueError("cannot pool an empty map")
    if pool.mode == "none":
        return x, None
    bands = _pool_bands(x.shape[-1], pool, bins_per_octave)
    values = np.stack([x[..., lo:hi].max(axis=-1) for lo, hi in bands], axis=-1)
    positions = None
    if pool.with_position:
        positions = np.stack(
            [x[..., lo:hi].argmax(axis=-1) + lo for lo, hi in bands], axis=-1
        )
    return values, positions


def _max_pool_backward(x, pool, bins_per_octave, d_values):
    bands = _pool_bands(x.shape[-1], pool, bins_per_octave)
    d_x = np.zeros_like(x)
    for band_idx, (lo, hi) in enumerate(bands):
        seg = x[..., lo:hi]
        arg = seg.argmax(axis=-1)
        grad = d_values[..., band_idx]
        np.put_along_axis(
            d_x[..., lo:hi], arg[..., None], np.expand_dims(grad, -1), axis=-1
        )
    return d_x


def apply_freq_weights(x, fw: SmoothFreqWeights):
    """Multiply the bin axis by the per-bin weights."""
    x = _as_tensor(x)
    if len(fw.w) != x.shape[-1]:
        raise ValueError(f"{len(fw.w)} weights vs {x.shape[-1]} bins")
    return x * fw.w


def smoothness_penalty(fw: SmoothFreqWeights) -> float:
    d = np.diff(fw.w)
    return float(fw.smoothness_penalty * np.sum(d * d))


def _smoothness_grad(fw: SmoothFreqWeights) -> np.ndarray:
    g = np.zeros_like(fw.w)
    d = np.diff(fw.w)
    g[:-1] -= 2.0 * fw.smoothness_penalty * d
    g[1:] += 2.0 * fw.smoothness_penalty * d
    return g


def dense_forward(features: np.ndarray, head: tuple[np.ndarray, np.ndarray]):
    """Affine map over flattened features."""
    w, b = head
    flat = np.ravel(features)
    if w.shape[1] != flat.size:
        raise ValueError(f"head expects {w.shape[1]} inputs, got {flat.size}")
    return w @ flat + b


def forward(model: ModelParams, x, bins_per_octave: int = 24):
    """Run the stack; returns (output, cache) with cache for backward().

    Pipeline: conv layers -> freq weights (per bin) -> pooling -> dense head,
    skipping the stages the model does not configure.
    """
    x = _as_tensor(x)
    cache = {"inputs": [], "pres": [], "x0": x, "bpo": bins_per_octave}
    out = x
    for spec, weights, bias in model.layers:
        cache["inputs"].append(out)
        out, pre = _conv_forward_cached(out, spec, weights, bias)
        cache["pres"].append(pre)
    if model.freq_weights is not None:
        cache["pre_fw"] = out
        out = apply_freq_weights(out, model.freq_weights)
    if model.pool is not None and model.pool.mode != "none":
        cache["pre_pool"] = out
        out, _ = max_pool_freq(out, model.pool, bins_per_octave)
    if model.head is not None:
        cache["pre_head"] = out
        out = dense_forward(out, model.head)
    cache["output"] = out
    return out, cache


def backward(model: ModelParams, cache: dict, loss_grad: np.ndarray):
    """Analytic parameter gradients given d(loss)/d(output).

    Returns a dict keyed by ("layer", i, "w"|"b"), ("freq", "w") and
    ("head", "w"|"b"); the freq-weight gradient includes the smoothness
    penalty term.
    """
    grads = {}
    d = np.asarray(loss_grad, dtype=np.float64)

    if model.head is not None:
        w, _ = model.head
        flat = np.ravel(cache["pre_head"])
        grads[("head", "w")] = np.outer(d, flat)
        grads[("head", "b")] = d.copy()
        d = (w.T @ d).reshape(cache["pre_head"].shape)

    if model.pool is not None and model.pool.mode != "none":
        d = _max_pool_backward(cache["pre_pool"], model.pool, cache.get("bpo", 24), d)

    if model.freq_weights is not None:
        fw = model.freq_weights
        grads[("freq", "w")] = np.einsum(
            "frtb,frtb->b", d, cache["pre_fw"], optimize=True
        ) + _smoothness_grad(fw)
        d = d * fw.w

    for i in range(len(model.layers) - 1, -1, -1):
        spec, weights, _ = model.layers[i]
        d_w, d_b, d = _conv_backward(
            cache["inputs"][i], spec, weights, cache["pres"][i], d,
            need_input_grad=(i > 0),
        )
        grads[("layer", i, "w")] = d_w
        grads[("layer", i, "b")] = d_b
    return grads


def cross_entropy_over_bins(scores: np.ndarray, true_bin: int):
    """Softmax cross-entropy over a per-bin score vector.

    Returns (loss, d_loss/d_scores) with scores flattened to one axis.
    """
    s = np.ravel(np.asarray(scores, dtype=np.float64))
    if not 0 <= true_bin < s.size:
        raise ValueError(f"true_bin {true_bin} outside 0..{s.size - 1}")
    z = s - s.max()
    log_norm = math.log(np.exp(z).sum())
    loss = log_norm - z[true_bin]
    grad = np.exp(z - log_norm)
    grad[true_bin] -= 1.0
    return loss, grad.reshape(np.shape(scores))


def frame_mse(pred: np.ndarray, target: np.ndarray):
    """Mean squared error per element; returns (loss, gradient)."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError("prediction and target shapes differ")
    diff = pred - target
    loss = float(np.mean(diff * diff))
    return loss, 2.0 * diff / diff.size


def predict_argmax_bin(scores) -> int:
    """Index of the highest score; ties resolve to the lowest bin."""
    s = np.ravel(np.asarray(scores))
    if s.size == 0:
        raise ValueError("scores must be nonempty")
    return int(np.argmax(s))


def _total_loss_and_grads(model, fmap, true_bin, cfg):
    offset = model.bin_offset()
    scores, cache = forward(model, fmap)
    target = true_bin - offset
    if cfg.loss == "cross_entropy_over_bins":
        n_out = np.ravel(scores).size
        if not 0 <= target < n_out:
            raise ValueError(
                f"true bin {true_bin} not representable: output covers bins "
                f"{offset}..{offset + n_out - 1}"
            )
        loss, d = cross_entropy_over_bins(scores, target)
    else:
        raise ValueError("train_tempo requires the cross_entropy_over_bins loss")
    grads = backward(model, cache, d)
    return loss, grads


def _apply_sgd(model: ModelParams, grads: dict, lr: float, l2: float):
    for i, (spec, weights, bias) in enumerate(model.layers):
        g_w = grads[("layer", i, "w")]
        if l2 > 0:
            g_w = g_w + 2.0 * l2 * weights
        weights -= lr * g_w
        bias -= lr * grads[("layer", i, "b")]
    if model.freq_weights is not None and ("freq", "w") in grads:
        model.freq_weights.w -= lr * grads[("freq", "w")]
        # keep the multipliers strictly positive
        np.clip(model.freq_weights.w, 1e-6, None, out=model.freq_weights.w)
    if model.head is not None and ("head", "w") in grads:
        w, b = model.head
        g = grads[("head", "w")]
        if l2 > 0:
            g = g + 2.0 * l2 * w
        w -= lr * g
        b -= lr * grads[("head", "b")]


def train_tempo(model: ModelParams, dataset, cfg: TrainConfig) -> ModelParams:
    """SGD training of per-bin tempo scores with cross-entropy.

    ``dataset`` is a list of (FeatureMap or tensor, true_bin) pairs where
    true_bin indexes the full input bin axis. Deterministic per seed; the
    input model is left untouched.
    """
    if len(dataset) == 0:
        raise ValueError("dataset must not be empty")
    trained = model.copy()
    rng = np.random.default_rng(cfg.rng_seed)
    n = len(dataset)
    for _epoch in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            acc: dict = {}
            for idx in batch:
                fmap, true_bin = dataset[idx]
                _, grads = _total_loss_and_grads(trained, fmap, int(true_bin), cfg)
                for key, g in grads.items():
                    if key in acc:
                        acc[key] += g
                    else:
                        acc[key] = g.copy()
            for key in acc:
                acc[key] /= len(batch)
            _apply_sgd(trained, acc, cfg.learning_rate, cfg.l2)
    return trained


def training_loss(model: ModelParams, dataset, cfg: TrainConfig) -> float:
    """Mean loss across a dataset, for monitoring."""
    total = 0.0
    for fmap, true_bin in dataset:
        loss, _ = _total_loss_and_grads(model, fmap, int(true_bin), cfg)
        total += loss
    return total / len(dataset)


def predict_bin(model: ModelParams, fmap) -> int:
    """Full-axis bin index of the highest output score."""
    scores, _ = forward(model, fmap)
    return predict_argmax_bin(scores) + model.bin_offset()
