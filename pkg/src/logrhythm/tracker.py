"""Rhythm tasks on top of the transform: tempo, beats, targets, matching.

Tempo and measure length fall out of the bin axis directly: pick the bin
with the highest activation and read its frequency. Beat and downbeat
tracking reuse the stored phase: zero every magnitude outside an octave
around the target bin, leave phases untouched, invert, and pick peaks of
the resulting smooth wave. Training targets are built by transforming a
sinusoid that peaks at the annotations (inserting raw impulses would
scatter energy across harmonics). Pattern fingerprints are the
time-averaged full-range pooled filter responses, which a tempo change
leaves (almost) alone.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass

import numpy as np
import scipy.signal

from . import convnet
from .cqt import (
    CqtConfig,
    CqtKernel,
    Rhythmogram,
    avg_pool_time,
    bin_of_frequency,
    forward,
    inverse,
    plan,
    transform_array,
)
from .convnet import ModelParams, PoolSpec
from .phasefeat import FeatureMap, build_featuremap_neighbor
from .rhythmgen import ActivationChannels, BeatAnnotations

__all__ = [
    "BeatGrid",
    "TargetFrames",
    "Fingerprint",
    "estimate_tempo",
    "estimate_measure_length",
    "mask_octave",
    "track_beats",
    "track_downbeats",
    "make_targets",
    "fingerprint",
    "match",
    "evaluate_beats",
    "tempo_feature",
    "interior_interval",
    "trim_grid",
    "model_hash",
]


@dataclass(frozen=True)
class BeatGrid:
    """Ordered event times in seconds."""

    times: np.ndarray
    level: str = "beat"  # beat | downbeat

    def __post_init__(self):
        times = np.asarray(self.times, dtype=np.float64)
        if times.ndim != 1:
            raise ValueError("times must be a vector")
        if times.size and np.any(np.diff(times) <= 0):
            raise ValueError("times must be strictly increasing")
        if self.level not in ("beat", "downbeat"):
            raise ValueError("level must be beat or downbeat")
        object.__setattr__(self, "times", times)

    def __len__(self) -> int:
        return len(self.times)


@dataclass(frozen=True)
class TargetFrames:
    """Frequency-domain training targets per frame.

    Magnitudes are max-normalised to [0, 1] per frame; phases are only
    meaningful where the magnitude is substantial (``phase_valid``).
    """

    magnitudes: np.ndarray  # (frames, bins) in [0, 1]
    phases: np.ndarray  # (frames, bins) radians
    frame_times: np.ndarray
    bin_freqs: np.ndarray
    phase_threshold: float = 0.5

    @property
    def phase_valid(self) -> np.ndarray:
        return self.magnitudes >= self.phase_threshold


@dataclass(frozen=True)
class Fingerprint:
    """Tempo-invariant pattern descriptor: pooled responses averaged over time."""

    values: np.ndarray
    model_hash: str
    pattern_id: str = ""
    pool_mode: str = "full_range"

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if not np.all(np.isfinite(values)):
            raise ValueError("fingerprint values must be finite")
        object.__setattr__(self, "values", values)


def _scores_vector(scores) -> np.ndarray:
    s = np.ravel(np.asarray(scores, dtype=np.float64))
    if s.size == 0:
        raise ValueError("scores must be nonempty")
    return s


def estimate_tempo(scores, config: CqtConfig) -> float:
    """BPM of the highest-scoring bin (ties go to the lowest bin)."""
    s = _scores_vector(scores)
    if s.size != config.n_bins:
        raise ValueError(f"expected {config.n_bins} scores, got {s.size}")
    k = int(np.argmax(s))
    return 60.0 * float(config.bin_frequencies()[k])


def estimate_measure_length(scores, config: CqtConfig) -> float:
    """Measure length in seconds: reciprocal frequency of the argmax bin."""
    s = _scores_vector(scores)
    if s.size != config.n_bins:
        raise ValueError(f"expected {config.n_bins} scores, got {s.size}")
    k = int(np.argmax(s))
    return 1.0 / float(config.bin_frequencies()[k])


def mask_octave(
    rg: Rhythmogram, center_bin: int, width_octaves: float = 1.0
) -> Rhythmogram:
    """Zero all magnitudes outside a band around center_bin, keeping phase.

    Surviving bins are copied bit-exactly; zeroed bins carry phase 0. The
    stored channel DC offsets are cleared too, since a constant lies outside
    any octave band.
    """
    if not 0 <= center_bin < rg.n_bins:
        raise ValueError(f"center_bin {center_bin} out of range")
    half = width_octaves * rg.config.bins_per_octave / 2.0
    bins = np.arange(rg.n_bins)
    keep = np.abs(bins - center_bin) <= half
    coeffs = np.where(keep[None, None, :], rg.coeffs, 0.0)
    return Rhythmogram(
        coeffs,
        rg.frame_times,
        rg.bin_freqs,
        rg.config,
        np.zeros_like(rg.channel_means),
        rg.n_signal_frames,
    )


def _track_level(
    rg: Rhythmogram,
    center_bin: int,
    kernel: CqtKernel,
    level: str,
    width_octaves: float,
    min_separation_factor: float,
    threshold_ratio: float,
    channel_weights,
) -> BeatGrid:
    masked = mask_octave(rg, center_bin, width_octaves)
    if not np.any(masked.coeffs):
        return BeatGrid(np.empty(0), level)

    signal = inverse(masked, kernel, restore_mean=False).data
    if channel_weights is None:
        combined = signal.sum(axis=0)
    else:
        weights = np.asarray(channel_weights, dtype=np.float64)
        if weights.shape != (rg.n_channels,):
            raise ValueError("channel_weights must have one entry per channel")
        combined = weights @ signal

    peak = combined.max()
    if peak <= 0:
        return BeatGrid(np.empty(0), level)
    rate = kernel.config.signal_rate_hz
    f_center = float(kernel.bin_freqs[center_bin])
    distance = max(1, int(round(min_separation_factor / f_center * rate)))
    peaks, _ = scipy.signal.find_peaks(
        combined, height=threshold_ratio * peak, distance=distance
    )
    return BeatGrid(peaks / rate, level)


def track_beats(
    rg: Rhythmogram,
    tempo_bin: int,
    kernel: CqtKernel,
    *,
    width_octaves: float = 1.0,
    min_separation_factor: float = 0.5,
    threshold_ratio: float = 0.3,
    channel_weights=None,
) -> BeatGrid:
    """Beat times via octave masking at the tempo bin and stored-phase inversion.

    Channels are inverted separately and summed with equal weights unless
    ``channel_weights`` selects otherwise. Peaks must clear
    ``threshold_ratio`` of the global maximum and sit at least half a beat
    period apart (both exposed because no universal picker exists).
    """
    return _track_level(
        rg, tempo_bin, kernel, "beat",
        width_octaves, min_separation_factor, threshold_ratio, channel_weights,
    )


def track_downbeats(
    rg: Rhythmogram,
    measure_bin: int,
    kernel: CqtKernel,
    *,
    width_octaves: float = 1.0,
    min_separation_factor: float = 0.5,
    threshold_ratio: float = 0.3,
    channel_weights=None,
) -> BeatGrid:
    """Same pipeline as track_beats, activated at the measure-length bin."""
    return _track_level(
        rg, measure_bin, kernel, "downbeat",
        width_octaves, min_separation_factor, threshold_ratio, channel_weights,
    )


def _accumulated_phase(times: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Piecewise-linear phase hitting 2*pi*k at annotation k, end slopes extended."""
    theta_at = 2.0 * math.pi * np.arange(len(times))
    theta = np.interp(t, times, theta_at)
    # np.interp clamps outside the annotation span; extend with edge slopes
    lo = t < times[0]
    hi = t > times[-1]
    slope_lo = 2.0 * math.pi / (times[1] - times[0])
    slope_hi = 2.0 * math.pi / (times[-1] - times[-2])
    theta[lo] = theta_at[0] + (t[lo] - times[0]) * slope_lo
    theta[hi] = theta_at[-1] + (t[hi] - times[-1]) * slope_hi
    return theta


def make_targets(
    annotations: BeatAnnotations | np.ndarray,
    config: CqtConfig,
    kernel: CqtKernel,
    n_frames: int | None = None,
    level: str = "beat",
) -> TargetFrames:
    """Frequency-domain targets from time-domain annotations.

    A cosine with peaks at the annotation times (phase accumulated linearly
    between them, so tempo drift bends the frequency smoothly) is pushed
    through the same transform as the input data. Unit impulses at the
    annotations would work too, but their spectrum scatters into harmonics.
    """
    if isinstance(annotations, BeatAnnotations):
        times = annotations.downbeat_times if level == "downbeat" else annotations.beat_times
    else:
        times = np.asarray(annotations, dtype=np.float64)
    if len(times) < 2:
        raise ValueError("need at least 2 annotation times")
    if np.any(np.diff(times) <= 0):
        raise ValueError("annotation times must be strictly increasing")

    rate = config.signal_rate_hz
    if n_frames is None:
        period = times[-1] - times[-2]
        n_frames = int(math.ceil((times[-1] + period) * rate))
    t = np.arange(n_frames) / rate
    curve = np.cos(_accumulated_phase(times, t))
    coeffs = transform_array(curve[None, :], kernel)[0]

    mags = np.abs(coeffs)
    peaks = mags.max(axis=1, keepdims=True)
    peaks[peaks == 0] = 1.0
    frame_times = np.arange(coeffs.shape[0]) * config.hop_frames / rate
    return TargetFrames(
        magnitudes=mags / peaks,
        phases=np.angle(coeffs),
        frame_times=frame_times,
        bin_freqs=kernel.bin_freqs.copy(),
    )


def model_hash(model: ModelParams) -> str:
    """Stable digest of a model's architecture and weights."""
    h = hashlib.sha256()
    meta = []
    for spec, weights, bias in model.layers:
        meta.append([list(spec.kernel_extent), spec.n_filters, spec.stride_rows,
                     spec.stride_bins, spec.activation])
        h.update(weights.astype("<f4").tobytes())
        h.update(bias.astype("<f4").tobytes())
    if model.freq_weights is not None:
        h.update(model.freq_weights.w.astype("<f4").tobytes())
    if model.head is not None:
        h.update(model.head[0].astype("<f4").tobytes())
        h.update(model.head[1].astype("<f4").tobytes())
    h.update(json.dumps(meta).encode())
    return h.hexdigest()[:16]


def interior_interval(
    kernel: CqtKernel, lowest_bin: int, duration_seconds: float
) -> tuple[float, float]:
    """Time span free of transform edge effects at the given lowest bin.

    The centred transform cannot support peaks within half an analysis
    window of either end of the signal.
    """
    half = kernel.window_seconds(lowest_bin) / 2.0
    return half, duration_seconds - half


def trim_grid(grid: BeatGrid, lo: float, hi: float) -> BeatGrid:
    times = grid.times[(grid.times >= lo) & (grid.times <= hi)]
    return BeatGrid(times, grid.level)


def fingerprint(
    channels: ActivationChannels,
    model: ModelParams,
    config: CqtConfig | None = None,
    *,
    pattern_id: str = "",
    interior_only: bool = True,
) -> Fingerprint:
    """Tempo-invariant descriptor of a rhythm pattern.

    Pipeline: transform -> neighbour feature map -> conv stack -> full-range
    max pooling -> average over (interior) frames. Filtering plus pooling
    turns the tempo-induced bin shift into (near-)identical values, so the
    same pattern at different speeds lands close in cosine distance.
    """
    if model.pool is None or model.pool.mode != "full_range":
        raise ValueError("fingerprinting requires a full_range pooling model")
    if config is None:
        config = CqtConfig()
    kernel = plan(config, channels.n_frames)
    rg = forward(channels, kernel)
    fmap = build_featuremap_neighbor(rg)

    out = fmap.as_tensor()
    for spec, weights, bias in model.layers:
        out = convnet.conv_forward(out, spec, weights, bias)
    values, _ = convnet.max_pool_freq(out, model.pool, config.bins_per_octave)
    # values: (depth, rows, frames, 1)
    if interior_only:
        margin = int(
            math.ceil(kernel.window_lengths.max() / 2 / config.hop_frames)
        )
        if 2 * margin < values.shape[2]:
            values = values[:, :, margin:-margin, :]
    vector = values.mean(axis=2).ravel()
    return Fingerprint(vector, model_hash(model), pattern_id, model.pool.mode)


def _cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


def match(query: Fingerprint, corpus: list[Fingerprint], k: int) -> list[tuple[int, float]]:
    """Top-k corpus entries by cosine similarity.

    Entries must come from the same model as the query. Stable ranking:
    ties keep insertion order.
    """
    if k < 0:
        raise ValueError("k must be >= 0")
    for i, entry in enumerate(corpus):
        if entry.model_hash != query.model_hash:
            raise ValueError(f"corpus entry {i} comes from a different model")
    sims = np.array([_cosine(query.values, entry.values) for entry in corpus])
    order = np.argsort(-sims, kind="stable")
    return [(int(i), float(sims[i])) for i in order[:k]]


def _grid_times(grid) -> np.ndarray:
    if isinstance(grid, BeatGrid):
        return grid.times
    return np.asarray(grid, dtype=np.float64)


def evaluate_beats(est, ref, tol: float) -> float:
    """F-measure of greedy one-to-one matching within +-tol seconds.

    Two empty grids count as perfect agreement; one empty grid against a
    nonempty one scores 0.
    """
    if not tol > 0:
        raise ValueError("tol must be > 0")
    est_t = _grid_times(est)
    ref_t = _grid_times(ref)
    if len(est_t) == 0 and len(ref_t) == 0:
        return 1.0
    if len(est_t) == 0 or len(ref_t) == 0:
        return 0.0
    i = j = hits = 0
    while i < len(est_t) and j < len(ref_t):
        if abs(est_t[i] - ref_t[j]) <= tol:
            hits += 1
            i += 1
            j += 1
        elif est_t[i] < ref_t[j]:
            i += 1
        else:
            j += 1
    precision = hits / len(est_t)
    recall = hits / len(ref_t)
    if precision + recall == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def tempo_feature(
    channels: ActivationChannels, kernel: CqtKernel
) -> np.ndarray:
    """Time-averaged neighbour feature map for tempo-bin classification.

    Averages the interior frames (stable tempo assumed) into a single-frame
    tensor of shape (rows, 1, bins).
    """
    rg = forward(channels, kernel)
    fmap = build_featuremap_neighbor(rg)
    margin = int(
        math.ceil(kernel.window_lengths.max() / 2 / kernel.config.hop_frames)
    )
    interior = fmap.data[:, margin : fmap.n_frames - margin, :]
    if interior.shape[1] < 1:
        raise ValueError("signal too short to have interior frames")
    return avg_pool_time(interior, interior.shape[1])
