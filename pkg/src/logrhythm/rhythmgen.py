"""Synthetic drum-pattern activation signals with ground-truth beat grids.

Everything downstream (the log-periodicity transform, the feature maps, the
trackers) is exercised against signals rendered here: a percussion pattern on
a fractional beat grid is turned into multi-channel activation signals at a
fixed, low sample rate. Onsets become short triangular pulses so that peak
positions stay unambiguous, and optional uniform noise emulates activation
jitter. Renders are deterministic per (pattern, config, seed).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

__all__ = [
    "DrumPattern",
    "RenderConfig",
    "ActivationChannels",
    "BeatAnnotations",
    "standard_pattern",
    "render",
    "time_scale",
]


@dataclass(frozen=True)
class DrumPattern:
    """One looped measure group of percussion events.

    Each event is (channel index, position in beats from pattern start,
    amplitude). Positions are rationals so renders at any tempo stay exact.
    """

    events: tuple[tuple[int, Fraction, float], ...]
    pattern_length: Fraction
    beats_per_measure: int
    channel_names: tuple[str, ...]

    def __post_init__(self):
        if self.pattern_length <= 0:
            raise ValueError("pattern_length must be positive")
        if self.beats_per_measure < 1:
            raise ValueError("beats_per_measure must be >= 1")
        if not self.channel_names:
            raise ValueError("at least one channel is required")
        for channel, position, amplitude in self.events:
            if not 0 <= channel < len(self.channel_names):
                raise ValueError(f"event channel {channel} out of range")
            if not 0 <= position < self.pattern_length:
                raise ValueError(f"event position {position} outside pattern")
            if not 0.0 < amplitude <= 1.0:
                raise ValueError(f"event amplitude {amplitude} outside (0, 1]")

    @property
    def n_channels(self) -> int:
        return len(self.channel_names)


@dataclass(frozen=True)
class RenderConfig:
    """Parameters of a single render."""

    tempo_bpm: float
    signal_rate_hz: float = 100.0
    n_measures: int = 17
    noise_level: float = 0.0
    onset_width_frames: int = 3
    rng_seed: int = 0

    def __post_init__(self):
        if not (math.isfinite(self.tempo_bpm) and self.tempo_bpm > 0):
            raise ValueError("tempo_bpm must be finite and > 0")
        if not (math.isfinite(self.signal_rate_hz) and self.signal_rate_hz > 0):
            raise ValueError("signal_rate_hz must be finite and > 0")
        if self.n_measures < 1:
            raise ValueError("n_measures must be >= 1")
        if not 0.0 <= self.noise_level < 1.0:
            raise ValueError("noise_level must lie in [0, 1)")
        if self.onset_width_frames < 1:
            raise ValueError("onset_width_frames must be >= 1")


@dataclass(frozen=True)
class ActivationChannels:
    """Multi-channel non-negative rhythm-activation signal."""

    data: np.ndarray  # (channels, frames)
    signal_rate_hz: float
    channel_names: tuple[str, ...]

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 2 or data.shape[1] < 1:
            raise ValueError("data must be a channels x frames matrix")
        if not np.all(np.isfinite(data)):
            raise ValueError("activation values must be finite")
        if np.any(data < 0):
            raise ValueError("activation values must be >= 0")
        if len(self.channel_names) != data.shape[0]:
            raise ValueError("channel_names length must match channel count")
        if not self.signal_rate_hz > 0:
            raise ValueError("signal_rate_hz must be > 0")
        object.__setattr__(self, "data", data)

    @property
    def n_channels(self) -> int:
        return self.data.shape[0]

    @property
    def n_frames(self) -> int:
        return self.data.shape[1]

    @property
    def duration_seconds(self) -> float:
        return self.n_frames / self.signal_rate_hz


@dataclass(frozen=True)
class BeatAnnotations:
    """Ground-truth beat and downbeat times in seconds."""

    beat_times: np.ndarray
    downbeat_times: np.ndarray

    def __post_init__(self):
        beats = np.asarray(self.beat_times, dtype=np.float64)
        downs = np.asarray(self.downbeat_times, dtype=np.float64)
        if beats.size and np.any(np.diff(beats) <= 0):
            raise ValueError("beat_times must be strictly increasing")
        if downs.size and np.any(np.diff(downs) <= 0):
            raise ValueError("downbeat_times must be strictly increasing")
        if not set(downs.tolist()) <= set(beats.tolist()):
            raise ValueError("downbeat_times must be a subset of beat_times")
        object.__setattr__(self, "beat_times", beats)
        object.__setattr__(self, "downbeat_times", downs)


def standard_pattern() -> DrumPattern:
    """The basic one-measure 4/4 rhythm used throughout the test corpus.

    Kick on beats 1 and 3, snare on beats 2 and 4, hi-hat on all eight
    8th notes.
    """
    half = Fraction(1, 2)
    events = []
    for beat in (0, 2):
        events.append((0, Fraction(beat), 1.0))
    for beat in (1, 3):
        events.append((1, Fraction(beat), 1.0))
    for k in range(8):
        events.append((2, k * half, 1.0))
    return DrumPattern(
        events=tuple(events),
        pattern_length=Fraction(4),
        beats_per_measure=4,
        channel_names=("kick", "snare", "hihat"),
    )


def _pulse(width_frames: int) -> np.ndarray:
    # Symmetric triangle, peak 1.0. Even widths are bumped to the next odd
    # value so the peak lands on a single frame.
    width = width_frames if width_frames % 2 == 1 else width_frames + 1
    half = width // 2
    offsets = np.arange(-half, half + 1)
    return 1.0 - np.abs(offsets) / (half + 1.0)


def render(
    pattern: DrumPattern, config: RenderConfig
) -> tuple[ActivationChannels, BeatAnnotations]:
    """Render a pattern to activation channels plus its beat annotations.

    Each event becomes a triangular pulse centred at
    ``position * 60 / tempo_bpm`` seconds, tiled over ``n_measures``. Uniform
    noise in [0, noise_level] is added when requested. Rejects configs where
    one beat spans fewer than 2 frames.
    """
    beat_seconds = 60.0 / config.tempo_bpm
    rate = config.signal_rate_hz
    if beat_seconds * rate < 2.0:
        raise ValueError(
            f"one beat spans {beat_seconds * rate:.2f} frames at "
            f"{config.tempo_bpm} BPM / {rate} Hz; need at least 2"
        )

    total_beats = config.n_measures * pattern.pattern_length
    n_frames = int(math.ceil(float(total_beats) * beat_seconds * rate))
    data = np.zeros((pattern.n_channels, n_frames))

    pulse = _pulse(config.onset_width_frames)
    half = len(pulse) // 2
    for measure in range(config.n_measures):
        base = measure * pattern.pattern_length
        for channel, position, amplitude in pattern.events:
            t = float(base + position) * beat_seconds
            center = int(round(t * rate))
            lo = max(0, center - half)
            hi = min(n_frames, center + half + 1)
            if lo >= hi:
                continue
            data[channel, lo:hi] += amplitude * pulse[lo - center + half : hi - center + half]

    if config.noise_level > 0:
        rng = np.random.default_rng(config.rng_seed)
        data += rng.uniform(0.0, config.noise_level, size=data.shape)
    np.clip(data, 0.0, None, out=data)

    n_beats = config.n_measures * pattern.beats_per_measure
    beats = np.arange(n_beats) * beat_seconds
    downbeats = beats[:: pattern.beats_per_measure]
    channels = ActivationChannels(data, rate, pattern.channel_names)
    return channels, BeatAnnotations(beats, downbeats)


def time_scale(channels: ActivationChannels, ratio) -> ActivationChannels:
    """Time-scale a signal so the rendered tempo becomes ``ratio`` times faster.

    ``ratio`` < 1 stretches the signal (slower tempo, longer duration);
    ``ratio`` > 1 compresses it. Linear interpolation, same signal rate.
    """
    r = float(ratio)
    if not (math.isfinite(r) and r > 0):
        raise ValueError("ratio must be finite and > 0")
    n = channels.n_frames
    new_n = max(1, int(round(n / r)))
    positions = np.arange(new_n) * r
    grid = np.arange(n)
    scaled = np.stack([np.interp(positions, grid, row) for row in channels.data])
    return ActivationChannels(scaled, channels.signal_rate_hz, channels.channel_names)
