"""Phase-alignment features over the log-periodicity axis.

The phase difference between two channels at one bin measures how their
periodicities co-occur, independent of where in the rhythm the frame sits;
folding it into [0, pi] removes the sign. The same idea extends to one
channel observed at two bins an integer frequency ratio apart: rewind both
phasors until the slower one reaches phase zero, then read the folded phase
of the faster one. Feature maps interleave magnitude rows with alignment
rows so one convolutional filter can stride across channels and see both.

Alignment values at bins where either magnitude is small are mostly noise;
downstream nonlinearities are expected to learn the gating, so no masking is
applied by default (an optional magnitude threshold exists for ablations).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .cqt import Rhythmogram, harmonic_shift

__all__ = [
    "FeatureMap",
    "phase_alignment",
    "phase_alignment_multiple",
    "build_featuremap_neighbor",
    "build_featuremap_multiples",
    "time_to_prev_peak",
    "time_to_next_peak",
]

TWO_PI = 2.0 * math.pi

ROW_MAGNITUDE = "magnitude"
ROW_NEIGHBOR = "neighbor_alignment"


def row_multiple(h: int) -> str:
    return f"multiple_alignment({h})"


@dataclass
class FeatureMap:
    """Interleaved magnitude / phase-alignment rows per frame and bin.

    Magnitude rows are rescaled to share the [0, pi] range of the alignment
    rows (the factor is recorded in ``scale_info``). ``mask`` marks slots
    whose value is defined; only multiple-alignment rows near the top of the
    bin axis, where the partner bin falls off the spectrum, are ever invalid.
    """

    data: np.ndarray  # (rows, frames, bins)
    row_kind: tuple[str, ...]
    channel_stride: int
    scale_info: dict = field(default_factory=dict)
    mask: np.ndarray | None = None

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 3:
            raise ValueError("data must be rows x frames x bins")
        if len(self.row_kind) != data.shape[0]:
            raise ValueError("row_kind length must match row count")
        self.data = data

    @property
    def n_rows(self) -> int:
        return self.data.shape[0]

    @property
    def n_frames(self) -> int:
        return self.data.shape[1]

    @property
    def n_bins(self) -> int:
        return self.data.shape[2]

    def as_tensor(self) -> np.ndarray:
        """Depth-1 tensor view for the convolution stack."""
        return self.data[None, :, :, :]


def _check_finite(*values):
    for v in values:
        if not np.all(np.isfinite(v)):
            raise ValueError("phase values must be finite")


def phase_alignment(phi_a, phi_b):
    """Folded absolute phase difference, in [0, pi].

    Symmetric in its arguments and invariant to a common phase offset.
    Accepts scalars or arrays.
    """
    phi_a = np.asarray(phi_a, dtype=np.float64)
    phi_b = np.asarray(phi_b, dtype=np.float64)
    _check_finite(phi_a, phi_b)
    c = np.abs(np.mod(phi_a, TWO_PI) - np.mod(phi_b, TWO_PI))
    out = np.where(c < math.pi, c, TWO_PI - c)
    return float(out) if out.ndim == 0 else out


def phase_alignment_multiple(phi_1, phi_m, freq_ratio):
    """Alignment of a periodicity with one at ``freq_ratio`` times its rate.

    Rewinds both phasors until the slower one reads phase zero, then folds
    the faster phasor's phase into [0, pi]: C = wrap(phi_m - phi_1 * ratio).
    The result is invariant to a global time shift of the underlying signal.
    """
    phi_1 = np.asarray(phi_1, dtype=np.float64)
    phi_m = np.asarray(phi_m, dtype=np.float64)
    _check_finite(phi_1, phi_m)
    ratio = np.asarray(freq_ratio, dtype=np.float64)
    if np.any(~np.isfinite(ratio)) or np.any(ratio < 1.0):
        raise ValueError("freq_ratio must be finite and >= 1")
    c = np.mod(phi_m - phi_1 * ratio, TWO_PI)
    out = np.where(c < math.pi, c, TWO_PI - c)
    return float(out) if out.ndim == 0 else out


def _scaled_magnitudes(rg: Rhythmogram) -> tuple[np.ndarray, float]:
    mags = rg.magnitudes()
    peak = mags.max()
    scale = math.pi / peak if peak > 0 else 1.0
    return mags * scale, scale


def build_featuremap_neighbor(rg: Rhythmogram) -> FeatureMap:
    """Interleave per-channel magnitudes with neighbouring-channel alignment.

    Row layout per channel i: magnitude(i), alignment(i, i+1), with the last
    channel wrapping around to the first so every channel contributes the
    same two rows (channel_stride = 2).
    """
    if rg.n_channels < 2:
        raise ValueError("need at least 2 channels for neighbour alignment")
    mags, scale = _scaled_magnitudes(rg)
    phases = rg.phases()

    rows = []
    kinds = []
    for i in range(rg.n_channels):
        rows.append(mags[i])
        rows.append(phase_alignment(phases[i], phases[(i + 1) % rg.n_channels]))
        kinds.extend([ROW_MAGNITUDE, ROW_NEIGHBOR])
    return FeatureMap(
        data=np.stack(rows),
        row_kind=tuple(kinds),
        channel_stride=2,
        scale_info={ROW_MAGNITUDE: scale, ROW_NEIGHBOR: 1.0},
    )


def build_featuremap_multiples(
    rg: Rhythmogram, multiples: tuple[int, ...] = (2, 3, 4, 6, 8)
) -> FeatureMap:
    """Seven-row-per-channel map: magnitude, neighbour and multiple alignment.

    For each bin k and multiple h the partner bin sits harmonic_shift(h)
    bins up; where that partner falls off the top of the axis the slot is
    zeroed and flagged invalid in ``mask``.
    """
    if len(multiples) == 0:
        raise ValueError("multiples list must not be empty")
    if rg.n_channels < 2:
        raise ValueError("need at least 2 channels for neighbour alignment")
    bpo = rg.config.bins_per_octave
    mags, scale = _scaled_magnitudes(rg)
    phases = rg.phases()
    n_bins = rg.n_bins

    rows = []
    kinds = []
    mask_rows = []
    valid_all = np.ones((rg.n_frames, n_bins), dtype=bool)
    for i in range(rg.n_channels):
        rows.append(mags[i])
        kinds.append(ROW_MAGNITUDE)
        mask_rows.append(valid_all)
        rows.append(phase_alignment(phases[i], phases[(i + 1) % rg.n_channels]))
        kinds.append(ROW_NEIGHBOR)
        mask_rows.append(valid_all)
        for h in multiples:
            shift = harmonic_shift(h, bpo)
            if shift >= n_bins:
                raise ValueError(f"multiple {h} exceeds the bin axis entirely")
            row = np.zeros((rg.n_frames, n_bins))
            valid = np.zeros((rg.n_frames, n_bins), dtype=bool)
            if shift == 0:
                row[:] = 0.0
                valid[:] = True
            else:
                ratio = 2.0 ** (shift / bpo)  # true ratio of the partner bins
                row[:, :-shift] = phase_alignment_multiple(
                    phases[i][:, :-shift], phases[i][:, shift:], ratio
                )
                valid[:, :-shift] = True
            rows.append(row)
            kinds.append(row_multiple(h))
            mask_rows.append(valid)
    return FeatureMap(
        data=np.stack(rows),
        row_kind=tuple(kinds),
        channel_stride=2 + len(multiples),
        scale_info={ROW_MAGNITUDE: scale},
        mask=np.stack(mask_rows),
    )


def apply_magnitude_gate(fmap: FeatureMap, threshold: float) -> FeatureMap:
    """Optional ablation tool: zero alignment rows where magnitude is weak.

    ``threshold`` is relative to the map's magnitude ceiling (pi after
    rescaling). Off by default everywhere; the network's nonlinearities are
    expected to learn this gating themselves.
    """
    mag_rows = [i for i, k in enumerate(fmap.row_kind) if k == ROW_MAGNITUDE]
    data = fmap.data.copy()
    stride = fmap.channel_stride
    for start in mag_rows:
        weak = fmap.data[start] < threshold * math.pi
        for offset in range(1, stride):
            data[start + offset][weak] = 0.0
    return FeatureMap(data, fmap.row_kind, stride, dict(fmap.scale_info), fmap.mask)


def time_to_prev_peak(phi, f):
    """Seconds from the most recent waveform peak to the analysis point."""
    f = np.asarray(f, dtype=np.float64)
    if np.any(f <= 0):
        raise ValueError("frequency must be > 0")
    phi = np.asarray(phi, dtype=np.float64)
    _check_finite(phi)
    out = np.mod(phi, TWO_PI) / (TWO_PI * f)
    return float(out) if out.ndim == 0 else out


def time_to_next_peak(phi, f):
    """Seconds from the analysis point to the next waveform peak.

    At phase exactly 0 the next peak is, by convention, one full period
    ahead; together with time_to_prev_peak the two spans always sum to one
    period for nonzero phase.
    """
    f = np.asarray(f, dtype=np.float64)
    if np.any(f <= 0):
        raise ValueError("frequency must be > 0")
    phi = np.asarray(phi, dtype=np.float64)
    _check_finite(phi)
    out = (TWO_PI - np.mod(phi, TWO_PI)) / (TWO_PI * f)
    return float(out) if out.ndim == 0 else out
