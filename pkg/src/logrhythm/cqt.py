"""Constant-Q transform of rhythm-activation channels, with inverse.

Periodicity frequencies of interest run from the measure level (~0.5 Hz) to
just above the 16th-note level (~16 Hz), so the transform uses log-spaced
bins: peaks keep the same shape across frequency and a tempo change becomes a
pure shift along the bin axis. Bins are analysed with Hann windows spanning a
fixed number of cycles of each bin frequency (about 3-5 s at beat-level
frequencies), so each bin keeps a constant Q. The transform is computed per
frame with an FFT against precomputed frequency-domain atoms.

Phase is referenced to the centre of each analysis window: a cosine-shaped
pulse train whose peak sits at the frame centre reads phase 0 at its bin.
The inverse runs conjugate-atom synthesis with a diagonal frequency-domain
normalisation, then fixed-point refinement against the forward operator, so
in-band content round-trips at least-squares quality.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse

from .rhythmgen import ActivationChannels

__all__ = [
    "CqtConfig",
    "CqtKernel",
    "Rhythmogram",
    "ReconstructedSignal",
    "plan",
    "forward",
    "transform_array",
    "inverse",
    "bin_of_frequency",
    "shift_bins",
    "harmonic_shift",
    "harmonic_stack",
    "avg_pool_time",
]

# Analysis window length in cycles of each bin frequency.
WINDOW_CYCLES = 4.0
# Relative magnitude below which frequency-domain atom entries are dropped.
ATOM_SPARSITY = 1e-7


@dataclass(frozen=True)
class CqtConfig:
    """Parameters of the log-frequency analysis."""

    f_min: float = 0.5
    f_max: float = 16.0
    bins_per_octave: int = 24
    signal_rate_hz: float = 100.0
    hop_frames: int = 10
    tf_tradeoff: float = 0.0
    window: str = "hann"

    def __post_init__(self):
        if not 0 < self.f_min < self.f_max:
            raise ValueError("need 0 < f_min < f_max")
        if self.f_max > self.signal_rate_hz / 2:
            raise ValueError("f_max must not exceed the Nyquist frequency")
        if self.bins_per_octave < 1:
            raise ValueError("bins_per_octave must be >= 1")
        if self.hop_frames < 1:
            raise ValueError("hop_frames must be >= 1")
        if not 0.0 <= self.tf_tradeoff <= 1.0:
            raise ValueError("tf_tradeoff must lie in [0, 1]")
        if self.window != "hann":
            raise ValueError("only the hann window is supported")

    @property
    def n_bins(self) -> int:
        ratio = self.f_max / self.f_min
        return int(math.floor(self.bins_per_octave * math.log2(ratio) + 1e-9)) + 1

    def bin_frequencies(self) -> np.ndarray:
        k = np.arange(self.n_bins)
        return self.f_min * 2.0 ** (k / self.bins_per_octave)


@dataclass(frozen=True)
class CqtKernel:
    """Precomputed analysis atoms for one configuration.

    ``spectral_atoms`` holds the conjugated DFT of each windowed complex
    exponential, scaled so that a frame FFT times an atom row yields the bin
    coefficient directly, with unit-amplitude in-band cosines mapping to
    magnitude ~1.
    """

    config: CqtConfig
    bin_freqs: np.ndarray  # (bins,) Hz
    window_lengths: np.ndarray  # (bins,) frames, odd
    frame_len: int  # analysis frame length (power of two)
    spectral_atoms: scipy.sparse.csr_matrix  # (bins, frame_len)

    @property
    def n_bins(self) -> int:
        return len(self.bin_freqs)

    @property
    def center(self) -> int:
        return self.frame_len // 2

    def window_seconds(self, bin_index: int) -> float:
        return self.window_lengths[bin_index] / self.config.signal_rate_hz

    def time_atom(self, bin_index: int) -> tuple[np.ndarray, np.ndarray]:
        """Complex time-domain atom and its Hann window (support only)."""
        length = int(self.window_lengths[bin_index])
        w = np.hanning(length)
        center = (length - 1) / 2.0
        phase = 2j * np.pi * self.bin_freqs[bin_index] / self.config.signal_rate_hz
        atom = w * np.exp(phase * (np.arange(length) - center))
        return atom * (2.0 / w.sum()), w


@dataclass(frozen=True)
class Rhythmogram:
    """Complex log-periodicity spectra per channel and frame.

    ``channel_means`` stores the DC offset removed from each channel before
    analysis so the inverse can restore it; masking utilities clear it, since
    a constant lies outside every pass band.
    """

    coeffs: np.ndarray  # (channels, frames, bins) complex
    frame_times: np.ndarray  # (frames,) seconds, frame centres
    bin_freqs: np.ndarray  # (bins,) Hz
    config: CqtConfig
    channel_means: np.ndarray  # (channels,)
    n_signal_frames: int

    def __post_init__(self):
        coeffs = np.asarray(self.coeffs, dtype=np.complex128)
        if coeffs.ndim != 3:
            raise ValueError("coeffs must be channels x frames x bins")
        if not np.all(np.isfinite(coeffs)):
            raise ValueError("coefficients must be finite")
        object.__setattr__(self, "coeffs", coeffs)

    @property
    def n_channels(self) -> int:
        return self.coeffs.shape[0]

    @property
    def n_frames(self) -> int:
        return self.coeffs.shape[1]

    @property
    def n_bins(self) -> int:
        return self.coeffs.shape[2]

    def magnitudes(self) -> np.ndarray:
        return np.abs(self.coeffs)

    def phases(self) -> np.ndarray:
        return np.angle(self.coeffs)


@dataclass(frozen=True)
class ReconstructedSignal:
    """Time-domain reconstruction; may swing negative, unlike activations."""

    data: np.ndarray  # (channels, frames)
    signal_rate_hz: float
    channel_names: tuple[str, ...]

    @property
    def n_channels(self) -> int:
        return self.data.shape[0]

    @property
    def n_frames(self) -> int:
        return self.data.shape[1]


def _window_lengths(config: CqtConfig, bin_freqs: np.ndarray) -> np.ndarray:
    # tf_tradeoff places a floor on the effective frequency (as a fraction of
    # f_max), which caps window growth toward the low end.
    f_eff = np.maximum(bin_freqs, config.tf_tradeoff * config.f_max)
    lengths = np.round(WINDOW_CYCLES * config.signal_rate_hz / f_eff).astype(int)
    lengths += 1 - (lengths % 2)  # odd lengths centre on a sample
    return np.maximum(lengths, 3)


def plan(config: CqtConfig, n_frames: int) -> CqtKernel:
    """Precompute the frequency-domain atoms for signals of >= n_frames."""
    bin_freqs = config.bin_frequencies()
    lengths = _window_lengths(config, bin_freqs)
    longest = int(lengths.max())
    if n_frames < longest:
        raise ValueError(
            f"signal of {n_frames} frames is shorter than the {longest}-frame "
            f"window required at f_min={config.f_min} Hz"
        )
    frame_len = 1 << (longest - 1).bit_length()
    center = frame_len // 2

    rows = np.zeros((config.n_bins, frame_len), dtype=np.complex128)
    for k in range(config.n_bins):
        length = int(lengths[k])
        w = np.hanning(length)
        c = (length - 1) / 2.0
        phase = 2j * np.pi * bin_freqs[k] / config.signal_rate_hz
        atom = w * np.exp(phase * (np.arange(length) - c)) * (2.0 / w.sum())
        start = center - length // 2
        padded = np.zeros(frame_len, dtype=np.complex128)
        padded[start : start + length] = atom
        rows[k] = np.conj(np.fft.fft(padded)) / frame_len

    mags = np.abs(rows)
    rows[mags < ATOM_SPARSITY * mags.max()] = 0.0
    atoms = scipy.sparse.csr_matrix(rows)
    return CqtKernel(config, bin_freqs, lengths, frame_len, atoms)


def _frame_centers(n_frames: int, hop: int) -> np.ndarray:
    n_out = 1 + (n_frames - 1) // hop
    return np.arange(n_out) * hop


def _dense_atoms(kernel: CqtKernel) -> np.ndarray:
    # The stored atoms are sparse, but a cached dense copy lets the per-frame
    # projection run through BLAS, which dominates transform cost.
    cached = getattr(kernel, "_dense_atoms_cache", None)
    if cached is None:
        cached = np.ascontiguousarray(kernel.spectral_atoms.toarray())
        object.__setattr__(kernel, "_dense_atoms_cache", cached)
    return cached


def transform_array(data: np.ndarray, kernel: CqtKernel) -> np.ndarray:
    """Raw transform of a (channels, frames) array; no mean removal."""
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2:
        raise ValueError("expected a channels x frames array")
    cfg = kernel.config
    centers = _frame_centers(data.shape[1], cfg.hop_frames)
    pad_left = kernel.center
    pad_right = kernel.frame_len - kernel.center
    atoms_t = _dense_atoms(kernel).T

    out = np.empty((data.shape[0], len(centers), kernel.n_bins), dtype=np.complex128)
    for ch, row in enumerate(data):
        padded = np.pad(row, (pad_left, pad_right))
        frames = np.lib.stride_tricks.sliding_window_view(padded, kernel.frame_len)
        frames = frames[centers]
        spectra = np.fft.fft(frames, axis=1)
        out[ch] = spectra @ atoms_t
    return out


def forward(channels: ActivationChannels, kernel: CqtKernel) -> Rhythmogram:
    """Transform activation channels to a rhythmogram with centred phase.

    The per-channel mean is removed first: activation signals carry a
    positive DC offset that holds no rhythm information but would leak into
    clipped low-frequency windows.
    """
    cfg = kernel.config
    if not math.isclose(channels.signal_rate_hz, cfg.signal_rate_hz, rel_tol=1e-9):
        raise ValueError(
            f"signal rate {channels.signal_rate_hz} Hz does not match the "
            f"kernel's {cfg.signal_rate_hz} Hz"
        )
    if not np.all(np.isfinite(channels.data)):
        raise ValueError("input contains non-finite values")
    if channels.n_frames < int(kernel.window_lengths.max()):
        raise ValueError("signal too short for this kernel; re-plan")

    means = channels.data.mean(axis=1)
    coeffs = transform_array(channels.data - means[:, None], kernel)
    centers = _frame_centers(channels.n_frames, cfg.hop_frames)
    frame_times = centers / cfg.signal_rate_hz
    return Rhythmogram(
        coeffs, frame_times, kernel.bin_freqs.copy(), cfg, means, channels.n_frames
    )


def _inverse_gain(kernel: CqtKernel, n_signal: int) -> np.ndarray:
    """Reciprocal steady-state transfer of analysis + conjugate synthesis.

    Evaluated on the rfft grid of an n_signal-long real signal; zero outside
    the covered band so out-of-band bins never amplify noise.
    """
    cfg = kernel.config
    rate = cfg.signal_rate_hz
    freqs = np.fft.rfftfreq(n_signal, d=1.0 / rate)
    n_big = 4 * kernel.frame_len
    grid = np.fft.rfftfreq(n_big, d=1.0 / rate)

    gain = np.zeros(len(freqs))
    for k in range(kernel.n_bins):
        w = np.hanning(int(kernel.window_lengths[k]))
        win_sq = np.abs(np.fft.rfft(w, n_big)) ** 2
        nu = 2.0 / w.sum()
        offsets = np.abs(freqs - kernel.bin_freqs[k])
        gain += nu * nu / (2.0 * cfg.hop_frames) * np.interp(offsets, grid, win_sq)

    # The in-band transfer is a flat plateau; a strict relative cutoff keeps
    # the whole analysis band while rejecting the window-sidelobe wings, where
    # division would amplify junk and destabilise refinement.
    keep = gain > 0.2 * gain.max()
    inv = np.zeros_like(gain)
    inv[keep] = 1.0 / gain[keep]
    return inv


def _synthesize(
    coeffs: np.ndarray, kernel: CqtKernel, n_signal: int, inv_gain: np.ndarray
) -> np.ndarray:
    """Conjugate-atom overlap-add synthesis with diagonal normalisation.

    The frame grid is extended past both signal edges with phase-rotated
    copies of the first/last frame so that window coverage stays uniform;
    without this, the missing frames leave a coverage deficit that the
    diagonal normalisation cannot repair.
    """
    cfg = kernel.config
    hop = cfg.hop_frames
    centers = _frame_centers(n_signal, hop)
    # conj undoes the analysis conjugation; frame_len undoes its 1/N scaling,
    # recovering the bare atom DFT for synthesis.
    synth = np.conj(_dense_atoms(kernel)) * kernel.frame_len

    n_extra = int(np.ceil((kernel.window_lengths.max() // 2) / hop))
    # On-bin content rotates by exactly one hop of its bin frequency between
    # frames; extrapolating with that rotation keeps the extension coherent.
    rot = np.exp(-2j * np.pi * kernel.bin_freqs * hop / cfg.signal_rate_hz)
    steps = np.arange(1, n_extra + 1)[:, None]
    pre_rot = rot[None, :] ** steps
    post_rot = np.conj(pre_rot)

    offset = kernel.center + n_extra * hop  # buf index of signal sample 0
    buf_len = n_signal + 2 * (kernel.center + n_extra * hop) + kernel.frame_len
    out = np.empty((coeffs.shape[0], n_signal))
    buf = np.zeros(buf_len)
    for ch in range(coeffs.shape[0]):
        buf[:] = 0.0
        pre = coeffs[ch, 0][None, :] * pre_rot
        post = coeffs[ch, -1][None, :] * post_rot
        full = np.concatenate([pre[::-1], coeffs[ch], post])
        all_centers = np.concatenate(
            [-steps[::-1, 0] * hop, centers, centers[-1] + steps[:, 0] * hop]
        )
        frames_t = np.fft.ifft(full @ synth, axis=1).real
        for i, c in enumerate(all_centers):
            start = c - kernel.center + offset
            buf[start : start + kernel.frame_len] += frames_t[i]
        y = buf[offset : offset + n_signal]
        out[ch] = np.fft.irfft(np.fft.rfft(y) * inv_gain, n_signal)
    return out


def inverse(
    rg: Rhythmogram,
    kernel: CqtKernel,
    *,
    n_frames: int | None = None,
    refine_steps: int = 6,
    restore_mean: bool = True,
) -> ReconstructedSignal:
    """Reconstruct time-domain signals from a rhythmogram.

    Synthesis plus diagonal normalisation already lands close; the refinement
    steps against the forward operator push in-band round trips below 1e-3
    relative error, mostly by repairing the signal edges where window
    coverage is partial. Magnitude-masked rhythmograms invert to the
    band-limited signal carried by the surviving bins.
    """
    if kernel.n_bins != rg.n_bins:
        raise ValueError("rhythmogram bin count does not match kernel")
    if n_frames is None:
        n_frames = rg.n_signal_frames
    expected = 1 + (n_frames - 1) // kernel.config.hop_frames
    if expected != rg.n_frames:
        raise ValueError("rhythmogram frame count does not match signal length")

    inv_gain = _inverse_gain(kernel, n_frames)
    y = _synthesize(rg.coeffs, kernel, n_frames, inv_gain)
    for _ in range(refine_steps):
        residual = rg.coeffs - transform_array(y, kernel)
        y += _synthesize(residual, kernel, n_frames, inv_gain)

    if restore_mean:
        y = y + rg.channel_means[:, None]
    names = tuple(f"ch{i}" for i in range(rg.n_channels))
    return ReconstructedSignal(y, kernel.config.signal_rate_hz, names)


def bin_of_frequency(config: CqtConfig, f: float) -> int:
    """Nearest bin index for a frequency; ties round half up."""
    if not (config.f_min <= f <= config.f_max):
        raise ValueError(f"{f} Hz outside [{config.f_min}, {config.f_max}] Hz")
    exact = config.bins_per_octave * math.log2(f / config.f_min)
    return min(int(math.floor(exact + 0.5)), config.n_bins - 1)


def shift_bins(mag: np.ndarray, s: int) -> np.ndarray:
    """Shift content along the bin (last) axis by s bins, zero-filling."""
    mag = np.asarray(mag)
    n_bins = mag.shape[-1]
    if abs(s) >= n_bins:
        raise ValueError(f"|shift| {abs(s)} must be < {n_bins} bins")
    out = np.zeros_like(mag)
    if s >= 0:
        out[..., s:] = mag[..., : n_bins - s]
    else:
        out[..., : n_bins + s] = mag[..., -s:]
    return out


def harmonic_shift(h: int, bpo: int) -> int:
    """Bin shift aligning harmonic h on a log axis with bpo bins/octave."""
    return int(math.floor(math.log2(h) * bpo + 1e-9))


def harmonic_stack(mag: np.ndarray, harmonics, bpo: int) -> np.ndarray:
    """Stack shifted copies so bin k of layer h holds harmonic h of bin k.

    Adds a leading stack axis ordered as ``harmonics``.
    """
    if len(harmonics) == 0:
        raise ValueError("harmonics list must not be empty")
    layers = [shift_bins(mag, -harmonic_shift(h, bpo)) for h in harmonics]
    return np.stack(layers, axis=0)


def avg_pool_time(rg_mag: np.ndarray, window_frames: int, axis: int = -2) -> np.ndarray:
    """Moving average over frames (valid extent: n - window + 1 outputs)."""
    if window_frames < 1:
        raise ValueError("window_frames must be >= 1")
    rg_mag = np.asarray(rg_mag, dtype=np.float64)
    n = rg_mag.shape[axis]
    if window_frames > n:
        raise ValueError(f"window of {window_frames} exceeds {n} frames")
    if window_frames == 1:
        return rg_mag.copy()
    moved = np.moveaxis(rg_mag, axis, 0)
    csum = np.concatenate([np.zeros((1, *moved.shape[1:])), np.cumsum(moved, axis=0)])
    pooled = (csum[window_frames:] - csum[:-window_frames]) / window_frames
    return np.moveaxis(pooled, 0, axis)
