import math

import numpy as np
import pytest

from logrhythm import cqt
from logrhythm.phasefeat import (
    ROW_MAGNITUDE,
    ROW_NEIGHBOR,
    apply_magnitude_gate,
    build_featuremap_multiples,
    build_featuremap_neighbor,
    phase_alignment,
    phase_alignment_multiple,
    row_multiple,
    time_to_next_peak,
    time_to_prev_peak,
)
from logrhythm.rhythmgen import RenderConfig, render, standard_pattern

from conftest import interior_frames

TWO_PI = 2 * math.pi


class TestPhaseAlignment:
    def test_identical_phases(self):
        assert phase_alignment(1.3, 1.3) == 0.0

    def test_antiphase(self):
        assert phase_alignment(0.0, math.pi) == pytest.approx(math.pi)

    def test_wraparound_pair(self):
        # C = 2*pi - 0.2 >= pi, so the fold returns 0.2
        assert phase_alignment(0.1, TWO_PI - 0.1) == pytest.approx(0.2)

    def test_symmetry(self):
        rng = np.random.default_rng(0)
        a = rng.uniform(-10, 10, 200)
        b = rng.uniform(-10, 10, 200)
        assert np.array_equal(phase_alignment(a, b), phase_alignment(b, a))

    def test_common_offset_invariance(self):
        rng = np.random.default_rng(1)
        a = rng.uniform(0, TWO_PI, 100)
        b = rng.uniform(0, TWO_PI, 100)
        for delta in (0.3, math.pi, 5.9):
            shifted = phase_alignment(a + delta, b + delta)
            assert np.allclose(shifted, phase_alignment(a, b), atol=1e-12)

    def test_range(self):
        rng = np.random.default_rng(2)
        vals = phase_alignment(rng.uniform(-50, 50, 1000), rng.uniform(-50, 50, 1000))
        assert np.all(vals >= 0) and np.all(vals <= math.pi)

    def test_rejects_nan(self):
        with pytest.raises(ValueError):
            phase_alignment(float("nan"), 0.0)


class TestPhaseAlignmentMultiple:
    def test_aligned_any_ratio(self):
        for ratio in (1, 2, 3, 4, 6, 8):
            assert phase_alignment_multiple(0.0, 0.0, ratio) == 0.0

    def test_half_turn_at_ratio_two(self):
        assert phase_alignment_multiple(0.0, math.pi, 2) == pytest.approx(math.pi)

    def test_time_shift_invariance_analytic(self):
        # phases of cos(2 pi f (t - t0)) at frame time t are -2 pi f t0 offsets
        f1, fm = 1.0, 2.0
        base = phase_alignment_multiple(0.0, 0.0, fm / f1)
        for t0 in np.linspace(-3.0, 3.0, 37):
            phi1 = -TWO_PI * f1 * t0
            phim = -TWO_PI * fm * t0
            assert phase_alignment_multiple(phi1, phim, fm / f1) == pytest.approx(
                base, abs=1e-6
            )

    def test_time_shift_invariance_random(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            ratio = rng.choice([2, 3, 4, 6, 8])
            phi1 = rng.uniform(0, TWO_PI)
            phim = rng.uniform(0, TWO_PI)
            base = phase_alignment_multiple(phi1, phim, ratio)
            delta = rng.uniform(-20, 20)
            moved = phase_alignment_multiple(phi1 - delta, phim - ratio * delta, ratio)
            assert moved == pytest.approx(base, abs=1e-9)

    def test_rejects_ratio_below_one(self):
        with pytest.raises(ValueError):
            phase_alignment_multiple(0.0, 0.0, 0.5)

    def test_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            phase_alignment_multiple(np.inf, 0.0, 2)


class TestNeighborFeatureMap:
    def test_kick_snare_alignment_levels(self, render_120):
        # 120 BPM 4/4: kick and snare are antiphase at the half-measure level
        # (1 Hz) and aligned at the beat level (2 Hz)
        channels, _, kernel, rg = render_120
        fmap = build_featuremap_neighbor(rg)
        interior = interior_frames(rg, kernel)
        align_ks = fmap.data[1, interior, :]  # row 1: alignment(kick, snare)
        k_half = cqt.bin_of_frequency(rg.config, 1.0)
        k_beat = cqt.bin_of_frequency(rg.config, 2.0)
        assert np.median(align_ks[:, k_half]) >= math.pi - 0.15
        assert np.median(align_ks[:, k_beat]) <= 0.15

    def test_layout_and_scaling(self, render_120):
        _, _, _, rg = render_120
        fmap = build_featuremap_neighbor(rg)
        assert fmap.channel_stride == 2
        assert fmap.n_rows == 2 * rg.n_channels
        assert fmap.row_kind[::2] == (ROW_MAGNITUDE,) * rg.n_channels
        assert fmap.row_kind[1::2] == (ROW_NEIGHBOR,) * rg.n_channels
        mag_rows = fmap.data[::2]
        assert mag_rows.max() == pytest.approx(math.pi)
        assert np.all(mag_rows >= 0)
        align_rows = fmap.data[1::2]
        assert np.all((align_rows >= 0) & (align_rows <= math.pi))

    def test_identical_channels_align_to_zero(self, default_config):
        kernel = cqt.plan(default_config, 1200)
        x = np.random.default_rng(4).uniform(0, 1, 1200)
        from logrhythm.rhythmgen import ActivationChannels

        rg = cqt.forward(ActivationChannels(np.stack([x, x]), 100.0, ("a", "b")), kernel)
        fmap = build_featuremap_neighbor(rg)
        assert np.allclose(fmap.data[1], 0.0)
        assert np.allclose(fmap.data[3], 0.0)

    def test_frame_permutation_equivariance(self, render_120):
        _, _, _, rg = render_120
        fmap = build_featuremap_neighbor(rg)
        perm = np.random.default_rng(5).permutation(rg.n_frames)
        permuted = cqt.Rhythmogram(
            rg.coeffs[:, perm, :],
            rg.frame_times,
            rg.bin_freqs,
            rg.config,
            rg.channel_means,
            rg.n_signal_frames,
        )
        fmap_p = build_featuremap_neighbor(permuted)
        assert np.allclose(fmap_p.data, fmap.data[:, perm, :])

    def test_requires_two_channels(self, default_config):
        kernel = cqt.plan(default_config, 1200)
        from logrhythm.rhythmgen import ActivationChannels

        rg = cqt.forward(
            ActivationChannels(np.zeros((1, 1200)), 100.0, ("a",)), kernel
        )
        with pytest.raises(ValueError):
            build_featuremap_neighbor(rg)


class TestMultiplesFeatureMap:
    def test_stride_seven_layout(self, render_120):
        _, _, _, rg = render_120
        fmap = build_featuremap_multiples(rg)
        assert fmap.channel_stride == 7
        assert fmap.n_rows == 7 * rg.n_channels
        expected = (
            ROW_MAGNITUDE,
            ROW_NEIGHBOR,
            row_multiple(2),
            row_multiple(3),
            row_multiple(4),
            row_multiple(6),
            row_multiple(8),
        )
        assert fmap.row_kind[:7] == expected

    def test_top_bins_masked_for_high_multiples(self, render_120):
        _, _, _, rg = render_120
        fmap = build_featuremap_multiples(rg)
        row_h8 = fmap.row_kind.index(row_multiple(8))
        shift = cqt.harmonic_shift(8, rg.config.bins_per_octave)
        assert np.all(~fmap.mask[row_h8, :, rg.n_bins - shift :])
        assert np.all(fmap.data[row_h8, :, rg.n_bins - shift :] == 0)
        assert np.all(fmap.mask[row_h8, :, : rg.n_bins - shift])

    def test_aligned_sinusoid_pair(self, default_config):
        # 1 Hz + 2 Hz cosines peaking together: the h=2 slot at the 1 Hz bin
        # reads alignment ~0 on crest-centred interior frames
        n = 3000
        kernel = cqt.plan(default_config, n)
        t = np.arange(n) / 100.0
        x = 2.0 + np.cos(TWO_PI * 1.0 * t) + np.cos(TWO_PI * 2.0 * t)
        from logrhythm.rhythmgen import ActivationChannels

        rg = cqt.forward(
            ActivationChannels(np.stack([x, x]), 100.0, ("a", "b")), kernel
        )
        fmap = build_featuremap_multiples(rg)
        k1 = cqt.bin_of_frequency(default_config, 1.0)
        row_h2 = fmap.row_kind.index(row_multiple(2))
        interior = interior_frames(rg, kernel)
        vals = fmap.data[row_h2, interior, k1]
        assert np.median(vals) <= 0.05

    def test_empty_multiples_rejected(self, render_120):
        _, _, _, rg = render_120
        with pytest.raises(ValueError):
            build_featuremap_multiples(rg, multiples=())


class TestShiftEquivariance:
    def test_featuremaps_shift_with_content(self, default_config):
        # synthetic one-hot spectra moved by k bins move the features by k
        n_frames, n_bins, k = 4, 40, 6
        rng = np.random.default_rng(6)
        mag = np.zeros((2, n_frames, n_bins))
        mag[:, :, 10] = 1.0
        mag[:, :, 10 + 24] = 0.5  # octave partner so h=2 slots are live
        phase = rng.uniform(0, TWO_PI, size=(2, n_frames, n_bins))

        def rg_from(mag, phase):
            coeffs = mag * np.exp(1j * phase)
            cfg = default_config
            return cqt.Rhythmogram(
                coeffs,
                np.arange(n_frames) * 0.1,
                cfg.bin_frequencies()[:n_bins],
                cfg,
                np.zeros(2),
                (n_frames - 1) * cfg.hop_frames + 1,
            )

        base = build_featuremap_neighbor(rg_from(mag, phase))
        moved = build_featuremap_neighbor(
            rg_from(cqt.shift_bins(mag, k), cqt.shift_bins(phase, k))
        )
        assert np.allclose(moved.data[:, :, k:], base.data[:, :, : n_bins - k])


class TestMagnitudeGate:
    def test_gate_zeroes_weak_alignment(self, render_120):
        _, _, _, rg = render_120
        fmap = build_featuremap_neighbor(rg)
        gated = apply_magnitude_gate(fmap, threshold=0.25)
        weak = fmap.data[0] < 0.25 * math.pi
        assert np.all(gated.data[1][weak] == 0)
        strong = ~weak
        assert np.array_equal(gated.data[1][strong], fmap.data[1][strong])


class TestPeakTimes:
    def test_zero_phase_prev(self):
        assert time_to_prev_peak(0.0, 3.0) == 0.0

    def test_half_period_prev(self):
        assert time_to_prev_peak(math.pi, 1.0) == pytest.approx(0.5)

    def test_zero_phase_next_full_period(self):
        assert time_to_next_peak(0.0, 4.0) == pytest.approx(0.25)

    def test_half_period_next(self):
        assert time_to_next_peak(math.pi, 2.0) == pytest.approx(0.25)

    def test_sum_identity(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            phi = rng.uniform(1e-6, TWO_PI - 1e-6)
            f = rng.uniform(0.3, 20.0)
            total = time_to_prev_peak(phi, f) + time_to_next_peak(phi, f)
            assert total == pytest.approx(1.0 / f, rel=1e-12)

    def test_matches_cqt_phase_oracle(self, default_config):
        # centred-CQT phase of cos(2 pi f (t - t0)) converts back to the
        # distance from the frame centre to the previous peak
        n = 3000
        kernel = cqt.plan(default_config, n)
        f0 = 2.0
        t = np.arange(n) / 100.0
        from logrhythm.rhythmgen import ActivationChannels

        k = cqt.bin_of_frequency(default_config, f0)
        frame = 150
        frame_time = frame * default_config.hop_frames / 100.0
        for t0 in np.linspace(0.0, 0.45, 7):
            x = 1.0 + np.cos(TWO_PI * f0 * (t - t0))
            rg = cqt.forward(ActivationChannels(x[None], 100.0, ("a",)), kernel)
            phi = np.angle(rg.coeffs[0, frame, k])
            prev = time_to_prev_peak(phi, f0)
            peaks = t0 + np.arange(-5, 100) / f0
            expected = frame_time - peaks[peaks <= frame_time + 1e-9].max()
            # distance 0 and one full period are the same circular point
            diff = abs(prev - expected)
            assert min(diff, 1.0 / f0 - diff) <= 2e-3

    def test_rejects_bad_frequency(self):
        with pytest.raises(ValueError):
            time_to_prev_peak(0.0, 0.0)
        with pytest.raises(ValueError):
            time_to_next_peak(0.0, -1.0)
