from fractions import Fraction

import numpy as np
import pytest

from logrhythm.rhythmgen import (
    ActivationChannels,
    BeatAnnotations,
    DrumPattern,
    RenderConfig,
    render,
    standard_pattern,
    time_scale,
)


class TestStandardPattern:
    def test_event_grid(self):
        pat = standard_pattern()
        by_channel = {}
        for ch, pos, _amp in pat.events:
            by_channel.setdefault(pat.channel_names[ch], set()).add(pos)
        assert by_channel["kick"] == {Fraction(0), Fraction(2)}
        assert by_channel["snare"] == {Fraction(1), Fraction(3)}
        assert by_channel["hihat"] == {Fraction(k, 2) for k in range(8)}

    def test_meter(self):
        pat = standard_pattern()
        assert pat.beats_per_measure == 4
        assert pat.pattern_length == 4

    def test_amplitudes_in_range(self):
        for _ch, _pos, amp in standard_pattern().events:
            assert 0.0 < amp <= 1.0


class TestPatternValidation:
    def test_rejects_position_outside_pattern(self):
        with pytest.raises(ValueError):
            DrumPattern(
                events=((0, Fraction(4), 1.0),),
                pattern_length=Fraction(4),
                beats_per_measure=4,
                channel_names=("a",),
            )

    def test_rejects_bad_channel(self):
        with pytest.raises(ValueError):
            DrumPattern(
                events=((2, Fraction(0), 1.0),),
                pattern_length=Fraction(4),
                beats_per_measure=4,
                channel_names=("a", "b"),
            )

    def test_rejects_zero_amplitude(self):
        with pytest.raises(ValueError):
            DrumPattern(
                events=((0, Fraction(0), 0.0),),
                pattern_length=Fraction(4),
                beats_per_measure=4,
                channel_names=("a",),
            )


class TestRender:
    def test_beat_pulses_50_frames_apart_at_120(self):
        channels, _ = render(standard_pattern(), RenderConfig(tempo_bpm=120.0))
        kick = channels.data[0]
        # kick hits beats 1 and 3: peaks every 100 frames; hihat every 25.
        hihat = channels.data[2]
        peaks = np.flatnonzero(hihat == hihat.max())
        assert np.all(np.diff(peaks) == 25)
        kick_peaks = np.flatnonzero(kick == kick.max())
        assert np.all(np.diff(kick_peaks) == 100)
        # adjacent beat positions are 50 frames apart: snare sits halfway
        snare_peaks = np.flatnonzero(channels.data[1] == channels.data[1].max())
        assert snare_peaks[0] - kick_peaks[0] == 50

    def test_noiseless_zero_between_pulses(self):
        channels, _ = render(standard_pattern(), RenderConfig(tempo_bpm=120.0))
        hihat = channels.data[2]
        # a frame 10 steps after a pulse centre is well clear of the 3-wide pulse
        assert hihat[10] == 0.0
        assert np.all(channels.data >= 0)

    def test_deterministic_per_seed(self):
        cfg = RenderConfig(tempo_bpm=120.0, noise_level=0.15, rng_seed=7)
        a, _ = render(standard_pattern(), cfg)
        b, _ = render(standard_pattern(), cfg)
        assert np.array_equal(a.data, b.data)

    def test_different_seeds_differ(self):
        a, _ = render(standard_pattern(), RenderConfig(120.0, noise_level=0.15, rng_seed=1))
        b, _ = render(standard_pattern(), RenderConfig(120.0, noise_level=0.15, rng_seed=2))
        assert not np.array_equal(a.data, b.data)

    def test_rejects_too_fast_tempo(self):
        # one beat would span < 2 frames
        with pytest.raises(ValueError):
            render(standard_pattern(), RenderConfig(tempo_bpm=4000.0))

    def test_beat_annotation_count_exact(self):
        for measures in (1, 5, 17):
            _, ann = render(
                standard_pattern(), RenderConfig(tempo_bpm=97.0, n_measures=measures)
            )
            assert len(ann.beat_times) == measures * 4
            assert len(ann.downbeat_times) == measures

    def test_downbeats_subset_of_beats(self):
        _, ann = render(standard_pattern(), RenderConfig(tempo_bpm=120.0))
        assert set(ann.downbeat_times.tolist()) <= set(ann.beat_times.tolist())

    def test_noiseless_render_periodic(self):
        channels, _ = render(standard_pattern(), RenderConfig(tempo_bpm=120.0, n_measures=8))
        period = int(round(4 * 0.5 * 100))  # pattern_length * beat_seconds * rate
        data = channels.data
        # x[t] == x[t + period] frame-wise over interior measures
        assert np.array_equal(data[:, period : 6 * period], data[:, 2 * period : 7 * period])


class TestTimeScale:
    def test_identity_ratio(self):
        channels, _ = render(standard_pattern(), RenderConfig(tempo_bpm=120.0, n_measures=4))
        out = time_scale(channels, 1)
        assert np.allclose(out.data, channels.data)

    def test_two_thirds_ratio_spacing(self):
        channels, _ = render(standard_pattern(), RenderConfig(tempo_bpm=120.0, n_measures=8))
        slow = time_scale(channels, Fraction(2, 3))
        # beat spacing grows from 50 to 75 frames: kick+snare pulses sit on
        # the beat grid, so their autocorrelation peaks at lag 75
        sig = slow.data[0] + slow.data[1]
        sig = sig - sig.mean()
        ac = np.correlate(sig, sig, mode="full")[len(sig) - 1 :]
        best = 40 + np.argmax(ac[40:110])
        assert best == 75
        assert abs(slow.n_frames - round(channels.n_frames * 1.5)) <= 1

    def test_round_trip_dyadic(self):
        # at 100 BPM every event lands on an even frame (8ths every 30), so
        # compression by 2 keeps all breakpoints and the round trip is exact
        channels, _ = render(standard_pattern(), RenderConfig(tempo_bpm=100.0, n_measures=8))
        back = time_scale(time_scale(channels, 2), Fraction(1, 2))
        m = min(back.n_frames, channels.n_frames)
        interior = slice(100, m - 100)
        rms = np.sqrt(np.mean((back.data[:, interior] - channels.data[:, interior]) ** 2))
        assert rms <= 1e-6

    def test_round_trip_stretch_first(self):
        channels, _ = render(standard_pattern(), RenderConfig(tempo_bpm=120.0, n_measures=8))
        back = time_scale(time_scale(channels, Fraction(1, 2)), 2)
        m = min(back.n_frames, channels.n_frames)
        interior = slice(100, m - 100)
        rms = np.sqrt(np.mean((back.data[:, interior] - channels.data[:, interior]) ** 2))
        assert rms <= 1e-6

    def test_rejects_nonfinite_ratio(self):
        channels, _ = render(standard_pattern(), RenderConfig(tempo_bpm=120.0, n_measures=2))
        with pytest.raises(ValueError):
            time_scale(channels, float("nan"))
        with pytest.raises(ValueError):
            time_scale(channels, 0.0)


class TestContainers:
    def test_activation_channels_rejects_negative(self):
        with pytest.raises(ValueError):
            ActivationChannels(np.array([[-0.1, 0.2]]), 100.0, ("a",))

    def test_activation_channels_rejects_nan(self):
        with pytest.raises(ValueError):
            ActivationChannels(np.array([[np.nan, 0.2]]), 100.0, ("a",))

    def test_beat_annotations_reject_unsorted(self):
        with pytest.raises(ValueError):
            BeatAnnotations(np.array([1.0, 0.5]), np.array([]))

    def test_beat_annotations_reject_non_subset(self):
        with pytest.raises(ValueError):
            BeatAnnotations(np.array([0.0, 1.0]), np.array([0.5]))
