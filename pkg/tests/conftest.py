import numpy as np
import pytest

from logrhythm import cqt
from logrhythm import rhythmgen


@pytest.fixture(scope="session")
def default_config():
    return cqt.CqtConfig()


@pytest.fixture(scope="session")
def render_120(default_config):
    """Noiseless standard pattern at 120 BPM with its kernel and rhythmogram."""
    channels, annotations = rhythmgen.render(
        rhythmgen.standard_pattern(),
        rhythmgen.RenderConfig(tempo_bpm=120.0, n_measures=17),
    )
    kernel = cqt.plan(default_config, channels.n_frames)
    rg = cqt.forward(channels, kernel)
    return channels, annotations, kernel, rg


def interior_frames(rg, kernel):
    """Frame slice unaffected by the longest analysis window's edges."""
    margin = int(np.ceil(kernel.window_lengths.max() / 2 / kernel.config.hop_frames))
    return slice(margin, rg.n_frames - margin)
