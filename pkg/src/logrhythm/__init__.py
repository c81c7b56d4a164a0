"""Tempo-invariant rhythm analysis in the log-periodicity-frequency domain."""

from .rhythmgen import (
    ActivationChannels,
    BeatAnnotations,
    DrumPattern,
    RenderConfig,
    render,
    standard_pattern,
    time_scale,
)
from .cqt import (
    CqtConfig,
    CqtKernel,
    Rhythmogram,
    bin_of_frequency,
    forward,
    inverse,
    plan,
)

__version__ = "0.1.0"
