"""Generative machine listener toolkit.

Trains a model that maps reference/coded stereo audio pairs to a full
distribution of listener quality scores, samples simulated listening
panels from it, and benchmarks mean and confidence-interval predictions.
"""

__version__ = "0.1.0"

from .frontend import (  # noqa: F401
    GammatoneConfig,
    ModelInput,
    StereoSignal,
    build_input,
    derive_channels,
    gammatone_spectrogram,
    load_audio,
    pad_to_length,
    swap_channels,
)
from .prob import (  # noqa: F401
    ConfidenceInterval,
    ScoreDistribution,
    confidence_interval,
    logistic_std,
    mushra_stats,
    nll_gaussian,
    nll_logistic,
    sample_scores,
    smooth_l1,
    t_quantile,
)
