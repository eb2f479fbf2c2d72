"""Online multi-speaker direction-of-arrival localization and tracking.

The processing chain turns multichannel audio into per-frame speaker
azimuth tracks with identities and speech-activity flags:

1. STFT analysis (``stft``)
2. Online direct-path relative transfer function features (``dprtf``)
3. Candidate grid with predicted features (``steering``)
4. Exponentiated-gradient mixture-weight localization (``localizer``)
5. Variational EM multi-speaker tracking (``tracker``)

plus a synthetic-scene simulator (``simulator``), an evaluation harness
(``metrics``) and a command-line front end (``cli``).
"""

__version__ = "0.1.0"

from .config import Config
from .dprtf import DpRtfExtractor, ExtractorConfig, FeatureSet
from .errors import InputError, NumericalError
from .localizer import LocalizerParams, OnlineLocalizer
from .metrics import MetricsReport, aggregate, greedy_match, realtime_factor
from .simulator import SceneSpec, render
from .steering import ArrayGeometry, CandidateGrid, build_grid
from .stft import AudioBuffer, Spectrogram, analyze, read_wav, write_wav
from .tracker import MultiSpeakerTracker, ObservationSet, Track, TrackerParams

__all__ = [
    "__version__",
    "AudioBuffer",
    "Spectrogram",
    "analyze",
    "read_wav",
    "write_wav",
    "ArrayGeometry",
    "CandidateGrid",
    "build_grid",
    "DpRtfExtractor",
    "ExtractorConfig",
    "FeatureSet",
    "LocalizerParams",
    "OnlineLocalizer",
    "MultiSpeakerTracker",
    "ObservationSet",
    "Track",
    "TrackerParams",
    "SceneSpec",
    "render",
    "MetricsReport",
    "greedy_match",
    "aggregate",
    "realtime_factor",
    "Config",
    "InputError",
    "NumericalError",
]
