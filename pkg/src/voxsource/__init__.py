"""Voice-source features for sung and spoken audio.

Soft-decision pitch tracking with probability of voicing, voice-quality
perturbation measures, pitch-tracker evaluation and tuning, and cohort
analyses over phone-annotated corpora.
"""

__version__ = "0.1.0"

from .signal_io import AudioBuffer, FramingSpec, frame_signal, load_wav, resample, write_wav
from .pitch_tracker import PitchConfig, PitchFrame, PitchTrack, extract_pitch
from .voice_quality import CycleSequence, VqReport, extract_vq
from .evaluation import GroundTruthTrack, HistogramDistribution, PitchEvalResult, TuningResult

__all__ = [
    "AudioBuffer",
    "FramingSpec",
    "frame_signal",
    "load_wav",
    "resample",
    "write_wav",
    "PitchConfig",
    "PitchFrame",
    "PitchTrack",
    "extract_pitch",
    "CycleSequence",
    "VqReport",
    "extract_vq",
    "GroundTruthTrack",
    "HistogramDistribution",
    "PitchEvalResult",
    "TuningResult",
]
