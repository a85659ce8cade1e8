"""Target speaker extraction with TF-Map, contextual and speaker-embedding cues on a band-split RNN."""

from .extractor import ExtractorConfig, FeatureConfig, TargetSpeakerExtractor
from .metrics import accuracy, si_sdr, si_sdri

__all__ = ["ExtractorConfig", "FeatureConfig", "TargetSpeakerExtractor", "accuracy", "si_sdr", "si_sdri"]
__version__ = "0.1.0"
