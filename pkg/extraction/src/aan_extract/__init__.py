"""Feature extraction for movie clips, emitting the aan dataset formats."""

from .audio_feats import OPENSMILE_DIM, VGGISH_DIM, opensmile_features, vggish_features
from .config import ExtractionConfig, PROFILES, get_profile
from .frames import ExtractionError, extract_frames
from .records import ClipFeatureExtractor, emit_records
from .video_nets import flownets_features, i3d_features, resnet50_features

__all__ = [
    "OPENSMILE_DIM",
    "VGGISH_DIM",
    "ExtractionConfig",
    "ExtractionError",
    "PROFILES",
    "ClipFeatureExtractor",
    "emit_records",
    "extract_frames",
    "get_profile",
    "opensmile_features",
    "vggish_features",
    "flownets_features",
    "i3d_features",
    "resnet50_features",
]
