"""Extraction profiles: frame counts, crop geometry, audio windowing."""

from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class ExtractionConfig:
    frames_per_clip: int  # T
    crop_size: int = 224
    scale_shorter_side: int = 256  # resize before the center crop
    audio_sample_rate: int = 16000
    opensmile_window_s: float = 0.32
    opensmile_hop_s: float = 0.04
    vggish_segment_s: float = 0.96
    subsegments: int = 1  # >1 splits each clip into equal parts first

    def frame_rate(self, duration_s: float) -> int:
        """Decode rate for a clip of t_i seconds: ceil(T / t_i)."""
        if duration_s <= 0:
            raise ValueError(f"duration must be positive, got {duration_s}")
        return math.ceil(self.frames_per_clip / duration_s)


PROFILES: dict[str, ExtractionConfig] = {
    # 8-12 s excerpts: 64 frames each
    "eimt16": ExtractionConfig(frames_per_clip=64),
    # 5 s segments at 25 fps: all 125 frames
    "cognimuse": ExtractionConfig(frames_per_clip=125),
    # 2-3 s sub-segments (clips split in 4): 16 frames each
    "subsegment": ExtractionConfig(frames_per_clip=16, subsegments=4),
}


def get_profile(name: str) -> ExtractionConfig:
    if name not in PROFILES:
        raise ValueError(f"unknown profile {name!r}; expected one of {sorted(PROFILES)}")
    return PROFILES[name]
