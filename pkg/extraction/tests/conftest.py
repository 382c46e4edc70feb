"""Shared fixtures: a deterministic synthetic movie clip and warm extractors."""

import json

import cv2
import numpy as np
import pytest
from scipy.io import wavfile

from aan_extract.config import get_profile
from aan_extract.records import ClipFeatureExtractor

CLIP_SECONDS = 10
CLIP_FPS = 24
CLIP_W, CLIP_H = 400, 300
AUDIO_SR = 22050


def _render_frame(t: float) -> np.ndarray:
    """A moving gradient with a bright bouncing square; content varies over time."""
    y = np.linspace(0, 1, CLIP_H)[:, None]
    x = np.linspace(0, 1, CLIP_W)[None, :]
    r = (127 + 120 * np.sin(2 * np.pi * (x + 0.2 * t))) * y
    g = (127 + 120 * np.cos(2 * np.pi * (y + 0.1 * t))) * (1 - x)
    b = np.full((CLIP_H, CLIP_W), 40.0) + 50 * np.sin(2 * np.pi * 0.5 * t)
    frame = np.stack([b, g * np.ones_like(b), r], axis=-1)
    cx = int((0.2 + 0.6 * (0.5 + 0.5 * np.sin(2 * np.pi * 0.3 * t))) * CLIP_W)
    cy = int((0.3 + 0.4 * (0.5 + 0.5 * np.cos(2 * np.pi * 0.23 * t))) * CLIP_H)
    frame[max(0, cy - 20) : cy + 20, max(0, cx - 20) : cx + 20] = 240.0
    return np.clip(frame, 0, 255).astype(np.uint8)


def write_sample_clip(directory, clip_id: str, seconds: int = CLIP_SECONDS) -> None:
    writer = cv2.VideoWriter(
        str(directory / f"{clip_id}.mp4"), cv2.VideoWriter_fourcc(*"mp4v"), CLIP_FPS, (CLIP_W, CLIP_H)
    )
    assert writer.isOpened()
    for i in range(seconds * CLIP_FPS):
        writer.write(_render_frame(i / CLIP_FPS))
    writer.release()

    t = np.arange(seconds * AUDIO_SR) / AUDIO_SR
    tone = 0.4 * np.sin(2 * np.pi * 220 * t) * (0.6 + 0.4 * np.sin(2 * np.pi * 0.8 * t))
    tone += 0.15 * np.sin(2 * np.pi * 587 * t)
    wavfile.write(str(directory / f"{clip_id}.wav"), AUDIO_SR, (tone * 32767).astype(np.int16))


@pytest.fixture(scope="session")
def clips_dir(tmp_path_factory):
    directory = tmp_path_factory.mktemp("clips")
    write_sample_clip(directory, "clipA")
    manifest = [
        {
            "clip_id": "clipA",
            "movie_id": "movieA",
            "segment_index": 0,
            "duration_s": float(CLIP_SECONDS),
            "arousal": 2.5,
            "valence": 3.0,
            "label_range": [0, 5],
        }
    ]
    (directory / "manifest.json").write_text(json.dumps(manifest))
    return directory


@pytest.fixture(scope="session")
def eimt_extractor():
    return ClipFeatureExtractor(get_profile("eimt16"))
