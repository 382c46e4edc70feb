"""Frame extraction: decode, resample to one frame per t_i/T seconds, crop."""

from __future__ import annotations

from pathlib import Path

import cv2
import numpy as np


class ExtractionError(RuntimeError):
    """Media could not be decoded or yields no frames."""


def _scale_and_center_crop(frame: np.ndarray, shorter: int, crop: int) -> np.ndarray:
    h, w = frame.shape[:2]
    scale = shorter / min(h, w)
    if scale != 1.0:
        frame = cv2.resize(frame, (max(crop, round(w * scale)), max(crop, round(h * scale))))
    h, w = frame.shape[:2]
    top = (h - crop) // 2
    left = (w - crop) // 2
    return frame[top : top + crop, left : left + crop]


def decode_video(path: str | Path) -> tuple[list[np.ndarray], float]:
    """All frames (RGB uint8) plus the native frame rate."""
    cap = cv2.VideoCapture(str(path))
    if not cap.isOpened():
        raise ExtractionError(f"cannot open video {path}")
    fps = cap.get(cv2.CAP_PROP_FPS) or 25.0
    frames = []
    while True:
        ok, frame = cap.read()
        if not ok:
            break
        frames.append(cv2.cvtColor(frame, cv2.COLOR_BGR2RGB))
    cap.release()
    if not frames:
        raise ExtractionError(f"no decodable frames in {path}")
    return frames, float(fps)


def sample_frames(
    frames: list[np.ndarray],
    native_fps: float,
    target_count: int,
    start_s: float = 0.0,
    duration_s: float | None = None,
) -> list[np.ndarray]:
    """Pick target_count frames at one per duration/target_count seconds."""
    total = len(frames) / native_fps
    if duration_s is None:
        duration_s = total - start_s
    step = duration_s / target_count
    picked = []
    for k in range(target_count):
        t = start_s + k * step
        idx = min(len(frames) - 1, int(round(t * native_fps)))
        picked.append(frames[idx])
    return picked


def extract_frames(path: str | Path, config, start_s: float = 0.0, duration_s: float | None = None):
    """Exactly config.frames_per_clip center-cropped RGB frames of crop_size^2."""
    frames, fps = decode_video(path)
    picked = sample_frames(frames, fps, config.frames_per_clip, start_s, duration_s)
    cropped = [
        _scale_and_center_crop(f, config.scale_shorter_side, config.crop_size) for f in picked
    ]
    return np.stack(cropped)  # [T, crop, crop, 3] uint8
