"""Glue: run every extractor over manifest clips and emit the dataset formats."""

from __future__ import annotations

from dataclasses import replace
from pathlib import Path

import numpy as np

from aan import dataio as D

from .audio_feats import VGGishFeatures, load_wav, opensmile_features
from .config import ExtractionConfig
from .frames import ExtractionError, _scale_and_center_crop, decode_video, sample_frames
from .video_nets import FlowNetSFeatures, I3DFeatures, ResNet50Features

VIDEO_SUFFIXES = (".mp4", ".avi", ".mkv", ".mov")


class ClipFeatureExtractor:
    """Holds the five extractors; clips are processed independently."""

    def __init__(self, config: ExtractionConfig, weights_dir: str | Path | None = None):
        self.config = config
        self.resnet = ResNet50Features(weights_dir)
        self.i3d = I3DFeatures(weights_dir)
        self.flownets = FlowNetSFeatures(weights_dir)
        self.vggish = VGGishFeatures(weights_dir)

    def _find_media(self, clips_dir: Path, clip_id: str) -> tuple[Path, Path | None]:
        for suffix in VIDEO_SUFFIXES:
            candidate = clips_dir / f"{clip_id}{suffix}"
            if candidate.exists():
                audio = clips_dir / f"{clip_id}.wav"
                return candidate, audio if audio.exists() else None
        raise ExtractionError(f"no video file for clip {clip_id!r} in {clips_dir}")

    def extract_from_media(
        self,
        frames: list[np.ndarray],
        fps: float,
        audio: np.ndarray,
        clip_id: str,
        start_s: float = 0.0,
        duration_s: float | None = None,
    ) -> D.FeatureRecord:
        """Build one record from decoded media (frames RGB uint8, mono audio)."""
        cfg = self.config
        total_s = len(frames) / fps
        if duration_s is None:
            duration_s = total_s - start_s
        picked = sample_frames(frames, fps, cfg.frames_per_clip, start_s, duration_s)
        stack = np.stack(
            [_scale_and_center_crop(f, cfg.scale_shorter_side, cfg.crop_size) for f in picked]
        )
        lo = int(start_s / total_s * len(audio)) if total_s > 0 else 0
        hi = int(min(start_s + duration_s, total_s) / total_s * len(audio)) if total_s > 0 else len(audio)
        chunk = audio[lo:hi] if hi > lo else np.zeros(int(cfg.audio_sample_rate * duration_s))

        def storable(vec: np.ndarray) -> np.ndarray:
            # records are stored as float32; round once so files round-trip bit-exactly
            return np.asarray(vec, dtype=np.float32).astype(np.float64)

        record = D.FeatureRecord(
            clip_id=clip_id,
            rgb_resnet=storable(self.resnet(stack)),
            rgb_i3d=storable(self.i3d(stack)),
            flow=storable(self.flownets(stack)),
            opensmile=storable(
                opensmile_features(
                    chunk, cfg.audio_sample_rate, cfg.opensmile_window_s, cfg.opensmile_hop_s
                )
            ),
            vggish=storable(self.vggish(chunk, cfg.audio_sample_rate)),
        )
        record.validate()
        return record

    def extract_clip(self, video_path: str | Path, audio_path: str | Path | None, clip_id: str) -> D.FeatureRecord:
        frames, fps = decode_video(video_path)
        audio = self._load_audio(audio_path, len(frames) / fps)
        return self.extract_from_media(frames, fps, audio, clip_id)

    def _load_audio(self, audio_path: str | Path | None, duration_s: float) -> np.ndarray:
        if audio_path is None:
            return np.zeros(max(1, int(self.config.audio_sample_rate * duration_s)))
        return load_wav(audio_path, self.config.audio_sample_rate)

    def process_manifest(
        self, clips_dir: str | Path, manifest: list[D.ClipManifest]
    ) -> tuple[list[D.ClipManifest], list[D.FeatureRecord]]:
        """Extract every clip; with subsegments > 1, split clips first.

        Sub-segments inherit the parent's labels and become separate clips
        (ids suffixed _sub<k>), matching how short-excerpt datasets feed the
        temporal model.
        """
        clips_dir = Path(clips_dir)
        out_rows: list[D.ClipManifest] = []
        out_records: list[D.FeatureRecord] = []
        parts = self.config.subsegments
        for row in manifest:
            video, audio_path = self._find_media(clips_dir, row.clip_id)
            frames, fps = decode_video(video)
            audio = self._load_audio(audio_path, len(frames) / fps)
            total_s = len(frames) / fps
            if parts == 1:
                out_rows.append(row)
                out_records.append(self.extract_from_media(frames, fps, audio, row.clip_id))
                continue
            piece = total_s / parts
            for k in range(parts):
                sub_id = f"{row.clip_id}_sub{k}"
                out_rows.append(
                    replace(
                        row,
                        clip_id=sub_id,
                        segment_index=row.segment_index * parts + k,
                        duration_s=piece,
                    )
                )
                out_records.append(
                    self.extract_from_media(
                        frames, fps, audio, sub_id, start_s=k * piece, duration_s=piece
                    )
                )
        return out_rows, out_records


def emit_records(
    out_dir: str | Path,
    manifest: list[D.ClipManifest],
    records: list[D.FeatureRecord],
    fmt: str = "both",
) -> None:
    """Write manifest + feature files and re-validate through the dataset loader."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    D.save_manifest(out_dir / "manifest.json", manifest)
    D.save_features(out_dir, manifest, records, fmt=fmt)
    loaded = D.load_features(out_dir, D.load_manifest(out_dir / "manifest.json"))
    if len(loaded) != len(manifest):
        raise ExtractionError(f"round trip lost clips: {len(loaded)} of {len(manifest)}")
