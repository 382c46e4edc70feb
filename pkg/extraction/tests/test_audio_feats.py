"""Audio feature sets: dimensions, silence handling, averaging, determinism."""

import numpy as np
import pytest

from aan_extract.audio_feats import (
    OPENSMILE_DIM,
    VGGISH_DIM,
    VGGishFeatures,
    load_wav,
    log_mel_patches,
    opensmile_features,
    opensmile_window_vectors,
)

SR = 16000


def _tone(seconds: float, freq: float = 220.0, noise: float = 0.02, seed: int = 0):
    rng = np.random.default_rng(seed)
    t = np.arange(int(seconds * SR)) / SR
    return 0.4 * np.sin(2 * np.pi * freq * t) + noise * rng.standard_normal(len(t))


class TestOpenSmileStyle:
    def test_dimension(self):
        assert opensmile_features(_tone(1.5), SR).shape == (OPENSMILE_DIM,)

    def test_silent_audio_is_finite(self):
        feats = opensmile_features(np.zeros(SR), SR)
        assert feats.shape == (OPENSMILE_DIM,)
        assert np.all(np.isfinite(feats))

    def test_deterministic(self):
        audio = _tone(1.0)
        np.testing.assert_array_equal(
            opensmile_features(audio, SR), opensmile_features(audio, SR)
        )

    def test_windows_are_averaged_elementwise(self):
        audio = _tone(1.2)
        windows = opensmile_window_vectors(audio, SR)
        assert windows.ndim == 2 and windows.shape[1] == OPENSMILE_DIM
        assert windows.shape[0] > 5
        np.testing.assert_allclose(
            opensmile_features(audio, SR), windows.mean(axis=0), atol=1e-12
        )

    def test_pitch_detected_for_tone(self):
        # layout is functional-major: value (functional f, descriptor l) sits at
        # f*34 + l; the F0 envelope is descriptor 32 and amean is functional 2
        feats = opensmile_features(_tone(1.0, freq=220.0, noise=0.0), SR)
        assert feats[2 * 34 + 32] == pytest.approx(220.0, rel=0.1)


class TestVGGish:
    def test_patch_geometry(self):
        patches = log_mel_patches(_tone(2.0), SR)
        assert patches.shape == (2, 96, 64)

    def test_short_audio_padded_to_one_patch(self):
        patches = log_mel_patches(_tone(0.2), SR)
        assert patches.shape == (1, 96, 64)

    def test_embedding_dimension(self):
        net = VGGishFeatures()
        emb = net(_tone(1.5), SR)
        assert emb.shape == (VGGISH_DIM,)
        assert np.all(np.isfinite(emb))

    def test_silent_audio_finite(self):
        net = VGGishFeatures()
        emb = net(np.zeros(SR // 2), SR)
        assert np.all(np.isfinite(emb))


class TestWavLoading:
    def test_resamples_and_normalizes(self, tmp_path):
        from scipy.io import wavfile

        sr_in = 22050
        t = np.arange(sr_in) / sr_in
        tone = (0.5 * np.sin(2 * np.pi * 440 * t) * 32767).astype(np.int16)
        path = tmp_path / "t.wav"
        wavfile.write(str(path), sr_in, tone)
        x = load_wav(path, SR)
        assert abs(len(x) - SR) <= 2
        assert np.abs(x).max() <= 1.0

    def test_stereo_collapsed(self, tmp_path):
        from scipy.io import wavfile

        stereo = (np.random.default_rng(0).uniform(-0.5, 0.5, (SR, 2)) * 32767).astype(np.int16)
        path = tmp_path / "s.wav"
        wavfile.write(str(path), SR, stereo)
        x = load_wav(path, SR)
        assert x.ndim == 1
