"""Audio features: an emobase2010-shaped functional set and VGGish embeddings.

The 1,582-dimensional set mirrors the emobase2010 layout: 34 low-level
descriptors (loudness, 15 MFCCs, 8 log mel bands, 8 line spectral pair
frequencies, pitch envelope, voicing probability) and their deltas with 21
statistical functionals each, 4 pitch-based descriptors (F0, local jitter,
delta-delta jitter, local shimmer) and deltas with 19 functionals, plus the
number of pitch onsets and the window duration:
34*2*21 + 4*2*19 + 2 = 1582. Descriptors are computed on a 25 ms / 10 ms
grid; functionals summarize each 320 ms window (40 ms hop) and are averaged
element-wise over windows. This reimplements the published layout with
standard signal processing; it is not bit-compatible with the original
toolkit.

VGGish embeddings use the canonical log-mel frontend (16 kHz, 25 ms / 10 ms,
64 bands over 125-7500 Hz, log offset 0.01) over 0.96 s patches.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
from scipy.io import wavfile
from scipy.signal import resample_poly

from .weights import load_or_seed

OPENSMILE_DIM = 1582
VGGISH_DIM = 128

_SUBFRAME_S = 0.025
_SUBHOP_S = 0.010
_F0_MIN, _F0_MAX = 50.0, 500.0
_VOICING_THRESHOLD = 0.45


def load_wav(path: str | Path, target_sr: int) -> np.ndarray:
    """Mono float64 samples in [-1, 1], resampled to target_sr."""
    sr, data = wavfile.read(str(path))
    x = np.asarray(data, dtype=np.float64)
    if x.ndim == 2:
        x = x.mean(axis=1)
    if np.issubdtype(np.asarray(data).dtype, np.integer):
        x = x / float(np.iinfo(np.asarray(data).dtype).max)
    if sr != target_sr:
        from math import gcd

        g = gcd(int(sr), int(target_sr))
        x = resample_poly(x, target_sr // g, sr // g)
    return x


def _frame(x: np.ndarray, frame_len: int, hop: int) -> np.ndarray:
    if len(x) < frame_len:
        x = np.pad(x, (0, frame_len - len(x)))
    n = 1 + (len(x) - frame_len) // hop
    idx = np.arange(frame_len)[None, :] + hop * np.arange(n)[:, None]
    return x[idx]


def _mel_filterbank(n_mels: int, n_fft: int, sr: int, fmin: float, fmax: float) -> np.ndarray:
    def hz_to_mel(f):
        return 1127.0 * np.log1p(np.asarray(f) / 700.0)

    def mel_to_hz(m):
        return 700.0 * (np.expm1(np.asarray(m) / 1127.0))

    mel_pts = np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2)
    hz_pts = mel_to_hz(mel_pts)
    bins = np.floor((n_fft + 1) * hz_pts / sr).astype(int)
    bank = np.zeros((n_mels, n_fft // 2 + 1))
    for m in range(1, n_mels + 1):
        lo, mid, hi = bins[m - 1], bins[m], bins[m + 1]
        for k in range(lo, mid):
            if mid > lo:
                bank[m - 1, k] = (k - lo) / (mid - lo)
        for k in range(mid, hi):
            if hi > mid:
                bank[m - 1, k] = (hi - k) / (hi - mid)
    return bank


def _dct_matrix(n_out: int, n_in: int) -> np.ndarray:
    k = np.arange(n_out)[:, None]
    n = np.arange(n_in)[None, :]
    mat = np.cos(np.pi * k * (2 * n + 1) / (2 * n_in)) * np.sqrt(2.0 / n_in)
    mat[0] /= np.sqrt(2.0)
    return mat


def _lpc(x: np.ndarray, order: int) -> np.ndarray:
    n = len(x)
    r = np.array([float(x[: n - k] @ x[k:]) for k in range(order + 1)])
    a = np.zeros(order + 1)
    a[0] = 1.0
    err = r[0] + 1e-12
    for i in range(1, order + 1):
        acc = r[i] + a[1:i] @ r[1:i][::-1]
        k = -acc / err
        new = a.copy()
        new[1:i] = a[1:i] + k * a[i - 1 : 0 : -1]
        new[i] = k
        a = new
        err *= max(1.0 - k * k, 1e-12)
    return a


def _lsp_frequencies(a: np.ndarray, order: int) -> np.ndarray:
    p = np.concatenate([a, [0.0]]) + np.concatenate([[0.0], a[::-1]])
    q = np.concatenate([a, [0.0]]) - np.concatenate([[0.0], a[::-1]])
    angles = []
    for poly in (p, q):
        roots = np.roots(poly)
        ang = np.angle(roots)
        angles.extend(ang[(ang > 1e-4) & (ang < np.pi - 1e-4)])
    angles = np.sort(np.asarray(angles))
    out = np.zeros(order)
    out[: min(order, len(angles))] = angles[:order]
    return out / np.pi


def _pitch_autocorr(frame: np.ndarray, sr: int) -> tuple[float, float]:
    """(F0 in Hz or 0, voicing strength in [0, 1]) via normalized autocorrelation."""
    energy = float(frame @ frame)
    if energy < 1e-8:
        return 0.0, 0.0
    lag_min = int(sr / _F0_MAX)
    lag_max = min(int(sr / _F0_MIN), len(frame) - 1)
    ac = np.correlate(frame, frame, "full")[len(frame) - 1 :]
    segment = ac[lag_min : lag_max + 1]
    best = int(np.argmax(segment))
    strength = float(segment[best] / (ac[0] + 1e-12))
    if strength < _VOICING_THRESHOLD:
        return 0.0, max(strength, 0.0)
    return sr / (lag_min + best), strength


def _delta(contour: np.ndarray) -> np.ndarray:
    """Regression delta with +-2 frame window along axis 0."""
    padded = np.pad(contour, ((2, 2), (0, 0)), mode="edge")
    return (
        2.0 * (padded[4:] - padded[:-4]) + (padded[3:-1] - padded[1:-3])
    ) / 10.0


class _LLDExtractor:
    """25 ms / 10 ms descriptor contours for a 16 kHz signal."""

    def __init__(self, sr: int):
        self.sr = sr
        self.frame_len = int(round(_SUBFRAME_S * sr))
        self.hop = int(round(_SUBHOP_S * sr))
        self.n_fft = 512
        self.window = np.hamming(self.frame_len)
        self.mel26 = _mel_filterbank(26, self.n_fft, sr, 20.0, sr / 2.0)
        self.mel8 = _mel_filterbank(8, self.n_fft, sr, 20.0, sr / 2.0)
        self.dct = _dct_matrix(15, 26)

    def __call__(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(core contour [n, 34], pitch contour [n, 4 + voiced flag])."""
        frames = _frame(x, self.frame_len, self.hop)
        windowed = frames * self.window
        spectrum = np.abs(np.fft.rfft(windowed, self.n_fft)) ** 2
        loudness = np.sqrt(np.mean(frames**2, axis=1))
        mel26 = np.log(spectrum @ self.mel26.T + 1e-10)
        mfcc = mel26 @ self.dct.T  # [n, 15]
        logmel8 = np.log(spectrum @ self.mel8.T + 1e-10)

        n = frames.shape[0]
        lsp = np.zeros((n, 8))
        f0 = np.zeros(n)
        voicing = np.zeros(n)
        for i in range(n):
            emphasized = np.append(frames[i, 0], frames[i, 1:] - 0.97 * frames[i, :-1])
            lsp[i] = _lsp_frequencies(_lpc(emphasized * self.window, 8), 8)
            f0[i], voicing[i] = _pitch_autocorr(frames[i], self.sr)

        # pitch envelope: last voiced value held through unvoiced stretches
        env = f0.copy()
        for i in range(1, n):
            if env[i] == 0.0:
                env[i] = env[i - 1]

        voiced = f0 > 0
        jitter = np.zeros(n)
        ddp = np.zeros(n)
        shimmer = np.zeros(n)
        mean_f0 = f0[voiced].mean() if voiced.any() else 0.0
        mean_amp = loudness.mean() + 1e-10
        for i in range(1, n):
            if voiced[i] and voiced[i - 1] and mean_f0 > 0:
                jitter[i] = abs(f0[i] - f0[i - 1]) / mean_f0
                shimmer[i] = abs(loudness[i] - loudness[i - 1]) / mean_amp
        for i in range(1, n):
            ddp[i] = abs(jitter[i] - jitter[i - 1])

        core = np.column_stack([loudness[:, None], mfcc, logmel8, lsp, env[:, None], voicing[:, None]])
        pitch = np.column_stack([f0, jitter, ddp, shimmer, voiced.astype(np.float64)])
        return core, pitch


_CORE_DIM = 34
_PITCH_DIM = 4


def _functionals_21(contour: np.ndarray) -> np.ndarray:
    """21 statistics per column of an [n, d] contour matrix."""
    n, d = contour.shape
    pos = np.arange(n, dtype=np.float64)
    rel = pos / max(n - 1, 1)
    out = np.empty((21, d))
    out[0] = rel[np.argmax(contour, axis=0)]  # maxPos
    out[1] = rel[np.argmin(contour, axis=0)]  # minPos
    mean = contour.mean(axis=0)
    out[2] = mean
    centered_t = pos - pos.mean()
    denom = float(centered_t @ centered_t) + 1e-12
    slope = (centered_t @ (contour - mean)) / denom
    offset = mean - slope * pos.mean()
    out[3] = slope  # linregc1
    out[4] = offset  # linregc2
    fit = pos[:, None] * slope + offset
    resid = contour - fit
    out[5] = np.abs(resid).mean(axis=0)  # linregerrA
    out[6] = (resid**2).mean(axis=0)  # linregerrQ
    std = contour.std(axis=0)
    out[7] = std
    safe = np.where(std < 1e-12, 1.0, std)
    z = (contour - mean) / safe
    out[8] = np.where(std < 1e-12, 0.0, (z**3).mean(axis=0))  # skewness
    out[9] = np.where(std < 1e-12, 0.0, (z**4).mean(axis=0))  # kurtosis
    q1, q2, q3 = np.percentile(contour, [25, 50, 75], axis=0)
    out[10], out[11], out[12] = q1, q2, q3
    out[13], out[14], out[15] = q2 - q1, q3 - q2, q3 - q1
    p1, p99 = np.percentile(contour, [1, 99], axis=0)
    out[16], out[17] = p1, p99
    out[18] = p99 - p1
    lo = contour.min(axis=0)
    rng = contour.max(axis=0) - lo
    out[19] = (contour > lo + 0.75 * rng).mean(axis=0)  # upleveltime75
    out[20] = (contour > lo + 0.90 * rng).mean(axis=0)  # upleveltime90
    return out


def _functionals_19(contour: np.ndarray) -> np.ndarray:
    return _functionals_21(contour)[:19]


def opensmile_window_vectors(
    audio: np.ndarray, sr: int, window_s: float = 0.32, hop_s: float = 0.04
) -> np.ndarray:
    """One 1,582-vector per 320 ms analysis window (40 ms hop): [n_windows, 1582]."""
    x = np.asarray(audio, dtype=np.float64)
    extractor = _LLDExtractor(sr)
    core, pitch = extractor(x)
    d_core = _delta(core)
    d_pitch = _delta(pitch[:, :_PITCH_DIM])

    frames_per_window = max(2, int(round(window_s / _SUBHOP_S)))
    frames_per_hop = max(1, int(round(hop_s / _SUBHOP_S)))
    n = core.shape[0]
    starts = list(range(0, max(n - 1, 1), frames_per_hop))

    vectors = []
    for start in starts:
        stop = min(start + frames_per_window, n)
        if stop - start < 2:
            break
        c = core[start:stop]
        p = pitch[start:stop, :_PITCH_DIM]
        voiced = pitch[start:stop, _PITCH_DIM]
        parts = [
            _functionals_21(c).ravel(),
            _functionals_21(d_core[start:stop]).ravel(),
            _functionals_19(p).ravel(),
            _functionals_19(d_pitch[start:stop]).ravel(),
            [float(np.sum(np.diff(voiced, prepend=0.0) > 0))],  # pitch onsets
            [(stop - start) * _SUBHOP_S],  # duration in seconds
        ]
        vectors.append(np.concatenate([np.asarray(p).ravel() for p in parts]))
    if not vectors:
        return np.zeros((1, OPENSMILE_DIM))
    stacked = np.stack(vectors)
    assert stacked.shape[1] == OPENSMILE_DIM, stacked.shape
    return stacked


def opensmile_features(audio: np.ndarray, sr: int, window_s: float = 0.32, hop_s: float = 0.04) -> np.ndarray:
    """1,582 statistics, element-wise averaged over all analysis windows."""
    return opensmile_window_vectors(audio, sr, window_s, hop_s).mean(axis=0)


# ---------------------------------------------------------------------------
# VGGish
# ---------------------------------------------------------------------------


class VGGishNet(nn.Module):
    def __init__(self):
        super().__init__()
        self.features = nn.Sequential(
            nn.Conv2d(1, 64, 3, padding=1), nn.ReLU(inplace=True), nn.MaxPool2d(2, 2),
            nn.Conv2d(64, 128, 3, padding=1), nn.ReLU(inplace=True), nn.MaxPool2d(2, 2),
            nn.Conv2d(128, 256, 3, padding=1), nn.ReLU(inplace=True),
            nn.Conv2d(256, 256, 3, padding=1), nn.ReLU(inplace=True), nn.MaxPool2d(2, 2),
            nn.Conv2d(256, 512, 3, padding=1), nn.ReLU(inplace=True),
            nn.Conv2d(512, 512, 3, padding=1), nn.ReLU(inplace=True), nn.MaxPool2d(2, 2),
        )
        self.embeddings = nn.Sequential(
            nn.Linear(512 * 6 * 4, 4096), nn.ReLU(inplace=True),
            nn.Linear(4096, 4096), nn.ReLU(inplace=True),
            nn.Linear(4096, VGGISH_DIM),
        )

    def forward(self, x):
        x = self.features(x)
        x = x.permute(0, 2, 3, 1).flatten(1)  # canonical VGGish flatten order
        return self.embeddings(x)


def log_mel_patches(audio: np.ndarray, sr: int, segment_s: float = 0.96) -> np.ndarray:
    """Non-overlapping [96, 64] log-mel patches, zero-padded to one patch minimum."""
    x = np.asarray(audio, dtype=np.float64)
    frame_len = int(round(_SUBFRAME_S * sr))
    hop = int(round(_SUBHOP_S * sr))
    frames_per_patch = int(round(segment_s / _SUBHOP_S))  # 96
    min_samples = frame_len + (frames_per_patch - 1) * hop
    if len(x) < min_samples:
        x = np.pad(x, (0, min_samples - len(x)))
    frames = _frame(x, frame_len, hop)
    window = np.hanning(frame_len)
    spectrum = np.abs(np.fft.rfft(frames * window, 512)) ** 2
    bank = _mel_filterbank(64, 512, sr, 125.0, 7500.0)
    logmel = np.log(spectrum @ bank.T + 0.01)  # [n, 64]
    n_patches = logmel.shape[0] // frames_per_patch
    patches = logmel[: n_patches * frames_per_patch].reshape(n_patches, frames_per_patch, 64)
    return patches


class VGGishFeatures:
    def __init__(self, weights_dir=None, seed: int = 104):
        net = VGGishNet()
        self.pretrained = load_or_seed(net, "vggish", weights_dir, seed)
        self.net = net.eval()

    @torch.no_grad()
    def __call__(self, audio: np.ndarray, sr: int) -> np.ndarray:
        patches = log_mel_patches(audio, sr)
        batch = torch.from_numpy(patches.astype(np.float32)).unsqueeze(1)
        outs = []
        for chunk in torch.split(batch, 16):
            outs.append(self.net(chunk))
        return torch.cat(outs).mean(dim=0).numpy().astype(np.float64)


def vggish_features(audio: np.ndarray, sr: int, weights_dir=None) -> np.ndarray:
    return VGGishFeatures(weights_dir)(audio, sr)
