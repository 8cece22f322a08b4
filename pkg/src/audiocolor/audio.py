"""WAV ingest and the log-mel spectrogram front-end.

Ingest accepts 16-bit PCM WAV, mono or downmixed by averaging, and resamples
to 16 kHz. The spectrogram uses 64 mel bands over 25 ms Hann windows with a
10 ms hop and log(x + 1e-6) compression.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.io import wavfile
from scipy.signal import resample_poly

from .errors import ValidationError

TARGET_SR = 16_000
LOG_FLOOR = 1e-6


@dataclass
class SpectrogramConfig:
    sample_rate: int = TARGET_SR
    n_mels: int = 64
    win_ms: float = 25.0
    hop_ms: float = 10.0
    n_fft: int = 512
    fmin: float = 0.0
    fmax: float | None = None  # defaults to sample_rate / 2

    @property
    def win_length(self) -> int:
        return int(round(self.sample_rate * self.win_ms / 1000.0))

    @property
    def hop_length(self) -> int:
        return int(round(self.sample_rate * self.hop_ms / 1000.0))


@dataclass
class Spectrogram:
    """Log-mel magnitudes, time-major (T x M)."""

    values: np.ndarray
    sample_rate: int
    n_mels: int
    hop: int

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[0] < 1:
            raise ValidationError(f"spectrogram must be TxM with T>=1, got {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValidationError("spectrogram contains non-finite values")


def load_wav(path) -> tuple[np.ndarray, int]:
    """Read 16-bit PCM WAV -> (float64 mono in [-1, 1], sample rate)."""
    sr, data = wavfile.read(path)
    if data.dtype != np.int16:
        raise ValidationError(f"{path}: expected 16-bit PCM WAV, got dtype {data.dtype}")
    x = data.astype(np.float64) / 32768.0
    if x.ndim == 2:
        x = x.mean(axis=1)
    return x, int(sr)


def save_wav(path, wave: np.ndarray, sr: int) -> None:
    q = np.clip(np.rint(np.asarray(wave) * 32767.0), -32768, 32767).astype(np.int16)
    wavfile.write(path, sr, q)


def resample_to_target(wave: np.ndarray, sr: int, target: int = TARGET_SR) -> np.ndarray:
    if sr == target:
        return np.asarray(wave, dtype=np.float64)
    g = np.gcd(int(sr), int(target))
    return resample_poly(np.asarray(wave, dtype=np.float64), target // g, sr // g)


def ingest_wav(path, target: int = TARGET_SR) -> np.ndarray:
    wave, sr = load_wav(path)
    return resample_to_target(wave, sr, target)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(cfg: SpectrogramConfig) -> np.ndarray:
    """Triangular mel filters, (n_mels x (n_fft//2 + 1))."""
    fmax = cfg.fmax if cfg.fmax is not None else cfg.sample_rate / 2.0
    mel_pts = np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(fmax), cfg.n_mels + 2)
    hz_pts = mel_to_hz(mel_pts)
    fft_freqs = np.fft.rfftfreq(cfg.n_fft, d=1.0 / cfg.sample_rate)
    fb = np.zeros((cfg.n_mels, fft_freqs.size))
    for m in range(cfg.n_mels):
        lo, ctr, hi = hz_pts[m], hz_pts[m + 1], hz_pts[m + 2]
        up = (fft_freqs - lo) / max(ctr - lo, 1e-12)
        down = (hi - fft_freqs) / max(hi - ctr, 1e-12)
        fb[m] = np.maximum(0.0, np.minimum(up, down))
    return fb


def compute_spectrogram(wave: np.ndarray, cfg: SpectrogramConfig | None = None) -> Spectrogram:
    """Log-mel spectrogram of a mono waveform already at cfg.sample_rate.

    Short or empty clips are zero-padded to one full window; silence yields a
    valid all-floor spectrogram rather than an error.
    """
    cfg = cfg or SpectrogramConfig()
    x = np.asarray(wave, dtype=np.float64)
    if x.ndim != 1:
        raise ValidationError(f"waveform must be mono 1-D, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValidationError("waveform contains non-finite values")
    win, hop = cfg.win_length, cfg.hop_length
    if x.size < win:
        x = np.pad(x, (0, win - x.size))
    n_frames = 1 + (x.size - win) // hop
    window = np.hanning(win)
    frames = np.lib.stride_tricks.sliding_window_view(x, win)[::hop][:n_frames]
    spec = np.abs(np.fft.rfft(frames * window, n=cfg.n_fft, axis=1)) ** 2
    mel = spec @ mel_filterbank(cfg).T
    return Spectrogram(values=np.log(mel + LOG_FLOOR), sample_rate=cfg.sample_rate,
                       n_mels=cfg.n_mels, hop=hop)
