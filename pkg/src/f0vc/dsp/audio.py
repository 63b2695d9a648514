"""Audio ingestion, mel analysis, and Griffin-Lim synthesis.

Framing convention everywhere: frame t covers samples [t*hop, t*hop + window),
no implicit padding, so a signal of N samples yields
1 + floor((N - window) / hop) frames.  Mel values are natural-log amplitudes
floored at MEL_FLOOR.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.io import wavfile
from scipy.signal import resample_poly

from ..errors import AudioError, ConfigError

MEL_FLOOR = 1e-5


@dataclass(frozen=True)
class AudioConfig:
    sample_rate: int = 16000
    fft_size: int = 1024
    hop: int = 256
    window: int = 1024
    mel_bins: int = 80
    mel_fmin: float = 90.0
    mel_fmax: float = 7600.0
    f0_min: float = 50.0
    f0_max: float = 600.0
    voicing_threshold: float = 0.45

    def __post_init__(self):
        if not (0 < self.hop <= self.window <= self.fft_size):
            raise ConfigError(
                f"need hop <= window <= fft_size, got {self.hop}/{self.window}/{self.fft_size}"
            )
        if self.mel_bins != 80:
            raise ConfigError(f"mel_bins must be 80 to match the model input, got {self.mel_bins}")
        if not (0 < self.f0_min < self.f0_max < self.sample_rate / 2):
            raise ConfigError(f"bad f0 range [{self.f0_min}, {self.f0_max}]")
        if not (0 <= self.mel_fmin < self.mel_fmax <= self.sample_rate / 2):
            raise ConfigError(f"bad mel range [{self.mel_fmin}, {self.mel_fmax}]")

    @property
    def frames_per_second(self) -> float:
        return self.sample_rate / self.hop

    def frame_count(self, n_samples: int) -> int:
        if n_samples < self.window:
            raise AudioError(f"signal of {n_samples} samples is shorter than one window ({self.window})")
        return 1 + (n_samples - self.window) // self.hop


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise AudioError(f"waveform must be mono 1-D, got shape {self.samples.shape}")
        if not np.isfinite(self.samples).all():
            raise AudioError("waveform contains non-finite samples")

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass
class MelSpectrogram:
    frames: np.ndarray  # (T, mel_bins) natural-log amplitudes
    config: AudioConfig

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 2 or self.frames.shape[1] != self.config.mel_bins:
            raise AudioError(f"mel frames must be (T, {self.config.mel_bins}), got {self.frames.shape}")
        if not np.isfinite(self.frames).all():
            raise AudioError("mel spectrogram contains non-finite values")

    def __len__(self) -> int:
        return self.frames.shape[0]


@dataclass
class F0Contour:
    f0_hz: np.ndarray
    voiced: np.ndarray

    def __post_init__(self):
        self.f0_hz = np.asarray(self.f0_hz, dtype=np.float64)
        self.voiced = np.asarray(self.voiced, dtype=bool)
        if self.f0_hz.shape != self.voiced.shape or self.f0_hz.ndim != 1:
            raise AudioError(
                f"contour arrays must be matching 1-D, got {self.f0_hz.shape} vs {self.voiced.shape}"
            )

    def __len__(self) -> int:
        return len(self.f0_hz)

    def voiced_log_f0(self) -> np.ndarray:
        return np.log(self.f0_hz[self.voiced])


def load_wav(path, cfg: AudioConfig) -> Waveform:
    """Read a mono PCM/float WAV, normalize to [-1, 1], resample to cfg rate."""
    p = Path(path)
    if not p.exists():
        raise AudioError(f"no such audio file: {p}")
    try:
        rate, data = wavfile.read(str(p))
    except ValueError as exc:
        raise AudioError(f"{p}: unsupported WAV encoding: {exc}") from exc
    if data.ndim != 1:
        raise AudioError(f"{p}: expected mono audio, got {data.shape[1]} channels")
    if data.dtype == np.int16:
        samples = data / 32768.0
    elif data.dtype == np.int32:
        samples = data / 2147483648.0
    elif data.dtype in (np.float32, np.float64):
        samples = data.astype(np.float64)
    else:
        raise AudioError(f"{p}: unsupported sample format {data.dtype}")
    if rate != cfg.sample_rate:
        g = np.gcd(int(cfg.sample_rate), int(rate))
        samples = resample_poly(samples, cfg.sample_rate // g, rate // g)
    return Waveform(np.clip(samples, -1.0, 1.0), cfg.sample_rate)


def save_wav(path, w: Waveform) -> None:
    pcm = np.clip(w.samples, -1.0, 1.0)
    wavfile.write(str(path), w.sample_rate, (pcm * 32767.0).astype(np.int16))


@lru_cache(maxsize=8)
def _hann(window: int) -> np.ndarray:
    # periodic Hann, COLA-compatible at hop = window / 4
    n = np.arange(window)
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * n / window)


def _hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def _mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@lru_cache(maxsize=8)
def mel_filterbank(sample_rate: int, fft_size: int, mel_bins: int,
                   fmin: float, fmax: float) -> np.ndarray:
    """Triangular mel filters (peak 1) as a (mel_bins, fft_size//2+1) matrix."""
    n_bins = fft_size // 2 + 1
    freqs = np.linspace(0.0, sample_rate / 2.0, n_bins)
    edges = _mel_to_hz(np.linspace(_hz_to_mel(fmin), _hz_to_mel(fmax), mel_bins + 2))
    fb = np.zeros((mel_bins, n_bins))
    for i in range(mel_bins):
        lo, center, hi = edges[i], edges[i + 1], edges[i + 2]
        up = (freqs - lo) / max(center - lo, 1e-12)
        down = (hi - freqs) / max(hi - center, 1e-12)
        fb[i] = np.clip(np.minimum(up, down), 0.0, 1.0)
    return fb


def _filterbank(cfg: AudioConfig) -> np.ndarray:
    return mel_filterbank(cfg.sample_rate, cfg.fft_size, cfg.mel_bins, cfg.mel_fmin, cfg.mel_fmax)


def stft(samples: np.ndarray, cfg: AudioConfig) -> np.ndarray:
    """Complex spectrogram, shape (frames, fft_size//2 + 1)."""
    n_frames = cfg.frame_count(len(samples))
    win = _hann(cfg.window)
    idx = np.arange(cfg.window) + cfg.hop * np.arange(n_frames)[:, None]
    return np.fft.rfft(samples[idx] * win, n=cfg.fft_size, axis=1)


def istft(spec: np.ndarray, cfg: AudioConfig) -> np.ndarray:
    """Overlap-add inverse of stft with window-square normalization."""
    n_frames = spec.shape[0]
    win = _hann(cfg.window)
    n_samples = (n_frames - 1) * cfg.hop + cfg.window
    out = np.zeros(n_samples)
    norm = np.zeros(n_samples)
    frames = np.fft.irfft(spec, n=cfg.fft_size, axis=1)[:, :cfg.window]
    for t in range(n_frames):
        start = t * cfg.hop
        out[start:start + cfg.window] += frames[t] * win
        norm[start:start + cfg.window] += win * win
    return out / np.maximum(norm, 1e-8)


def mel_spectrogram(w: Waveform, cfg: AudioConfig) -> MelSpectrogram:
    """Log-amplitude mel frames of a waveform; raises if shorter than one window."""
    mag = np.abs(stft(w.samples, cfg))
    mel = mag @ _filterbank(cfg).T
    return MelSpectrogram(np.log(np.maximum(mel, MEL_FLOOR)), cfg)


def griffin_lim(m: MelSpectrogram, cfg: AudioConfig, iters: int = 32) -> Waveform:
    """Invert a log-mel spectrogram to a waveform by pseudo-inverse + phase retrieval."""
    if iters < 1:
        raise ConfigError(f"griffin_lim needs iters >= 1, got {iters}")
    fb = _filterbank(cfg)
    amp = np.exp(m.frames)
    # treat floored cells as silence rather than finite energy
    amp[m.frames <= np.log(MEL_FLOOR) + 1e-12] = 0.0
    mag = np.clip(amp @ np.linalg.pinv(fb).T, 0.0, None)
    spec = mag.astype(np.complex128)
    samples = istft(spec, cfg)
    for _ in range(iters - 1):
        phase = np.angle(stft(samples, cfg))
        samples = istft(mag * np.exp(1j * phase), cfg)
    peak = np.max(np.abs(samples))
    if peak > 1.0:
        samples = samples / peak
    return Waveform(samples, cfg.sample_rate)


def contour_to_matrix(c: F0Contour) -> np.ndarray:
    return np.column_stack([c.f0_hz, c.voiced.astype(np.float64)])


def matrix_to_contour(m: np.ndarray) -> F0Contour:
    if m.ndim != 2 or m.shape[1] != 2:
        raise AudioError(f"contour matrix must be (T, 2), got {m.shape}")
    return F0Contour(m[:, 0], m[:, 1] > 0.5)
