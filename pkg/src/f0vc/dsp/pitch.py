"""Normalized-autocorrelation pitch tracker.

Frames are aligned with the mel analysis (same hop, same window, same
count).  Per frame: FFT autocorrelation, normalized by the energies of the
two overlapping segments, peak picking restricted to the configured lag
range, parabolic refinement, and a voicing decision against
cfg.voicing_threshold.  Among near-equal peaks the smallest lag wins, which
suppresses octave-down errors on strongly harmonic frames.
"""

from __future__ import annotations

import numpy as np

from .audio import AudioConfig, F0Contour, Waveform

SILENCE_RMS = 1e-4
PEAK_TIE_RATIO = 0.9


def _frame_f0(frame: np.ndarray, cfg: AudioConfig, lag_min: int, lag_max: int,
              nfft: int) -> tuple[float, bool]:
    x = frame - frame.mean()
    w = len(x)
    if np.sqrt(np.mean(x * x)) < SILENCE_RMS:
        return 0.0, False

    spec = np.fft.rfft(x, n=nfft)
    ac = np.fft.irfft(spec * np.conj(spec), n=nfft)[:lag_max + 2]
    csum = np.concatenate([[0.0], np.cumsum(x * x)])
    lags = np.arange(lag_max + 2)
    e_head = csum[w - lags]            # energy of x[: w - lag]
    e_tail = csum[w] - csum[lags]      # energy of x[lag :]
    ncc = ac / np.sqrt(np.maximum(e_head * e_tail, 1e-20))

    seg = ncc[lag_min:lag_max + 1]
    interior = seg[1:-1]
    local_max = (interior >= seg[:-2]) & (interior >= seg[2:])
    peak_lags = np.nonzero(local_max)[0] + lag_min + 1
    if peak_lags.size == 0:
        return 0.0, False
    peak_vals = ncc[peak_lags]
    best = peak_vals.max()
    if best < cfg.voicing_threshold:
        return 0.0, False
    chosen = peak_lags[peak_vals >= max(cfg.voicing_threshold, PEAK_TIE_RATIO * best)][0]

    # parabolic interpolation around the integer peak
    r0, r1, r2 = ncc[chosen - 1], ncc[chosen], ncc[chosen + 1]
    denom = r0 - 2.0 * r1 + r2
    delta = 0.0 if abs(denom) < 1e-12 else np.clip(0.5 * (r0 - r2) / denom, -1.0, 1.0)
    f0 = cfg.sample_rate / (chosen + delta)
    return float(np.clip(f0, cfg.f0_min, cfg.f0_max)), True


def extract_f0(w: Waveform, cfg: AudioConfig) -> F0Contour:
    """Per-frame (f0, voiced) aligned with mel_spectrogram frames.

    Unvoiced frames carry the nearest voiced value (consumers must ignore it
    via the voiced flag); a fully unvoiced utterance carries cfg.f0_min.
    """
    n_frames = cfg.frame_count(len(w.samples))
    lag_min = max(2, int(np.floor(cfg.sample_rate / cfg.f0_max)))
    lag_max = min(int(np.ceil(cfg.sample_rate / cfg.f0_min)), cfg.window - 2)
    nfft = 1 << int(np.ceil(np.log2(cfg.window + lag_max + 2)))

    f0 = np.zeros(n_frames)
    voiced = np.zeros(n_frames, dtype=bool)
    for t in range(n_frames):
        start = t * cfg.hop
        f0[t], voiced[t] = _frame_f0(w.samples[start:start + cfg.window], cfg,
                                     lag_min, lag_max, nfft)

    if voiced.any():
        idx = np.arange(n_frames)
        f0 = np.interp(idx, idx[voiced], f0[voiced])
    else:
        f0[:] = cfg.f0_min
    return F0Contour(f0, voiced)
