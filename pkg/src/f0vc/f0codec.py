"""Normalized-quantized-log-F0 codec and per-speaker F0 statistics.

Voiced log-F0 is normalized to p = (log_f0 - mu) / (4 * sigma), mapped
affinely to u = (p + 1) / 2, clamped to [0, 1] and quantized into 256 bins;
bin 256 marks unvoiced frames, giving the 257-way one-hot conditioning
feature.  The Gaussian normalized transformation between two speakers'
statistics produces the pseudo-F0 reference used by the consistency study.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dsp import F0Contour
from .errors import DataError

N_BINS = 257
UNVOICED_BIN = 256
MIN_STATS_FRAMES = 100


@dataclass(frozen=True)
class SpeakerF0Stats:
    """Mean/std of a speaker's voiced log-F0 (natural log of Hz)."""

    mu: float
    sigma: float
    n_frames: int

    def __post_init__(self):
        if self.sigma <= 0:
            raise DataError(f"speaker F0 sigma must be positive, got {self.sigma}")
        if self.n_frames < MIN_STATS_FRAMES:
            raise DataError(
                f"speaker F0 stats need >= {MIN_STATS_FRAMES} voiced frames, got {self.n_frames}"
            )


def compute_stats(contours: list[F0Contour]) -> SpeakerF0Stats:
    """Pool voiced frames across contours; unvoiced frames are excluded."""
    log_f0 = np.concatenate([c.voiced_log_f0() for c in contours]) if contours else np.empty(0)
    if log_f0.size < MIN_STATS_FRAMES:
        raise DataError(
            f"too few voiced frames for F0 stats: {log_f0.size} < {MIN_STATS_FRAMES}"
        )
    sigma = float(log_f0.std())
    if sigma <= 0:
        raise DataError("degenerate F0 stats: zero variance over voiced frames")
    return SpeakerF0Stats(mu=float(log_f0.mean()), sigma=sigma, n_frames=int(log_f0.size))


def normalize(log_f0, stats: SpeakerF0Stats):
    """(log_f0 - mu) / (4 sigma); unclamped, accepts scalars or arrays."""
    return (np.asarray(log_f0, dtype=np.float64) - stats.mu) / (4.0 * stats.sigma)


def quantize(p_norm) -> np.ndarray:
    """Map normalized log-F0 onto bins 0..255 via u = clamp((p+1)/2, 0, 1).

    None marks an unvoiced frame and maps to UNVOICED_BIN.
    """
    if p_norm is None:
        return np.int64(UNVOICED_BIN)
    u = np.clip((np.asarray(p_norm, dtype=np.float64) + 1.0) / 2.0, 0.0, 1.0)
    return np.minimum(np.floor(u * 256.0), 255.0).astype(np.int64)


def dequantize(bins, stats: SpeakerF0Stats) -> np.ndarray:
    """Bin-center inverse of quantize(normalize(.)); rejects the unvoiced bin."""
    b = np.asarray(bins, dtype=np.int64)
    if np.any(b > 255) or np.any(b < 0):
        raise DataError("bin 256 is the unvoiced marker and has no log-F0 value; voiced bins are 0..255")
    u = (b + 0.5) / 256.0
    return stats.mu + 4.0 * stats.sigma * (2.0 * u - 1.0)


def contour_to_bins(contour: F0Contour, stats: SpeakerF0Stats) -> np.ndarray:
    """Per-frame quantized bins; unvoiced frames map to UNVOICED_BIN."""
    bins = np.full(len(contour), UNVOICED_BIN, dtype=np.int64)
    v = contour.voiced
    if v.any():
        bins[v] = quantize(normalize(np.log(contour.f0_hz[v]), stats))
    return bins


def one_hot(bins) -> np.ndarray:
    """(T, 257) one-hot rows from per-frame bins."""
    b = np.asarray(bins, dtype=np.int64)
    if np.any(b < 0) or np.any(b >= N_BINS):
        raise DataError(f"bins out of range 0..{N_BINS - 1}")
    out = np.zeros((b.size, N_BINS))
    out[np.arange(b.size), b] = 1.0
    return out


def pseudo_f0(log_f0_src, src: SpeakerF0Stats, tgt: SpeakerF0Stats):
    """Gaussian normalized transformation of source log-F0 to target statistics."""
    x = np.asarray(log_f0_src, dtype=np.float64)
    return tgt.mu + (tgt.sigma / src.sigma) * (x - src.mu)


def pseudo_contour(contour: F0Contour, src: SpeakerF0Stats, tgt: SpeakerF0Stats) -> F0Contour:
    """Apply pseudo_f0 to the voiced frames of a contour; unvoiced stays unvoiced."""
    hz = contour.f0_hz.copy()
    v = contour.voiced
    hz[v] = np.exp(pseudo_f0(np.log(contour.f0_hz[v]), src, tgt))
    return F0Contour(hz, v.copy())
