"""Synthetic 4-speaker corpus for experiments and tests.

Utterances are syllable sequences: harmonic vowel segments (Lorentzian
formant envelopes, speaker-scaled) with wandering F0 drawn from the
speaker's log-F0 range, separated by noise bursts and short gaps.  Two
speakers sit in a low F0 range and two in a high range so cross-group
conversion mirrors the cross-gender setting.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.signal import lfilter

from .dsp import AudioConfig, Waveform, save_wav
from .storage import ensure_dir

VOWELS = {
    "a": (800.0, 1150.0, 2900.0),
    "e": (500.0, 1750.0, 2450.0),
    "i": (320.0, 2250.0, 3000.0),
    "o": (500.0, 850.0, 2800.0),
    "u": (330.0, 900.0, 2300.0),
}
FORMANT_GAINS = (1.0, 0.55, 0.25)
FORMANT_BW = (90.0, 130.0, 200.0)


@dataclass(frozen=True)
class ToySpeaker:
    speaker_id: str
    mean_log_f0: float
    sigma_log_f0: float
    formant_scale: float


def default_speakers() -> list[ToySpeaker]:
    return [
        ToySpeaker("lo0", float(np.log(110.0)), 0.15, 0.94),
        ToySpeaker("lo1", float(np.log(134.0)), 0.16, 1.00),
        ToySpeaker("hi0", float(np.log(212.0)), 0.15, 1.07),
        ToySpeaker("hi1", float(np.log(254.0)), 0.14, 1.13),
    ]


def _vowel_envelope(freqs: np.ndarray, vowel: str, scale: float) -> np.ndarray:
    env = np.zeros_like(freqs)
    for (f_center, gain, bw) in zip(VOWELS[vowel], FORMANT_GAINS, FORMANT_BW):
        env += gain / (1.0 + ((freqs - f_center * scale) / bw) ** 2)
    return (env + 0.02) / (1.0 + (freqs / 3500.0) ** 2)


def _voiced_segment(rng: np.random.Generator, spk: ToySpeaker, vowel: str,
                    n: int, sr: int, fmax: float) -> np.ndarray:
    t = np.arange(n) / sr
    start = np.clip(rng.normal(spk.mean_log_f0, 0.8 * spk.sigma_log_f0),
                    spk.mean_log_f0 - 2.0 * spk.sigma_log_f0,
                    spk.mean_log_f0 + 2.0 * spk.sigma_log_f0)
    slope = rng.uniform(-1.2, 1.2) * spk.sigma_log_f0
    wiggle = (rng.uniform(0.015, 0.05)
              * np.sin(2.0 * np.pi * rng.uniform(2.0, 5.5) * t + rng.uniform(0, 2 * np.pi)))
    log_f0 = np.clip(start + slope * (t / t[-1]) + wiggle,
                     spk.mean_log_f0 - 2.4 * spk.sigma_log_f0,
                     spk.mean_log_f0 + 2.4 * spk.sigma_log_f0)
    f0 = np.exp(log_f0)

    phase = 2.0 * np.pi * np.cumsum(f0) / sr
    n_harm = int(fmax / f0.max())
    harmonics = np.arange(1, n_harm + 1)
    amps = _vowel_envelope(harmonics * float(f0.mean()), vowel, spk.formant_scale)
    seg = (amps[:, None] * np.sin(harmonics[:, None] * phase[None, :])).sum(axis=0)

    ramp = min(int(0.02 * sr), n // 4)
    env = np.ones(n)
    env[:ramp] = np.linspace(0.0, 1.0, ramp)
    env[-ramp:] = np.linspace(1.0, 0.0, ramp)
    return seg * env * rng.uniform(0.6, 1.0)


def _unvoiced_segment(rng: np.random.Generator, n: int) -> np.ndarray:
    noise = rng.standard_normal(n)
    # crude highpass so the tracker never calls these frames voiced
    shaped = lfilter([1.0, -0.97], [1.0], noise)
    ramp = max(2, n // 6)
    env = np.ones(n)
    env[:ramp] = np.linspace(0.0, 1.0, ramp)
    env[-ramp:] = np.linspace(1.0, 0.0, ramp)
    return 0.08 * shaped * env


def synth_utterance(rng: np.random.Generator, spk: ToySpeaker, cfg: AudioConfig,
                    n_syllables: int | None = None) -> Waveform:
    sr = cfg.sample_rate
    if n_syllables is None:
        n_syllables = int(rng.integers(3, 6))
    vowels = list(VOWELS)
    parts = [np.zeros(int(0.04 * sr))]
    for _ in range(n_syllables):
        v_len = int(rng.uniform(0.18, 0.34) * sr)
        parts.append(_voiced_segment(rng, spk, vowels[rng.integers(len(vowels))],
                                     v_len, sr, cfg.mel_fmax))
        u_len = int(rng.uniform(0.04, 0.11) * sr)
        if rng.uniform() < 0.6:
            parts.append(_unvoiced_segment(rng, u_len))
        else:
            parts.append(np.zeros(u_len))
    parts.append(np.zeros(int(0.04 * sr)))
    samples = np.concatenate(parts)
    samples = 0.4 * samples / max(np.abs(samples).max(), 1e-9)
    return Waveform(samples, sr)


def build_toy_corpus(root, cfg: AudioConfig, utts_per_speaker: int = 40,
                     seed: int = 1234,
                     speakers: list[ToySpeaker] | None = None) -> Path:
    """Write <root>/<speaker>/uttNNN.wav for each toy speaker; returns root."""
    speakers = speakers or default_speakers()
    root = ensure_dir(root)
    rng = np.random.default_rng(seed)
    for spk in speakers:
        sdir = ensure_dir(root / spk.speaker_id)
        for i in range(utts_per_speaker):
            save_wav(sdir / f"utt{i:03d}.wav", synth_utterance(rng, spk, cfg))
    return root
