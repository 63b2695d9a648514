"""Signal layer: WAV I/O, mel analysis, pitch tracking, Griffin-Lim."""

from .audio import (
    MEL_FLOOR,
    AudioConfig,
    F0Contour,
    MelSpectrogram,
    Waveform,
    contour_to_matrix,
    griffin_lim,
    istft,
    load_wav,
    matrix_to_contour,
    mel_filterbank,
    mel_spectrogram,
    save_wav,
    stft,
)
from .pitch import extract_f0

__all__ = [
    "MEL_FLOOR",
    "AudioConfig",
    "F0Contour",
    "MelSpectrogram",
    "Waveform",
    "contour_to_matrix",
    "griffin_lim",
    "istft",
    "load_wav",
    "matrix_to_contour",
    "mel_filterbank",
    "mel_spectrogram",
    "save_wav",
    "stft",
    "extract_f0",
]
