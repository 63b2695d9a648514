"""The F0-conditioned conversion autoencoder.

Encoder: (mel || speaker one-hot) -> 3x(conv5x1 + ReLU + batchnorm) ->
2x BiLSTM(enc_cell) -> temporal downsampling by `downsample`, keeping the
forward state at the end of each window and the backward state at its start.

Decoder: (upsampled code || speaker one-hot || quantized-F0 one-hot) ->
linear -> 3x LSTM(dec_cell) -> linear to mel, plus a 5-layer conv postnet
producing an additive residual.

The network operates on an affinely normalized copy of the log-mel features
(mel_center/mel_scale map the representable log range roughly onto [-1, 1]);
all public inputs and outputs stay in the raw log-amplitude domain.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import f0codec
from .dsp import MEL_FLOOR, F0Contour, MelSpectrogram
from .errors import ConfigError, DataError, ShapeError
from .f0codec import SpeakerF0Stats
from .nn import (
    LSTM,
    BatchNorm1d,
    BiLSTM,
    Conv1d,
    Linear,
    Module,
    Tensor,
    concat,
    make_node,
    no_grad,
    relu,
)

_MEL_CENTER = float(np.log(MEL_FLOOR) / 2.0)
_MEL_SCALE = float(-np.log(MEL_FLOOR) / 2.0)


@dataclass(frozen=True)
class ModelConfig:
    n_speakers: int
    mel_dim: int = 80
    conv_channels: int = 512
    n_enc_conv: int = 3
    enc_cell: int = 16
    downsample: int = 16
    n_dec_lstm: int = 3
    dec_cell: int = 512
    postnet_layers: int = 5
    f0_bins: int = 257
    use_f0: bool = True
    mel_center: float = _MEL_CENTER
    mel_scale: float = _MEL_SCALE

    def __post_init__(self):
        if self.n_speakers < 1:
            raise ConfigError(f"need at least one speaker, got {self.n_speakers}")
        if self.downsample < 1:
            raise ConfigError(f"downsample must be >= 1, got {self.downsample}")
        if self.use_f0 and self.f0_bins != f0codec.N_BINS:
            raise ConfigError(f"f0_bins must be {f0codec.N_BINS} when use_f0 is set")
        for name in ("mel_dim", "conv_channels", "n_enc_conv", "enc_cell",
                     "n_dec_lstm", "dec_cell", "postnet_layers"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")

    @property
    def code_dim(self) -> int:
        return 2 * self.enc_cell

    @property
    def decoder_input_dim(self) -> int:
        dim = self.code_dim + self.n_speakers
        if self.use_f0:
            dim += self.f0_bins
        return dim

    def to_dict(self) -> dict:
        return {
            "n_speakers": self.n_speakers, "mel_dim": self.mel_dim,
            "conv_channels": self.conv_channels, "n_enc_conv": self.n_enc_conv,
            "enc_cell": self.enc_cell, "downsample": self.downsample,
            "n_dec_lstm": self.n_dec_lstm, "dec_cell": self.dec_cell,
            "postnet_layers": self.postnet_layers, "f0_bins": self.f0_bins,
            "use_f0": self.use_f0, "mel_center": self.mel_center,
            "mel_scale": self.mel_scale,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


@dataclass(frozen=True)
class F0Mode:
    """How convert() builds the decoder's F0 conditioning."""

    kind: str  # natural | flat | external
    flat_bin: int = 128
    bins: Optional[np.ndarray] = field(default=None, compare=False)

    @classmethod
    def natural(cls) -> "F0Mode":
        return cls("natural")

    @classmethod
    def flat(cls, bin_index: int = 128) -> "F0Mode":
        if not 0 <= bin_index <= 255:
            raise ConfigError(f"flat F0 bin must be 0..255, got {bin_index}")
        return cls("flat", flat_bin=bin_index)

    @classmethod
    def external(cls, bins: np.ndarray) -> "F0Mode":
        return cls("external", bins=np.asarray(bins, dtype=np.int64))


def one_hot_speaker(index: int, n_speakers: int) -> np.ndarray:
    if not 0 <= index < n_speakers:
        raise DataError(f"speaker index {index} outside table of {n_speakers}")
    v = np.zeros(n_speakers)
    v[index] = 1.0
    return v


def as_speaker_embedding(spk, n_speakers: int) -> np.ndarray:
    if isinstance(spk, (int, np.integer)):
        return one_hot_speaker(int(spk), n_speakers)
    v = np.asarray(spk, dtype=np.float64)
    if v.shape != (n_speakers,):
        raise ShapeError(f"speaker embedding shape {v.shape} vs table size {n_speakers}")
    if not (np.count_nonzero(v) == 1 and np.isclose(v.sum(), 1.0) and v.max() == 1.0):
        raise DataError("speaker embedding must be one-hot")
    return v


def _downsample_code(x: Tensor, ds: int, half: int) -> Tensor:
    """Keep forward states at window ends and backward states at window starts."""
    B, T, C = x.shape
    fwd = x.data[:, ds - 1::ds, :half]
    bwd = x.data[:, ::ds, half:]
    data = np.concatenate([fwd, bwd], axis=2)

    def backward(g):
        dx = np.zeros((B, T, C))
        dx[:, ds - 1::ds, :half] = g[:, :, :half]
        dx[:, ::ds, half:] = g[:, :, half:]
        x._accumulate(dx)

    return make_node(data, (x,), backward, "downsample_code")


def upsample_code(code: Tensor, ds: int) -> Tensor:
    """Copy each code row across its window of ds frames (no interpolation)."""
    B, Tc, C = code.shape
    data = np.repeat(code.data, ds, axis=1)

    def backward(g):
        code._accumulate(g.reshape(B, Tc, ds, C).sum(axis=2))

    return make_node(data, (code,), backward, "upsample_code")


def _broadcast_rows(vec: np.ndarray, batch: int, time: int) -> Tensor:
    return Tensor(np.broadcast_to(vec.reshape(batch, 1, -1), (batch, time, vec.shape[-1])).copy())


class VoiceConversionModel(Module):
    """Encoder/decoder pair with speaker and (optionally) F0 conditioning."""

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.cfg = cfg
        self.trained = False

        chans = [cfg.mel_dim + cfg.n_speakers] + [cfg.conv_channels] * cfg.n_enc_conv
        self.enc_convs = [Conv1d(chans[i], chans[i + 1], rng) for i in range(cfg.n_enc_conv)]
        self.enc_norms = [BatchNorm1d(cfg.conv_channels) for _ in range(cfg.n_enc_conv)]
        self.enc_lstms = [
            BiLSTM(cfg.conv_channels if i == 0 else cfg.code_dim, cfg.enc_cell, rng)
            for i in range(2)
        ]

        self.dec_input = Linear(cfg.decoder_input_dim, cfg.dec_cell, rng)
        self.dec_lstms = [LSTM(cfg.dec_cell, cfg.dec_cell, rng) for _ in range(cfg.n_dec_lstm)]
        self.dec_proj = Linear(cfg.dec_cell, cfg.mel_dim, rng)

        post_chans = ([cfg.mel_dim] + [cfg.conv_channels] * (cfg.postnet_layers - 1)
                      + [cfg.mel_dim])
        self.post_convs = [
            Conv1d(post_chans[i], post_chans[i + 1], rng) for i in range(cfg.postnet_layers)
        ]
        self.post_norms = [BatchNorm1d(post_chans[i + 1]) for i in range(cfg.postnet_layers)]

    # -- feature scaling -----------------------------------------------------

    def normalize_mel(self, mel: np.ndarray) -> np.ndarray:
        return (mel - self.cfg.mel_center) / self.cfg.mel_scale

    def denormalize_mel(self, mel: np.ndarray) -> np.ndarray:
        return mel * self.cfg.mel_scale + self.cfg.mel_center

    # -- batched tensor paths (training) --------------------------------------

    def encode_batch(self, mel_n: Tensor, spk: np.ndarray, training: bool) -> Tensor:
        cfg = self.cfg
        B, T, C = mel_n.shape
        if C != cfg.mel_dim:
            raise ShapeError(f"encoder expects mel dim {cfg.mel_dim}, got {mel_n.shape}")
        if T % cfg.downsample != 0:
            raise ShapeError(f"frame count {T} is not a multiple of {cfg.downsample}")
        if spk.shape != (B, cfg.n_speakers):
            raise ShapeError(f"speaker batch shape {spk.shape} vs expected {(B, cfg.n_speakers)}")
        x = concat([mel_n, Tensor(np.repeat(spk[:, None, :], T, axis=1))], axis=2)
        for conv, norm in zip(self.enc_convs, self.enc_norms):
            x = norm(relu(conv(x)), training)
        for bilstm in self.enc_lstms:
            x = bilstm(x)
        return _downsample_code(x, cfg.downsample, cfg.enc_cell)

    def decode_batch(self, code: Tensor, spk: np.ndarray,
                     f0_onehot: Optional[np.ndarray], training: bool) -> tuple[Tensor, Tensor]:
        cfg = self.cfg
        B, Tc, C = code.shape
        if C != cfg.code_dim:
            raise ShapeError(f"decoder expects code dim {cfg.code_dim}, got {code.shape}")
        T = Tc * cfg.downsample
        parts = [upsample_code(code, cfg.downsample),
                 _broadcast_rows(spk, B, T)]
        if cfg.use_f0:
            if f0_onehot is None:
                raise ShapeError("this model is F0-conditioned; decode needs f0 one-hot rows")
            if f0_onehot.shape != (B, T, cfg.f0_bins):
                raise ShapeError(
                    f"f0 one-hot shape {f0_onehot.shape} vs expected {(B, T, cfg.f0_bins)}"
                )
            parts.append(Tensor(f0_onehot))
        elif f0_onehot is not None:
            raise ShapeError("baseline model (use_f0=false) takes no F0 conditioning")

        x = self.dec_input(concat(parts, axis=2))
        for lstm in self.dec_lstms:
            x = lstm(x)
        pre = self.dec_proj(x)

        r = pre
        last = len(self.post_convs) - 1
        for i, (conv, norm) in enumerate(zip(self.post_convs, self.post_norms)):
            r = conv(r)
            r = norm(r, training)
            if i != last:
                r = relu(r)
        return pre, pre + r

    # -- single-utterance numpy paths (inference) ------------------------------

    def encode(self, mel, speaker) -> np.ndarray:
        """Content code (T/downsample, 2*enc_cell) of one utterance."""
        frames = mel.frames if isinstance(mel, MelSpectrogram) else np.asarray(mel)
        spk = as_speaker_embedding(speaker, self.cfg.n_speakers)
        with no_grad():
            code = self.encode_batch(Tensor(self.normalize_mel(frames)[None]),
                                     spk[None], training=False)
        return code.data[0]

    def decode(self, code: np.ndarray, speaker, f0_bins=None) -> tuple[np.ndarray, np.ndarray]:
        """(mel_pre, mel_post) log-mel frames for one code sequence."""
        spk = as_speaker_embedding(speaker, self.cfg.n_speakers)
        onehot = None
        if self.cfg.use_f0:
            if f0_bins is None:
                raise ShapeError("this model is F0-conditioned; decode needs per-frame bins")
            bins = np.asarray(f0_bins, dtype=np.int64)
            if bins.shape[0] != code.shape[0] * self.cfg.downsample:
                raise ShapeError(
                    f"f0 length {bins.shape[0]} vs {code.shape[0] * self.cfg.downsample} "
                    f"frames implied by the code"
                )
            onehot = f0codec.one_hot(bins)[None]
        elif f0_bins is not None:
            raise ShapeError("baseline model (use_f0=false) takes no F0 conditioning")
        with no_grad():
            pre, post = self.decode_batch(Tensor(np.asarray(code)[None]), spk[None],
                                          onehot, training=False)
        return self.denormalize_mel(pre.data[0]), self.denormalize_mel(post.data[0])

    def convert(self, src_mel: MelSpectrogram, src_contour: Optional[F0Contour],
                src_stats: Optional[SpeakerF0Stats], src_speaker, tgt_speaker,
                f0_mode: F0Mode = F0Mode.natural()) -> MelSpectrogram:
        """Re-synthesize the source content with the target speaker's identity.

        F0 conditioning per f0_mode: natural quantizes the source contour with
        the SOURCE speaker's statistics (the training-time convention), flat
        forces every voiced frame to one bin, external supplies raw bins.
        """
        if not self.trained:
            raise ConfigError("convert requires a trained model (checkpoint not loaded?)")
        cfg = self.cfg
        T = len(src_mel)
        bins = None
        if cfg.use_f0:
            if src_contour is None or len(src_contour) != T:
                got = "none" if src_contour is None else str(len(src_contour))
                raise ShapeError(f"need an F0 contour of {T} frames, got {got}")
            if f0_mode.kind == "natural":
                if src_stats is None:
                    raise DataError("natural F0 mode needs the source speaker's F0 statistics")
                bins = f0codec.contour_to_bins(src_contour, src_stats)
            elif f0_mode.kind == "flat":
                bins = np.where(src_contour.voiced, f0_mode.flat_bin, f0codec.UNVOICED_BIN)
            elif f0_mode.kind == "external":
                bins = f0_mode.bins
                if bins is None or bins.shape[0] != T:
                    got = "none" if bins is None else str(bins.shape[0])
                    raise DataError(f"external F0 length {got} does not match {T} mel frames")
            else:
                raise ConfigError(f"unknown F0 mode '{f0_mode.kind}'")

        frames = self.normalize_mel(src_mel.frames)
        pad = (-T) % cfg.downsample
        if pad:
            frames = np.concatenate([frames, np.repeat(frames[-1:], pad, axis=0)])
            if bins is not None:
                bins = np.concatenate([bins, np.full(pad, f0codec.UNVOICED_BIN, dtype=np.int64)])

        src = as_speaker_embedding(src_speaker, cfg.n_speakers)
        tgt = as_speaker_embedding(tgt_speaker, cfg.n_speakers)
        onehot = f0codec.one_hot(bins)[None] if bins is not None else None
        with no_grad():
            code = self.encode_batch(Tensor(frames[None]), src[None], training=False)
            _, post = self.decode_batch(code, tgt[None], onehot, training=False)
        out = self.denormalize_mel(post.data[0][:T])
        return MelSpectrogram(out, src_mel.config)
