"""Self-reconstruction training: augmentation, loss, loop, checkpoints.

Only the source speaker's embedding and F0 statistics are ever used — the
model never sees a target speaker during training.  Runs are reproducible:
one numpy Generator drives sampling and augmentation, its state rides along
in checkpoints, and resuming gives bit-identical continuation.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Optional

import numpy as np

from .corpus import CorpusManifest, load_features
from .dsp import MEL_FLOOR, AudioConfig, F0Contour
from .errors import ConfigError, DataError, NumericError
from .f0codec import UNVOICED_BIN, contour_to_bins, one_hot
from .model import ModelConfig, VoiceConversionModel, one_hot_speaker
from .nn import Adam, Tensor, clip_grad_norm, l1, mse, no_grad
from .storage import load_checkpoint, save_checkpoint

LOG_FIELDS = ("iteration", "loss_total", "loss_mel_pre", "loss_mel_post", "loss_code")


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 2
    iterations: int = 20000
    lambda_code: float = 1.0
    crop_seconds: tuple[float, float] = (1.0, 3.0)
    stretch_range: tuple[float, float] = (0.7, 1.35)
    gain_range: tuple[float, float] = (0.1, 1.0)
    seed: int = 0
    grad_clip: float = 1.0
    checkpoint_every: int = 2000

    def __post_init__(self):
        if self.lambda_code < 0:
            raise ConfigError(f"lambda must be >= 0, got {self.lambda_code}")
        for name in ("crop_seconds", "stretch_range", "gain_range"):
            lo, hi = getattr(self, name)
            if not (0 < lo <= hi):
                raise ConfigError(f"bad {name}: ({lo}, {hi})")
        if self.batch_size < 1 or self.iterations < 0 or self.lr <= 0:
            raise ConfigError("batch_size, iterations, lr must be positive")

    def to_dict(self) -> dict:
        return {
            "lr": self.lr, "batch_size": self.batch_size, "iterations": self.iterations,
            "lambda_code": self.lambda_code, "crop_seconds": list(self.crop_seconds),
            "stretch_range": list(self.stretch_range), "gain_range": list(self.gain_range),
            "seed": self.seed, "grad_clip": self.grad_clip,
            "checkpoint_every": self.checkpoint_every,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        for name in ("crop_seconds", "stretch_range", "gain_range"):
            d[name] = tuple(d[name])
        return cls(**d)


class AugmentResult(NamedTuple):
    mel: np.ndarray
    f0: F0Contour
    n_valid: int  # frames before the multiple-of-16 padding


def _resample(mel: np.ndarray, contour: F0Contour, length: int) -> tuple[np.ndarray, F0Contour]:
    t = mel.shape[0]
    src = np.linspace(0.0, t - 1.0, length)
    i0 = np.floor(src).astype(np.int64)
    i1 = np.minimum(i0 + 1, t - 1)
    w = (src - i0)[:, None]
    mel2 = mel[i0] * (1.0 - w) + mel[i1] * w
    hz = np.interp(src, np.arange(t), contour.f0_hz)
    voiced = contour.voiced[np.round(src).astype(np.int64)]
    return mel2, F0Contour(hz, voiced)


def augment(mel: np.ndarray, f0: F0Contour, rng: np.random.Generator,
            cfg: TrainConfig, frames_per_second: float, multiple: int = 16,
            stretch: Optional[float] = None, gain: Optional[float] = None,
            crop_frames: Optional[int] = None) -> AugmentResult:
    """Random time-stretch, gain, crop, then pad to a multiple of `multiple`.

    Explicit stretch/gain/crop_frames suppress the corresponding random draw
    (the training loop uses crop_frames to give both batch entries one length).
    An input shorter than the requested crop is resampled up, never rejected.
    """
    if mel.shape[0] != len(f0):
        raise DataError(f"mel/F0 length mismatch: {mel.shape[0]} vs {len(f0)}")
    if mel.shape[0] < 2:
        raise DataError("augment needs at least 2 frames")

    r = rng.uniform(*cfg.stretch_range) if stretch is None else stretch
    length = max(2, int(round(mel.shape[0] * r)))
    mel2, f02 = _resample(mel, f0, length)

    g = rng.uniform(*cfg.gain_range) if gain is None else gain
    mel2 = np.maximum(mel2 + 0.5 * np.log(g), np.log(MEL_FLOOR))

    lo = int(round(cfg.crop_seconds[0] * frames_per_second))
    hi = int(round(cfg.crop_seconds[1] * frames_per_second))
    if crop_frames is None:
        crop = int(rng.integers(lo, min(hi, max(length, lo)) + 1))
    else:
        crop = int(crop_frames)
    if length < crop:
        mel2, f02 = _resample(mel2, f02, crop)
        length = crop
    start = int(rng.integers(0, length - crop + 1))
    mel2 = mel2[start:start + crop]
    hz = f02.f0_hz[start:start + crop]
    voiced = f02.voiced[start:start + crop]

    pad = (-crop) % multiple
    if pad:
        mel2 = np.concatenate([mel2, np.repeat(mel2[-1:], pad, axis=0)])
        hz = np.concatenate([hz, np.full(pad, hz[-1])])
        voiced = np.concatenate([voiced, np.zeros(pad, dtype=bool)])
    return AugmentResult(mel2, F0Contour(hz, voiced), crop)


def recon_loss(mel_true: Tensor, mel_pre: Tensor, mel_post: Tensor,
               code_true: Tensor, code_recon: Tensor, lambda_code: float,
               mask: Optional[np.ndarray] = None) -> tuple[Tensor, dict]:
    """Reconstruction objective: mel error before and after the postnet plus
    the L1 between the original and re-encoded content codes.

    Each term sums over elements; the total is averaged over the batch.
    """
    batch = mel_true.shape[0] if mel_true.ndim == 3 else 1
    pre_term = mse(mel_true, mel_pre, mask)
    post_term = mse(mel_true, mel_post, mask)
    code_term = l1(code_true, code_recon)
    total = (pre_term + post_term + lambda_code * code_term) * (1.0 / batch)
    parts = {
        "loss_mel_pre": float(pre_term.data) / batch,
        "loss_mel_post": float(post_term.data) / batch,
        "loss_code": float(code_term.data) / batch,
    }
    return total, parts


class Trainer:
    """Owns the model, optimizer, data sampling, and checkpoint lifecycle."""

    def __init__(self, manifest: CorpusManifest, model_cfg: ModelConfig,
                 train_cfg: TrainConfig, audio_cfg: AudioConfig, work_dir,
                 model: Optional[VoiceConversionModel] = None,
                 encoder_frozen: bool = False):
        if model_cfg.n_speakers != manifest.n_speakers:
            raise ConfigError(
                f"model expects {model_cfg.n_speakers} speakers, manifest has {manifest.n_speakers}"
            )
        self.manifest = manifest
        self.model_cfg = model_cfg
        self.train_cfg = train_cfg
        self.audio_cfg = audio_cfg
        self.work_dir = Path(work_dir)
        self.model = model if model is not None else VoiceConversionModel(model_cfg, seed=train_cfg.seed)
        self.encoder_frozen = encoder_frozen
        self.params = {k: p for k, p in self.model.named_parameters().items() if p.requires_grad}
        self.optimizer = Adam(self.params, lr=train_cfg.lr)
        self.rng = np.random.default_rng(train_cfg.seed)
        self.iteration = 0
        self.last_checkpoint: Optional[str] = None
        self._load_training_set()

    def _load_training_set(self) -> None:
        self._examples = []
        for speaker in self.manifest.speakers:
            for rel in speaker.train_utts:
                mel, contour = load_features(self.work_dir, rel, self.audio_cfg)
                self._examples.append((speaker.index, speaker.stats, mel.frames, contour))
        if not self._examples:
            raise DataError("manifest has no training utterances")

    # -- batching ------------------------------------------------------------

    def _sample_batch(self):
        cfg = self.train_cfg
        fps = self.audio_cfg.frames_per_second
        picks = self.rng.integers(0, len(self._examples), size=cfg.batch_size)
        lo = int(round(cfg.crop_seconds[0] * fps))
        hi = int(round(cfg.crop_seconds[1] * fps))
        shortest = min(self._examples[i][2].shape[0] for i in picks)
        crop = int(self.rng.integers(lo, max(lo, min(hi, shortest)) + 1))

        mels, onehots, spks, valid = [], [], [], None
        for i in picks:
            spk_index, stats, mel, contour = self._examples[i]
            aug = augment(mel, contour, self.rng, cfg, fps,
                          multiple=self.model_cfg.downsample, crop_frames=crop)
            mels.append(self.model.normalize_mel(aug.mel))
            if self.model_cfg.use_f0:
                onehots.append(one_hot(contour_to_bins(aug.f0, stats)))
            spks.append(one_hot_speaker(spk_index, self.model_cfg.n_speakers))
            valid = aug.n_valid
        mel_batch = np.stack(mels)
        mask = np.zeros(mel_batch.shape[:2])
        mask[:, :valid] = 1.0
        f0_batch = np.stack(onehots) if onehots else None
        return mel_batch, np.stack(spks), f0_batch, mask

    # -- optimization --------------------------------------------------------

    def step(self) -> dict:
        mel_np, spk, f0_onehot, mask = self._sample_batch()
        mel = Tensor(mel_np)
        if self.encoder_frozen:
            # fixed encoder: inference-mode batch norm, no gradient bookkeeping
            # for the code path, but code_recon still differentiates through it
            with no_grad():
                code = self.model.encode_batch(mel, spk, training=False)
            code = Tensor(code.data)
            pre, post = self.model.decode_batch(code, spk, f0_onehot, training=True)
            code_recon = self.model.encode_batch(post, spk, training=False)
        else:
            code = self.model.encode_batch(mel, spk, training=True)
            pre, post = self.model.decode_batch(code, spk, f0_onehot, training=True)
            code_recon = self.model.encode_batch(post, spk, training=True)
        total, parts = recon_loss(mel, pre, post, code, code_recon,
                                  self.train_cfg.lambda_code, mask)
        loss = float(total.data)
        if not np.isfinite(loss):
            ref = self.last_checkpoint or "none saved yet"
            raise NumericError(f"training loss became non-finite at iteration "
                               f"{self.iteration}; last good checkpoint: {ref}")
        total.backward()
        clip_grad_norm(self.params, self.train_cfg.grad_clip)
        self.optimizer.step()
        self.iteration += 1
        row = {"iteration": self.iteration, "loss_total": loss}
        row.update(parts)
        return row

    def train(self, iterations: Optional[int] = None, log_path=None,
              checkpoint_path=None, resume_log: bool = False) -> list[dict]:
        """Run `iterations` steps; logs one CSV row per step, checkpoints periodically."""
        n = self.train_cfg.iterations if iterations is None else iterations
        rows: list[dict] = []
        writer = None
        log_file = None
        if log_path is not None:
            mode = "a" if resume_log and Path(log_path).exists() else "w"
            log_file = open(log_path, mode, newline="")
            writer = csv.DictWriter(log_file, fieldnames=LOG_FIELDS)
            if mode == "w":
                writer.writeheader()
        try:
            for _ in range(n):
                row = self.step()
                rows.append(row)
                if writer is not None:
                    writer.writerow(row)
                every = self.train_cfg.checkpoint_every
                if checkpoint_path is not None and every > 0 and self.iteration % every == 0:
                    self.save(checkpoint_path)
            self.model.trained = True
            if checkpoint_path is not None:
                self.save(checkpoint_path)
        finally:
            if log_file is not None:
                log_file.close()
        return rows

    # -- persistence ----------------------------------------------------------

    def save(self, path) -> None:
        meta = {
            "kind": "f0vc-checkpoint",
            "model_config": self.model_cfg.to_dict(),
            "train_config": self.train_cfg.to_dict(),
            "audio_config": _audio_cfg_dict(self.audio_cfg),
            "speakers": self.manifest.speaker_table(),
            "iteration": self.iteration,
            "adam_step": self.optimizer.step_count,
            "rng_state": _rng_state_to_json(self.rng),
            "trained": bool(self.model.trained or self.iteration > 0),
        }
        arrays: dict[str, np.ndarray] = {}
        for name, p in self.model.named_parameters().items():
            arrays[f"param/{name}"] = p.data
        for name, b in self.model.named_buffers().items():
            arrays[f"buffer/{name}"] = b
        arrays.update(self.optimizer.state_arrays())
        save_checkpoint(path, meta, arrays)
        self.last_checkpoint = str(path)

    @classmethod
    def resume(cls, path, manifest: CorpusManifest, audio_cfg: AudioConfig,
               work_dir) -> "Trainer":
        meta, arrays = load_checkpoint(path)
        model_cfg = ModelConfig.from_dict(meta["model_config"])
        if model_cfg.n_speakers != manifest.n_speakers:
            raise ConfigError(
                f"checkpoint was trained with {model_cfg.n_speakers} speakers, "
                f"manifest has {manifest.n_speakers}"
            )
        trainer = cls(manifest, model_cfg, TrainConfig.from_dict(meta["train_config"]),
                      audio_cfg, work_dir)
        _restore_model(trainer.model, meta, arrays)
        adam_arrays = {k: v for k, v in arrays.items() if k.startswith("adam_")}
        trainer.optimizer.load_state_arrays(adam_arrays, int(meta["adam_step"]))
        trainer.iteration = int(meta["iteration"])
        trainer.rng = _rng_from_json(meta["rng_state"])
        trainer.last_checkpoint = str(path)
        return trainer


def _audio_cfg_dict(cfg: AudioConfig) -> dict:
    return {
        "sample_rate": cfg.sample_rate, "fft_size": cfg.fft_size, "hop": cfg.hop,
        "window": cfg.window, "mel_bins": cfg.mel_bins, "mel_fmin": cfg.mel_fmin,
        "mel_fmax": cfg.mel_fmax, "f0_min": cfg.f0_min, "f0_max": cfg.f0_max,
        "voicing_threshold": cfg.voicing_threshold,
    }


def audio_cfg_from_dict(d: dict) -> AudioConfig:
    return AudioConfig(**d)


def _rng_state_to_json(rng: np.random.Generator) -> dict:
    state = rng.bit_generator.state
    return {
        "bit_generator": state["bit_generator"],
        "state": {k: int(v) for k, v in state["state"].items()},
        "has_uint32": int(state.get("has_uint32", 0)),
        "uinteger": int(state.get("uinteger", 0)),
    }


def _rng_from_json(d: dict) -> np.random.Generator:
    if d["bit_generator"] != "PCG64":
        raise ConfigError(f"unsupported bit generator {d['bit_generator']}")
    rng = np.random.default_rng(0)
    rng.bit_generator.state = {
        "bit_generator": "PCG64",
        "state": {k: int(v) for k, v in d["state"].items()},
        "has_uint32": int(d["has_uint32"]),
        "uinteger": int(d["uinteger"]),
    }
    return rng


def _restore_model(model: VoiceConversionModel, meta: dict, arrays: dict) -> None:
    for name, p in model.named_parameters().items():
        key = f"param/{name}"
        if key not in arrays:
            raise ConfigError(f"checkpoint missing parameter '{name}'")
        if arrays[key].shape != p.data.shape:
            raise ConfigError(
                f"checkpoint parameter '{name}' has shape {arrays[key].shape}, "
                f"model expects {p.data.shape}"
            )
        p.data = arrays[key].copy()
    buffers = model.named_buffers()
    for name, b in buffers.items():
        key = f"buffer/{name}"
        if key not in arrays:
            raise ConfigError(f"checkpoint missing buffer '{name}'")
        b[...] = arrays[key]
    model.trained = bool(meta.get("trained", False))


def load_model(path) -> tuple[VoiceConversionModel, dict]:
    """Rebuild a model (inference-ready) from a checkpoint; returns (model, metadata)."""
    meta, arrays = load_checkpoint(path)
    if meta.get("kind") != "f0vc-checkpoint":
        raise ConfigError(f"{path}: not a training checkpoint")
    model = VoiceConversionModel(ModelConfig.from_dict(meta["model_config"]), seed=0)
    _restore_model(model, meta, arrays)
    return model, meta
