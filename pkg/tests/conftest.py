"""Shared fixtures.

The acceptance tests need trained models on the toy corpus.  Training them
takes a while, so the artifacts are built once per configuration into a
cache directory (default .acceptance-cache/ at the repo root, override with
F0VC_CACHE_DIR) keyed by a hash of the full training regime.  Delete the
directory to force a rebuild.

Environment knobs:
  F0VC_CACHE_DIR      where trained acceptance artifacts live
  F0VC_ACCEPT_ITERS   training iterations for the acceptance models
                      (default 20000; set lower only for development)
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from f0vc.corpus import CorpusManifest, prepare_corpus
from f0vc.dsp import AudioConfig
from f0vc.model import ModelConfig
from f0vc.toydata import build_toy_corpus
from f0vc.train import TrainConfig, Trainer, load_model
from f0vc.studies import train_leakage_decoder

REPO_ROOT = Path(__file__).resolve().parent.parent

ACCEPT_ITERS = int(os.environ.get("F0VC_ACCEPT_ITERS", "20000"))
ACCEPT_REGIME = {
    "corpus_seed": 1234,
    "utts_per_speaker": 40,
    "train": {"iterations": ACCEPT_ITERS, "lr": 1e-4, "batch_size": 2,
              "lambda_code": 1.0, "seed": 11},
    "model": {"conv_channels": 128, "dec_cell": 128, "enc_cell": 16,
              "downsample": 16, "postnet_layers": 5},
    "leakage_iterations": max(1, ACCEPT_ITERS // 2),
}


def _regime_key() -> str:
    return hashlib.sha1(json.dumps(ACCEPT_REGIME, sort_keys=True).encode()).hexdigest()[:12]


@pytest.fixture(scope="session")
def audio_cfg() -> AudioConfig:
    return AudioConfig()


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory, audio_cfg):
    """Small 4-speaker corpus + prepared work dir for fast functional tests."""
    root = tmp_path_factory.mktemp("tiny")
    corpus = root / "corpus"
    work = root / "work"
    build_toy_corpus(corpus, audio_cfg, utts_per_speaker=6, seed=77)
    manifest = prepare_corpus(corpus, work, audio_cfg)
    return {"corpus": corpus, "work": work, "manifest": manifest}


@pytest.fixture(scope="session")
def tiny_model_cfg(tiny_corpus) -> ModelConfig:
    return ModelConfig(n_speakers=tiny_corpus["manifest"].n_speakers,
                       conv_channels=32, dec_cell=24)


@pytest.fixture(scope="session")
def acceptance_artifacts(audio_cfg):
    """Toy corpus + F0-conditioned, baseline, and frozen-encoder-leakage models.

    Built once into the cache directory; reruns load the checkpoints.
    """
    cache_root = Path(os.environ.get("F0VC_CACHE_DIR", REPO_ROOT / ".acceptance-cache"))
    cache = cache_root / _regime_key()
    cache.mkdir(parents=True, exist_ok=True)
    corpus = cache / "corpus"
    work = cache / "work"
    ckpt_f0 = cache / "model_f0.bin"
    ckpt_base = cache / "model_baseline.bin"
    ckpt_leak = cache / "model_leakage.bin"
    losses_path = cache / "losses.json"

    if not (work / "manifest.txt").exists():
        build_toy_corpus(corpus, audio_cfg, ACCEPT_REGIME["utts_per_speaker"],
                         seed=ACCEPT_REGIME["corpus_seed"])
        prepare_corpus(corpus, work, audio_cfg)
    manifest = CorpusManifest.load(work / "manifest.txt")

    model_cfg = ModelConfig(n_speakers=manifest.n_speakers, **ACCEPT_REGIME["model"])
    train_cfg = TrainConfig(**ACCEPT_REGIME["train"])

    losses = json.loads(losses_path.read_text()) if losses_path.exists() else {}
    for tag, ckpt, cfg in (("f0", ckpt_f0, model_cfg),
                           ("baseline", ckpt_base, replace(model_cfg, use_f0=False))):
        if ckpt.exists():
            continue
        trainer = Trainer(manifest, cfg, train_cfg, audio_cfg, work)
        rows = trainer.train(log_path=cache / f"log_{tag}.csv")
        trainer.save(ckpt)
        losses[tag] = [r["loss_total"] for r in rows]
        losses_path.write_text(json.dumps(losses))

    model_f0, _ = load_model(ckpt_f0)
    model_base, _ = load_model(ckpt_base)

    if not ckpt_leak.exists():
        leak_cfg = replace(train_cfg, iterations=ACCEPT_REGIME["leakage_iterations"])
        leak_model = train_leakage_decoder(model_f0, manifest, leak_cfg, audio_cfg, work)
        helper = Trainer(manifest, leak_model.cfg, leak_cfg, audio_cfg, work,
                         model=leak_model, encoder_frozen=True)
        helper.iteration = leak_cfg.iterations
        helper.save(ckpt_leak)
    model_leak, _ = load_model(ckpt_leak)
    model_leak.trained = True

    return {
        "cache": cache, "work": work, "manifest": manifest,
        "audio_cfg": audio_cfg, "model_cfg": model_cfg, "train_cfg": train_cfg,
        "model_f0": model_f0, "model_base": model_base, "model_leak": model_leak,
        "losses": losses,
        "ckpt_f0": ckpt_f0, "ckpt_base": ckpt_base, "ckpt_leak": ckpt_leak,
    }


# -- acceptance summary reporting ---------------------------------------------

ACCEPTANCE_RESULTS: list[tuple[str, bool, str]] = []


def record_criterion(name: str, passed: bool, detail: str) -> None:
    ACCEPTANCE_RESULTS.append((name, passed, detail))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for name, passed, detail in ACCEPTANCE_RESULTS:
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"[{status}] {name}: {detail}")
