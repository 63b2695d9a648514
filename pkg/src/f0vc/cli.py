"""Command-line entry point: prepare / train / convert / eval.

Configuration is a flat key=value file with section prefixes
(audio.hop=256, train.lr=0.0001, model.conv_channels=512); command-line
flags override file values.  Unknown keys are rejected.

Exit codes: 0 success, 2 usage or configuration error, 3 data error,
4 numeric failure.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

from .corpus import CorpusManifest, MANIFEST_NAME, prepare_corpus
from .dsp import AudioConfig, extract_f0, griffin_lim, load_wav, mel_spectrogram, save_wav
from .errors import AudioError, ConfigError, DataError, F0VCError, FormatError, NumericError, ShapeError
from .f0codec import SpeakerF0Stats
from .model import F0Mode, ModelConfig
from .storage import ensure_dir, load_matrix, save_matrix
from .studies import (
    all_pairs,
    bottleneck_leakage_experiment,
    cross_group_pairs,
    f0_histogram,
    run_conversion_study,
    train_leakage_decoder,
    write_consistency_csv,
    write_histogram_csv,
    write_leakage_csv,
    write_summary_json,
)
from .train import TrainConfig, Trainer, audio_cfg_from_dict, load_model

STUDIES = ("dist", "consistency", "flat", "leakage")


# -- config file -------------------------------------------------------------


def _coerce(raw: str, py_type):
    if py_type is bool:
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"expected a boolean, got '{raw}'")
    if py_type is int:
        return int(raw)
    if py_type is float:
        return float(raw)
    if py_type is str:
        return raw
    # tuple fields (ranges) as comma-separated floats
    parts = [float(x) for x in raw.split(",")]
    if len(parts) != 2:
        raise ConfigError(f"expected 'low,high', got '{raw}'")
    return tuple(parts)


_AUDIO_FIELDS = {f.name: f.type for f in fields(AudioConfig)}
_TRAIN_FIELDS = {f.name: f.type for f in fields(TrainConfig)}
_MODEL_FIELDS = {f.name: f.type for f in fields(ModelConfig)}
_TYPE_NAMES = {"int": int, "float": float, "bool": bool, "str": str}


def _field_type(name_or_type):
    return _TYPE_NAMES.get(name_or_type, name_or_type if not isinstance(name_or_type, str) else tuple)


def parse_config_file(path) -> dict[str, dict]:
    """Sections audio/model/train/paths as {key: parsed value}."""
    sections: dict[str, dict] = {"audio": {}, "model": {}, "train": {}, "paths": {}}
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    for lineno, line in enumerate(p.read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{p}:{lineno}: expected key=value, got '{line}'")
        key, _, raw = line.partition("=")
        key, raw = key.strip(), raw.strip()
        section, _, name = key.partition(".")
        if name == "lambda":
            name = "lambda_code"
        if section == "audio" and name in _AUDIO_FIELDS:
            sections["audio"][name] = _coerce(raw, _field_type(_AUDIO_FIELDS[name]))
        elif section == "train" and name in _TRAIN_FIELDS:
            sections["train"][name] = _coerce(raw, _field_type(_TRAIN_FIELDS[name]))
        elif section == "model" and name in _MODEL_FIELDS and name != "n_speakers":
            sections["model"][name] = _coerce(raw, _field_type(_MODEL_FIELDS[name]))
        elif section == "paths" and name in ("corpus", "work", "checkpoint"):
            sections["paths"][name] = raw
        else:
            raise ConfigError(f"{p}:{lineno}: unknown configuration key '{key}'")
    return sections


def _load_sections(args) -> dict[str, dict]:
    if getattr(args, "config", None):
        return parse_config_file(args.config)
    return {"audio": {}, "model": {}, "train": {}, "paths": {}}


def _parse_f0_mode(spec: str) -> F0Mode:
    if spec == "natural":
        return F0Mode.natural()
    if spec.startswith("flat:"):
        try:
            return F0Mode.flat(int(spec.split(":", 1)[1]))
        except ValueError as exc:
            raise ConfigError(f"bad flat F0 bin in '{spec}'") from exc
    if spec.startswith("file:"):
        path = spec.split(":", 1)[1]
        try:
            bins = load_matrix(path)
        except (OSError, FormatError) as exc:
            raise DataError(f"cannot read external F0 file '{path}': {exc}") from exc
        if bins.ndim != 2 or bins.shape[1] != 1:
            raise DataError(f"external F0 file must be a (T, 1) bin matrix, got {bins.shape}")
        return F0Mode.external(bins[:, 0].astype(np.int64))
    raise ConfigError(f"unknown F0 mode '{spec}' (use natural, flat:<bin>, file:<path>)")


# -- commands ----------------------------------------------------------------


def cmd_prepare(args) -> int:
    sections = _load_sections(args)
    cfg = AudioConfig(**sections["audio"])
    corpus = args.corpus or sections["paths"].get("corpus")
    work = args.work or sections["paths"].get("work")
    if not corpus or not work:
        raise ConfigError("prepare needs --corpus and --work (or paths.* config keys)")
    manifest = prepare_corpus(corpus, work, cfg)
    n_train = sum(len(s.train_utts) for s in manifest.speakers)
    n_test = sum(len(s.test_utts) for s in manifest.speakers)
    print(f"prepared {manifest.n_speakers} speakers: {n_train} train / {n_test} test utterances")
    for s in manifest.speakers:
        print(f"  {s.speaker_id} (index {s.index}): mu={s.stats.mu:.4f} "
              f"sigma={s.stats.sigma:.4f} voiced_frames={s.stats.n_frames}")
    return 0


def cmd_train(args) -> int:
    sections = _load_sections(args)
    audio_cfg = AudioConfig(**sections["audio"])
    work = Path(args.work or sections["paths"].get("work") or ".")
    manifest = CorpusManifest.load(work / MANIFEST_NAME)

    train_kwargs = dict(sections["train"])
    if args.iterations is not None:
        train_kwargs["iterations"] = args.iterations
    if args.seed is not None:
        train_kwargs["seed"] = args.seed
    train_cfg = TrainConfig(**train_kwargs)

    ckpt = Path(args.checkpoint or sections["paths"].get("checkpoint") or work / "checkpoint.bin")
    log_path = work / "training_log.csv"

    if args.resume:
        trainer = Trainer.resume(ckpt, manifest, audio_cfg, work)
        if args.iterations is not None:
            trainer.train_cfg = replace(trainer.train_cfg, iterations=args.iterations)
        print(f"resumed from {ckpt} at iteration {trainer.iteration}")
    else:
        model_kwargs = dict(sections["model"])
        if args.no_f0:
            model_kwargs["use_f0"] = False
        model_cfg = ModelConfig(n_speakers=manifest.n_speakers, **model_kwargs)
        trainer = Trainer(manifest, model_cfg, train_cfg, audio_cfg, work)

    rows = trainer.train(log_path=log_path, checkpoint_path=ckpt, resume_log=args.resume)
    if rows:
        print(f"trained {len(rows)} iterations; final loss {rows[-1]['loss_total']:.4f}")
    print(f"checkpoint: {ckpt}")
    print(f"log: {log_path}")
    return 0


def _speaker_record(meta: dict, speaker_id: str) -> dict:
    for rec in meta["speakers"]:
        if rec["speaker_id"] == speaker_id:
            return rec
    known = ", ".join(r["speaker_id"] for r in meta["speakers"])
    raise DataError(f"unknown speaker '{speaker_id}'; checkpoint knows: {known}")


def cmd_convert(args) -> int:
    model, meta = load_model(args.checkpoint)
    audio_cfg = audio_cfg_from_dict(meta["audio_config"])
    src = _speaker_record(meta, args.src_speaker)
    tgt = _speaker_record(meta, args.tgt_speaker)
    mode = _parse_f0_mode(args.f0)

    wav = load_wav(args.src_wav, audio_cfg)
    mel = mel_spectrogram(wav, audio_cfg)
    contour = extract_f0(wav, audio_cfg)
    stats = SpeakerF0Stats(src["mu"], src["sigma"], src["n_frames"])
    converted = model.convert(mel, contour, stats, src["index"], tgt["index"], mode)

    out = ensure_dir(args.out)
    stem = f"{Path(args.src_wav).stem}_{args.src_speaker}_to_{args.tgt_speaker}"
    mel_path = out / f"{stem}.mel.bin"
    wav_path = out / f"{stem}.wav"
    save_matrix(mel_path, converted.frames)
    save_wav(wav_path, griffin_lim(converted, audio_cfg, iters=args.gl_iters))
    print(f"f0 mode: {args.f0}")
    print(f"wrote {mel_path}")
    print(f"wrote {wav_path}")
    return 0


def cmd_eval(args) -> int:
    sections = _load_sections(args)
    model, meta = load_model(args.checkpoint)
    audio_cfg = audio_cfg_from_dict(meta["audio_config"])
    work = Path(args.work or sections["paths"].get("work") or ".")
    manifest = CorpusManifest.load(work / MANIFEST_NAME)
    out = ensure_dir(args.out or work / "studies" / args.study)
    pairs = all_pairs(manifest) if args.pairs == "all" else cross_group_pairs(manifest)

    summary: dict = {"study": args.study, "pairs": [f"{a}->{b}" for a, b in pairs]}
    if args.study == "dist":
        bundle = run_conversion_study(model, manifest, work, audio_cfg, pairs,
                                      F0Mode.natural(), args.utts_per_pair)
        series = {f"gt_{sid}": h for sid, h in bundle.gt_histograms.items()}
        for direction in sorted(bundle.direction_js):
            pooled = np.concatenate([r.conv_log_f0 for r in bundle.rows
                                     if r.direction == direction])
            series[f"converted_{direction}"] = f0_histogram(pooled, bundle.edges)
        write_histogram_csv(out / "histograms.csv", series)
        summary["js_divergence"] = bundle.direction_js
    elif args.study == "consistency":
        bundle = run_conversion_study(model, manifest, work, audio_cfg, pairs,
                                      F0Mode.natural(), args.utts_per_pair)
        write_consistency_csv(out / "consistency.csv", bundle.rows)
        summary["median_abs_log_f0_error"] = bundle.direction_median_abs_err
        summary["voicing_mismatch_rate"] = {
            r.utt: r.consistency.voicing_mismatch_rate for r in bundle.rows
        }
    elif args.study == "flat":
        bundle = run_conversion_study(model, manifest, work, audio_cfg, pairs,
                                      F0Mode.flat(args.flat_bin), args.utts_per_pair)
        with open(out / "flat.csv", "w", newline="") as fh:
            fh.write("src,tgt,utt,std_flat,std_natural\n")
            for r in bundle.rows:
                fh.write(f"{r.src},{r.tgt},{r.utt},{r.flat_std},{r.natural_std}\n")
        ratios = [r.flat_std / r.natural_std for r in bundle.rows
                  if r.flat_std is not None and r.natural_std]
        summary["flat_bin"] = args.flat_bin
        summary["flat_to_natural_std_ratio_median"] = float(np.median(ratios)) if ratios else None
    elif args.study == "leakage":
        if not model.cfg.use_f0:
            raise DataError("leakage study needs an F0-conditioned checkpoint")
        decoder_ckpt = work / "leakage_decoder.bin"
        train_kwargs = dict(sections["train"])
        train_cfg = TrainConfig(**train_kwargs)
        if decoder_ckpt.exists():
            no_f0_model, _ = load_model(decoder_ckpt)
        else:
            print("no cached frozen-encoder decoder; training one...")
            no_f0_model = train_leakage_decoder(model, manifest, train_cfg, audio_cfg, work)
            helper = Trainer(manifest, no_f0_model.cfg, train_cfg, audio_cfg, work,
                             model=no_f0_model, encoder_frozen=True)
            helper.iteration = train_cfg.iterations
            helper.save(decoder_ckpt)
            print(f"cached frozen-encoder decoder: {decoder_ckpt}")
        report = bottleneck_leakage_experiment(
            model, manifest, train_cfg, audio_cfg, work, pairs,
            args.utts_per_pair, no_f0_model=no_f0_model)
        write_leakage_csv(out / "leakage.csv", report.rows_no_f0)
        summary["leakage"] = report.summary()
    else:  # pragma: no cover - argparse choices guard this
        raise ConfigError(f"unknown study '{args.study}'; valid: {', '.join(STUDIES)}")

    write_summary_json(out / "summary.json", summary)
    print(f"study '{args.study}' written to {out}")
    for key, value in summary.items():
        if key not in ("pairs", "voicing_mismatch_rate"):
            print(f"  {key}: {value}")
    return 0


# -- entry point ---------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="f0vc",
        description="F0-conditioned autoencoder voice conversion",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="scan a corpus, cache features, compute F0 stats")
    p.add_argument("--corpus", help="corpus root: <root>/<speaker>/*.wav")
    p.add_argument("--work", help="work directory for cached features and manifest")
    p.add_argument("--config", help="key=value config file")
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="train on self-reconstruction")
    p.add_argument("--work", help="work directory from prepare")
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--iterations", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--no-f0", action="store_true", help="train the baseline without F0 conditioning")
    p.add_argument("--resume", action="store_true", help="continue from the checkpoint")
    p.add_argument("--checkpoint", help="checkpoint path (default <work>/checkpoint.bin)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("convert", help="convert one utterance to a target speaker")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--src-wav", required=True)
    p.add_argument("--src-speaker", required=True)
    p.add_argument("--tgt-speaker", required=True)
    p.add_argument("--f0", default="natural", help="natural | flat:<bin> | file:<path>")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--gl-iters", type=int, default=32)
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("eval", help="run a quantitative study")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--work", help="work directory from prepare")
    p.add_argument("--study", required=True, choices=STUDIES)
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--out", help="output directory (default <work>/studies/<study>)")
    p.add_argument("--pairs", choices=("cross", "all"), default="cross")
    p.add_argument("--utts-per-pair", type=int, default=2)
    p.add_argument("--flat-bin", type=int, default=128)
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (DataError, AudioError, FormatError, ShapeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except F0VCError as exc:  # pragma: no cover - catch-all for new subtypes
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
