"""Corpus manifest, deterministic train/test split, and the feature cache.

Corpus layout on disk is <root>/<speaker_id>/*.wav.  prepare_corpus analyzes
every utterance once (mel + F0 matrices under <work>/features/) and computes
per-speaker voiced log-F0 statistics on the training split only.  The
manifest is a plain text file carrying both the speaker records and one line
per utterance, written deterministically so reruns are byte-identical.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dsp import (
    AudioConfig,
    F0Contour,
    MelSpectrogram,
    contour_to_matrix,
    extract_f0,
    load_wav,
    matrix_to_contour,
    mel_spectrogram,
)
from .errors import DataError
from .f0codec import SpeakerF0Stats, compute_stats
from .storage import ensure_dir, load_matrix, save_matrix

MANIFEST_NAME = "manifest.txt"
MANIFEST_HEADER = "f0vc-manifest v1"


@dataclass
class SpeakerEntry:
    speaker_id: str
    index: int
    stats: SpeakerF0Stats
    train_utts: list[str] = field(default_factory=list)
    test_utts: list[str] = field(default_factory=list)


@dataclass
class CorpusManifest:
    speakers: list[SpeakerEntry]

    def __post_init__(self):
        indices = sorted(s.index for s in self.speakers)
        if indices != list(range(len(self.speakers))):
            raise DataError(f"speaker indices must be dense 0..N-1, got {indices}")
        seen: set[str] = set()
        for s in self.speakers:
            for utt in s.train_utts + s.test_utts:
                if utt in seen:
                    raise DataError(f"utterance in both splits or duplicated: {utt}")
                seen.add(utt)

    @property
    def n_speakers(self) -> int:
        return len(self.speakers)

    def by_id(self, speaker_id: str) -> SpeakerEntry:
        for s in self.speakers:
            if s.speaker_id == speaker_id:
                return s
        raise DataError(f"unknown speaker '{speaker_id}'; known: "
                        + ", ".join(s.speaker_id for s in self.speakers))

    def by_index(self, index: int) -> SpeakerEntry:
        for s in self.speakers:
            if s.index == index:
                return s
        raise DataError(f"no speaker with index {index}")

    def speaker_table(self) -> list[dict]:
        return [
            {"speaker_id": s.speaker_id, "index": s.index, "mu": s.stats.mu,
             "sigma": s.stats.sigma, "n_frames": s.stats.n_frames}
            for s in self.speakers
        ]

    def save(self, path) -> None:
        lines = [MANIFEST_HEADER]
        for s in sorted(self.speakers, key=lambda e: e.index):
            lines.append(
                f"speaker {s.speaker_id} {s.index} {s.stats.mu!r} {s.stats.sigma!r} {s.stats.n_frames}"
            )
        for s in sorted(self.speakers, key=lambda e: e.index):
            for utt in s.train_utts:
                lines.append(f"utt {s.speaker_id} {utt} train")
            for utt in s.test_utts:
                lines.append(f"utt {s.speaker_id} {utt} test")
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path) -> "CorpusManifest":
        p = Path(path)
        if not p.exists():
            raise DataError(f"no manifest at {p}; run prepare first")
        lines = p.read_text().splitlines()
        if not lines or lines[0] != MANIFEST_HEADER:
            raise DataError(f"{p}: not a corpus manifest")
        speakers: dict[str, SpeakerEntry] = {}
        for ln in lines[1:]:
            if not ln.strip():
                continue
            parts = ln.split()
            if parts[0] == "speaker" and len(parts) == 6:
                sid, idx, mu, sigma, n = parts[1:]
                speakers[sid] = SpeakerEntry(
                    speaker_id=sid, index=int(idx),
                    stats=SpeakerF0Stats(float(mu), float(sigma), int(n)),
                )
            elif parts[0] == "utt" and len(parts) == 4:
                _, sid, rel, split = parts
                if sid not in speakers:
                    raise DataError(f"{p}: utterance for unknown speaker '{sid}'")
                if split == "train":
                    speakers[sid].train_utts.append(rel)
                elif split == "test":
                    speakers[sid].test_utts.append(rel)
                else:
                    raise DataError(f"{p}: bad split '{split}'")
            else:
                raise DataError(f"{p}: malformed manifest line: {ln}")
        return cls(list(speakers.values()))


def split_utterances(names: list[str]) -> tuple[list[str], list[str]]:
    """90/10 split, deterministic by hash of the sorted relative names."""
    ordered = sorted(names)
    n_test = max(1, round(len(ordered) / 10))
    ranked = sorted(ordered, key=lambda n: (hashlib.sha1(n.encode()).hexdigest(), n))
    test = set(ranked[:n_test])
    return [n for n in ordered if n not in test], [n for n in ordered if n in test]


def feature_paths(work_dir, rel_utt: str) -> tuple[Path, Path]:
    base = Path(work_dir) / "features" / Path(rel_utt).with_suffix("")
    return base.with_suffix(".mel.bin"), base.with_suffix(".f0.bin")


def load_features(work_dir, rel_utt: str, cfg: AudioConfig) -> tuple[MelSpectrogram, F0Contour]:
    mel_path, f0_path = feature_paths(work_dir, rel_utt)
    if not mel_path.exists() or not f0_path.exists():
        raise DataError(f"missing cached features for {rel_utt}; run prepare first")
    return (MelSpectrogram(load_matrix(mel_path), cfg),
            matrix_to_contour(load_matrix(f0_path)))


def prepare_corpus(corpus_dir, work_dir, cfg: AudioConfig) -> CorpusManifest:
    """Scan, split, analyze, and cache the corpus; returns the saved manifest."""
    root = Path(corpus_dir)
    if not root.is_dir():
        raise DataError(f"corpus directory not found: {root}")
    speaker_dirs = sorted(d for d in root.iterdir() if d.is_dir())
    if len(speaker_dirs) < 2:
        raise DataError(f"need at least 2 speakers, found {len(speaker_dirs)} in {root}")

    work = ensure_dir(work_dir)
    produced: list[str] = []
    entries: list[SpeakerEntry] = []
    for index, sdir in enumerate(speaker_dirs):
        wavs = sorted(p.name for p in sdir.glob("*.wav"))
        if not wavs:
            raise DataError(f"speaker directory has no wav files: {sdir}")
        rels = [f"{sdir.name}/{name}" for name in wavs]
        train, test = split_utterances(rels)

        train_contours: list[F0Contour] = []
        for rel in train + test:
            wav = load_wav(root / rel, cfg)
            mel = mel_spectrogram(wav, cfg)
            contour = extract_f0(wav, cfg)
            mel_path, f0_path = feature_paths(work, rel)
            ensure_dir(mel_path.parent)
            save_matrix(mel_path, mel.frames)
            save_matrix(f0_path, contour_to_matrix(contour))
            produced += [str(mel_path.relative_to(work)), str(f0_path.relative_to(work))]
            if rel in set(train):
                train_contours.append(contour)

        try:
            stats = compute_stats(train_contours)
        except DataError as exc:
            raise DataError(f"speaker '{sdir.name}': {exc}") from exc
        entries.append(SpeakerEntry(sdir.name, index, stats, train, test))

    manifest = CorpusManifest(entries)
    manifest.save(work / MANIFEST_NAME)
    produced.append(MANIFEST_NAME)
    (work / "produced_prepare.txt").write_text("\n".join(sorted(produced)) + "\n")
    return manifest
