"""Quantitative studies of converted speech.

Four metrics: voiced log-F0 distribution match (histogram + Jensen-Shannon
divergence against the target speaker's ground truth), per-frame consistency
against the pseudo-F0 reference, flat-conditioning controllability (per
utterance log-F0 spread), and the bottleneck leakage probe (a freshly trained
no-F0 decoder on a frozen encoder, measured by correlation of its output F0
with the input F0).

Unvoiced frames never enter an F0 statistic.  Converted audio is obtained by
Griffin-Lim inversion and re-analyzed with the same pitch tracker as the
ground truth, so tracker bias cancels in every comparison.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .corpus import CorpusManifest, load_features
from .dsp import AudioConfig, F0Contour, MelSpectrogram, extract_f0, griffin_lim
from .errors import DataError, ShapeError
from .f0codec import SpeakerF0Stats, pseudo_contour
from .model import F0Mode, ModelConfig, VoiceConversionModel
from .storage import ensure_dir

DEFAULT_HIST_BINS = 64


@dataclass(frozen=True)
class F0Histogram:
    edges: np.ndarray   # uniform bin edges over log-F0
    mass: np.ndarray    # normalized, sums to 1

    def __post_init__(self):
        if len(self.edges) != len(self.mass) + 1:
            raise ShapeError(f"{len(self.edges)} edges vs {len(self.mass)} masses")

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[:-1] + self.edges[1:])


def f0_histogram(log_f0_values: np.ndarray, edges: np.ndarray) -> F0Histogram:
    """Normalized histogram of voiced log-F0 values over the given edges."""
    values = np.asarray(log_f0_values, dtype=np.float64)
    if values.size == 0:
        raise DataError("cannot build an F0 histogram from zero voiced frames")
    counts, _ = np.histogram(np.clip(values, edges[0], edges[-1]), bins=edges)
    return F0Histogram(np.asarray(edges, dtype=np.float64), counts / counts.sum())


def histogram_edges(cfg: AudioConfig, n_bins: int = DEFAULT_HIST_BINS) -> np.ndarray:
    """Shared log-F0 edges spanning the tracker's representable range."""
    return np.linspace(np.log(cfg.f0_min), np.log(cfg.f0_max), n_bins + 1)


def js_divergence(a: F0Histogram, b: F0Histogram) -> float:
    """Jensen-Shannon divergence (natural log), bounded by ln 2."""
    if a.edges.shape != b.edges.shape or not np.allclose(a.edges, b.edges):
        raise DataError("histograms use different bin edges")
    p, q = a.mass, b.mass
    m = 0.5 * (p + q)

    def kl(x, y):
        nz = x > 0
        return float(np.sum(x[nz] * np.log(x[nz] / y[nz])))

    return 0.5 * kl(p, m) + 0.5 * kl(q, m)


@dataclass
class ConsistencyReport:
    frames: np.ndarray          # indices of frames voiced in both contours
    reference: np.ndarray       # reference log-F0 on those frames
    converted: np.ndarray       # converted log-F0 on those frames
    errors: np.ndarray          # converted minus reference
    voicing_mismatch_rate: float
    n_pairs: int
    empty: bool

    @classmethod
    def from_contours(cls, converted: F0Contour, reference: F0Contour) -> "ConsistencyReport":
        if len(converted) != len(reference):
            raise ShapeError(f"contour lengths differ: {len(converted)} vs {len(reference)}")
        both = converted.voiced & reference.voiced
        either = converted.voiced | reference.voiced
        mismatch = float((either & ~both).sum() / max(either.sum(), 1))
        ref = np.log(reference.f0_hz[both])
        conv = np.log(converted.f0_hz[both])
        return cls(frames=np.nonzero(both)[0], reference=ref, converted=conv,
                   errors=conv - ref, voicing_mismatch_rate=mismatch,
                   n_pairs=int(both.sum()), empty=bool(both.sum() == 0))

    @property
    def mean(self) -> float:
        return float(self.errors.mean()) if not self.empty else float("nan")

    @property
    def median(self) -> float:
        return float(np.median(self.errors)) if not self.empty else float("nan")

    @property
    def std(self) -> float:
        return float(self.errors.std()) if not self.empty else float("nan")

    @property
    def median_abs(self) -> float:
        return float(np.median(np.abs(self.errors))) if not self.empty else float("nan")


def pearson(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"correlation needs equal lengths, got {a.shape} vs {b.shape}")
    if a.size < 2 or a.std() == 0 or b.std() == 0:
        return 0.0
    return float(np.corrcoef(a, b)[0, 1])


@dataclass
class ConversionRow:
    src: str
    tgt: str
    utt: str
    direction: str
    conv_log_f0: np.ndarray
    consistency: ConsistencyReport
    flat_std: Optional[float] = None
    natural_std: Optional[float] = None
    corr_input: Optional[float] = None
    corr_pseudo: Optional[float] = None


@dataclass
class StudyBundle:
    mode: str
    rows: list[ConversionRow]
    edges: np.ndarray
    gt_histograms: dict[str, F0Histogram]
    direction_js: dict[str, float] = field(default_factory=dict)
    direction_median_abs_err: dict[str, float] = field(default_factory=dict)

    def pooled_errors(self, direction: str) -> np.ndarray:
        chunks = [r.consistency.errors for r in self.rows
                  if r.direction == direction and not r.consistency.empty]
        return np.concatenate(chunks) if chunks else np.empty(0)


def speaker_groups(manifest: CorpusManifest) -> dict[str, str]:
    """Tag each speaker low/high by its mean log-F0 against the corpus median."""
    mus = {s.speaker_id: s.stats.mu for s in manifest.speakers}
    cut = float(np.median(list(mus.values())))
    return {sid: ("low" if mu <= cut else "high") for sid, mu in mus.items()}


def cross_group_pairs(manifest: CorpusManifest) -> list[tuple[str, str]]:
    groups = speaker_groups(manifest)
    return [(a.speaker_id, b.speaker_id)
            for a in manifest.speakers for b in manifest.speakers
            if a.speaker_id != b.speaker_id
            and groups[a.speaker_id] != groups[b.speaker_id]]


def all_pairs(manifest: CorpusManifest) -> list[tuple[str, str]]:
    return [(a.speaker_id, b.speaker_id)
            for a in manifest.speakers for b in manifest.speakers
            if a.speaker_id != b.speaker_id]


def direction_label(src: str, tgt: str, groups: dict[str, str]) -> str:
    a, b = groups[src], groups[tgt]
    return "same" if a == b else f"{a}2{b}"


def ground_truth_histograms(manifest: CorpusManifest, work_dir,
                            cfg: AudioConfig, edges: np.ndarray) -> dict[str, F0Histogram]:
    """Per-speaker voiced log-F0 histograms from the cached training features."""
    out = {}
    for speaker in manifest.speakers:
        values = []
        for rel in speaker.train_utts:
            _, contour = load_features(work_dir, rel, cfg)
            values.append(contour.voiced_log_f0())
        out[speaker.speaker_id] = f0_histogram(np.concatenate(values), edges)
    return out


def convert_and_track(model: VoiceConversionModel, mel: MelSpectrogram,
                      contour: F0Contour, src_stats: SpeakerF0Stats,
                      src_index: int, tgt_index: int, mode: F0Mode,
                      cfg: AudioConfig, gl_iters: int = 32) -> tuple[F0Contour, MelSpectrogram]:
    """convert -> Griffin-Lim -> pitch track; the shared measurement path."""
    converted = model.convert(mel, contour, src_stats, src_index, tgt_index, mode)
    wav = griffin_lim(converted, cfg, iters=gl_iters)
    return extract_f0(wav, cfg), converted


def run_conversion_study(model: VoiceConversionModel, manifest: CorpusManifest,
                         work_dir, cfg: AudioConfig, pairs: list[tuple[str, str]],
                         mode: F0Mode = F0Mode.natural(), utts_per_pair: int = 2,
                         hist_bins: int = DEFAULT_HIST_BINS,
                         gl_iters: int = 32) -> StudyBundle:
    """Convert held-out utterances over the given speaker pairs and aggregate
    per-direction F0 histograms, JS against target ground truth, and
    consistency against the pseudo-F0 reference."""
    edges = histogram_edges(cfg, hist_bins)
    gt = ground_truth_histograms(manifest, work_dir, cfg, edges)
    groups = speaker_groups(manifest)
    flat_mode = mode.kind == "flat"

    rows: list[ConversionRow] = []
    for src_id, tgt_id in pairs:
        src = manifest.by_id(src_id)
        tgt = manifest.by_id(tgt_id)
        for rel in src.test_utts[:utts_per_pair]:
            mel, contour = load_features(work_dir, rel, cfg)
            conv_contour, _ = convert_and_track(
                model, mel, contour, src.stats, src.index, tgt.index, mode, cfg, gl_iters)
            reference = pseudo_contour(contour, src.stats, tgt.stats)
            report = ConsistencyReport.from_contours(conv_contour, reference)
            row = ConversionRow(
                src=src_id, tgt=tgt_id, utt=rel,
                direction=direction_label(src_id, tgt_id, groups),
                conv_log_f0=conv_contour.voiced_log_f0(),
                consistency=report,
            )
            if flat_mode:
                natural_contour, _ = convert_and_track(
                    model, mel, contour, src.stats, src.index, tgt.index,
                    F0Mode.natural(), cfg, gl_iters)
                if conv_contour.voiced.any():
                    row.flat_std = float(conv_contour.voiced_log_f0().std())
                if natural_contour.voiced.any():
                    row.natural_std = float(natural_contour.voiced_log_f0().std())
            rows.append(row)

    bundle = StudyBundle(mode=mode.kind, rows=rows, edges=edges, gt_histograms=gt)
    directions = sorted({r.direction for r in rows})
    for direction in directions:
        pooled = np.concatenate([r.conv_log_f0 for r in rows if r.direction == direction])
        # target ground truth histogram pooled over the targets of this direction
        tgt_ids = sorted({r.tgt for r in rows if r.direction == direction})
        gt_mass = np.mean([gt[t].mass for t in tgt_ids], axis=0)
        gt_pooled = F0Histogram(edges, gt_mass / gt_mass.sum())
        if pooled.size:
            bundle.direction_js[direction] = js_divergence(
                f0_histogram(pooled, edges), gt_pooled)
        errors = bundle.pooled_errors(direction)
        if errors.size:
            bundle.direction_median_abs_err[direction] = float(np.median(np.abs(errors)))
    return bundle


def leakage_correlations(model: VoiceConversionModel, manifest: CorpusManifest,
                         work_dir, cfg: AudioConfig, pairs: list[tuple[str, str]],
                         utts_per_pair: int = 2, use_f0_mode: Optional[F0Mode] = None,
                         gl_iters: int = 32) -> list[ConversionRow]:
    """Correlations of converted F0 with the input F0 and with the pseudo-F0.

    Works for both the F0-conditioned model (natural mode) and the no-F0
    decoder (mode ignored).
    """
    mode = use_f0_mode or F0Mode.natural()
    groups = speaker_groups(manifest)
    rows = []
    for src_id, tgt_id in pairs:
        src = manifest.by_id(src_id)
        tgt = manifest.by_id(tgt_id)
        for rel in src.test_utts[:utts_per_pair]:
            mel, contour = load_features(work_dir, rel, cfg)
            conv_contour, _ = convert_and_track(
                model, mel, contour, src.stats, src.index, tgt.index, mode, cfg, gl_iters)
            reference = pseudo_contour(contour, src.stats, tgt.stats)
            both = conv_contour.voiced & contour.voiced
            row = ConversionRow(
                src=src_id, tgt=tgt_id, utt=rel,
                direction=direction_label(src_id, tgt_id, groups),
                conv_log_f0=conv_contour.voiced_log_f0(),
                consistency=ConsistencyReport.from_contours(conv_contour, reference),
            )
            if both.sum() >= 8:
                conv_v = np.log(conv_contour.f0_hz[both])
                row.corr_input = pearson(conv_v, np.log(contour.f0_hz[both]))
                row.corr_pseudo = pearson(conv_v, np.log(reference.f0_hz[both]))
            rows.append(row)
    return rows


@dataclass
class LeakageReport:
    rows_no_f0: list[ConversionRow]
    rows_full: list[ConversionRow]

    def summary(self) -> dict:
        no_f0_in = [abs(r.corr_input) for r in self.rows_no_f0 if r.corr_input is not None]
        full_pseudo = [r.corr_pseudo for r in self.rows_full if r.corr_pseudo is not None]
        return {
            "no_f0_abs_corr_input_median": float(np.median(no_f0_in)) if no_f0_in else None,
            "no_f0_abs_corr_input_mean": float(np.mean(no_f0_in)) if no_f0_in else None,
            "full_corr_pseudo_median": float(np.median(full_pseudo)) if full_pseudo else None,
            "full_corr_pseudo_mean": float(np.mean(full_pseudo)) if full_pseudo else None,
        }


def train_leakage_decoder(base_model: VoiceConversionModel, manifest: CorpusManifest,
                          train_cfg, audio_cfg: AudioConfig, work_dir,
                          iterations: Optional[int] = None) -> VoiceConversionModel:
    """New decoder conditioned on speaker identity only, trained on
    self-reconstruction with the given model's encoder copied in and frozen."""
    from dataclasses import replace as dc_replace

    from .train import Trainer

    base_cfg = base_model.cfg
    if not base_cfg.use_f0:
        raise DataError("leakage probe needs an F0-conditioned base model")
    hybrid = VoiceConversionModel(dc_replace(base_cfg, use_f0=False),
                                  seed=train_cfg.seed + 1)
    base_params = base_model.named_parameters()
    for name, p in hybrid.named_parameters().items():
        if name.startswith("enc_"):
            p.data = base_params[name].data.copy()
            p.requires_grad = False
    base_buffers = base_model.named_buffers()
    for name, b in hybrid.named_buffers().items():
        if name.startswith("enc_"):
            b[...] = base_buffers[name]

    trainer = Trainer(manifest, hybrid.cfg, train_cfg, audio_cfg, work_dir,
                      model=hybrid, encoder_frozen=True)
    trainer.train(iterations=iterations)
    return hybrid


def bottleneck_leakage_experiment(f0_model: VoiceConversionModel, manifest: CorpusManifest,
                                  train_cfg, audio_cfg: AudioConfig, work_dir,
                                  pairs: Optional[list[tuple[str, str]]] = None,
                                  utts_per_pair: int = 2,
                                  iterations: Optional[int] = None,
                                  no_f0_model: Optional[VoiceConversionModel] = None,
                                  gl_iters: int = 32) -> LeakageReport:
    """Does input F0 survive the bottleneck?  Compares a frozen-encoder no-F0
    decoder's output-F0 correlation with the input F0 against the full model's
    correlation with its conditioned pseudo-F0."""
    if pairs is None:
        pairs = cross_group_pairs(manifest)
    if no_f0_model is None:
        no_f0_model = train_leakage_decoder(f0_model, manifest, train_cfg,
                                            audio_cfg, work_dir, iterations)
    rows_no_f0 = leakage_correlations(no_f0_model, manifest, work_dir, audio_cfg,
                                      pairs, utts_per_pair, gl_iters=gl_iters)
    rows_full = leakage_correlations(f0_model, manifest, work_dir, audio_cfg,
                                     pairs, utts_per_pair, gl_iters=gl_iters)
    return LeakageReport(rows_no_f0=rows_no_f0, rows_full=rows_full)


# -- CSV / JSON writers ------------------------------------------------------


def write_histogram_csv(path, series: dict[str, F0Histogram]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bin_center", "mass", "series"])
        for name, hist in series.items():
            for center, mass in zip(hist.centers, hist.mass):
                w.writerow([f"{center:.8g}", f"{mass:.8g}", name])


def write_consistency_csv(path, rows: list[ConversionRow]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["frame", "reference", "converted", "error", "src", "tgt", "utt"])
        for row in rows:
            rep = row.consistency
            for frame, ref, conv, err in zip(rep.frames, rep.reference,
                                             rep.converted, rep.errors):
                w.writerow([int(frame), f"{ref:.8g}", f"{conv:.8g}", f"{err:.8g}",
                            row.src, row.tgt, row.utt])


def write_leakage_csv(path, rows: list[ConversionRow]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["pair", "corr_input", "corr_pseudo"])
        for row in rows:
            if row.corr_input is not None:
                w.writerow([f"{row.src}->{row.tgt}/{Path(row.utt).stem}",
                            f"{row.corr_input:.8g}", f"{row.corr_pseudo:.8g}"])


def write_summary_json(path, summary: dict) -> None:
    Path(path).write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
