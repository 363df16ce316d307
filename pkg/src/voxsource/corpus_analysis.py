"""Sung-vs-spoken distributional analyses over phone-annotated corpora.

Segments are grouped into cohorts by speaking style, gender and phone
class; each cohort yields a normalized histogram plus summary statistics.
Metadata (utterance id -> style, gender) comes from the corpus manifest.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .evaluation import HistogramDistribution, bhattacharyya, uniform_edges
from .pitch_tracker import PitchTrack

STYLES = ("sung", "spoken")
GENDERS = ("male", "female", "any")
WILDCARD = "*"
SILENCE_CLASS = "silence"


class AnnotationError(ValueError):
    pass


class EmptyCohortError(ValueError):
    pass


@dataclass(frozen=True, order=True)
class PhoneSegment:
    utterance_id: str
    start_s: float
    end_s: float
    label: str

    def __post_init__(self):
        if not self.end_s > self.start_s:
            raise AnnotationError(f"segment end {self.end_s} not after start {self.start_s}")
        if not self.label:
            raise AnnotationError("empty phone label")

    @property
    def duration_s(self) -> float:
        return self.end_s - self.start_s


@dataclass(frozen=True)
class UtteranceMeta:
    style: str
    gender: str


def normalize_label(label: str) -> str:
    """Lower-case and drop stress digits (``AH1`` -> ``ah``)."""
    return re.sub(r"\d+$", "", label.strip().lower())


def load_phone_classes(path: str | Path | None = None) -> dict[str, frozenset]:
    """Phone-class inventory; the bundled table unless ``path`` is given."""
    if path is None:
        text = resources.files("voxsource").joinpath("data/phone_classes.json").read_text()
    else:
        text = Path(path).read_text()
    return {name: frozenset(normalize_label(p) for p in phones) for name, phones in json.loads(text).items()}


def load_annotations(path: str | Path, utterance_id: str | None = None) -> list[PhoneSegment]:
    """Read ``start end label`` rows (whitespace separated, seconds).

    Blank lines and ``#`` comments are skipped. The utterance id defaults to
    the file stem. Segments come back sorted by start time.
    """
    path = Path(path)
    utt = utterance_id or path.stem
    segments = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            parts = text.split()
            if len(parts) < 3:
                raise AnnotationError(f"{path}:{lineno}: expected 'start end label', got {text!r}")
            try:
                start, end = float(parts[0]), float(parts[1])
            except ValueError:
                raise AnnotationError(f"{path}:{lineno}: non-numeric time in {text!r}") from None
            try:
                segments.append(PhoneSegment(utt, start, end, " ".join(parts[2:])))
            except AnnotationError as exc:
                raise AnnotationError(f"{path}:{lineno}: {exc}") from None
    return sorted(segments)


@dataclass
class ValidationReport:
    overlaps: list = field(default_factory=list)  # (utterance_id, index_a, index_b)
    unknown_labels: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.overlaps and not self.unknown_labels

    def to_dict(self) -> dict:
        return {"overlaps": [list(o) for o in self.overlaps], "unknown_labels": list(self.unknown_labels)}


def validate_segments(segments, phone_classes: dict[str, frozenset] | None = None) -> ValidationReport:
    """Flag overlapping segments and, given an inventory, unknown labels."""
    report = ValidationReport()
    by_utt: dict[str, list] = {}
    for seg in sorted(segments):
        by_utt.setdefault(seg.utterance_id, []).append(seg)
    for utt, segs in sorted(by_utt.items()):
        for i in range(1, len(segs)):
            if segs[i].start_s < segs[i - 1].end_s:
                report.overlaps.append((utt, i - 1, i))
    if phone_classes is not None:
        known = frozenset().union(*phone_classes.values())
        report.unknown_labels = sorted({normalize_label(s.label) for s in segments} - known)
    return report


@dataclass(frozen=True)
class CohortSpec:
    """Segments matching a style, a gender and a set of phone labels.

    ``phone_class`` may contain :data:`WILDCARD` to accept any label.
    """

    style: str
    gender: str
    phone_class: frozenset
    name: str = ""

    def __post_init__(self):
        if self.style not in STYLES:
            raise ValueError(f"style must be one of {STYLES}, got {self.style!r}")
        if self.gender not in GENDERS:
            raise ValueError(f"gender must be one of {GENDERS}, got {self.gender!r}")
        phones = frozenset(normalize_label(p) if p != WILDCARD else p for p in self.phone_class)
        if not phones:
            raise ValueError("phone_class must not be empty")
        object.__setattr__(self, "phone_class", phones)
        if not self.name:
            object.__setattr__(self, "name", f"{self.style}_{self.gender}")

    def matches_utterance(self, meta: UtteranceMeta | None) -> bool:
        if meta is None or meta.style != self.style:
            return False
        return self.gender == "any" or meta.gender == self.gender

    def matches(self, segment: PhoneSegment, metadata: dict) -> bool:
        if not self.matches_utterance(metadata.get(segment.utterance_id)):
            return False
        return WILDCARD in self.phone_class or normalize_label(segment.label) in self.phone_class


@dataclass
class CohortReport:
    name: str
    histogram: HistogramDistribution
    count: int
    summary: dict

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "count": self.count,
            "summary": self.summary,
            "bin_edges": self.histogram.bin_edges.tolist(),
            "probabilities": self.histogram.probabilities.tolist(),
        }

    def table_rows(self) -> list[list]:
        e, p = self.histogram.bin_edges, self.histogram.probabilities
        return [[self.name, float(e[i]), float(e[i + 1]), float(p[i])] for i in range(p.size)]


def summarize(values) -> dict:
    v = np.sort(np.asarray(values, dtype=float))
    p5, p25, p50, p75, p95 = np.percentile(v, [5, 25, 50, 75, 95])
    return {
        "mean": float(np.mean(v)),
        "std": float(np.std(v)),
        "min": float(v[0]),
        "p5": float(p5),
        "p25": float(p25),
        "median": float(p50),
        "p75": float(p75),
        "p95": float(p95),
        "max": float(v[-1]),
        "iqr": float(p75 - p25),
    }


def _report(name: str, values, bin_edges=None, n_bins: int = 50, log_scale: bool = False) -> CohortReport:
    values = np.sort(np.asarray(values, dtype=float))
    if values.size == 0:
        raise EmptyCohortError(f"cohort {name!r} matched no data")
    edges = uniform_edges(values, n_bins=n_bins, log_scale=log_scale) if bin_edges is None else np.asarray(bin_edges)
    return CohortReport(name, HistogramDistribution.from_samples(values, edges), int(values.size), summarize(values))


def _matching(segments, cohort: CohortSpec, metadata: dict) -> list[PhoneSegment]:
    return sorted(s for s in segments if cohort.matches(s, metadata))


def duration_values(segments, cohort: CohortSpec, metadata: dict) -> np.ndarray:
    return np.array([s.duration_s for s in _matching(segments, cohort, metadata)])


def duration_distribution(segments, cohort: CohortSpec, metadata: dict, bin_edges=None,
                          n_bins: int = 50) -> CohortReport:
    """Histogram of segment durations (seconds) for ``cohort``."""
    return _report(cohort.name, duration_values(segments, cohort, metadata), bin_edges, n_bins)


def frames_in_segment(track: PitchTrack, segment: PhoneSegment) -> np.ndarray:
    """Indices of frames whose center lies in ``[start_s, end_s)``."""
    return np.flatnonzero((track.time_s >= segment.start_s) & (track.time_s < segment.end_s))


def _frame_values(segments, tracks: dict, cohort: CohortSpec, metadata: dict, column: str,
                  voiced_threshold: float | None = None) -> np.ndarray:
    out = []
    for seg in _matching(segments, cohort, metadata):
        track = tracks.get(seg.utterance_id)
        if track is None:
            raise KeyError(f"no pitch track for utterance {seg.utterance_id!r}")
        idx = frames_in_segment(track, seg)
        if voiced_threshold is not None:
            idx = idx[track.pov_feature[idx] < voiced_threshold]
        out.append(getattr(track, column)[idx])
    return np.concatenate(out) if out else np.zeros(0)


def pitch_values(segments, tracks: dict, cohort: CohortSpec, metadata: dict,
                 voiced_threshold: float) -> np.ndarray:
    return _frame_values(segments, tracks, cohort, metadata, "pitch_hz", voiced_threshold)


def pitch_distribution(segments, tracks: dict, cohort: CohortSpec, metadata: dict, voiced_threshold: float,
                       bin_edges=None, n_bins: int = 50, log_scale: bool = False) -> CohortReport:
    """Histogram of voiced-frame pitch (Hz) inside the cohort's segments."""
    values = pitch_values(segments, tracks, cohort, metadata, voiced_threshold)
    return _report(cohort.name, values, bin_edges, n_bins, log_scale)


def pov_values(segments, tracks: dict, cohort: CohortSpec, metadata: dict) -> np.ndarray:
    return _frame_values(segments, tracks, cohort, metadata, "pov_feature")


def pov_class_separation(segments, tracks: dict, class_a: CohortSpec, class_b: CohortSpec, metadata: dict,
                         bin_edges=None, n_bins: int = 50):
    """POV histograms of two cohorts on shared bins, and their Bhattacharyya distance."""
    a = pov_values(segments, tracks, class_a, metadata)
    b = pov_values(segments, tracks, class_b, metadata)
    for cohort, vals in ((class_a, a), (class_b, b)):
        if vals.size == 0:
            raise EmptyCohortError(f"cohort {cohort.name!r} matched no frames")
    edges = uniform_edges(a, b, n_bins=n_bins) if bin_edges is None else np.asarray(bin_edges)
    rep_a = _report(class_a.name, a, edges)
    rep_b = _report(class_b.name, b, edges)
    return rep_a, rep_b, bhattacharyya(rep_a.histogram, rep_b.histogram)


VQ_MEASURES = ("jitta_s", "rap", "shimmer", "hnr_db")


@dataclass
class VqComparison:
    cohorts: list  # cohort names, in the order given
    stats: dict  # cohort name -> measure -> {"n", "mean", "median", "iqr"}

    def long_rows(self) -> list[list]:
        rows = []
        for name in self.cohorts:
            for measure in VQ_MEASURES:
                s = self.stats[name][measure]
                rows.append([name, measure, s["n"], s["mean"], s["median"], s["iqr"]])
        return rows

    def wide_rows(self) -> list[list]:
        """One row per (measure, statistic), one column per cohort."""
        rows = []
        for measure in VQ_MEASURES:
            for stat in ("n", "mean", "median", "iqr"):
                rows.append([measure, stat] + [self.stats[c][measure][stat] for c in self.cohorts])
        return rows

    def to_dict(self) -> dict:
        return {"cohorts": list(self.cohorts), "stats": self.stats}


def vq_style_comparison(reports: dict, cohorts, metadata: dict) -> VqComparison:
    """Mean, median and IQR of each VQ measure per cohort.

    ``reports`` maps utterance id to :class:`~voxsource.voice_quality.VqReport`.
    Cohorts are matched on style and gender only. Undefined measures are
    skipped; a measure with no values gets ``None`` statistics.
    """
    stats = {}
    names = []
    for cohort in cohorts:
        members = sorted(u for u in reports if cohort.matches_utterance(metadata.get(u)))
        if not members:
            raise EmptyCohortError(f"cohort {cohort.name!r} has no VQ reports")
        names.append(cohort.name)
        per = {}
        for measure in VQ_MEASURES:
            vals = np.sort([getattr(reports[u], measure) for u in members if getattr(reports[u], measure) is not None])
            if vals.size:
                q25, q50, q75 = np.percentile(vals, [25, 50, 75])
                per[measure] = {"n": int(vals.size), "mean": float(np.mean(vals)), "median": float(q50),
                                "iqr": float(q75 - q25)}
            else:
                per[measure] = {"n": 0, "mean": None, "median": None, "iqr": None}
        stats[cohort.name] = per
    return VqComparison(names, stats)
