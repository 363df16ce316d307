"""Pitch-tracker scoring, voicing-threshold estimation and grid search."""
from __future__ import annotations

import itertools
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .pitch_tracker import PitchConfig, PitchTrack, extract_pitch
from .signal_io import AudioBuffer

log = logging.getLogger(__name__)

GPE_THRESHOLD_SEMITONES = 1.0
# Bhattacharyya distance reported for distributions with disjoint support.
DISJOINT_DISTANCE = math.inf

DEFAULT_MAX_F0_GRID = (400.0, 500.0, 600.0, 700.0, 800.0, 900.0, 1000.0)
DEFAULT_LOWPASS_GRID = (1000.0, 1500.0, 2000.0)


class UndefinedResultError(ValueError):
    pass


@dataclass
class GroundTruthTrack:
    """Annotated reference pitch; ``f0_hz == 0`` marks unvoiced frames."""

    time_s: np.ndarray
    f0_hz: np.ndarray
    hop_s: float

    def __post_init__(self):
        self.time_s = np.asarray(self.time_s, dtype=float)
        self.f0_hz = np.asarray(self.f0_hz, dtype=float)
        if self.time_s.shape != self.f0_hz.shape:
            raise ValueError("time_s and f0_hz must have equal length")
        if np.any(np.diff(self.time_s) <= 0):
            raise ValueError("ground-truth times must be strictly increasing")
        if np.any(self.f0_hz < 0):
            raise ValueError("f0 values must be >= 0")

    @property
    def voiced(self) -> np.ndarray:
        return self.f0_hz > 0

    def __len__(self) -> int:
        return self.time_s.size


def midi_to_hz(m):
    """Semitone (MIDI-scale) values to Hz; non-positive values stay 0 (unvoiced)."""
    m = np.asarray(m, dtype=float)
    return np.where(m > 0, 440.0 * 2.0 ** ((m - 69.0) / 12.0), 0.0)


def load_ground_truth(path: str | Path, units: str = "hz", hop_s: float | None = None,
                      first_time_s: float | None = None) -> GroundTruthTrack:
    """Read a pitch annotation file.

    Two layouts are accepted: ``time_s value`` per line, or one value per line
    (requires ``hop_s``; times start at ``first_time_s``, default ``hop_s``).
    ``units`` is ``"hz"`` or ``"semitone"`` (MIDI numbers, 0 = unvoiced).
    """
    if units not in ("hz", "semitone"):
        raise ValueError(f"units must be 'hz' or 'semitone', got {units!r}")
    times, values = [], []
    n_cols = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if n_cols is None:
                n_cols = len(parts)
            if len(parts) != n_cols or n_cols not in (1, 2):
                raise ValueError(f"{path}:{lineno}: expected {n_cols if n_cols in (1, 2) else '1 or 2'} columns")
            try:
                nums = [float(p) for p in parts]
            except ValueError:
                raise ValueError(f"{path}:{lineno}: non-numeric value in {line.strip()!r}") from None
            if n_cols == 2:
                times.append(nums[0])
            values.append(nums[-1])
    if n_cols == 1:
        if hop_s is None:
            raise ValueError(f"{path}: single-column annotation needs hop_s")
        start = hop_s if first_time_s is None else first_time_s
        times = list(start + hop_s * np.arange(len(values)))
    f0 = midi_to_hz(values) if units == "semitone" else np.asarray(values, dtype=float)
    t = np.asarray(times, dtype=float)
    if hop_s is None:
        hop_s = float(np.median(np.diff(t))) if t.size > 1 else 0.01
    return GroundTruthTrack(t, f0, hop_s)


@dataclass
class PitchEvalResult:
    gpe: float
    fpe_cents: float | None
    n_voiced_ref: int
    n_gross: int = 0
    n_unmatched: int = 0
    fine_cents_sum: float = 0.0

    def to_dict(self) -> dict:
        return {
            "gpe": self.gpe,
            "fpe_cents": self.fpe_cents,
            "n_voiced_ref": self.n_voiced_ref,
            "n_gross": self.n_gross,
            "n_unmatched": self.n_unmatched,
        }


def semitone_deviation(f_est, f_ref):
    """``|12 log2(f_est / f_ref)|``."""
    f_est = np.asarray(f_est, dtype=float)
    f_ref = np.asarray(f_ref, dtype=float)
    if np.any(f_est <= 0) or np.any(f_ref <= 0):
        raise ValueError("frequencies must be positive")
    out = np.abs(12.0 * np.log2(f_est / f_ref))
    return float(out) if out.ndim == 0 else out


def align(est: PitchTrack, ref: GroundTruthTrack) -> tuple[np.ndarray, np.ndarray]:
    """Match each reference frame to the nearest estimate frame.

    A match must lie within half the estimate's frame shift. Returns
    ``(ref_indices, est_indices)`` of matched pairs.
    """
    if len(est) == 0 or len(ref) == 0:
        return np.zeros(0, dtype=int), np.zeros(0, dtype=int)
    tol = est.config.frame_shift_ms / 2000.0 + 1e-9
    pos = np.searchsorted(est.time_s, ref.time_s)
    left = np.clip(pos - 1, 0, len(est) - 1)
    right = np.clip(pos, 0, len(est) - 1)
    pick = np.where(np.abs(est.time_s[left] - ref.time_s) <= np.abs(est.time_s[right] - ref.time_s), left, right)
    ok = np.abs(est.time_s[pick] - ref.time_s) <= tol
    return np.flatnonzero(ok), pick[ok]


def evaluate(est: PitchTrack, ref: GroundTruthTrack,
             threshold_semitones: float = GPE_THRESHOLD_SEMITONES) -> PitchEvalResult:
    """GPE and FPE over all reference-voiced frames.

    Every reference-voiced frame counts in the GPE denominator since the
    tracker assigns a pitch to every frame. Reference frames with no
    estimate within half a frame shift are excluded and counted in
    ``n_unmatched``.
    """
    ri, ei = align(est, ref)
    voiced_all = int(ref.voiced.sum())
    keep = ref.voiced[ri]
    ri, ei = ri[keep], ei[keep]
    n_voiced = ri.size
    if n_voiced == 0:
        raise UndefinedResultError("no voiced reference frames")
    dev = semitone_deviation(est.pitch_hz[ei], ref.f0_hz[ri])
    dev = np.atleast_1d(dev)
    gross = dev > threshold_semitones
    fine_cents = 100.0 * dev[~gross]
    fine_sum = math.fsum(fine_cents)
    return PitchEvalResult(
        gpe=float(gross.sum() / n_voiced),
        fpe_cents=fine_sum / fine_cents.size if fine_cents.size else None,
        n_voiced_ref=n_voiced,
        n_gross=int(gross.sum()),
        n_unmatched=voiced_all - n_voiced,
        fine_cents_sum=fine_sum,
    )


def gpe(est: PitchTrack, ref: GroundTruthTrack) -> float:
    """Fraction of reference-voiced frames off by more than one semitone."""
    return evaluate(est, ref).gpe


def fpe(est: PitchTrack, ref: GroundTruthTrack) -> float:
    """Mean absolute deviation in cents over frames within one semitone."""
    result = evaluate(est, ref)
    if result.fpe_cents is None:
        raise UndefinedResultError("no frames within the GPE threshold")
    return result.fpe_cents


@dataclass
class HistogramDistribution:
    bin_edges: np.ndarray
    probabilities: np.ndarray

    def __post_init__(self):
        self.bin_edges = np.asarray(self.bin_edges, dtype=float)
        self.probabilities = np.asarray(self.probabilities, dtype=float)
        if self.probabilities.size != self.bin_edges.size - 1:
            raise ValueError("need one probability per bin")
        if np.any(np.diff(self.bin_edges) <= 0):
            raise ValueError("bin edges must be increasing")
        if np.any(self.probabilities < 0) or abs(self.probabilities.sum() - 1.0) > 1e-9:
            raise ValueError("probabilities must be non-negative and sum to 1")

    @classmethod
    def from_samples(cls, values, bin_edges) -> "HistogramDistribution":
        """Normalized histogram; values outside the edges are clipped into the end bins."""
        values = np.asarray(values, dtype=float)
        edges = np.asarray(bin_edges, dtype=float)
        if values.size == 0:
            raise ValueError("cannot build a histogram from no values")
        counts, _ = np.histogram(np.clip(values, edges[0], edges[-1]), bins=edges)
        return cls(edges, counts / counts.sum())


def uniform_edges(*samples, n_bins: int = 50, log_scale: bool = False) -> np.ndarray:
    """Equal-width bins over the pooled range of ``samples``.

    A degenerate range is widened by 5% (or 0.5 for zero) each side so the
    single value lands inside a bin.
    """
    pooled = np.concatenate([np.asarray(s, dtype=float).ravel() for s in samples])
    if pooled.size == 0:
        raise ValueError("no data to bin")
    lo, hi = float(pooled.min()), float(pooled.max())
    if log_scale:
        if lo <= 0:
            raise ValueError("log-scale bins need positive data")
        lo, hi = math.log(lo), math.log(hi)
    if hi == lo:
        pad = 0.05 * abs(lo) if lo != 0 else 0.5
        lo, hi = lo - pad, hi + pad
    edges = np.linspace(lo, hi, n_bins + 1)
    return np.exp(edges) if log_scale else edges


def bhattacharyya(a: HistogramDistribution, b: HistogramDistribution) -> float:
    """``-ln(sum(sqrt(a_k b_k)))``; :data:`DISJOINT_DISTANCE` when supports do not overlap."""
    if a.bin_edges.shape != b.bin_edges.shape or not np.array_equal(a.bin_edges, b.bin_edges):
        raise ValueError("histograms must share bin edges")
    bc = math.fsum(np.sqrt(a.probabilities * b.probabilities))
    if bc <= 0:
        return DISJOINT_DISTANCE
    return max(0.0, -math.log(min(bc, 1.0)))


@dataclass
class ThresholdEstimate:
    threshold: float
    error_rate: float
    orientation_suspect: bool

    def to_dict(self) -> dict:
        return {"threshold": self.threshold, "error_rate": self.error_rate,
                "orientation_suspect": self.orientation_suspect}


def estimate_voicing_threshold(pov_values, ref_voicing) -> ThresholdEstimate:
    """Threshold on the POV feature that best separates voiced from unvoiced.

    Frames with ``pov < threshold`` are called voiced. Candidates are
    midpoints between adjacent distinct values plus the two extremes; the
    lowest candidate with minimal error wins. ``orientation_suspect`` is set
    when the best error reaches 0.5 or the reversed rule would do better,
    which happens when labels run against the POV orientation.
    """
    pov = np.asarray(pov_values, dtype=float)
    lab = np.asarray(ref_voicing, dtype=bool)
    if pov.shape != lab.shape or pov.size == 0:
        raise ValueError("pov_values and ref_voicing must be aligned and non-empty")
    if lab.all() or not lab.any():
        raise ValueError("both voiced and unvoiced frames are required")
    uniq = np.unique(pov)
    cands = np.concatenate([[uniq[0]], (uniq[:-1] + uniq[1:]) / 2.0, [np.nextafter(uniq[-1], np.inf)]])
    order = np.argsort(pov, kind="stable")
    sorted_pov = pov[order]
    cum_voiced = np.concatenate([[0], np.cumsum(lab[order])])
    below = np.searchsorted(sorted_pov, cands, side="left")
    n_voiced = int(lab.sum())
    # voiced frames at/above the threshold + unvoiced frames below it
    errors = (n_voiced - cum_voiced[below]) + (below - cum_voiced[below])
    best = int(np.argmin(errors))
    err = errors[best] / pov.size
    reversed_err = (pov.size - errors).min() / pov.size
    suspect = bool(err >= 0.5 or reversed_err < err)
    if suspect:
        log.warning("voicing labels look inverted relative to POV orientation (error %.3f)", err)
    return ThresholdEstimate(float(cands[best]), float(err), suspect)


@dataclass
class TuningResult:
    grid: list
    scores: dict  # (max_f0, lowpass) -> PitchEvalResult (pooled)
    best: tuple
    failures: dict = field(default_factory=dict)  # utterance id -> message
    per_utterance: dict = field(default_factory=dict)  # (max_f0, lowpass) -> {id: PitchEvalResult}

    def rows(self) -> list[dict]:
        out = []
        for cfg in self.grid:
            r = self.scores[cfg]
            out.append({"max_f0_hz": cfg[0], "lowpass_cutoff_hz": cfg[1], "gpe": r.gpe,
                        "fpe_cents": r.fpe_cents, "n_voiced_ref": r.n_voiced_ref,
                        "best": cfg == self.best})
        return out


def pool(results) -> PitchEvalResult:
    """Frame-weighted aggregate of per-utterance results (order independent)."""
    results = list(results)
    n_voiced = sum(r.n_voiced_ref for r in results)
    n_gross = sum(r.n_gross for r in results)
    if n_voiced == 0:
        raise UndefinedResultError("no voiced reference frames in the dataset")
    n_fine = n_voiced - n_gross
    fine_sum = math.fsum(r.fine_cents_sum for r in results)
    return PitchEvalResult(
        gpe=n_gross / n_voiced,
        fpe_cents=fine_sum / n_fine if n_fine else None,
        n_voiced_ref=n_voiced,
        n_gross=n_gross,
        n_unmatched=sum(r.n_unmatched for r in results),
        fine_cents_sum=fine_sum,
    )


def _score_config(args):
    cfg, dataset = args
    per_utt, failures = {}, {}
    for utt_id, audio, ref in dataset:
        try:
            per_utt[utt_id] = evaluate(extract_pitch(audio, cfg), ref)
        except Exception as exc:  # recorded, not fatal
            failures[utt_id] = f"{type(exc).__name__}: {exc}"
    return per_utt, failures


def _selection_key(item):
    (max_f0, lowpass), result = item
    fpe_key = result.fpe_cents if result.fpe_cents is not None else math.inf
    return (result.gpe, fpe_key, max_f0, lowpass)


def grid_search(dataset, max_f0_values=DEFAULT_MAX_F0_GRID, lowpass_values=DEFAULT_LOWPASS_GRID,
                base: PitchConfig | None = None, workers: int = 1) -> TuningResult:
    """Evaluate every (max_f0, lowpass_cutoff) pair on ``dataset``.

    ``dataset`` holds ``(audio, GroundTruthTrack)`` or
    ``(utterance_id, audio, GroundTruthTrack)`` items. Scores are pooled over
    frames; the best config minimizes GPE, then FPE, then (max_f0, lowpass).
    The grid table is sorted, so input ordering never matters.
    """
    base = base or PitchConfig()
    items = []
    for n, item in enumerate(dataset):
        items.append(item if len(item) == 3 else (f"utt{n:05d}", *item))
    if not items:
        raise ValueError("empty dataset")
    items.sort(key=lambda it: it[0])
    grid = sorted({(float(m), float(lp)) for m, lp in itertools.product(max_f0_values, lowpass_values)})
    if not grid:
        raise ValueError("empty grid")
    configs = [base.replace(max_f0_hz=m, lowpass_cutoff_hz=lp) for m, lp in grid]
    jobs = [(cfg, items) for cfg in configs]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool_ex:
            outcomes = list(pool_ex.map(_score_config, jobs))
    else:
        outcomes = [_score_config(j) for j in jobs]

    failures = {}
    for _, fails in outcomes:
        for utt_id, msg in fails.items():
            failures.setdefault(utt_id, msg)
    # an utterance failing under any config is dropped everywhere so that
    # all configs are scored on the same frames
    scores, per_utterance = {}, {}
    for key, (per_utt, _) in zip(grid, outcomes):
        per_utt = {u: r for u, r in per_utt.items() if u not in failures}
        per_utterance[key] = per_utt
        try:
            scores[key] = pool(per_utt.values())
        except UndefinedResultError:
            scores[key] = PitchEvalResult(gpe=1.0, fpe_cents=None, n_voiced_ref=0)
    best = min(scores.items(), key=_selection_key)[0]
    return TuningResult(grid, scores, best, failures, per_utterance)
