"""Cycle-level perturbation measures: jitta, rap, shimmer and HNR.

Glottal cycles are marked on the waveform, guided by a pitch track; jitter
and shimmer come from the marks, HNR from the autocorrelation at the
tracked pitch period.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .pitch_tracker import PitchTrack
from .signal_io import AudioBuffer, frame_length_samples, frame_start_samples

HNR_FLOOR_DB = -20.0
HNR_CEILING_DB = 60.0
# Allowed ratio between a detected period and the tracker's f0 limits.
PERIOD_TOLERANCE = 1.3
# Search span around the predicted next cycle mark, as a fraction of the period.
SEARCH_SPAN = 0.3
VQ_WINDOW_S = 0.1
# Marks weaker than this fraction of the region's strongest peak end a walk.
MIN_RELATIVE_PEAK = 0.05
VQ_COLUMNS = ("time_s", "jitta_s", "rap", "shimmer", "hnr_db")


class UndefinedMeasureError(ValueError):
    """Raised when too few cycles or voiced frames exist for a measure."""


@dataclass
class CycleSequence:
    """Glottal cycle marks grouped into contiguous runs.

    Each run is one voiced stretch; periods and amplitudes never span two
    runs. ``amplitudes[r][i]`` is the peak magnitude at mark ``i`` of run
    ``r``, and cycle ``i`` (between marks ``i`` and ``i + 1``) takes the
    amplitude of its opening mark.
    """

    runs: list = field(default_factory=list)
    amplitudes: list = field(default_factory=list)

    @classmethod
    def from_periods(cls, periods_s, amplitudes=None, start_s: float = 0.0) -> "CycleSequence":
        periods_s = np.asarray(periods_s, dtype=float)
        marks = start_s + np.concatenate([[0.0], np.cumsum(periods_s)])
        if amplitudes is None:
            amps = np.ones(marks.size)
        else:
            amps = np.append(np.asarray(amplitudes, dtype=float), 0.0)
            if amps.size != marks.size:
                raise ValueError("need one amplitude per period")
        return cls([marks], [amps])

    @property
    def boundaries_s(self) -> np.ndarray:
        return np.concatenate(self.runs) if self.runs else np.zeros(0)

    @property
    def periods_s(self) -> np.ndarray:
        return np.concatenate([np.diff(r) for r in self.runs]) if self.runs else np.zeros(0)

    @property
    def peak_amplitudes(self) -> np.ndarray:
        return np.concatenate([a[:-1] for a in self.amplitudes]) if self.runs else np.zeros(0)

    @property
    def n_cycles(self) -> int:
        return int(sum(r.size - 1 for r in self.runs))

    def __len__(self) -> int:
        return self.n_cycles

    def window(self, t0: float, t1: float) -> "CycleSequence":
        """Cycles lying entirely inside ``[t0, t1]``."""
        runs, amps = [], []
        for r, a in zip(self.runs, self.amplitudes):
            keep = (r >= t0) & (r <= t1)
            if keep.sum() >= 2:
                runs.append(r[keep])
                amps.append(a[keep])
        return CycleSequence(runs, amps)

    def shifted(self, offset_s: float) -> "CycleSequence":
        return CycleSequence([r + offset_s for r in self.runs], [a.copy() for a in self.amplitudes])


@dataclass
class VqReport:
    """Utterance-level voice-quality values; ``None`` marks an undefined measure."""

    jitta_s: float | None
    rap: float | None
    shimmer: float | None
    hnr_db: float | None
    n_cycles: int

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self, **extra) -> str:
        return json.dumps({**extra, "report": self.to_dict()}, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "VqReport":
        return cls(**{k: d[k] for k in ("jitta_s", "rap", "shimmer", "hnr_db", "n_cycles")})


@dataclass
class VqAnalysis:
    report: VqReport
    cycles: CycleSequence
    frame_times_s: np.ndarray
    frame_values: np.ndarray  # columns jitta_s, rap, shimmer, hnr_db


def _consecutive_periods(cycles: CycleSequence):
    for r in cycles.runs:
        yield np.diff(r)


def jitta(cycles: CycleSequence) -> float:
    """Mean absolute difference between consecutive periods, in seconds."""
    diffs = [np.abs(np.diff(p)) for p in _consecutive_periods(cycles) if p.size >= 2]
    if not diffs:
        raise UndefinedMeasureError("jitta needs at least 2 consecutive periods")
    return float(np.mean(np.concatenate(diffs)))


def rap(cycles: CycleSequence) -> float:
    """Relative average perturbation over 3-period neighbourhoods."""
    devs = []
    for p in _consecutive_periods(cycles):
        if p.size >= 3:
            avg3 = (p[:-2] + p[1:-1] + p[2:]) / 3.0
            devs.append(np.abs(p[1:-1] - avg3))
    if not devs:
        raise UndefinedMeasureError("rap needs at least 3 consecutive periods")
    return float(np.mean(np.concatenate(devs)) / np.mean(cycles.periods_s))


def shimmer(cycles: CycleSequence) -> float:
    """Mean absolute amplitude difference of consecutive cycles over mean amplitude."""
    diffs = []
    for a in cycles.amplitudes:
        per_cycle = a[:-1]
        if per_cycle.size >= 2:
            diffs.append(np.abs(np.diff(per_cycle)))
    if not diffs:
        raise UndefinedMeasureError("shimmer needs at least 2 consecutive cycles")
    mean_amp = np.mean(cycles.peak_amplitudes)
    if mean_amp <= 0:
        raise UndefinedMeasureError("shimmer needs positive cycle amplitudes")
    return float(np.mean(np.concatenate(diffs)) / mean_amp)


def hnr_from_r(r) -> np.ndarray:
    """``10 log10(r / (1 - r))`` clamped to [HNR_FLOOR_DB, HNR_CEILING_DB]."""
    r = np.asarray(r, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        db = 10.0 * np.log10(r / (1.0 - r))
    db = np.where(r >= 1.0, HNR_CEILING_DB, db)
    db = np.where(r <= 0.0, HNR_FLOOR_DB, db)
    return np.clip(db, HNR_FLOOR_DB, HNR_CEILING_DB)


def _voiced_regions(track: PitchTrack, voiced_threshold: float, n_samples: int, fs: int):
    """Sample spans ``[lo, hi)`` covered by runs of voiced frames."""
    voiced = track.voiced(voiced_threshold)
    half = track.config.frame_length_ms / 2000.0
    regions = []
    i = 0
    while i < voiced.size:
        if not voiced[i]:
            i += 1
            continue
        j = i
        while j + 1 < voiced.size and voiced[j + 1]:
            j += 1
        lo = max(0, int(math.floor((track.time_s[i] - half) * fs)))
        hi = min(n_samples, int(math.ceil((track.time_s[j] + half) * fs)))
        if hi > lo:
            regions.append((lo, hi))
        i = j + 1
    return regions


def _refine_peak(y: np.ndarray, k: int) -> tuple[float, float]:
    """Sub-sample position and height of the maximum at index ``k``."""
    if 0 < k < y.size - 1:
        y0, y1, y2 = y[k - 1], y[k], y[k + 1]
        den = y0 - 2.0 * y1 + y2
        if den < 0:
            d = 0.5 * (y0 - y2) / den
            if abs(d) <= 1.0:
                return k + d, y1 - 0.25 * (y0 - y2) * d
    return float(k), float(y[k])


def _next_mark(y: np.ndarray, mark: float, period: float, direction: int, lo: int, hi: int):
    """Find the cycle mark one period away from ``mark`` in ``direction``.

    Candidate offsets within ``SEARCH_SPAN`` of the period are scored by the
    correlation between the period-long window at ``mark`` and the window at
    the candidate; the winner is snapped to the nearest waveform maximum.
    Returns ``None`` when the search leaves ``[lo, hi)`` or the snapped mark
    is not a local maximum one period (within the span) away.
    """
    half = int(round(period / 2))
    m = int(round(mark))
    taus = np.arange(int(math.floor((1 - SEARCH_SPAN) * period)), int(math.ceil((1 + SEARCH_SPAN) * period)) + 1)
    cands = m + direction * taus
    cands = cands[(cands >= lo) & (cands < hi)]
    if cands.size == 0:
        return None
    best = None
    if m - half >= lo and m + half + 1 <= hi:
        template = y[m - half : m + half + 1]
        t_norm = np.sqrt(template @ template)
        best_score = -np.inf
        for c in cands:
            if c - half < lo or c + half + 1 > hi:
                continue
            seg = y[c - half : c + half + 1]
            den = t_norm * np.sqrt(seg @ seg)
            score = (template @ seg) / den if den > 0 else -np.inf
            if score > best_score:
                best, best_score = int(c), score
    if best is None:
        # no room for a full template near the region edge: plain peak pick
        best = int(cands[np.argmax(y[cands])])
    snap = max(1, int(round(0.1 * period)))
    a, b = max(lo, best - snap), min(hi, best + snap + 1)
    k = a + int(np.argmax(y[a:b]))
    # the signal's own first and last samples may hold a (truncated) peak
    if (k > 0 and y[k] < y[k - 1]) or (k < y.size - 1 and y[k] < y[k + 1]):
        return None
    pos, height = _refine_peak(y, k)
    step = (pos - mark) * direction
    if not (1 - SEARCH_SPAN) * period <= step <= (1 + SEARCH_SPAN) * period:
        return None
    return pos, height


def detect_cycles(audio: AudioBuffer, track: PitchTrack, voiced_threshold: float) -> CycleSequence:
    """Mark glottal cycles inside voiced regions of ``audio``.

    Marks sit on waveform maxima (of the dominant polarity in each region).
    Each region is seeded at its largest peak and walked outward one period
    at a time, using the local pitch from ``track``.
    """
    fs = audio.sample_rate_hz
    x = audio.samples
    cfg = track.config
    min_period = fs / cfg.max_f0_hz / PERIOD_TOLERANCE
    max_period = fs / cfg.min_f0_hz * PERIOD_TOLERANCE
    runs, amps = [], []
    for lo, hi in _voiced_regions(track, voiced_threshold, x.size, fs):
        seg = x[lo:hi]
        if not np.any(seg):
            continue
        y = x if seg.max() >= -seg.min() else -x
        # seed on the largest peak away from the edges so templates fit
        margin = int(math.ceil(max_period / 2))
        inner = (lo + margin, hi - margin) if hi - lo > 2 * margin + 1 else (lo, hi)
        seed_k = inner[0] + int(np.argmax(y[inner[0] : inner[1]]))
        seed = _refine_peak(y, seed_k)
        floor = MIN_RELATIVE_PEAK * seed[1]

        def local_period(pos):
            return fs / float(np.interp(pos / fs, track.time_s, track.pitch_hz))

        marks = [seed]
        for direction in (1, -1):
            cur = seed
            while True:
                nxt = _next_mark(y, cur[0], local_period(cur[0]), direction, lo, hi)
                if nxt is None or (nxt[0] - cur[0]) * direction <= 0 or nxt[1] < floor:
                    break
                marks.append(nxt)
                cur = nxt
        marks.sort()
        pos = np.array([p for p, _ in marks])
        height = np.abs(np.array([h for _, h in marks]))
        # split the region wherever a period falls outside the f0 limits
        periods = np.diff(pos)
        bad = (periods < min_period) | (periods > max_period)
        start = 0
        for i in list(np.flatnonzero(bad)) + [pos.size - 1]:
            if i + 1 - start >= 2:
                runs.append(pos[start : i + 1] / fs)
                amps.append(height[start : i + 1])
            start = i + 1
    return CycleSequence(runs, amps)


def frame_hnr(audio: AudioBuffer, track: PitchTrack, voiced_threshold: float) -> tuple[np.ndarray, np.ndarray]:
    """Per-voiced-frame HNR in dB.

    For each voiced frame, ``r`` is the peak normalized autocorrelation of
    the mean-removed frame within 10% of the tracked pitch period.
    Returns ``(frame_indices, hnr_db)``.
    """
    fs = audio.sample_rate_hz
    x = audio.samples
    cfg = track.config
    voiced_idx = np.flatnonzero(track.voiced(voiced_threshold))
    n = frame_length_samples(fs, cfg.framing)
    starts = frame_start_samples(len(track), fs, cfg.framing)
    out_idx, out_db = [], []
    for i in voiced_idx:
        period = fs / track.pitch_hz[i]
        lags = np.arange(max(1, int(math.floor(0.9 * period))), int(math.ceil(1.1 * period)) + 2)
        s = min(int(starts[i]), x.size - n - int(lags[-1]))
        if s < 0:
            continue
        a = x[s : s + n] - x[s : s + n].mean()
        ea = a @ a
        r = np.zeros(lags.size)
        for j, lag in enumerate(lags):
            b = x[s + lag : s + lag + n] - x[s + lag : s + lag + n].mean()
            den = np.sqrt(ea * (b @ b))
            r[j] = (a @ b) / den if den > 0 else 0.0
        _, peak = _refine_peak(r, int(np.argmax(r)))
        out_idx.append(i)
        out_db.append(float(hnr_from_r(min(peak, 1.0))))
    return np.array(out_idx, dtype=int), np.array(out_db)


def hnr(audio: AudioBuffer, track: PitchTrack, voiced_threshold: float) -> tuple[np.ndarray, float]:
    """Per-voiced-frame HNR and its utterance mean."""
    idx, db = frame_hnr(audio, track, voiced_threshold)
    if idx.size == 0:
        raise UndefinedMeasureError("HNR needs at least one voiced frame")
    return db, float(np.mean(db))


def _safe(fn, cycles):
    try:
        return fn(cycles)
    except UndefinedMeasureError:
        return None


def _report(cycles: CycleSequence, hnr_db: float | None) -> VqReport:
    if cycles.n_cycles < 3:
        return VqReport(None, None, None, hnr_db, cycles.n_cycles)
    return VqReport(_safe(jitta, cycles), _safe(rap, cycles), _safe(shimmer, cycles), hnr_db, cycles.n_cycles)


def extract_vq(audio: AudioBuffer, track: PitchTrack, voiced_threshold: float,
               window_s: float = VQ_WINDOW_S) -> VqAnalysis:
    """Utterance report plus a per-frame stream.

    The stream evaluates each measure over a ``window_s`` window centered on
    every pitch frame; windows holding fewer than 3 cycles (or, for HNR, no
    voiced frame) fall back to the utterance value.
    """
    cycles = detect_cycles(audio, track, voiced_threshold)
    idx, db = frame_hnr(audio, track, voiced_threshold)
    utt_hnr = float(np.mean(db)) if idx.size else None
    report = _report(cycles, utt_hnr)

    utt = np.array([np.nan if v is None else v for v in (report.jitta_s, report.rap, report.shimmer, report.hnr_db)])
    values = np.tile(utt, (len(track), 1))
    hnr_times = track.time_s[idx] if idx.size else np.zeros(0)
    for i, t in enumerate(track.time_s):
        win = cycles.window(t - window_s / 2, t + window_s / 2)
        if win.n_cycles >= 3:
            local = _report(win, None)
            values[i, :3] = [np.nan if v is None else v for v in (local.jitta_s, local.rap, local.shimmer)]
        near = np.abs(hnr_times - t) <= window_s / 2
        if near.any():
            values[i, 3] = db[near].mean()
    return VqAnalysis(report, cycles, track.time_s.copy(), values)
