"""Soft-decision pitch tracking.

Every frame receives a pitch; how much to trust it is carried separately by
the POV feature. Pipeline::

    resample -> lowpass -> NCCF on integer lags -> band-limited interpolation
    onto a log-spaced lag grid -> Viterbi over the grid -> parabolic
    refinement -> POV, log pitch, normalized log pitch, delta pitch
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Iterator

import numpy as np

from .signal_io import (
    AudioBuffer,
    FramingSpec,
    frame_count,
    frame_length_samples,
    frame_start_samples,
    lowpass,
    resample,
)

TRACK_COLUMNS = (
    "time_s",
    "nccf",
    "pitch_hz",
    "pov_feature",
    "log_pitch",
    "normalized_log_pitch",
    "delta_pitch",
)

# Half-width, in input samples, of the windowed-sinc kernel that
# interpolates NCCF values between integer lags.
_INTERP_ZEROS = 8

# pov_feature = (1.0001 - nccf) ** 0.15 - 1; the offset keeps the base
# positive at nccf = 1 so the mapping stays strictly decreasing there.
_POV_OFFSET = 1.0001
_POV_EXPONENT = 0.15
POV_MIN = (_POV_OFFSET - 1.0) ** _POV_EXPONENT - 1.0
POV_MAX = (_POV_OFFSET + 1.0) ** _POV_EXPONENT - 1.0

# Fallback voicing threshold on pov_feature, used when none has been
# estimated from annotated data. Equals nccf_to_pov(0.6).
DEFAULT_VOICED_THRESHOLD = (_POV_OFFSET - 0.6) ** _POV_EXPONENT - 1.0


class PitchConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PitchConfig:
    """Tracker parameters.

    ``soft_min_f0_hz`` down-weights the NCCF at long lags,
    ``score = nccf * (1 - soft_min_f0_hz * lag_s)``, so that period multiples,
    which correlate as well as the true period, lose the Viterbi search.
    ``lag_resolution`` is the ratio step between neighbouring candidate lags.
    ``nccf_ballast`` is relative: the NCCF denominator used for the search
    gets ``nccf_ballast * (frame_len * mean_square) ** 2`` added, where
    ``mean_square`` is taken over the whole processed utterance.
    """

    min_f0_hz: float = 50.0
    max_f0_hz: float = 1000.0
    lowpass_cutoff_hz: float = 1500.0
    frame_shift_ms: float = 10.0
    frame_length_ms: float = 25.0
    penalty_factor: float = 0.1
    nccf_ballast: float = 1e-3
    normalization_window_frames: int = 151
    delta_context_frames: int = 2
    resample_hz: int = 4000
    soft_min_f0_hz: float = 10.0
    lag_resolution: float = 0.005

    def __post_init__(self):
        if not 0 < self.min_f0_hz < self.max_f0_hz:
            raise PitchConfigError(
                f"need 0 < min_f0_hz < max_f0_hz, got {self.min_f0_hz}, {self.max_f0_hz}"
            )
        # equality allowed: the (max-f0 1000, lowpass 1000) grid point is valid
        if self.lowpass_cutoff_hz < self.max_f0_hz:
            raise PitchConfigError(
                f"lowpass_cutoff_hz ({self.lowpass_cutoff_hz}) below max_f0_hz ({self.max_f0_hz})"
            )
        if self.lowpass_cutoff_hz > self.resample_hz / 2:
            raise PitchConfigError(
                f"lowpass_cutoff_hz ({self.lowpass_cutoff_hz}) above the Nyquist "
                f"frequency of resample_hz ({self.resample_hz})"
            )
        if self.penalty_factor < 0 or self.nccf_ballast < 0 or self.soft_min_f0_hz < 0:
            raise PitchConfigError("penalty_factor, nccf_ballast and soft_min_f0_hz must be >= 0")
        if self.soft_min_f0_hz >= self.min_f0_hz:
            raise PitchConfigError("soft_min_f0_hz must be below min_f0_hz")
        n = self.normalization_window_frames
        if int(n) != n or n < 1 or n % 2 == 0:
            raise PitchConfigError(f"normalization_window_frames must be odd and positive, got {n}")
        if int(self.delta_context_frames) != self.delta_context_frames or self.delta_context_frames < 1:
            raise PitchConfigError("delta_context_frames must be a positive integer")
        if self.lag_resolution <= 0:
            raise PitchConfigError("lag_resolution must be positive")
        FramingSpec(self.frame_length_ms, self.frame_shift_ms)
        if self.frame_length_ms * self.resample_hz / 1000 < 2:
            raise PitchConfigError("frame too short for the processing rate")

    @property
    def framing(self) -> FramingSpec:
        return FramingSpec(self.frame_length_ms, self.frame_shift_ms)

    def replace(self, **changes) -> "PitchConfig":
        return PitchConfig(**{**asdict(self), **changes})

    @classmethod
    def from_dict(cls, d: dict) -> "PitchConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise PitchConfigError(f"unknown pitch config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class PitchFrame:
    time_s: float
    nccf: float
    pitch_hz: float
    pov_feature: float
    log_pitch: float
    normalized_log_pitch: float
    delta_pitch: float


@dataclass
class PitchTrack:
    """Per-frame features stored column-wise; iterate for :class:`PitchFrame` rows."""

    time_s: np.ndarray
    nccf: np.ndarray
    pitch_hz: np.ndarray
    pov_feature: np.ndarray
    log_pitch: np.ndarray
    normalized_log_pitch: np.ndarray
    delta_pitch: np.ndarray
    config: PitchConfig = field(default_factory=PitchConfig)

    def __len__(self) -> int:
        return self.time_s.size

    def __iter__(self) -> Iterator[PitchFrame]:
        cols = [getattr(self, c) for c in TRACK_COLUMNS]
        for row in zip(*cols):
            yield PitchFrame(*(float(v) for v in row))

    @property
    def frames(self) -> list[PitchFrame]:
        return list(self)

    def as_array(self) -> np.ndarray:
        return np.column_stack([getattr(self, c) for c in TRACK_COLUMNS]) if len(self) else np.zeros((0, 7))

    def voiced(self, threshold: float) -> np.ndarray:
        """Boolean mask of frames whose POV feature is below ``threshold``."""
        return self.pov_feature < threshold


def nccf_to_pov(nccf):
    """Map NCCF in [-1, 1] to the POV feature.

    ``(1.0001 - nccf) ** 0.15 - 1``: strictly decreasing, so strongly voiced
    frames get low values, with range ``[POV_MIN, POV_MAX]`` (about
    [-0.749, 0.110]). The power law compresses the long tail of nearly
    periodic frames so the feature is roughly Gaussian over voiced speech.
    """
    n = np.asarray(nccf, dtype=float)
    if np.any(np.isnan(n)) or np.any(n < -1.0) or np.any(n > 1.0):
        raise ValueError("nccf must lie in [-1, 1]")
    out = (_POV_OFFSET - n) ** _POV_EXPONENT - 1.0
    return float(out) if out.ndim == 0 else out


def voicing_strength(pov_feature) -> np.ndarray:
    """Linear rescaling of the POV feature to [0, 1], 1 = strongest voicing."""
    p = np.asarray(pov_feature, dtype=float)
    return np.clip((POV_MAX - p) / (POV_MAX - POV_MIN), 0.0, 1.0)


def _nccf_rows(windows: np.ndarray, max_lag: int, frame_len: int, ballast: float) -> np.ndarray:
    """NCCF for lags ``0..max_lag`` of each row of ``windows``.

    Row ``r`` must hold at least ``frame_len + max_lag`` samples.
    """
    w = windows[:, : frame_len + max_lag]
    head = w[:, :frame_len]
    e1 = np.einsum("ij,ij->i", head, head)
    csum = np.concatenate([np.zeros((w.shape[0], 1)), np.cumsum(w * w, axis=1)], axis=1)
    out = np.zeros((w.shape[0], max_lag + 1))
    for lag in range(max_lag + 1):
        num = np.einsum("ij,ij->i", head, w[:, lag : lag + frame_len])
        e2 = csum[:, lag + frame_len] - csum[:, lag]
        den = np.sqrt(e1 * e2 + ballast)
        with np.errstate(invalid="ignore", divide="ignore"):
            out[:, lag] = np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)
    return np.clip(out, -1.0, 1.0)


def compute_nccf(window, lags, ballast: float = 0.0, frame_length: int | None = None) -> np.ndarray:
    """Normalized cross-correlation of a frame with its lag-shifted copies.

    ``value[L] = sum(x[n] x[n+L]) / sqrt(sum(x[n]^2) sum(x[n+L]^2) + ballast)``
    with ``n`` over the first ``frame_length`` samples of ``window``
    (default ``len(window) - max(lags)``). An all-zero window yields zeros.
    """
    lags = np.asarray(lags, dtype=int)
    if lags.size == 0:
        raise PitchConfigError("empty lag range")
    if lags.min() < 0:
        raise PitchConfigError("lags must be non-negative")
    window = np.asarray(window, dtype=float)
    max_lag = int(lags.max())
    if frame_length is None:
        frame_length = window.size - max_lag
    if frame_length < 1 or window.size < frame_length + max_lag:
        raise ValueError(
            f"window of {window.size} samples too short for frame {frame_length} + lag {max_lag}"
        )
    return _nccf_rows(window[None, :], max_lag, frame_length, ballast)[0, lags]


def candidate_lags(config: PitchConfig) -> np.ndarray:
    """Log-spaced candidate lags in seconds from ``1/max_f0`` to ``1/min_f0``."""
    ratio = np.log1p(config.lag_resolution)
    n = int(np.floor(np.log(config.max_f0_hz / config.min_f0_hz) / ratio + 1e-9)) + 1
    return (1.0 / config.max_f0_hz) * np.exp(ratio * np.arange(n))


def _interp_matrix(lags_samples: np.ndarray, max_int_lag: int) -> np.ndarray:
    """Hann-windowed sinc weights from integer-lag NCCF to fractional lags.

    Negative integer lags fold onto positive ones (the NCCF is treated as
    even in the lag).
    """
    m = np.arange(-_INTERP_ZEROS, max_int_lag + 1)
    t = lags_samples[:, None] - m[None, :]
    h = np.sinc(t) * np.where(np.abs(t) < _INTERP_ZEROS, 0.5 + 0.5 * np.cos(np.pi * t / _INTERP_ZEROS), 0.0)
    folded = np.zeros((lags_samples.size, max_int_lag + 1))
    np.add.at(folded.T, np.abs(m), h.T)
    return folded


def viterbi_pitch(scores: np.ndarray, lags: np.ndarray, penalty_factor: float) -> np.ndarray:
    """Best lag index per frame for a ``(n_frames, n_lags)`` score lattice.

    Minimizes ``sum(-scores[i, k_i]) + penalty_factor * sum((ln lag[k_i] -
    ln lag[k_{i-1}])**2)``. Ties resolve to the lower index.
    """
    scores = np.asarray(scores, dtype=float)
    lags = np.asarray(lags, dtype=float)
    if scores.ndim != 2 or scores.shape[0] == 0 or scores.shape[1] == 0:
        raise ValueError(f"lattice must be a non-empty 2-D array, got shape {scores.shape}")
    if lags.shape != (scores.shape[1],) or np.any(lags <= 0):
        raise ValueError("lags must be positive, one per lattice column")
    log_lag = np.log(lags)
    trans = penalty_factor * (log_lag[:, None] - log_lag[None, :]) ** 2
    n_frames, n_lags = scores.shape
    back = np.zeros((n_frames, n_lags), dtype=np.intp)
    cost = -scores[0]
    rows = np.arange(n_lags)
    # trans is symmetric: row k of (cost + trans) holds every way into state k
    for i in range(1, n_frames):
        total = cost[None, :] + trans
        back[i] = np.argmin(total, axis=1)
        cost = total[rows, back[i]] + -scores[i]
    path = np.empty(n_frames, dtype=np.intp)
    path[-1] = int(np.argmin(cost))
    for i in range(n_frames - 1, 0, -1):
        path[i - 1] = back[i, path[i]]
    return path


def path_cost(scores: np.ndarray, lags: np.ndarray, penalty_factor: float, path) -> float:
    """Cost of ``path`` under the :func:`viterbi_pitch` objective, summed in frame order."""
    log_lag = np.log(np.asarray(lags, dtype=float))
    cost = -scores[0, path[0]]
    for i in range(1, len(path)):
        cost = cost + penalty_factor * (log_lag[path[i - 1]] - log_lag[path[i]]) ** 2 + -scores[i, path[i]]
    return float(cost)


def normalized_log_pitch(log_pitch, weights, window_frames: int) -> np.ndarray:
    """Subtract a centered weighted moving mean, truncating the window at edges."""
    lp = np.asarray(log_pitch, dtype=float)
    w = np.asarray(weights, dtype=float)
    n = lp.size
    half = window_frames // 2
    lo = np.clip(np.arange(n) - half, 0, n)
    hi = np.clip(np.arange(n) + half + 1, 0, n)
    cw = np.concatenate([[0.0], np.cumsum(w)])
    cwx = np.concatenate([[0.0], np.cumsum(w * lp)])
    cx = np.concatenate([[0.0], np.cumsum(lp)])
    den = cw[hi] - cw[lo]
    mean = np.where(den > 1e-12, (cwx[hi] - cwx[lo]) / np.where(den > 1e-12, den, 1.0), (cx[hi] - cx[lo]) / (hi - lo))
    return lp - mean


def normalize_log_pitch(track: PitchTrack) -> np.ndarray:
    """Normalized log pitch of ``track``, weighting frames by voicing strength."""
    if len(track) == 0:
        raise ValueError("empty track")
    return normalized_log_pitch(
        track.log_pitch, voicing_strength(track.pov_feature), track.config.normalization_window_frames
    )


def compute_delta(values, context: int = 2) -> np.ndarray:
    """Regression delta over ``context`` frames each side, edges replicated."""
    if context < 1:
        raise ValueError("context must be >= 1")
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return v.copy()
    padded = np.concatenate([np.full(context, v[0]), v, np.full(context, v[-1])])
    n = v.size
    num = np.zeros(n)
    for k in range(1, context + 1):
        num += k * (padded[context + k : context + k + n] - padded[context - k : context - k + n])
    return num / (2.0 * sum(k * k for k in range(1, context + 1)))


def _parabolic(y0, y1, y2):
    """Vertex offset and height of the parabola through (-1, y0), (0, y1), (1, y2)."""
    den = y0 - 2.0 * y1 + y2
    ok = (den < 0) & (y1 >= y0) & (y1 >= y2)
    safe = np.where(ok, den, -1.0)
    delta = np.where(ok, 0.5 * (y0 - y2) / safe, 0.0)
    height = np.where(ok, y1 - 0.25 * (y0 - y2) * delta, y1)
    return delta, height


def nccf_lattice(audio: AudioBuffer, config: PitchConfig):
    """Frame the processed signal and evaluate NCCF on the candidate lags.

    Returns ``(lags_s, raw, ballasted)`` where both lattices have shape
    ``(n_frames, n_lags)``; ``raw`` uses no ballast.
    """
    n_frames = frame_count(len(audio), audio.sample_rate_hz, config.framing)
    lags_s = candidate_lags(config)
    if n_frames == 0:
        empty = np.zeros((0, lags_s.size))
        return lags_s, empty, empty
    fs = config.resample_hz
    x = lowpass(resample(audio, fs), config.lowpass_cutoff_hz).samples
    frame_len = frame_length_samples(fs, config.framing)
    lags_samp = lags_s * fs
    max_int_lag = int(np.ceil(lags_samp[-1])) + _INTERP_ZEROS
    starts = frame_start_samples(n_frames, fs, config.framing)
    width = frame_len + max_int_lag
    padded = np.concatenate([x, np.zeros(width + 1)])
    windows = padded[starts[:, None] + np.arange(width)[None, :]]
    # remove the DC of the analysis frame only: a silent frame whose lag tail
    # reaches the next note must stay silent, not become a correlated offset
    windows = windows - windows[:, :frame_len].mean(axis=1, keepdims=True)
    interp = _interp_matrix(lags_samp, max_int_lag)
    raw = np.clip(_nccf_rows(windows, max_int_lag, frame_len, 0.0) @ interp.T, -1.0, 1.0)
    # ballast relative to the squared mean frame energy, so it stays scale-free
    # and mainly damps near-silent frames
    ballast = config.nccf_ballast * (frame_len * float(np.mean(x * x))) ** 2
    if ballast > 0:
        ballasted = np.clip(_nccf_rows(windows, max_int_lag, frame_len, ballast) @ interp.T, -1.0, 1.0)
    else:
        ballasted = raw
    return lags_s, raw, ballasted


def extract_pitch(audio: AudioBuffer, config: PitchConfig | None = None) -> PitchTrack:
    """Run the full tracker on ``audio``.

    Frame ``i`` spans ``[i * shift, i * shift + length)`` of the input and is
    stamped at its center. Audio shorter than one frame gives an empty track.
    """
    config = config or PitchConfig()
    lags_s, raw, ballasted = nccf_lattice(audio, config)
    n_frames = raw.shape[0]
    times = (np.arange(n_frames) * config.frame_shift_ms + config.frame_length_ms / 2.0) / 1000.0
    if n_frames == 0:
        z = np.zeros(0)
        return PitchTrack(z, z, z, z, z, z, z, config)

    scores = ballasted * (1.0 - config.soft_min_f0_hz * lags_s)[None, :]
    path = viterbi_pitch(scores, lags_s, config.penalty_factor)

    rows = np.arange(n_frames)
    k_prev = np.clip(path - 1, 0, lags_s.size - 1)
    k_next = np.clip(path + 1, 0, lags_s.size - 1)
    interior = (path > 0) & (path < lags_s.size - 1)
    delta, height = _parabolic(raw[rows, k_prev], raw[rows, path], raw[rows, k_next])
    delta = np.where(interior, delta, 0.0)
    height = np.where(interior, height, raw[rows, path])
    lag = lags_s[path] * (1.0 + config.lag_resolution) ** delta
    pitch = np.clip(1.0 / lag, config.min_f0_hz, config.max_f0_hz)
    nccf = np.clip(height, -1.0, 1.0)

    pov = nccf_to_pov(nccf)
    log_pitch = np.log(pitch)
    norm = normalized_log_pitch(log_pitch, voicing_strength(pov), config.normalization_window_frames)
    delta_pitch = compute_delta(log_pitch, config.delta_context_frames)
    return PitchTrack(times, nccf, pitch, np.atleast_1d(pov), log_pitch, norm, delta_pitch, config)


def format_float(x: float) -> str:
    """Shortest string that round-trips ``x`` exactly."""
    return repr(float(x))


def track_to_csv(track: PitchTrack, header: dict | None = None) -> str:
    """Render ``track`` as CSV text; ``header`` is embedded as ``# key: json`` lines."""
    buf = io.StringIO()
    for key, value in (header or {}).items():
        buf.write(f"# {key}: {json.dumps(value, sort_keys=True)}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TRACK_COLUMNS)
    for row in track.as_array():
        writer.writerow([format_float(v) for v in row])
    return buf.getvalue()


def read_header(lines) -> dict:
    header = {}
    for line in lines:
        if not line.startswith("#"):
            break
        key, _, value = line[1:].strip().partition(": ")
        header[key] = json.loads(value)
    return header


def read_track_csv(path: str | Path, config: PitchConfig | None = None) -> PitchTrack:
    """Load a track written by :func:`track_to_csv`.

    The embedded ``config`` header supplies the tracker config unless one is
    passed explicitly.
    """
    text = Path(path).read_text()
    lines = text.splitlines()
    header = read_header(lines)
    body = [ln for ln in lines if not ln.startswith("#")]
    reader = csv.reader(body)
    cols = next(reader)
    if tuple(cols) != TRACK_COLUMNS:
        raise ValueError(f"{path}: unexpected columns {cols}")
    data = np.array([[float(v) for v in row] for row in reader], dtype=float).reshape(-1, len(TRACK_COLUMNS))
    if config is None:
        pitch_cfg = header.get("config", {}).get("pitch")
        config = PitchConfig.from_dict(pitch_cfg) if pitch_cfg else PitchConfig()
    return PitchTrack(*(data[:, i].copy() for i in range(len(TRACK_COLUMNS))), config=config)
