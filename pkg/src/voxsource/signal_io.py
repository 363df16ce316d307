"""Audio loading, resampling and framing.

Every downstream module frames audio through :func:`frame_count` so that
pitch tracks, VQ streams and ground-truth alignment agree on frame timing.
"""
from __future__ import annotations

import wave
from dataclasses import dataclass
from fractions import Fraction
from math import gcd
from pathlib import Path

import numpy as np
from scipy import signal

# Minimum stopband attenuation of the anti-aliasing filters, in dB.
STOPBAND_DB = 60.0


class AudioFormatError(ValueError):
    """Raised for unreadable or unsupported audio files."""


@dataclass(frozen=True)
class AudioBuffer:
    """Mono waveform with its sample rate.

    Samples are floats in nominal range [-1, 1].
    """

    samples: np.ndarray
    sample_rate_hz: int

    def __post_init__(self):
        if int(self.sample_rate_hz) != self.sample_rate_hz or self.sample_rate_hz <= 0:
            raise ValueError(f"sample_rate_hz must be a positive integer, got {self.sample_rate_hz}")
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError(f"samples must be one-dimensional, got shape {samples.shape}")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate_hz", int(self.sample_rate_hz))

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate_hz

    def scaled(self, gain: float) -> "AudioBuffer":
        return AudioBuffer(self.samples * gain, self.sample_rate_hz)


@dataclass(frozen=True)
class FramingSpec:
    frame_length_ms: float = 25.0
    frame_shift_ms: float = 10.0

    def __post_init__(self):
        if self.frame_length_ms <= 0 or self.frame_shift_ms <= 0:
            raise ValueError("frame length and shift must be positive")
        if self.frame_shift_ms > self.frame_length_ms:
            raise ValueError(
                f"frame_shift_ms ({self.frame_shift_ms}) exceeds "
                f"frame_length_ms ({self.frame_length_ms})"
            )


def _exact(x: float) -> Fraction:
    # str() keeps user-facing decimals such as 0.1 exact
    return Fraction(str(x))


def frame_count(n_samples: int, sample_rate_hz: int, spec: FramingSpec) -> int:
    """Number of frames covering ``n_samples`` under ``spec``.

    Uses exact rational arithmetic on
    ``floor((D - L) / S) + 1`` with all quantities in milliseconds.
    """
    duration = Fraction(n_samples * 1000, sample_rate_hz)
    length = _exact(spec.frame_length_ms)
    shift = _exact(spec.frame_shift_ms)
    if duration < length:
        return 0
    return int((duration - length) // shift) + 1


def frame_start_samples(n_frames: int, sample_rate_hz: int, spec: FramingSpec) -> np.ndarray:
    """Start sample of each frame, ``round(i * shift * fs / 1000)``."""
    step = _exact(spec.frame_shift_ms) * sample_rate_hz / 1000
    return np.array([round(i * step) for i in range(n_frames)], dtype=np.int64)


def frame_length_samples(sample_rate_hz: int, spec: FramingSpec) -> int:
    return max(1, round(_exact(spec.frame_length_ms) * sample_rate_hz / 1000))


def frame_signal(audio: AudioBuffer, spec: FramingSpec) -> np.ndarray:
    """Cut ``audio`` into overlapping frames.

    Returns an array of shape ``(n_frames, frame_length_samples)``; frame ``i``
    starts at ``i * frame_shift``. A signal shorter than one frame gives an
    empty ``(0, frame_length_samples)`` array.
    """
    n = frame_count(len(audio), audio.sample_rate_hz, spec)
    width = frame_length_samples(audio.sample_rate_hz, spec)
    if n == 0:
        return np.zeros((0, width))
    starts = frame_start_samples(n, audio.sample_rate_hz, spec)
    # rounding of fractional-sample shifts can overrun the end by a sample
    padded = np.concatenate([audio.samples, np.zeros(2)])
    idx = starts[:, None] + np.arange(width)[None, :]
    return padded[idx]


def _decode_pcm(raw: bytes, sampwidth: int) -> np.ndarray:
    if sampwidth == 1:
        return (np.frombuffer(raw, dtype=np.uint8).astype(np.float64) - 128.0) / 128.0
    if sampwidth == 2:
        return np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    if sampwidth == 3:
        b = np.frombuffer(raw, dtype=np.uint8).reshape(-1, 3).astype(np.int32)
        ints = b[:, 0] | (b[:, 1] << 8) | (b[:, 2] << 16)
        ints = np.where(ints >= 1 << 23, ints - (1 << 24), ints)
        return ints.astype(np.float64) / float(1 << 23)
    if sampwidth == 4:
        return np.frombuffer(raw, dtype="<i4").astype(np.float64) / float(1 << 31)
    raise AudioFormatError(f"unsupported PCM sample width: {8 * sampwidth} bits")


def load_wav(path: str | Path) -> AudioBuffer:
    """Read a linear-PCM WAV file, averaging channels to mono."""
    path = Path(path)
    try:
        with wave.open(str(path), "rb") as wf:
            n_channels = wf.getnchannels()
            sampwidth = wf.getsampwidth()
            rate = wf.getframerate()
            raw = wf.readframes(wf.getnframes())
    except FileNotFoundError:
        raise
    except wave.Error as exc:
        # wave reports non-PCM formats as "unknown format: <tag>"
        raise AudioFormatError(f"{path}: not a linear PCM WAV file ({exc})") from exc
    except (EOFError, OSError) as exc:
        raise AudioFormatError(f"{path}: unreadable WAV file ({exc})") from exc
    data = _decode_pcm(raw, sampwidth)
    if n_channels > 1:
        data = data[: data.size - data.size % n_channels].reshape(-1, n_channels).mean(axis=1)
    return AudioBuffer(data, rate)


def write_wav(path: str | Path, audio: AudioBuffer, sampwidth: int = 2) -> None:
    """Write ``audio`` as mono linear PCM, clipping to full scale."""
    x = np.clip(audio.samples, -1.0, 1.0)
    if sampwidth == 2:
        data = np.round(x * 32767.0).astype("<i2").tobytes()
    elif sampwidth == 3:
        ints = np.round(x * ((1 << 23) - 1)).astype(np.int32)
        b = np.stack([ints & 0xFF, (ints >> 8) & 0xFF, (ints >> 16) & 0xFF], axis=1)
        data = b.astype(np.uint8).tobytes()
    elif sampwidth == 4:
        data = np.round(x * ((1 << 31) - 1)).astype("<i4").tobytes()
    elif sampwidth == 1:
        data = np.round(x * 127.0 + 128.0).astype(np.uint8).tobytes()
    else:
        raise ValueError(f"unsupported sample width {sampwidth}")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(sampwidth)
        wf.setframerate(audio.sample_rate_hz)
        wf.writeframes(data)


def lowpass_fir(cutoff_hz: float, sample_rate_hz: float, transition_hz: float | None = None) -> np.ndarray:
    """Kaiser-windowed sinc lowpass with :data:`STOPBAND_DB` attenuation.

    The passband edge sits at ``cutoff_hz``; the stopband begins
    ``transition_hz`` above it (default 10% of the cutoff).
    """
    nyq = sample_rate_hz / 2.0
    if transition_hz is None:
        transition_hz = 0.1 * cutoff_hz
    numtaps, beta = signal.kaiserord(STOPBAND_DB, transition_hz / nyq)
    numtaps |= 1
    return signal.firwin(numtaps, cutoff_hz + transition_hz / 2, window=("kaiser", beta), fs=sample_rate_hz)


def lowpass(audio: AudioBuffer, cutoff_hz: float) -> AudioBuffer:
    """Zero-phase FIR lowpass; a no-op when ``cutoff_hz`` is at or above Nyquist."""
    if cutoff_hz >= audio.sample_rate_hz / 2.0:
        return audio
    taps = lowpass_fir(cutoff_hz, audio.sample_rate_hz)
    y = signal.oaconvolve(audio.samples, taps, mode="same") if audio.samples.size else audio.samples
    return AudioBuffer(y, audio.sample_rate_hz)


def resample(audio: AudioBuffer, target_hz: int) -> AudioBuffer:
    """Polyphase windowed-sinc resampling to ``target_hz``.

    The anti-aliasing filter passes up to 90% of the lower Nyquist frequency
    and attenuates everything above that Nyquist by at least
    :data:`STOPBAND_DB`.
    """
    if int(target_hz) != target_hz or target_hz <= 0:
        raise ValueError(f"target_hz must be a positive integer, got {target_hz}")
    target_hz = int(target_hz)
    src = audio.sample_rate_hz
    if target_hz == src:
        return audio
    g = gcd(src, target_hz)
    up, down = target_hz // g, src // g
    # filter designed at the upsampled rate src * up
    fs_up = src * up
    nyq_out = min(src, target_hz) / 2.0
    transition = 0.1 * nyq_out
    numtaps, beta = signal.kaiserord(STOPBAND_DB, transition / (fs_up / 2.0))
    numtaps |= 1
    taps = signal.firwin(numtaps, nyq_out - transition / 2, window=("kaiser", beta), fs=fs_up) * up
    y = signal.resample_poly(audio.samples, up, down, window=taps)
    return AudioBuffer(y, target_hz)
