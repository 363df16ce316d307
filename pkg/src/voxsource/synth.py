"""Synthetic test signals with analytically known pitch and perturbation."""
from __future__ import annotations

import numpy as np

from .signal_io import AudioBuffer

# Typical singing vibrato rates, Hz.
VIBRATO_RATE_RANGE_HZ = (5.5, 7.5)
# Mean vowel F0 of female singers when singing vs speaking, Hz.
FEMALE_SUNG_MEAN_F0_HZ = 342.0
FEMALE_SPOKEN_MEAN_F0_HZ = 237.0


def sine(freq_hz: float, duration_s: float, sample_rate_hz: int = 16000,
         amplitude: float = 0.5, phase: float = 0.0) -> AudioBuffer:
    t = np.arange(int(round(duration_s * sample_rate_hz))) / sample_rate_hz
    return AudioBuffer(amplitude * np.sin(2 * np.pi * freq_hz * t + phase), sample_rate_hz)


def vibrato_instantaneous_hz(t: np.ndarray, carrier_hz: float, rate_hz: float,
                             depth_semitones: float) -> np.ndarray:
    """Instantaneous frequency of a tone with sinusoidal vibrato in log frequency."""
    return carrier_hz * 2.0 ** (depth_semitones * np.sin(2 * np.pi * rate_hz * t) / 12.0)


def vibrato(carrier_hz: float, rate_hz: float, depth_semitones: float, duration_s: float,
            sample_rate_hz: int = 16000, amplitude: float = 0.5) -> AudioBuffer:
    """Sine whose frequency follows :func:`vibrato_instantaneous_hz`.

    Phase is the running integral of the instantaneous frequency, so the
    analytic pitch at time ``t`` is exactly ``vibrato_instantaneous_hz(t)``.
    """
    n = int(round(duration_s * sample_rate_hz))
    t = np.arange(n) / sample_rate_hz
    f = vibrato_instantaneous_hz(t, carrier_hz, rate_hz, depth_semitones)
    phase = 2 * np.pi * np.concatenate([[0.0], np.cumsum(f[:-1])]) / sample_rate_hz
    return AudioBuffer(amplitude * np.sin(phase), sample_rate_hz)


def glottal_pulse(t: np.ndarray, width_s: float = 0.0003) -> np.ndarray:
    """Zero-mean difference-of-Gaussians pulse with unit peak at ``t = 0``."""
    narrow = np.exp(-0.5 * (t / width_s) ** 2)
    wide = np.exp(-0.5 * (t / (3.0 * width_s)) ** 2) / 3.0
    return 1.5 * (narrow - wide)


def pulse_train_from_periods(periods_s, sample_rate_hz: int = 16000, amplitudes=None,
                             width_s: float = 0.0003, start_s: float = 0.0,
                             tail_s: float = 0.0, level: float = 0.5) -> AudioBuffer:
    """Pulses placed at exact (sub-sample) instants.

    Pulse ``k`` sits at ``start_s + sum(periods_s[:k])`` with peak
    ``level * amplitudes[k] / max(amplitudes)``. One more pulse than periods
    is emitted so every period is bounded by two pulses.
    """
    periods_s = np.asarray(periods_s, dtype=float)
    instants = start_s + np.concatenate([[0.0], np.cumsum(periods_s)])
    if amplitudes is None:
        amplitudes = np.ones(instants.size)
    amplitudes = np.resize(np.asarray(amplitudes, dtype=float), instants.size)
    amplitudes = level * amplitudes / np.max(np.abs(amplitudes))
    n = int(np.floor((instants[-1] + tail_s) * sample_rate_hz)) + 1
    t = np.arange(n) / sample_rate_hz
    x = np.zeros(n)
    half = int(np.ceil(5 * 3.0 * width_s * sample_rate_hz))
    for t0, a in zip(instants, amplitudes):
        c = int(round(t0 * sample_rate_hz))
        lo, hi = max(0, c - half), min(n, c + half + 1)
        x[lo:hi] += a * glottal_pulse(t[lo:hi] - t0, width_s)
    return AudioBuffer(x, sample_rate_hz)


def pulse_train(f0_hz: float, duration_s: float, sample_rate_hz: int = 16000,
                **kwargs) -> AudioBuffer:
    n_periods = int(np.floor(duration_s * f0_hz))
    return pulse_train_from_periods(np.full(n_periods, 1.0 / f0_hz), sample_rate_hz, **kwargs)


def white_noise(duration_s: float, sample_rate_hz: int = 16000, std: float = 0.1,
                seed: int = 0) -> AudioBuffer:
    rng = np.random.default_rng(seed)
    return AudioBuffer(std * rng.standard_normal(int(round(duration_s * sample_rate_hz))), sample_rate_hz)


def add_noise(audio: AudioBuffer, snr_db: float, seed: int = 0) -> AudioBuffer:
    """Add white Gaussian noise at ``snr_db`` relative to the signal variance."""
    rng = np.random.default_rng(seed)
    noise_std = np.sqrt(np.var(audio.samples) / 10.0 ** (snr_db / 10.0))
    return AudioBuffer(audio.samples + noise_std * rng.standard_normal(len(audio)), audio.sample_rate_hz)


def silence(duration_s: float, sample_rate_hz: int = 16000) -> AudioBuffer:
    return AudioBuffer(np.zeros(int(round(duration_s * sample_rate_hz))), sample_rate_hz)


def concatenate(*buffers: AudioBuffer) -> AudioBuffer:
    rates = {b.sample_rate_hz for b in buffers}
    if len(rates) != 1:
        raise ValueError(f"cannot concatenate buffers with rates {sorted(rates)}")
    return AudioBuffer(np.concatenate([b.samples for b in buffers]), rates.pop())
