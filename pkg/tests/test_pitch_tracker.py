import itertools
import math
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from voxsource import synth
from voxsource.signal_io import AudioBuffer
from voxsource.pitch_tracker import (
    DEFAULT_VOICED_THRESHOLD,
    POV_MAX,
    POV_MIN,
    TRACK_COLUMNS,
    PitchConfig,
    PitchConfigError,
    compute_delta,
    compute_nccf,
    extract_pitch,
    normalize_log_pitch,
    normalized_log_pitch,
    nccf_to_pov,
    read_track_csv,
    track_to_csv,
    viterbi_pitch,
)


def semitones(a, b):
    return np.abs(12 * np.log2(np.asarray(a) / np.asarray(b)))


def brute_force(scores, lags, penalty):
    """Exhaustive minimum over every lag path, summed frame by frame."""
    log_lag = [math.log(x) for x in lags]
    best = None
    for path in itertools.product(range(scores.shape[1]), repeat=scores.shape[0]):
        cost = -scores[0, path[0]]
        for i in range(1, len(path)):
            cost = cost + penalty * (log_lag[path[i - 1]] - log_lag[path[i]]) ** 2 + -scores[i, path[i]]
        if best is None or cost < best[0]:
            best = (cost, path)
    return best


def cost_of(scores, lags, penalty, path):
    log_lag = [math.log(x) for x in lags]
    cost = -scores[0, path[0]]
    for i in range(1, len(path)):
        cost = cost + penalty * (log_lag[path[i - 1]] - log_lag[path[i]]) ** 2 + -scores[i, path[i]]
    return cost


# -- configuration ---------------------------------------------------------

def test_config_defaults():
    cfg = PitchConfig()
    assert (cfg.min_f0_hz, cfg.max_f0_hz, cfg.lowpass_cutoff_hz) == (50, 1000, 1500)
    assert (cfg.frame_shift_ms, cfg.frame_length_ms, cfg.delta_context_frames) == (10, 25, 2)


@pytest.mark.parametrize(
    "kwargs",
    [
        {"min_f0_hz": 500, "max_f0_hz": 400},
        {"max_f0_hz": 1000, "lowpass_cutoff_hz": 900},
        {"normalization_window_frames": 150},
        {"penalty_factor": -1},
        {"delta_context_frames": 0},
        {"max_f0_hz": 3000, "lowpass_cutoff_hz": 3000},  # above the 2 kHz processing Nyquist
    ],
)
def test_config_rejects(kwargs):
    with pytest.raises(PitchConfigError):
        PitchConfig(**kwargs)


def test_config_accepts_cutoff_equal_to_max_f0():
    assert PitchConfig(max_f0_hz=1000, lowpass_cutoff_hz=1000).lowpass_cutoff_hz == 1000


def test_config_from_dict_rejects_unknown_key():
    with pytest.raises((PitchConfigError, TypeError)):
        PitchConfig.from_dict({"max_f0": 900})


# -- NCCF --------------------------------------------------------------------

def test_nccf_sine_peak_at_period():
    t = np.arange(200) / 4000
    window = np.sin(2 * np.pi * 200 * t)
    assert compute_nccf(window, np.arange(4, 81), 0.0, frame_length=100)[20 - 4] >= 0.99


def test_nccf_noise_stays_low():
    rng = np.random.default_rng(1234)
    maxima = [compute_nccf(rng.standard_normal(180), np.arange(4, 81), 0.0, 100).max() for _ in range(1000)]
    assert np.mean(np.array(maxima) < 0.6) >= 0.99


def test_nccf_zero_window_with_ballast():
    assert np.all(compute_nccf(np.zeros(180), np.arange(4, 81), 1e-6, 100) == 0.0)


def test_nccf_empty_lag_range():
    with pytest.raises(PitchConfigError):
        compute_nccf(np.zeros(100), [], 0.0)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_nccf_bounded(seed):
    x = np.random.default_rng(seed).standard_normal(150)
    v = compute_nccf(x, np.arange(0, 50), 0.0, 100)
    assert np.all(np.abs(v) <= 1.0)


# -- Viterbi -------------------------------------------------------------------

def test_viterbi_single_frame_is_argmax():
    scores = np.array([[0.1, 0.9, 0.3]])
    assert viterbi_pitch(scores, [1.0, 2.0, 3.0], 10.0).tolist() == [1]


def test_viterbi_two_frames_known_case():
    lags = np.array([0.002, 0.004])
    scores = np.array([[1.0, 0.0], [0.0, 0.6]])
    # switching costs 0.3 * ln(2)^2 = 0.144 < 0.6, so the path switches
    assert viterbi_pitch(scores, lags, 0.3).tolist() == [0, 1]
    # with a penalty of 2, a switch costs 0.96 > 0.6
    assert viterbi_pitch(scores, lags, 2.0).tolist() == [0, 0]


@settings(max_examples=200, deadline=None)
@given(
    n_frames=st.integers(1, 6),
    n_lags=st.integers(1, 8),
    penalty=st.floats(0.0, 10.0),
    seed=st.integers(0, 2**32 - 1),
)
def test_viterbi_matches_brute_force(n_frames, n_lags, penalty, seed):
    rng = np.random.default_rng(seed)
    scores = rng.uniform(-1, 1, (n_frames, n_lags))
    lags = np.sort(rng.uniform(1e-3, 2e-2, n_lags))
    path = viterbi_pitch(scores, lags, penalty)
    best_cost, _ = brute_force(scores, lags, penalty)
    assert cost_of(scores, lags, penalty, path) == best_cost


def test_viterbi_rejects_malformed_lattice():
    with pytest.raises(ValueError):
        viterbi_pitch(np.zeros((0, 3)), [1, 2, 3], 0.1)
    with pytest.raises(ValueError):
        viterbi_pitch(np.zeros((2, 3)), [1, 2], 0.1)


# -- POV mapping -----------------------------------------------------------------

def test_pov_endpoints():
    assert nccf_to_pov(1.0) == POV_MIN
    assert nccf_to_pov(-1.0) == POV_MAX


def test_pov_strictly_decreasing_on_grid():
    v = nccf_to_pov(np.linspace(-1, 1, 1000))
    assert np.all(np.diff(v) < 0)


@pytest.mark.parametrize("bad", [1.0001, -1.5, float("nan")])
def test_pov_domain_error(bad):
    with pytest.raises(ValueError):
        nccf_to_pov(bad)


def test_default_threshold_inside_range():
    assert POV_MIN < DEFAULT_VOICED_THRESHOLD < POV_MAX


# -- normalization and delta -----------------------------------------------------

def test_normalization_constant_track_is_zero():
    out = normalized_log_pitch(np.full(20, 5.0), np.ones(20), 5)
    assert np.all(np.abs(out) < 1e-12)


def test_normalization_three_frame_example():
    out = normalized_log_pitch([5.0, 5.3, 5.0], np.ones(3), 3)
    assert out[1] == pytest.approx(0.2, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(
    values=st.lists(st.floats(3.0, 7.0), min_size=1, max_size=40),
    offset=st.floats(-3.0, 3.0),
    window=st.sampled_from([1, 3, 5, 11, 151]),
)
def test_normalization_offset_invariant(values, offset, window):
    lp = np.array(values)
    w = np.linspace(0.1, 1.0, lp.size)
    a = normalized_log_pitch(lp, w, window)
    b = normalized_log_pitch(lp + offset, w, window)
    assert np.allclose(a, b, atol=1e-9)


def test_delta_examples():
    assert np.all(compute_delta(np.full(10, 4.2), 2) == 0)
    ramp = 0.3 * np.arange(12)
    assert np.allclose(compute_delta(ramp, 2)[2:-2], 0.3)
    assert compute_delta([0, 0, 1, 0, 0], 2)[2] == 0.0


@settings(max_examples=100, deadline=None)
@given(
    a=st.lists(st.floats(-10, 10), min_size=1, max_size=30),
    alpha=st.floats(-5, 5),
    beta=st.floats(-5, 5),
    context=st.integers(1, 4),
)
def test_delta_linear(a, alpha, beta, context):
    x = np.array(a)
    y = np.cos(np.arange(x.size))
    lhs = compute_delta(alpha * x + beta * y, context)
    rhs = alpha * compute_delta(x, context) + beta * compute_delta(y, context)
    assert np.allclose(lhs, rhs, atol=1e-9)


# -- full extraction -------------------------------------------------------------

def test_tone_220(tone_220):
    track = extract_pitch(tone_220)
    ok = (semitones(track.pitch_hz, 220.0) <= 1.0) & (track.pov_feature < DEFAULT_VOICED_THRESHOLD)
    assert ok.mean() >= 0.95


def test_track_structure(tone_220):
    cfg = PitchConfig()
    track = extract_pitch(tone_220, cfg)
    assert len(track) == 198
    assert np.allclose(np.diff(track.time_s), 0.01)
    assert np.array_equal(track.log_pitch, np.log(track.pitch_hz))
    assert np.array_equal(track.normalized_log_pitch, normalize_log_pitch(track))
    assert np.array_equal(track.delta_pitch, compute_delta(track.log_pitch, 2))
    assert np.all((track.nccf >= -1) & (track.nccf <= 1))
    assert track.as_array().shape == (198, len(TRACK_COLUMNS))


def test_vibrato_tracking():
    audio = synth.vibrato(440.0, 6.0, 1.0, 2.0)
    track = extract_pitch(audio)
    truth = synth.vibrato_instantaneous_hz(track.time_s, 440.0, 6.0, 1.0)
    assert np.mean(100 * semitones(track.pitch_hz, truth)) < 50


def test_noise_is_unvoiced():
    track = extract_pitch(synth.white_noise(2.0, seed=3))
    assert track.pov_feature.mean() > DEFAULT_VOICED_THRESHOLD


def test_pitch_bridges_silence():
    audio = synth.concatenate(synth.sine(200.0, 0.5), synth.silence(0.1), synth.sine(200.0, 0.5))
    track = extract_pitch(audio)
    assert np.all(semitones(track.pitch_hz, 200.0) <= 1.0)


def test_short_audio_gives_empty_track():
    track = extract_pitch(synth.sine(200.0, 0.01))
    assert len(track) == 0


def test_deterministic(tone_220):
    a, b = extract_pitch(tone_220), extract_pitch(tone_220)
    assert np.array_equal(a.as_array(), b.as_array())


def test_runtime_under_a_second(tone_220):
    extract_pitch(tone_220)  # warm caches
    t0 = time.perf_counter()
    extract_pitch(tone_220)
    assert time.perf_counter() - t0 < 1.0


@settings(max_examples=15, deadline=None)
@given(
    seed=st.integers(0, 2**32 - 1),
    max_f0=st.sampled_from([400.0, 700.0, 1000.0]),
    kind=st.sampled_from(["noise", "tone", "pulses"]),
)
def test_pitch_within_bounds(seed, max_f0, kind):
    rng = np.random.default_rng(seed)
    if kind == "noise":
        audio = synth.white_noise(0.3, seed=seed)
    elif kind == "tone":
        audio = synth.sine(float(rng.uniform(20, 3000)), 0.3)
    else:
        audio = synth.pulse_train(float(rng.uniform(30, 1500)), 0.3)
    cfg = PitchConfig(max_f0_hz=max_f0, lowpass_cutoff_hz=max(max_f0, 1000.0))
    track = extract_pitch(audio, cfg)
    assert np.all((track.pitch_hz >= cfg.min_f0_hz) & (track.pitch_hz <= cfg.max_f0_hz))


@settings(max_examples=10, deadline=None)
@given(scale=st.floats(1e-3, 1e3))
def test_amplitude_invariance_without_ballast(scale):
    audio = synth.concatenate(synth.vibrato(300.0, 6.0, 0.5, 0.4), synth.white_noise(0.2, seed=5))
    cfg = PitchConfig(nccf_ballast=0.0)
    a = extract_pitch(audio, cfg)
    b = extract_pitch(audio.scaled(scale), cfg)
    assert np.allclose(a.pitch_hz, b.pitch_hz, rtol=1e-9, atol=0)


# -- CSV -------------------------------------------------------------------------

def test_csv_roundtrip(tmp_path, tone_220):
    track = extract_pitch(tone_220)
    text = track_to_csv(track, {"tool": "test", "config": {"pitch": track.config.__dict__}})
    (tmp_path / "t.csv").write_text(text)
    lines = [ln for ln in text.splitlines() if not ln.startswith("#")]
    assert lines[0].split(",") == list(TRACK_COLUMNS)
    assert len(lines) - 1 == len(track)
    back = read_track_csv(tmp_path / "t.csv")
    assert np.array_equal(back.as_array(), track.as_array())
    assert back.config == track.config
