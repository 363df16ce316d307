import numpy as np
import pytest

from voxsource import synth
from voxsource.evaluation import GroundTruthTrack
from voxsource.signal_io import write_wav


def constant_reference(f0_hz, duration_s, hop_s=0.01, first_s=0.02, unvoiced=()):
    """Reference track at ``f0_hz`` with optional unvoiced (start, end) spans."""
    t = np.round(np.arange(first_s, duration_s - first_s + 1e-9, hop_s), 6)
    f = np.full(t.size, float(f0_hz))
    for lo, hi in unvoiced:
        f[(t >= lo) & (t < hi)] = 0.0
    return GroundTruthTrack(t, f, hop_s)


def write_reference(path, ref):
    np.savetxt(path, np.c_[ref.time_s, ref.f0_hz], fmt="%.6f")


@pytest.fixture
def tone_220():
    return synth.sine(220.0, 2.0)


@pytest.fixture
def pulse_200():
    return synth.pulse_train(200.0, 1.0)


@pytest.fixture
def corpus(tmp_path):
    """Four utterances: pulse-train vowel, noise fricatives, then a voiced tail.

    Labels: ``aa`` vowel, ``s``/``f`` unvoiced fricatives (noise), ``z``
    voiced fricative (pulse train), plus one unknown symbol ``qq``.
    """
    rows = ["utterance_id,audio_path,annotation_path,ground_truth_path,style,gender"]
    specs = [("sung", "female", 440.0), ("spoken", "female", 220.0), ("sung", "male", 300.0),
             ("spoken", "male", 120.0)]
    for i, (style, gender, f0) in enumerate(specs):
        audio = synth.concatenate(
            synth.pulse_train(f0, 0.5),
            synth.white_noise(0.3, std=0.05, seed=i),
            synth.pulse_train(f0, 0.3),
        )
        write_wav(tmp_path / f"u{i}.wav", audio)
        (tmp_path / f"u{i}.lab").write_text(
            "0.0 0.5 aa1\n0.5 0.65 s\n0.65 0.8 f\n0.8 1.1 z\n1.1 1.2 qq\n"
        )
        write_reference(tmp_path / f"u{i}.f0", constant_reference(f0, 1.1, unvoiced=[(0.5, 0.8)]))
        rows.append(f"u{i},u{i}.wav,u{i}.lab,u{i}.f0,{style},{gender}")
    (tmp_path / "manifest.csv").write_text("\n".join(rows) + "\n")
    return tmp_path
