import csv
import json
import random
import struct
from pathlib import Path

import numpy as np
import pytest

from voxsource import __version__, synth
from voxsource.cli import main
from voxsource.signal_io import write_wav

TOOL = f"voxsource {__version__}"


def csv_body(path):
    return [row for row in csv.reader(ln for ln in Path(path).read_text().splitlines() if not ln.startswith("#"))]


def csv_header(path):
    head = {}
    for ln in Path(path).read_text().splitlines():
        if ln.startswith("# "):
            key, value = ln[2:].split(": ", 1)
            head[key] = json.loads(value)
    return head


def png_text(path):
    data = Path(path).read_bytes()
    out, i = {}, 8
    while i < len(data):
        (n,) = struct.unpack(">I", data[i : i + 4])
        kind = data[i + 4 : i + 8]
        if kind == b"tEXt":
            key, _, value = data[i + 8 : i + 8 + n].partition(b"\0")
            out[key.decode()] = value.decode("latin-1")
        i += 12 + n
    return out


def snapshot(directory):
    return {p.name: p.read_bytes() for p in sorted(Path(directory).iterdir())}


# -- extract ------------------------------------------------------------------

def test_extract_one_file(corpus, tmp_path):
    assert main(["extract", str(corpus / "u0.wav"), "-o", str(tmp_path / "o")]) == 0
    rows = csv_body(tmp_path / "o" / "u0.pitch.csv")
    assert len(rows[0]) == 7
    # 1.1 s at 25/10 ms framing
    assert len(rows) - 1 == 108
    head = csv_header(tmp_path / "o" / "u0.pitch.csv")
    assert head["tool"] == TOOL and head["config"]["pitch"]["max_f0_hz"] == 1000.0


def test_extract_missing_file(corpus, tmp_path, capsys):
    inputs = [str(corpus / "u0.wav"), str(corpus / "missing.wav"), str(corpus / "u1.wav")]
    assert main(["extract", *inputs, "-o", str(tmp_path / "o")]) == 1
    assert sorted(p.name for p in (tmp_path / "o").iterdir()) == ["u0.pitch.csv", "u1.pitch.csv"]
    assert "missing.wav" in capsys.readouterr().err


def test_extract_flags_override_config_file(corpus, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"pitch": {"max_f0_hz": 600, "lowpass_cutoff_hz": 1000}}))
    out = tmp_path / "o"
    assert main(["extract", str(corpus / "u0.wav"), "-o", str(out), "--config", str(cfg), "--max-f0", "800"]) == 0
    pitch = csv_header(out / "u0.pitch.csv")["config"]["pitch"]
    assert pitch["max_f0_hz"] == 800.0 and pitch["lowpass_cutoff_hz"] == 1000.0


@pytest.mark.parametrize(
    "extra",
    [["--max-f0", "900", "--lowpass-cutoff", "500"], ["--normalization-window", "10"], ["--workers", "0"]],
)
def test_invalid_config_exit_2(corpus, tmp_path, extra):
    assert main(["extract", str(corpus / "u0.wav"), "-o", str(tmp_path / "o"), *extra]) == 2


def test_unreadable_config_file(corpus, tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["extract", str(corpus / "u0.wav"), "-o", str(tmp_path / "o"), "--config", str(bad)]) == 2


def test_extract_figures_carry_config(corpus, tmp_path):
    out = tmp_path / "o"
    assert main(["extract", str(corpus / "u0.wav"), "-o", str(out), "--figures"]) == 0
    meta = json.loads(png_text(out / "u0.pitch.png")["Description"])
    assert meta["tool"] == TOOL and "Software" not in png_text(out / "u0.pitch.png")


# -- vq -----------------------------------------------------------------------

def test_vq_batch_and_silence(corpus, tmp_path):
    write_wav(tmp_path / "quiet.wav", synth.silence(0.5))
    write_wav(tmp_path / "pulses.wav", synth.pulse_train(200.0, 1.0))
    out = tmp_path / "o"
    args = ["vq", str(tmp_path / "quiet.wav"), str(tmp_path / "pulses.wav"), "-o", str(out), "--voiced-threshold", "-0.13"]
    assert main(args) == 0
    quiet = json.loads((out / "quiet.vq.json").read_text())
    assert quiet["report"]["rap"] is None and "rap" in quiet["undefined"]
    pulses = json.loads((out / "pulses.vq.json").read_text())
    assert pulses["report"]["jitta_s"] < 1e-6
    assert pulses["tool"] == TOOL and pulses["config"]["voiced_threshold"] == -0.13
    rows = csv_body(out / "pulses.vq.csv")
    assert rows[0] == ["time_s", "jitta_s", "rap", "shimmer", "hnr_db"]
    assert len(rows) - 1 == 98


def test_vq_warns_about_default_threshold(corpus, tmp_path, caplog):
    main(["vq", str(corpus / "u0.wav"), "-o", str(tmp_path / "o")])
    assert "voiced_threshold" in caplog.text


# -- tune and eval --------------------------------------------------------------

def test_tune_default_grid(corpus, tmp_path):
    out = tmp_path / "o"
    assert main(["tune", "--manifest", str(corpus / "manifest.csv"), "-o", str(out), "--no-figures"]) == 0
    rows = csv_body(out / "tuning.csv")
    assert len(rows) - 1 == 21
    result = json.loads((out / "tuning.json").read_text())
    assert len(result["grid"]) == 21
    assert sum(r["best"] for r in result["grid"]) == 1
    assert result["voicing_threshold"]["threshold"] is not None
    assert result["voicing_threshold"]["error_rate"] < 0.05


def test_tune_single_config_with_figure(corpus, tmp_path):
    out = tmp_path / "o"
    args = ["tune", "--manifest", str(corpus / "manifest.csv"), "-o", str(out), "--max-f0-grid", "900",
            "--lowpass-grid", "1500"]
    assert main(args) == 0
    result = json.loads((out / "tuning.json").read_text())
    assert len(result["grid"]) == 1
    assert (result["best"]["max_f0_hz"], result["best"]["lowpass_cutoff_hz"]) == (900.0, 1500.0)
    assert (out / "tuning.png").exists()


def _permuted_manifest(corpus, tmp_path):
    lines = (corpus / "manifest.csv").read_text().splitlines()
    body = lines[1:]
    random.Random(1).shuffle(body)
    path = corpus / "permuted.csv"
    path.write_text("\n".join([lines[0], *body]) + "\n")
    return path


def test_tune_permuted_manifest(corpus, tmp_path):
    grid = ["--max-f0-grid", "700,1000", "--lowpass-grid", "1000,2000", "--no-figures"]
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["tune", "--manifest", str(corpus / "manifest.csv"), "-o", str(a), *grid]) == 0
    assert main(["tune", "--manifest", str(_permuted_manifest(corpus, tmp_path)), "-o", str(b), *grid]) == 0
    assert (a / "tuning.csv").read_bytes() == (b / "tuning.csv").read_bytes()


@pytest.mark.parametrize(
    "manifest,line",
    [
        ("utterance_id,audio_path,ground_truth_path\nu0,u0.wav,u0.f0\nu1,,u1.f0\n", 3),
        ("utterance_id,audio_path,ground_truth_path\nu0,u0.wav,u0.f0\nu0,u1.wav,u1.f0\n", 3),
        ("utterance_id,audio_path,ground_truth_path,style\nu0,u0.wav,u0.f0,opera\n", 2),
        ("utterance_id,audio_path\nu0,u0.wav\n", 1),
        ("utterance_id,audio_path,ground_truth_path\nu0,u0.wav,u0.f0,extra\n", 2),
    ],
)
def test_tune_malformed_manifest(corpus, tmp_path, capsys, manifest, line):
    path = corpus / "bad.csv"
    path.write_text(manifest)
    assert main(["tune", "--manifest", str(path), "-o", str(tmp_path / "o")]) == 2
    assert f"bad.csv:{line}:" in capsys.readouterr().err


def test_eval_reports(corpus, tmp_path):
    out = tmp_path / "o"
    assert main(["eval", "--manifest", str(corpus / "manifest.csv"), "-o", str(out)]) == 0
    rows = csv_body(out / "eval.csv")
    assert [r[0] for r in rows[1:]] == ["u0", "u1", "u2", "u3"]
    report = json.loads((out / "eval.json").read_text())
    assert report["pooled"]["gpe"] == 0.0
    assert report["pooled"]["fpe_cents"] < 20
    assert sorted(p.name for p in out.glob("*.eval.png")) == [f"u{i}.eval.png" for i in range(4)]


def test_eval_semitone_ground_truth(corpus, tmp_path):
    (corpus / "u1.pv").write_text("\n".join(["57"] * 48 + ["0"] * 30 + ["57"] * 28) + "\n")
    (corpus / "st.csv").write_text("utterance_id,audio_path,ground_truth_path\nu1,u1.wav,u1.pv\n")
    out = tmp_path / "o"
    args = ["eval", "--manifest", str(corpus / "st.csv"), "-o", str(out), "--gt-units", "semitone",
            "--gt-hop-s", "0.01", "--gt-first-time-s", "0.02", "--no-figures"]
    assert main(args) == 0
    assert json.loads((out / "eval.json").read_text())["pooled"]["gpe"] == 0.0


# -- analyze ----------------------------------------------------------------------

def test_analyze_outputs(corpus, tmp_path, caplog):
    out = tmp_path / "o"
    assert main(["analyze", "--manifest", str(corpus / "manifest.csv"), "-o", str(out), "--n-bins", "20"]) == 0
    result = json.loads((out / "analysis.json").read_text())
    assert result["validation"]["unknown_labels"] == ["qq"]
    assert "qq" in caplog.text
    n_duration = len(result["duration"])
    assert len(csv_body(out / "durations.csv")) - 1 == 20 * n_duration
    assert all(len(r["probabilities"]) == 20 for r in result["pitch"])
    separations = {r["name"]: r["bhattacharyya"] for r in result["pov_separation"]}
    assert set(separations) == {"fricatives_sung", "fricatives_spoken"}
    for d in separations.values():
        assert d == "inf" or d > 0.5
    assert {"stops_sung", "stops_spoken"} <= set(result["skipped"])
    assert (out / "durations.png").exists() and (out / "pov_fricatives_sung.png").exists()
    assert result["vq"]["cohorts"] == ["sung_male", "sung_female", "spoken_male", "spoken_female"]


def test_analyze_identical_cohorts(corpus, tmp_path):
    same = {"name": "z_sung", "style": "sung", "gender": "any", "phone_class": "voiced_fricatives"}
    spec = {"duration": [], "pitch": [], "vq": [], "pov_pairs": [{"name": "same", "a": same, "b": same}]}
    (tmp_path / "cohorts.json").write_text(json.dumps(spec))
    out = tmp_path / "o"
    args = ["analyze", "--manifest", str(corpus / "manifest.csv"), "-o", str(out), "--cohorts",
            str(tmp_path / "cohorts.json"), "--no-figures"]
    assert main(args) == 0
    assert json.loads((out / "analysis.json").read_text())["pov_separation"][0]["bhattacharyya"] == 0.0


def test_analyze_unknown_phone_class(corpus, tmp_path):
    spec = {"duration": [{"style": "sung", "phone_class": "clicks"}]}
    (tmp_path / "cohorts.json").write_text(json.dumps(spec))
    args = ["analyze", "--manifest", str(corpus / "manifest.csv"), "-o", str(tmp_path / "o"), "--cohorts",
            str(tmp_path / "cohorts.json")]
    assert main(args) == 2


def test_analyze_precomputed_features_match(corpus, tmp_path):
    feats = tmp_path / "feats"
    wavs = [str(corpus / f"u{i}.wav") for i in range(4)]
    assert main(["extract", *wavs, "-o", str(feats)]) == 0
    direct, pre = tmp_path / "direct", tmp_path / "pre"
    manifest = str(corpus / "manifest.csv")
    assert main(["analyze", "--manifest", manifest, "-o", str(direct)]) == 0
    assert main(["analyze", "--manifest", manifest, "-o", str(pre), "--features-dir", str(feats)]) == 0
    for name in ("durations.csv", "pitch.csv", "pov.csv", "pov_separation.csv", "vq_comparison.csv"):
        assert csv_body(direct / name) == csv_body(pre / name)
    a = json.loads((direct / "analysis.json").read_text())
    b = json.loads((pre / "analysis.json").read_text())
    for key in ("duration", "pitch", "pov_separation", "vq"):
        assert a[key] == b[key]


def test_analyze_permuted_manifest(corpus, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["analyze", "--manifest", str(corpus / "manifest.csv"), "-o", str(a)]) == 0
    assert main(["analyze", "--manifest", str(_permuted_manifest(corpus, tmp_path)), "-o", str(b)]) == 0
    assert snapshot(a) == snapshot(b)


# -- determinism and provenance ---------------------------------------------------

COMMANDS = {
    "extract": lambda c: ["extract", str(c / "u0.wav"), str(c / "u1.wav"), "--figures"],
    "vq": lambda c: ["vq", str(c / "u0.wav"), str(c / "u1.wav")],
    "tune": lambda c: ["tune", "--manifest", str(c / "manifest.csv"), "--max-f0-grid", "800,1000",
                       "--lowpass-grid", "1500"],
    "eval": lambda c: ["eval", "--manifest", str(c / "manifest.csv")],
    "analyze": lambda c: ["analyze", "--manifest", str(c / "manifest.csv")],
}


@pytest.mark.parametrize("command", sorted(COMMANDS))
def test_rerun_and_parallel_byte_identical(corpus, tmp_path, command):
    args = COMMANDS[command](corpus)
    runs = []
    for n, workers in enumerate(("1", "1", "2")):
        out = tmp_path / f"run{n}"
        main([*args, "-o", str(out), "--workers", workers])
        runs.append(snapshot(out))
    assert runs[0] and runs[0] == runs[1] == runs[2]


@pytest.mark.parametrize("command", sorted(COMMANDS))
def test_every_artifact_has_config_and_version(corpus, tmp_path, command):
    out = tmp_path / "o"
    main([*COMMANDS[command](corpus), "-o", str(out)])
    for path in sorted(out.iterdir()):
        if path.suffix == ".csv":
            head = csv_header(path)
        elif path.suffix == ".json":
            head = json.loads(path.read_text())
        else:
            head = json.loads(png_text(path)["Description"])
        assert head["tool"] == TOOL, path.name
        assert head["config"]["command"] == command and "pitch" in head["config"], path.name


def test_no_temp_files_left(corpus, tmp_path):
    out = tmp_path / "o"
    main([*COMMANDS["analyze"](corpus), "-o", str(out)])
    assert not [p for p in out.iterdir() if p.name.startswith(".")]


def test_version_flag(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0
    assert TOOL in capsys.readouterr().out
