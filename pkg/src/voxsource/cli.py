"""Command-line front end: ``voxsource {extract,vq,tune,eval,analyze}``.

Settings resolve as built-in defaults < ``--config`` JSON file < flags, and
the resolved settings are echoed into every output file. Exit status is 0
on success, 1 when some inputs failed and 2 for invalid configuration.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from . import corpus_analysis as ca
from .evaluation import (
    DEFAULT_LOWPASS_GRID,
    DEFAULT_MAX_F0_GRID,
    UndefinedResultError,
    align,
    estimate_voicing_threshold,
    evaluate,
    grid_search,
    load_ground_truth,
    pool,
    uniform_edges,
)
from .pitch_tracker import (
    DEFAULT_VOICED_THRESHOLD,
    PitchConfig,
    PitchConfigError,
    extract_pitch,
    format_float,
    read_track_csv,
    track_to_csv,
)
from .signal_io import load_wav
from .voice_quality import VQ_COLUMNS, extract_vq

log = logging.getLogger("voxsource")

EXIT_OK, EXIT_PARTIAL, EXIT_CONFIG = 0, 1, 2
TOOL = f"voxsource {__version__}"

MANIFEST_COLUMNS = ("utterance_id", "audio_path", "annotation_path", "ground_truth_path", "style", "gender")

# flag dest -> PitchConfig field
PITCH_FLAGS = {
    "min_f0": "min_f0_hz",
    "max_f0": "max_f0_hz",
    "lowpass_cutoff": "lowpass_cutoff_hz",
    "frame_shift_ms": "frame_shift_ms",
    "frame_length_ms": "frame_length_ms",
    "penalty_factor": "penalty_factor",
    "nccf_ballast": "nccf_ballast",
    "normalization_window": "normalization_window_frames",
    "delta_context": "delta_context_frames",
    "resample_hz": "resample_hz",
}


class ConfigError(ValueError):
    pass


# --------------------------------------------------------------------------
# output helpers

def write_atomic(path: Path, text: str) -> Path:
    """Write via a temp file in the same directory and rename over ``path``."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)
    return path


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        # non-finite values become strings so the file stays strict JSON
        return v if math.isfinite(v) else ("inf" if v > 0 else "-inf" if v < 0 else "nan")
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def dump_json(payload: dict) -> str:
    return json.dumps(_jsonable(payload), indent=2, sort_keys=True, allow_nan=False) + "\n"


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return format_float(v)
    return str(v)


def render_csv(columns, rows, header: dict) -> str:
    buf = io.StringIO()
    for key, value in header.items():
        buf.write(f"# {key}: {json.dumps(_jsonable(value), sort_keys=True)}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_cell(v) for v in row])
    return buf.getvalue()


def artifact_header(run_config: dict) -> dict:
    # worker count never changes results, so it is left out to keep outputs byte-identical
    echoed = {k: v for k, v in run_config.items() if k != "workers"}
    return {"tool": TOOL, "config": echoed}


# --------------------------------------------------------------------------
# configuration

def _parse_floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _load_config_file(path) -> dict:
    if path is None:
        return {}
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    return data


def resolve_config(args) -> dict:
    """Merge defaults, the JSON config file and command-line flags."""
    file_cfg = _load_config_file(getattr(args, "config", None))
    pitch = dict(file_cfg.get("pitch", {}))
    for flag, field_name in PITCH_FLAGS.items():
        value = getattr(args, flag, None)
        if value is not None:
            pitch[field_name] = value
    try:
        pitch_cfg = PitchConfig.from_dict(pitch)
    except (PitchConfigError, TypeError) as exc:
        raise ConfigError(f"invalid pitch configuration: {exc}") from exc

    resolved = {"command": args.command, "pitch": asdict(pitch_cfg)}

    def pick(name, default):
        flag = getattr(args, name, None)
        return flag if flag is not None else file_cfg.get(name, default)

    resolved["workers"] = int(pick("workers", 1))
    if resolved["workers"] < 1:
        raise ConfigError("workers must be >= 1")
    resolved["figures"] = bool(pick("figures", args.command in ("tune", "eval", "analyze")))

    if args.command in ("vq", "eval", "analyze"):
        threshold = pick("voiced_threshold", None)
        if threshold is None:
            log.warning("no voiced_threshold given; using the built-in default %.4f "
                        "(estimate one with 'voxsource tune' or 'voxsource eval')", DEFAULT_VOICED_THRESHOLD)
            threshold = DEFAULT_VOICED_THRESHOLD
        resolved["voiced_threshold"] = float(threshold)

    if args.command in ("tune", "eval"):
        gt = dict(file_cfg.get("ground_truth", {}))
        for key in ("units", "hop_s", "first_time_s"):
            flag = getattr(args, f"gt_{key}", None)
            if flag is not None:
                gt[key] = flag
        gt.setdefault("units", "hz")
        gt.setdefault("hop_s", None)
        gt.setdefault("first_time_s", None)
        if gt["units"] not in ("hz", "semitone"):
            raise ConfigError(f"ground_truth.units must be 'hz' or 'semitone', got {gt['units']!r}")
        resolved["ground_truth"] = gt

    if args.command == "tune":
        grid = dict(file_cfg.get("grid", {}))
        if args.max_f0_grid is not None:
            grid["max_f0_hz"] = args.max_f0_grid
        if args.lowpass_grid is not None:
            grid["lowpass_cutoff_hz"] = args.lowpass_grid
        grid.setdefault("max_f0_hz", list(DEFAULT_MAX_F0_GRID))
        grid.setdefault("lowpass_cutoff_hz", list(DEFAULT_LOWPASS_GRID))
        if not grid["max_f0_hz"] or not grid["lowpass_cutoff_hz"]:
            raise ConfigError("grid lists must not be empty")
        grid = {k: sorted(float(v) for v in vals) for k, vals in grid.items()}
        for m in grid["max_f0_hz"]:
            for lp in grid["lowpass_cutoff_hz"]:
                try:
                    pitch_cfg.replace(max_f0_hz=m, lowpass_cutoff_hz=lp)
                except PitchConfigError as exc:
                    raise ConfigError(f"grid point ({m:g}, {lp:g}) invalid: {exc}") from exc
        resolved["grid"] = grid

    if args.command == "analyze":
        analysis = dict(file_cfg.get("analysis", {}))
        if args.n_bins is not None:
            analysis["n_bins"] = args.n_bins
        if args.log_pitch_bins is not None:
            analysis["log_pitch_bins"] = args.log_pitch_bins
        if args.cohorts is not None:
            analysis["cohorts"] = _load_config_file(args.cohorts)
        analysis.setdefault("n_bins", 50)
        analysis.setdefault("log_pitch_bins", False)
        analysis.setdefault("cohorts", default_cohorts())
        if int(analysis["n_bins"]) < 1:
            raise ConfigError("n_bins must be >= 1")
        resolved["analysis"] = analysis
    return resolved


# --------------------------------------------------------------------------
# manifest

def read_manifest(path, required=("utterance_id", "audio_path")) -> list[dict]:
    """Rows of a manifest CSV; relative paths resolve against its directory."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read manifest {path}: {exc}") from exc
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames is None:
        raise ConfigError(f"{path}: empty manifest")
    fields = [f.strip() for f in reader.fieldnames]
    missing = [c for c in required if c not in fields]
    if missing:
        raise ConfigError(f"{path}:1: missing columns {missing}")
    unknown = [c for c in fields if c not in MANIFEST_COLUMNS]
    if unknown:
        raise ConfigError(f"{path}:1: unknown columns {unknown}")
    rows, seen = [], set()
    for lineno, raw in enumerate(reader, 2):
        row = {k.strip(): (v or "").strip() for k, v in raw.items() if k is not None}
        if None in raw:
            raise ConfigError(f"{path}:{lineno}: too many fields")
        for c in required:
            if not row.get(c):
                raise ConfigError(f"{path}:{lineno}: empty {c}")
        if row["utterance_id"] in seen:
            raise ConfigError(f"{path}:{lineno}: duplicate utterance_id {row['utterance_id']!r}")
        seen.add(row["utterance_id"])
        if row.get("style") and row["style"] not in ca.STYLES:
            raise ConfigError(f"{path}:{lineno}: style must be one of {ca.STYLES}")
        if row.get("gender") and row["gender"] not in ("male", "female"):
            raise ConfigError(f"{path}:{lineno}: gender must be 'male' or 'female'")
        for key in ("audio_path", "annotation_path", "ground_truth_path"):
            if row.get(key):
                p = Path(row[key])
                row[key] = str(p if p.is_absolute() else path.parent / p)
        rows.append(row)
    return sorted(rows, key=lambda r: r["utterance_id"])


# --------------------------------------------------------------------------
# workers (module level so they pickle)

def _extract_job(job):
    audio_path, pitch = job
    cfg = PitchConfig.from_dict(pitch)
    try:
        audio = load_wav(audio_path)
        return extract_pitch(audio, cfg), None
    except Exception as exc:
        return None, f"{audio_path}: {type(exc).__name__}: {exc}"


def _vq_job(job):
    audio_path, pitch, threshold = job
    cfg = PitchConfig.from_dict(pitch)
    try:
        audio = load_wav(audio_path)
        track = extract_pitch(audio, cfg)
        return track, extract_vq(audio, track, threshold), None
    except Exception as exc:
        return None, None, f"{audio_path}: {type(exc).__name__}: {exc}"


def _map(fn, jobs, workers: int):
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(fn, jobs))
    return [fn(j) for j in jobs]


def _unique_stems(paths) -> list[str]:
    stems = [Path(p).stem for p in paths]
    dupes = sorted({s for s in stems if stems.count(s) > 1})
    if dupes:
        raise ConfigError(f"inputs share output names: {dupes}")
    return stems


def _report_errors(errors) -> int:
    for msg in errors:
        print(f"error: {msg}", file=sys.stderr)
    return EXIT_PARTIAL if errors else EXIT_OK


# --------------------------------------------------------------------------
# commands

def cmd_extract(args, cfg: dict) -> int:
    out = Path(args.out_dir)
    stems = _unique_stems(args.inputs)
    results = _map(_extract_job, [(p, cfg["pitch"]) for p in args.inputs], cfg["workers"])
    header = artifact_header(cfg)
    errors = []
    for stem, (track, err) in zip(stems, results):
        if err:
            errors.append(err)
            continue
        write_atomic(out / f"{stem}.pitch.csv", track_to_csv(track, header))
        if cfg["figures"]:
            from .plotting import plot_pitch_track

            plot_pitch_track(track, out / f"{stem}.pitch.png", metadata=header)
    return _report_errors(errors)


def vq_frame_rows(analysis) -> list[list]:
    return [[t, *row] for t, row in zip(analysis.frame_times_s, analysis.frame_values)]


def cmd_vq(args, cfg: dict) -> int:
    out = Path(args.out_dir)
    stems = _unique_stems(args.inputs)
    jobs = [(p, cfg["pitch"], cfg["voiced_threshold"]) for p in args.inputs]
    results = _map(_vq_job, jobs, cfg["workers"])
    header = artifact_header(cfg)
    errors = []
    for stem, (track, analysis, err) in zip(stems, results):
        if err:
            errors.append(err)
            continue
        report = analysis.report
        payload = {**header, "utterance": stem, "report": report.to_dict(),
                   "undefined": sorted(k for k, v in report.to_dict().items() if v is None)}
        write_atomic(out / f"{stem}.vq.json", dump_json(payload))
        write_atomic(out / f"{stem}.vq.csv", render_csv(VQ_COLUMNS, vq_frame_rows(analysis), header))
    return _report_errors(errors)


def _load_references(rows, gt: dict):
    refs, errors = {}, []
    for row in rows:
        if not row.get("ground_truth_path"):
            errors.append(f"{row['utterance_id']}: no ground_truth_path")
            continue
        try:
            refs[row["utterance_id"]] = load_ground_truth(row["ground_truth_path"], gt["units"], gt["hop_s"],
                                                          gt["first_time_s"])
        except (OSError, ValueError) as exc:
            errors.append(f"{row['utterance_id']}: {exc}")
    return refs, errors


def _threshold_from(tracks: dict, refs: dict):
    pov, voiced = [], []
    for utt in sorted(tracks):
        ri, ei = align(tracks[utt], refs[utt])
        pov.append(tracks[utt].pov_feature[ei])
        voiced.append(refs[utt].voiced[ri])
    try:
        return estimate_voicing_threshold(np.concatenate(pov), np.concatenate(voiced)).to_dict()
    except ValueError as exc:
        return {"threshold": None, "reason": str(exc)}


def cmd_tune(args, cfg: dict) -> int:
    out = Path(args.out_dir)
    rows = read_manifest(args.manifest, required=("utterance_id", "audio_path", "ground_truth_path"))
    refs, errors = _load_references(rows, cfg["ground_truth"])
    dataset = []
    for row in rows:
        if row["utterance_id"] not in refs:
            continue
        try:
            dataset.append((row["utterance_id"], load_wav(row["audio_path"]), refs[row["utterance_id"]]))
        except (OSError, ValueError) as exc:
            errors.append(f"{row['utterance_id']}: {exc}")
    if not dataset:
        print("error: no usable utterances in manifest", file=sys.stderr)
        return _report_errors(errors) or EXIT_PARTIAL
    base = PitchConfig.from_dict(cfg["pitch"])
    result = grid_search(dataset, cfg["grid"]["max_f0_hz"], cfg["grid"]["lowpass_cutoff_hz"], base, cfg["workers"])
    errors += [f"{u}: {m}" for u, m in sorted(result.failures.items())]

    best_cfg = base.replace(max_f0_hz=result.best[0], lowpass_cutoff_hz=result.best[1])
    best_tracks = {u: extract_pitch(a, best_cfg) for u, a, _ in dataset if u not in result.failures}
    threshold = _threshold_from(best_tracks, refs) if best_tracks else {"threshold": None}

    header = artifact_header(cfg)
    table = result.rows()
    payload = {
        **header,
        "grid": table,
        "best": {"max_f0_hz": result.best[0], "lowpass_cutoff_hz": result.best[1],
                 **result.scores[result.best].to_dict()},
        "voicing_threshold": threshold,
        "per_utterance_best": {u: r.to_dict() for u, r in sorted(result.per_utterance[result.best].items())},
        "failures": dict(sorted(result.failures.items())),
        "n_failed": len(result.failures),
    }
    write_atomic(out / "tuning.json", dump_json(payload))
    cols = ("max_f0_hz", "lowpass_cutoff_hz", "gpe", "fpe_cents", "n_voiced_ref", "best")
    write_atomic(out / "tuning.csv", render_csv(cols, [[r[c] for c in cols] for r in table], header))
    if cfg["figures"]:
        from .plotting import plot_tuning

        plot_tuning(result, out / "tuning.png", metadata=header)
    return _report_errors(errors)


def cmd_eval(args, cfg: dict) -> int:
    out = Path(args.out_dir)
    rows = read_manifest(args.manifest, required=("utterance_id", "audio_path", "ground_truth_path"))
    refs, errors = _load_references(rows, cfg["ground_truth"])
    usable = [r for r in rows if r["utterance_id"] in refs]
    results = _map(_extract_job, [(r["audio_path"], cfg["pitch"]) for r in usable], cfg["workers"])
    tracks, per_utt = {}, {}
    for row, (track, err) in zip(usable, results):
        utt = row["utterance_id"]
        if err:
            errors.append(err)
            continue
        try:
            per_utt[utt] = evaluate(track, refs[utt])
            tracks[utt] = track
        except UndefinedResultError as exc:
            errors.append(f"{utt}: {exc}")
    header = artifact_header(cfg)
    try:
        pooled = pool(per_utt.values()).to_dict()
    except UndefinedResultError:
        pooled = None
    payload = {
        **header,
        "pooled": pooled,
        "per_utterance": {u: r.to_dict() for u, r in sorted(per_utt.items())},
        "voicing_threshold": _threshold_from(tracks, refs) if tracks else {"threshold": None},
        "n_failed": len(rows) - len(per_utt),
    }
    write_atomic(out / "eval.json", dump_json(payload))
    cols = ("utterance_id", "gpe", "fpe_cents", "n_voiced_ref", "n_gross", "n_unmatched")
    table = [[u] + [r.to_dict()[c] for c in cols[1:]] for u, r in sorted(per_utt.items())]
    write_atomic(out / "eval.csv", render_csv(cols, table, header))
    if cfg["figures"]:
        from .plotting import plot_pitch_track

        for utt, track in sorted(tracks.items()):
            plot_pitch_track(track, out / f"{utt}.eval.png", refs[utt], cfg["voiced_threshold"], metadata=header)
    return _report_errors(errors)


def default_cohorts() -> dict:
    """Cohort layout mirroring the sung-vs-spoken comparisons."""
    by_style_gender = [{"name": f"{s}_{g}", "style": s, "gender": g}
                       for s in ca.STYLES for g in ("male", "female")]
    pairs = []
    for s in ca.STYLES:
        for kind in ("fricatives", "stops"):
            pairs.append({
                "name": f"{kind}_{s}",
                "a": {"name": f"voiced_{kind}_{s}", "style": s, "gender": "any", "phone_class": f"voiced_{kind}"},
                "b": {"name": f"unvoiced_{kind}_{s}", "style": s, "gender": "any",
                      "phone_class": f"unvoiced_{kind}"},
            })
    return {
        "duration": [{**c, "phone_class": "vowels"} for c in by_style_gender],
        "pitch": [{**c, "phone_class": "vowels"} for c in by_style_gender],
        "pov_pairs": pairs,
        "vq": [{**c, "phone_class": ca.WILDCARD} for c in by_style_gender],
    }


def _cohort(spec: dict, classes: dict) -> ca.CohortSpec:
    phones = spec.get("phone_class", ca.WILDCARD)
    if isinstance(phones, str):
        if phones == ca.WILDCARD:
            phones = [ca.WILDCARD]
        elif phones in classes:
            phones = classes[phones]
        else:
            raise ConfigError(f"unknown phone class {phones!r}")
    try:
        return ca.CohortSpec(spec["style"], spec.get("gender", "any"), frozenset(phones), spec.get("name", ""))
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"invalid cohort {spec}: {exc}") from exc


def _hist_rows(reports):
    return [row for rep in reports for row in rep.table_rows()]


def cmd_analyze(args, cfg: dict) -> int:
    out = Path(args.out_dir)
    rows = read_manifest(args.manifest, required=("utterance_id", "annotation_path", "style", "gender"))
    classes = ca.load_phone_classes(args.phone_classes)
    spec = cfg["analysis"]
    cohorts = spec["cohorts"]
    duration_cohorts = [_cohort(c, classes) for c in cohorts.get("duration", [])]
    pitch_cohorts = [_cohort(c, classes) for c in cohorts.get("pitch", [])]
    pov_pairs = [(p["name"], _cohort(p["a"], classes), _cohort(p["b"], classes)) for p in cohorts.get("pov_pairs", [])]
    vq_cohorts = [_cohort(c, classes) for c in cohorts.get("vq", [])]
    n_bins = int(spec["n_bins"])
    threshold = cfg["voiced_threshold"]

    errors, warnings = [], []
    metadata = {r["utterance_id"]: ca.UtteranceMeta(r["style"], r["gender"]) for r in rows}
    segments = []
    for row in rows:
        try:
            segments += ca.load_annotations(row["annotation_path"], row["utterance_id"])
        except (OSError, ca.AnnotationError) as exc:
            errors.append(str(exc))
    validation = ca.validate_segments(segments, classes)
    if validation.unknown_labels:
        warnings.append(f"unknown phone symbols excluded: {validation.unknown_labels}")
    known = frozenset().union(*classes.values())
    segments = [s for s in segments if ca.normalize_label(s.label) in known]

    # pitch tracks: precomputed features or fresh extraction
    tracks = {}
    need_audio = [r for r in rows if not args.features_dir]
    if args.features_dir:
        for row in rows:
            path = Path(args.features_dir) / f"{row['utterance_id']}.pitch.csv"
            try:
                tracks[row["utterance_id"]] = read_track_csv(path, PitchConfig.from_dict(cfg["pitch"]))
            except (OSError, ValueError) as exc:
                errors.append(f"{row['utterance_id']}: {exc}")
    else:
        missing = [r["utterance_id"] for r in need_audio if not r.get("audio_path")]
        errors += [f"{u}: no audio_path and no --features-dir" for u in missing]
        jobs_rows = [r for r in need_audio if r.get("audio_path")]
        results = _map(_extract_job, [(r["audio_path"], cfg["pitch"]) for r in jobs_rows], cfg["workers"])
        for row, (track, err) in zip(jobs_rows, results):
            if err:
                errors.append(err)
            else:
                tracks[row["utterance_id"]] = track
    track_segments = [s for s in segments if s.utterance_id in tracks]

    header = artifact_header(cfg)
    payload = {**header, "validation": validation.to_dict(), "duration": [], "pitch": [], "pov_separation": [],
               "vq": None, "skipped": []}

    def collect(cohort_list, values_fn, log_scale=False):
        vals = {}
        for c in cohort_list:
            v = values_fn(c)
            if v.size:
                vals[c.name] = (c, v)
            else:
                payload["skipped"].append(c.name)
        if not vals:
            return []
        edges = uniform_edges(*[v for _, v in vals.values()], n_bins=n_bins, log_scale=log_scale)
        return [ca._report(name, v, edges) for name, (_, v) in vals.items()]

    dur_reports = collect(duration_cohorts, lambda c: ca.duration_values(segments, c, metadata))
    pitch_reports = collect(pitch_cohorts,
                            lambda c: ca.pitch_values(track_segments, tracks, c, metadata, threshold),
                            log_scale=bool(spec["log_pitch_bins"]))
    payload["duration"] = [r.to_dict() for r in dur_reports]
    payload["pitch"] = [r.to_dict() for r in pitch_reports]

    pov_results = []
    for name, a, b in pov_pairs:
        try:
            ra, rb, d = ca.pov_class_separation(track_segments, tracks, a, b, metadata, n_bins=n_bins)
        except ca.EmptyCohortError as exc:
            payload["skipped"].append(name)
            warnings.append(str(exc))
            continue
        pov_results.append((name, ra, rb, d))
        payload["pov_separation"].append({"name": name, "a": ra.to_dict(), "b": rb.to_dict(), "bhattacharyya": d})

    vq_reports = {}
    if vq_cohorts:
        audio_rows = [r for r in rows if r.get("audio_path") and r["utterance_id"] in tracks]
        for row in audio_rows:
            try:
                audio = load_wav(row["audio_path"])
                vq_reports[row["utterance_id"]] = extract_vq(audio, tracks[row["utterance_id"]], threshold).report
            except (OSError, ValueError) as exc:
                errors.append(f"{row['utterance_id']}: {exc}")
        usable = [c for c in vq_cohorts if any(c.matches_utterance(metadata.get(u)) for u in vq_reports)]
        payload["skipped"] += [c.name for c in vq_cohorts if c not in usable]
        if usable:
            comparison = ca.vq_style_comparison(vq_reports, usable, metadata)
            payload["vq"] = {**comparison.to_dict(),
                             "per_utterance": {u: r.to_dict() for u, r in sorted(vq_reports.items())}}
    payload["warnings"] = warnings
    for w in warnings:
        log.warning(w)

    hist_cols = ("cohort", "bin_lo", "bin_hi", "probability")
    write_atomic(out / "analysis.json", dump_json(payload))
    write_atomic(out / "durations.csv", render_csv(hist_cols, _hist_rows(dur_reports), header))
    write_atomic(out / "pitch.csv", render_csv(hist_cols, _hist_rows(pitch_reports), header))
    write_atomic(out / "pov.csv", render_csv(("pair",) + hist_cols,
                                             [[n, *row] for n, ra, rb, _ in pov_results
                                              for row in _hist_rows([ra, rb])], header))
    write_atomic(out / "pov_separation.csv",
                 render_csv(("pair", "cohort_a", "cohort_b", "bhattacharyya"),
                            [[n, ra.name, rb.name, d] for n, ra, rb, d in pov_results], header))
    if payload["vq"]:
        names = payload["vq"]["cohorts"]
        comparison = ca.VqComparison(names, payload["vq"]["stats"])
        write_atomic(out / "vq_comparison.csv",
                     render_csv(("measure", "statistic", *names), comparison.wide_rows(), header))

    if cfg["figures"]:
        from . import plotting

        if dur_reports:
            plotting.plot_histograms(dur_reports, out / "durations.png", "duration (s)", "Vowel duration",
                                     metadata=header)
        if pitch_reports:
            plotting.plot_histograms(pitch_reports, out / "pitch.png", "pitch (Hz)", "Vowel pitch",
                                     log_x=bool(spec["log_pitch_bins"]), metadata=header)
        for name, ra, rb, d in pov_results:
            plotting.plot_pov_separation(ra, rb, d, out / f"pov_{name}.png", name, metadata=header)
    return _report_errors(errors)


# --------------------------------------------------------------------------
# argument parsing

def _add_common(p: argparse.ArgumentParser, pitch: bool = True):
    p.add_argument("--config", help="JSON config file; flags override its values")
    p.add_argument("-o", "--out-dir", required=True, help="output directory (created if missing)")
    p.add_argument("--workers", type=int, help="parallel worker processes (default 1)")
    p.add_argument("--figures", dest="figures", action="store_true", default=None, help="render PNG figures")
    p.add_argument("--no-figures", dest="figures", action="store_false", help="skip PNG figures")
    if pitch:
        g = p.add_argument_group("pitch tracker")
        g.add_argument("--min-f0", type=float, help="minimum f0 in Hz (default 50)")
        g.add_argument("--max-f0", type=float, help="maximum f0 in Hz (default 1000)")
        g.add_argument("--lowpass-cutoff", type=float, help="lowpass cutoff in Hz (default 1500)")
        g.add_argument("--frame-shift-ms", type=float)
        g.add_argument("--frame-length-ms", type=float)
        g.add_argument("--penalty-factor", type=float)
        g.add_argument("--nccf-ballast", type=float)
        g.add_argument("--normalization-window", type=int, help="frames, odd")
        g.add_argument("--delta-context", type=int)
        g.add_argument("--resample-hz", type=int, help="internal processing rate (default 4000)")


def _add_gt(p):
    p.add_argument("--gt-units", choices=("hz", "semitone"), help="ground-truth value units (default hz)")
    p.add_argument("--gt-hop-s", type=float, help="hop of single-column ground-truth files")
    p.add_argument("--gt-first-time-s", type=float, help="time of the first single-column value")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="voxsource", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=TOOL)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="pitch features, one CSV per input")
    p.add_argument("inputs", nargs="+", help="WAV files")
    _add_common(p)

    p = sub.add_parser("vq", help="jitta, rap, shimmer and HNR per input")
    p.add_argument("inputs", nargs="+", help="WAV files")
    p.add_argument("--voiced-threshold", type=float, help="POV feature threshold for voiced frames")
    _add_common(p)

    p = sub.add_parser("tune", help="grid search over max f0 and lowpass cutoff")
    p.add_argument("--manifest", required=True, help="CSV with utterance_id, audio_path, ground_truth_path")
    p.add_argument("--max-f0-grid", type=_parse_floats, help="comma-separated max f0 values (Hz)")
    p.add_argument("--lowpass-grid", type=_parse_floats, help="comma-separated lowpass cutoffs (Hz)")
    _add_gt(p)
    _add_common(p)

    p = sub.add_parser("eval", help="GPE/FPE against ground truth")
    p.add_argument("--manifest", required=True)
    p.add_argument("--voiced-threshold", type=float, help="POV threshold drawn on figures")
    _add_gt(p)
    _add_common(p)

    p = sub.add_parser("analyze", help="sung vs spoken cohort distributions")
    p.add_argument("--manifest", required=True, help="CSV with utterance_id, audio_path, annotation_path, style, gender")
    p.add_argument("--features-dir", help="directory of precomputed <utterance_id>.pitch.csv files")
    p.add_argument("--cohorts", help="JSON cohort definitions (default: style x gender, vowels, fricative/stop pairs)")
    p.add_argument("--phone-classes", help="JSON phone-class inventory (default: bundled table)")
    p.add_argument("--voiced-threshold", type=float)
    p.add_argument("--n-bins", type=int)
    p.add_argument("--log-pitch-bins", action="store_true", default=None)
    _add_common(p)
    return parser


COMMANDS = {"extract": cmd_extract, "vq": cmd_vq, "tune": cmd_tune, "eval": cmd_eval, "analyze": cmd_analyze}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        cfg = resolve_config(args)
        Path(args.out_dir).mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
