"""Command-line interface: simulate, track, evaluate, ablate, plot, train.

Exit codes: 0 ok, 2 configuration error, 3 schema violation, 4 missing artifact.
"""
from __future__ import annotations

import argparse
import colorsys
import csv
import io
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace

import numpy as np

from . import wire
from .config import (
    ConfigError,
    eval_from_table,
    load_toml,
    motion_from_table,
    scenario_from_table,
    scenario_to_table,
    tracker_from_table,
    train_from_table,
)
from .geometry import Box3D
from .metrics import REPORT_KEYS, EvalConfig, build_report, evaluate_sequence, format_report, format_value
from .motion import VeloLSTMShape, init_params, load_params, make_motion_factory, save_params, train_velolstm
from .motion.models import MOTION_MODELS
from .motion.velolstm import ModelFormatError
from .pipeline import gt_eval_frames, pred_eval_frames, track_sequence
from .simworld import make_training_corpus, simulate
from .tracker import TrackerConfig

log = logging.getLogger("qd3dt")

EXIT_OK, EXIT_CONFIG, EXIT_SCHEMA, EXIT_MISSING = 0, 2, 3, 4


class MissingArtifact(RuntimeError):
    pass


def _config(path) -> dict:
    return load_toml(path) if path else {}


def _motion_factory(settings):
    if settings.name != "velolstm":
        return make_motion_factory(settings.name, momentum=settings.momentum, use_confidence=settings.use_confidence)
    if not settings.model:
        raise MissingArtifact("motion model 'velolstm' needs a parameter file (--model)")
    if not os.path.isfile(settings.model):
        raise MissingArtifact(f"model file not found: {settings.model}")
    try:
        params = load_params(settings.model)
    except ModelFormatError as exc:
        raise wire.SchemaError(f"{settings.model}: {exc}") from exc
    return make_motion_factory("velolstm", params=params, use_confidence=settings.use_confidence)


# -- simulate -----------------------------------------------------------------


def simulate_files(scenario, out_dir):
    """Write the four scenario files for ``scenario`` into ``out_dir``. Returns the file paths."""
    gt, frames = simulate(scenario)
    n_cams = len(gt.ego_poses[0])
    intr = [gt.intrinsics] * n_cams
    dets = [wire.detection_record(k, d) for k, f in enumerate(frames) for d in f.detections]
    ego = [wire.ego_record(k, gt.ego_poses[k], intr) for k in range(gt.n_frames)]
    lock = {"v": wire.SCHEMA_VERSION, "scenario": scenario_to_table(scenario), "seed": scenario.seed,
            "frame_rate": scenario.frame_rate, "dt": 1.0 / scenario.frame_rate}
    paths = {name: os.path.join(out_dir, name) for name in
             ("detections.jsonl", "ground_truth.jsonl", "ego_poses.jsonl", "scenario.lock")}
    wire.atomic_write(paths["detections.jsonl"], wire.jsonl(dets))
    wire.atomic_write(paths["ground_truth.jsonl"], wire.jsonl(wire.gt_records(gt)))
    wire.atomic_write(paths["ego_poses.jsonl"], wire.jsonl(ego))
    wire.atomic_write(paths["scenario.lock"], json.dumps(lock, indent=2, sort_keys=True) + "\n")
    return paths, gt, frames


def cmd_simulate(args) -> int:
    table = _config(args.config)
    scenario = scenario_from_table(table.get("scenario", {}), seed=args.seed)
    paths, gt, frames = simulate_files(scenario, args.output)
    n_det = sum(len(f.detections) for f in frames)
    print(f"frames: {gt.n_frames}\nobjects: {gt.n_objects}\ndetections: {n_det}\noutput: {args.output}")
    return EXIT_OK


# -- track --------------------------------------------------------------------


def _tracker_settings(args):
    table = _config(args.config)
    tcfg = tracker_from_table(table.get("tracker", {}))
    motion = motion_from_table(table.get("motion", {}))
    if getattr(args, "matcher", None):
        tcfg = replace(tcfg, matcher=args.matcher)
    if getattr(args, "motion", None):
        motion = replace(motion, name=args.motion)
    if getattr(args, "model", None):
        motion = replace(motion, model=args.model)
    return tcfg, motion


def cmd_track(args) -> int:
    tcfg, motion = _tracker_settings(args)
    factory = _motion_factory(motion)
    ego = wire.read_ego(args.ego)
    det_frames = wire.read_detections(args.detections, ego.n_frames)
    n_cams = len(ego.intrinsics)
    for frame in det_frames:
        for det in frame:
            if not 0 <= det.camera_id < n_cams:
                raise wire.SchemaError(f"{args.detections}: camera {det.camera_id} has no ego pose")
    start = time.perf_counter()
    results = track_sequence(det_frames, ego.poses, ego.intrinsics, tcfg, factory)
    elapsed = time.perf_counter() - start
    records = [wire.track_record(r.frame, o) for r in results for o in r.outputs]
    wire.atomic_write(args.output, wire.jsonl(records))
    affinities = [a for r in results for a in r.match_affinities]
    n_tracks = len({o.track_id for r in results for o in r.outputs})
    mean_aff = float(np.mean(affinities)) if affinities else float("nan")
    per_frame = 1000.0 * elapsed / max(1, len(results))
    print(f"tracks: {n_tracks}\nmean_affinity: {mean_aff:.4f}\nruntime_per_frame_ms: {per_frame:.3f}\n"
          f"output: {args.output}")
    return EXIT_OK


# -- evaluate -----------------------------------------------------------------


def load_eval_inputs(tracks_path, gt_path, include_lost: bool = False):
    gt_rows = wire.read_gt(gt_path)
    gt_frames = [[(o.id, Box3D(o.position, o.yaw, o.dims)) for o in frame if o.visible] for frame in gt_rows]
    pred_frames = [[] for _ in gt_rows]
    for row in wire.read_tracks(tracks_path):
        if row.frame >= len(gt_rows):
            raise wire.SchemaError(f"{tracks_path}: frame {row.frame} beyond the ground truth")
        if include_lost or row.phase == "tracked":
            pred_frames[row.frame].append((row.track_id, Box3D(row.position, row.yaw, row.dims), row.score))
    return gt_rows, gt_frames, pred_frames


def _csv(rows, header) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def evaluate_files(tracks_path, gt_path, out_dir, config: EvalConfig, include_lost: bool = False) -> dict:
    _, gt_frames, pred_frames = load_eval_inputs(tracks_path, gt_path, include_lost)
    report = build_report(gt_frames, pred_frames, config)
    per_frame = evaluate_sequence(gt_frames, pred_frames, config)
    frame_rows = []
    for k, r in enumerate(per_frame):
        dists = [d for _, _, d in r.true_positives]
        motp = format_value(float(np.mean(dists))) if dists else "nan"
        frame_rows.append([k, len(r.gt_ids), len(r.true_positives), r.false_positives, r.false_negatives,
                           r.id_switches, motp])
    curve = report["_curve"]
    curve_rows = [[k, format_value(r), format_value(t), format_value(m)]
                  for k, (r, t, m) in enumerate(zip(curve.recalls, curve.thresholds, curve.mota_r))]
    wire.atomic_write(os.path.join(out_dir, "metrics.txt"), format_report(report))
    wire.atomic_write(os.path.join(out_dir, "per_frame.csv"),
                      _csv(frame_rows, ["frame", "gt", "tp", "fp", "fn", "ids", "motp_c"]))
    wire.atomic_write(os.path.join(out_dir, "amota_curve.csv"),
                      _csv(curve_rows, ["point", "recall", "threshold", "mota_r"]))
    return report


def cmd_evaluate(args) -> int:
    config = eval_from_table(_config(args.config).get("eval", {}))
    report = evaluate_files(args.tracks, args.gt, args.output, config, args.include_lost)
    sys.stdout.write(format_report(report))
    return EXIT_OK


# -- ablate -------------------------------------------------------------------

DROP_FLAGS = {"deep": "use_deep", "iou": "use_location", "motion": "use_motion", "depth_conf": "use_depth_confidence"}
TRACKER_KNOBS = ("matcher", "match_threshold", "lifespan_frames")
AFFINITY_KNOBS = ("location_mode", "motion_mode", "w_deep", "deep_mode")
MOTION_KNOBS = ("motion", "model")


def variant_config(base: TrackerConfig, base_motion, variant: dict, where: str):
    variant = dict(variant)
    name = variant.pop("name", None)
    if not isinstance(name, str):
        raise ConfigError(f"{where}: every variant needs a string 'name'")
    tracker_kw, affinity_kw = {}, {}
    motion = base_motion
    for key, value in variant.items():
        if key == "drop":
            if not isinstance(value, list) or any(v not in DROP_FLAGS for v in value):
                raise ConfigError(f"{where}.drop: entries must be among {sorted(DROP_FLAGS)}")
            for v in value:
                tracker_kw[DROP_FLAGS[v]] = False
        elif key in TRACKER_KNOBS:
            tracker_kw[key] = value
        elif key in AFFINITY_KNOBS:
            affinity_kw[key] = value
        elif key == "motion":
            motion = replace(motion, name=value)
        elif key == "model":
            motion = replace(motion, model=value)
        else:
            raise ConfigError(f"{where}: unknown knob {key!r}")
    try:
        affinity = replace(base.affinity, **affinity_kw)
        config = replace(base, affinity=affinity, **tracker_kw)
        motion = replace(motion)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc
    return name, config, motion


def _ablation_job(job):
    scenario, config, motion, eval_config = job
    gt, frames = simulate(scenario)
    results = track_sequence([f.detections for f in frames], gt.ego_poses,
                             [gt.intrinsics] * len(gt.ego_poses[0]), config, _motion_factory(motion))
    report = build_report(gt_eval_frames(gt), pred_eval_frames(results), eval_config)
    return {k: report[k] for k in REPORT_KEYS}


def run_ablation(table: dict, jobs: int = 1, seed_override: int | None = None) -> str:
    sweep = table.get("sweep", {})
    if not isinstance(sweep, dict):
        raise ConfigError("sweep: expected a table")
    unknown = set(sweep) - {"seeds", "variants"}
    if unknown:
        raise ConfigError(f"sweep: unknown key {sorted(unknown)[0]!r}")
    seeds = sweep.get("seeds", [0])
    if not isinstance(seeds, list) or not all(isinstance(s, int) and not isinstance(s, bool) for s in seeds):
        raise ConfigError("sweep.seeds: expected a list of integers")
    if seed_override is not None:
        seeds = [seed_override]
    base = tracker_from_table(table.get("tracker", {}))
    base_motion = motion_from_table(table.get("motion", {}))
    eval_config = eval_from_table(table.get("eval", {}))
    variants = [variant_config(base, base_motion, v, f"sweep.variants[{i}]")
                for i, v in enumerate(sweep.get("variants", []))]
    for _, _, motion in variants:
        _motion_factory(motion)  # fail early on missing models
    scenarios = [scenario_from_table(table.get("scenario", {}), seed=s) for s in seeds]
    work = [(sc, cfg, motion, eval_config) for _, cfg, motion in variants for sc in scenarios]
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            reports = list(pool.map(_ablation_job, work))
    else:
        reports = [_ablation_job(w) for w in work]
    rows = []
    for i, (name, _, _) in enumerate(variants):
        chunk = reports[i * len(scenarios):(i + 1) * len(scenarios)]
        means = [float(np.mean([r[k] for r in chunk])) for k in REPORT_KEYS]
        rows.append([name, len(chunk)] + [format_value(m) for m in means])
    return _csv(rows, ["variant", "runs", *REPORT_KEYS])


def cmd_ablate(args) -> int:
    text = run_ablation(_config(args.config), args.jobs, args.seed)
    wire.atomic_write(args.output, text)
    sys.stdout.write(text)
    return EXIT_OK


# -- plot ---------------------------------------------------------------------


def track_color(index: int) -> str:
    """Distinct color per track index (golden-ratio hue walk)."""
    hue = (index * 0.6180339887498949) % 1.0
    light = 0.45 + 0.1 * ((index // 7) % 2)
    r, g, b = colorsys.hls_to_rgb(hue, light, 0.75)
    return "#{:02x}{:02x}{:02x}".format(round(r * 255), round(g * 255), round(b * 255))


def render_svg(gt_rows, track_rows, size: int = 800, margin: int = 20) -> str:
    paths: dict[int, list] = {}
    occluded: dict[int, list] = {}
    for frame in gt_rows:
        for o in frame:
            paths.setdefault(o.id, []).append(o.position[:2])
            occluded.setdefault(o.id, []).append(o.occluded)
    tracks: dict[int, list] = {}
    for row in track_rows:
        tracks.setdefault(row.track_id, []).append(row.position[:2])
    points = [p for ps in paths.values() for p in ps] + [p for ps in tracks.values() for p in ps]
    if points:
        xs, ys = [p[0] for p in points], [p[1] for p in points]
        x0, x1, y0, y1 = min(xs), max(xs), min(ys), max(ys)
    else:
        x0 = y0 = 0.0
        x1 = y1 = 1.0
    span = max(x1 - x0, y1 - y0, 1e-6)
    scale = (size - 2 * margin) / span

    def xy(p):
        # forward (world x) points up, left (world y) points left
        return f"{margin + (y1 - p[1]) * scale:.2f},{size - margin - (p[0] - x0) * scale:.2f}"

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">',
           f'<rect width="{size}" height="{size}" fill="#ffffff"/>']
    for gid in sorted(paths):
        pts = paths[gid]
        occ = occluded[gid]
        k = 0
        while k < len(pts):
            if not occ[k]:
                k += 1
                continue
            end = k
            while end < len(pts) and occ[end]:
                end += 1
            seg = pts[max(0, k - 1):min(len(pts), end + 1)]
            out.append(f'<polyline class="occlusion" points="{" ".join(xy(p) for p in seg)}" fill="none" '
                       f'stroke="#d0d0d0" stroke-width="10" stroke-linecap="round"/>')
            k = end
    for gid in sorted(paths):
        out.append(f'<polyline class="gt" data-id="{gid}" points="{" ".join(xy(p) for p in paths[gid])}" '
                   f'fill="none" stroke="#404040" stroke-width="1.5" stroke-dasharray="4 3"/>')
    for i, tid in enumerate(sorted(tracks)):
        out.append(f'<polyline class="track" data-id="{tid}" points="{" ".join(xy(p) for p in tracks[tid])}" '
                   f'fill="none" stroke="{track_color(i)}" stroke-width="2"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def cmd_plot(args) -> int:
    gt_rows = wire.read_gt(args.gt)
    track_rows = wire.read_tracks(args.tracks)
    wire.atomic_write(args.output, render_svg(gt_rows, track_rows))
    print(f"output: {args.output}")
    return EXIT_OK


# -- train --------------------------------------------------------------------


def cmd_train(args) -> int:
    table = _config(args.config)
    train_table = table.get("train", {})
    settings, opt = train_from_table(train_table)
    if args.seed is not None:
        opt = replace(opt, seed=args.seed)
    if not all(isinstance(s, int) for s in settings.seeds) or not settings.seeds:
        raise ConfigError("train.seeds: expected a non-empty list of integers")
    base = train_table.get("scenario", table.get("scenario", {}))
    scenarios = [scenario_from_table(base, "train.scenario", seed=s) for s in settings.seeds]
    data = make_training_corpus(scenarios, window=settings.window)
    if len(data) == 0:
        raise ConfigError("train: scenarios produced no training windows")
    opt = replace(opt, dt=1.0 / scenarios[0].frame_rate)
    params = init_params(VeloLSTMShape(hidden=settings.hidden), seed=opt.seed)
    params, curve = train_velolstm(params, data, opt)
    save_params(params, args.output)
    print(f"windows: {len(data)}\ninitial_loss: {curve[0]:.6f}\nfinal_loss: {curve[-1]:.6f}\noutput: {args.output}")
    return EXIT_OK


# -- entry point --------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qd3dt", description="Online monocular 3D multi-object tracking toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic scenario")
    p.add_argument("--config", help="TOML file with a [scenario] table")
    p.add_argument("--seed", type=int, help="override the scenario seed")
    p.add_argument("--output", required=True, help="output directory")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("track", help="run the tracker over a detection file")
    p.add_argument("detections")
    p.add_argument("ego")
    p.add_argument("--config", help="TOML file with [tracker] and [motion] tables")
    p.add_argument("--motion", choices=MOTION_MODELS)
    p.add_argument("--matcher", choices=("greedy", "hungarian"))
    p.add_argument("--model", help="VeloLSTM parameter file")
    p.add_argument("--output", required=True, help="tracks.jsonl path")
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("evaluate", help="score tracks against ground truth")
    p.add_argument("tracks")
    p.add_argument("gt")
    p.add_argument("--config", help="TOML file with an [eval] table")
    p.add_argument("--include-lost", action="store_true", help="also score extrapolated lost tracks")
    p.add_argument("--output", required=True, help="output directory")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="run an ablation sweep")
    p.add_argument("--config", required=True, help="TOML file with [scenario], [tracker] and [sweep] tables")
    p.add_argument("--seed", type=int, help="run a single seed instead of sweep.seeds")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--output", required=True, help="CSV path")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("plot", help="bird's-eye SVG of tracks and ground truth")
    p.add_argument("tracks")
    p.add_argument("gt")
    p.add_argument("--output", required=True, help="SVG path")
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("train", help="train VeloLSTM on a synthetic corpus")
    p.add_argument("--config", help="TOML file with a [train] table")
    p.add_argument("--seed", type=int)
    p.add_argument("--output", required=True, help="parameter file path")
    p.set_defaults(func=cmd_train)
    return parser


def _setup_logging():
    level = os.environ.get("QD3DT_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    if getattr(args, "jobs", 1) < 1:
        print("error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except wire.SchemaError as exc:
        print(f"schema error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except MissingArtifact as exc:
        print(f"missing artifact: {exc}", file=sys.stderr)
        return EXIT_MISSING


if __name__ == "__main__":
    sys.exit(main())
