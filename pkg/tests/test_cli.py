import csv
import hashlib
import json
import re
from pathlib import Path

import pytest

from qd3dt.cli import main, run_ablation
from qd3dt.motion import VeloLSTMShape, init_params, save_params

ROOT = Path(__file__).resolve().parents[1]
EXAMPLE = ROOT / "configs" / "example_scenario.toml"

SMALL_WORLD = """
[scenario]
seed = 3
n_frames = 30
n_objects = 3
{noise}

[tracker]
matcher = "greedy"
"""

NOISY = """
[scenario.noise]
center_px_sigma = 2.0
depth_rel_sigma = 0.03
false_positive_rate = 0.1
"""


def sha(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write(path, text):
    Path(path).write_text(text)
    return str(path)


@pytest.fixture
def world(tmp_path):
    cfg = write(tmp_path / "w.toml", SMALL_WORLD.format(noise=NOISY))
    out = tmp_path / "sim"
    assert main(["simulate", "--config", cfg, "--output", str(out)]) == 0
    return cfg, out


def test_simulate_writes_all_files(world):
    _, out = world
    for name in ("detections.jsonl", "ground_truth.jsonl", "ego_poses.jsonl", "scenario.lock"):
        assert (out / name).is_file()
    assert len((out / "ego_poses.jsonl").read_text().splitlines()) == 30
    assert len((out / "ground_truth.jsonl").read_text().splitlines()) == 30 * 3
    lock = json.loads((out / "scenario.lock").read_text())
    assert lock["seed"] == 3 and lock["dt"] == pytest.approx(1 / 12)


def test_simulate_is_deterministic(tmp_path, world):
    cfg, out = world
    again = tmp_path / "again"
    main(["simulate", "--config", cfg, "--output", str(again)])
    for name in ("detections.jsonl", "ground_truth.jsonl", "ego_poses.jsonl", "scenario.lock"):
        assert sha(out / name) == sha(again / name)


def test_seed_flag_changes_output(tmp_path, world):
    cfg, out = world
    other = tmp_path / "other"
    main(["simulate", "--config", cfg, "--seed", "4", "--output", str(other)])
    assert sha(out / "detections.jsonl") != sha(other / "detections.jsonl")


def test_malformed_config_reports_position(tmp_path, capsys):
    bad = write(tmp_path / "bad.toml", "[scenario]\nseed = = 3\n")
    assert main(["simulate", "--config", bad, "--output", str(tmp_path / "o")]) == 2
    assert re.search(r"bad\.toml:2:\d+", capsys.readouterr().err)


def test_unknown_config_key_is_config_error(tmp_path):
    bad = write(tmp_path / "bad.toml", "[scenario]\nseeed = 3\n")
    assert main(["simulate", "--config", bad, "--output", str(tmp_path / "o")]) == 2


def test_noise_free_round_trip_is_perfect(tmp_path, capsys):
    cfg = write(tmp_path / "clean.toml", SMALL_WORLD.format(noise=""))
    sim = tmp_path / "sim"
    main(["simulate", "--config", cfg, "--output", str(sim)])
    tracks = tmp_path / "tracks.jsonl"
    assert main(["track", str(sim / "detections.jsonl"), str(sim / "ego_poses.jsonl"), "--config", cfg,
                 "--motion", "none", "--output", str(tracks)]) == 0
    out = capsys.readouterr().out
    assert "tracks: 3" in out and "mean_affinity" in out and "runtime_per_frame_ms" in out
    ev = tmp_path / "ev"
    assert main(["evaluate", str(tracks), str(sim / "ground_truth.jsonl"), "--output", str(ev)]) == 0
    metrics = dict(line.split() for line in (ev / "metrics.txt").read_text().splitlines())
    assert float(metrics["MOTA"]) == 1.0 and float(metrics["IDS"]) == 0
    assert list(metrics) == ["MOTA", "MOTP_C", "MOTP_O", "MOTP_I", "AMOTA_1", "AMOTA_02",
                             "MT", "PT", "ML", "FP", "FN", "IDS"]
    curve = list(csv.reader((ev / "amota_curve.csv").open()))
    assert len(curve) == 41


@pytest.mark.parametrize("motion", ["kf3d", "momentum", "velolstm", "none"])
def test_every_motion_flag_is_accepted(tmp_path, world, motion):
    cfg, sim = world
    args = ["track", str(sim / "detections.jsonl"), str(sim / "ego_poses.jsonl"), "--motion", motion,
            "--output", str(tmp_path / f"{motion}.jsonl")]
    if motion == "velolstm":
        model = tmp_path / "m.vlstm"
        save_params(init_params(VeloLSTMShape(hidden=8, feature=4)), model)
        args += ["--model", str(model)]
    assert main(args) == 0
    assert (tmp_path / f"{motion}.jsonl").stat().st_size > 0


def test_velolstm_without_model_is_missing_artifact(tmp_path, world):
    _, sim = world
    base = ["track", str(sim / "detections.jsonl"), str(sim / "ego_poses.jsonl"), "--motion", "velolstm",
            "--output", str(tmp_path / "t.jsonl")]
    assert main(base) == 4
    assert main(base + ["--model", str(tmp_path / "nope.vlstm")]) == 4
    assert not (tmp_path / "t.jsonl").exists()


def test_corrupt_model_is_schema_error(tmp_path, world):
    _, sim = world
    bad = write(tmp_path / "bad.vlstm", "garbage")
    assert main(["track", str(sim / "detections.jsonl"), str(sim / "ego_poses.jsonl"), "--motion", "velolstm",
                 "--model", bad, "--output", str(tmp_path / "t.jsonl")]) == 3


def test_empty_detections_give_empty_tracks(tmp_path, world):
    _, sim = world
    empty = write(tmp_path / "empty.jsonl", "")
    out = tmp_path / "t.jsonl"
    assert main(["track", empty, str(sim / "ego_poses.jsonl"), "--output", str(out)]) == 0
    assert out.read_text() == ""


def test_schema_violation_leaves_no_partial_output(tmp_path, world):
    _, sim = world
    lines = (sim / "detections.jsonl").read_text().splitlines()
    rec = json.loads(lines[0])
    rec["depth"] = "far"
    bad = write(tmp_path / "bad.jsonl", "\n".join(lines[:5] + [json.dumps(rec)]) + "\n")
    out = tmp_path / "t.jsonl"
    assert main(["track", bad, str(sim / "ego_poses.jsonl"), "--output", str(out)]) == 3
    assert not out.exists()
    wrong_version = write(tmp_path / "v.jsonl", json.dumps({**json.loads(lines[0]), "v": 99}) + "\n")
    assert main(["track", wrong_version, str(sim / "ego_poses.jsonl"), "--output", str(out)]) == 3


def test_evaluate_rejects_bad_tracks(tmp_path, world):
    _, sim = world
    bad = write(tmp_path / "t.jsonl", '{"v": 1, "frame": 0}\n')
    assert main(["evaluate", bad, str(sim / "ground_truth.jsonl"), "--output", str(tmp_path / "ev")]) == 3


def test_plot_colors_and_determinism(tmp_path, world):
    _, sim = world
    tracks = tmp_path / "t.jsonl"
    main(["track", str(sim / "detections.jsonl"), str(sim / "ego_poses.jsonl"), "--output", str(tracks)])
    n_ids = len({json.loads(line)["track_id"] for line in tracks.read_text().splitlines()})
    a, b = tmp_path / "a.svg", tmp_path / "b.svg"
    assert main(["plot", str(tracks), str(sim / "ground_truth.jsonl"), "--output", str(a)]) == 0
    main(["plot", str(tracks), str(sim / "ground_truth.jsonl"), "--output", str(b)])
    assert a.read_bytes() == b.read_bytes()
    colors = set(re.findall(r'class="track"[^>]*stroke="(#[0-9a-f]{6})"', a.read_text()))
    assert len(colors) == n_ids


def test_plot_with_no_tracks_shows_ground_truth(tmp_path, world):
    _, sim = world
    empty = write(tmp_path / "t.jsonl", "")
    svg = tmp_path / "p.svg"
    assert main(["plot", empty, str(sim / "ground_truth.jsonl"), "--output", str(svg)]) == 0
    text = svg.read_text()
    assert 'class="gt"' in text and 'class="track"' not in text


def test_ablate_empty_sweep_is_header_only(tmp_path):
    cfg = write(tmp_path / "a.toml", "[scenario]\nn_frames = 5\n[sweep]\nseeds = [0]\n")
    out = tmp_path / "a.csv"
    assert main(["ablate", "--config", cfg, "--output", str(out)]) == 0
    assert out.read_text().splitlines() == [
        "variant,runs,MOTA,MOTP_C,MOTP_O,MOTP_I,AMOTA_1,AMOTA_02,MT,PT,ML,FP,FN,IDS"]


def test_ablate_unknown_knob(tmp_path):
    cfg = write(tmp_path / "a.toml", '[sweep]\n[[sweep.variants]]\nname = "x"\nwarp = 9\n')
    assert main(["ablate", "--config", cfg, "--output", str(tmp_path / "a.csv")]) == 2
    cfg = write(tmp_path / "b.toml", '[sweep]\n[[sweep.variants]]\nname = "x"\ndrop = ["vibes"]\n')
    assert main(["ablate", "--config", cfg, "--output", str(tmp_path / "b.csv")]) == 2


def test_ablate_matchers_agree_on_separated_world():
    table = {
        "scenario": {"n_frames": 20, "n_objects": 3},
        "sweep": {"seeds": [0, 1], "variants": [{"name": "greedy", "matcher": "greedy"},
                                               {"name": "hungarian", "matcher": "hungarian"}]},
    }
    rows = list(csv.reader(run_ablation(table).splitlines()))
    assert rows[1][0] == "greedy" and rows[2][0] == "hungarian"
    assert rows[1][1:] == rows[2][1:]


def test_ablate_parallel_matches_serial():
    table = {
        "scenario": {"n_frames": 15, "n_objects": 2, "noise": {"center_px_sigma": 2.0}},
        "sweep": {"seeds": [0, 1], "variants": [{"name": "full"}, {"name": "no_deep", "drop": ["deep"]}]},
    }
    assert run_ablation(table, jobs=2) == run_ablation(table, jobs=1)


def test_train_writes_loadable_model(tmp_path, capsys):
    cfg = write(tmp_path / "t.toml", "[train]\nseeds = [0]\nwindow = 6\nhidden = 8\nepochs = 2\n"
                                      "[train.scenario]\nn_frames = 12\nn_objects = 2\n")
    out = tmp_path / "m.vlstm"
    assert main(["train", "--config", cfg, "--output", str(out)]) == 0
    assert "final_loss" in capsys.readouterr().out
    from qd3dt.motion import load_params
    assert load_params(out)["p.lstm1.wh"].shape[0] == 8
