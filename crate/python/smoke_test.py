"""Smoke test for the msglmb_py extension.

Build and install first:  pip install --no-build-isolation -e crates/py
Run:                      python python/smoke_test.py
"""

import csv
import pathlib
import tempfile

import msglmb_py as m

ROOT = pathlib.Path(__file__).resolve().parent.parent
FIXTURE = ROOT / "crates" / "core" / "tests" / "fixtures" / "nuscenes_mini"


def check_transition():
    f, b, q = m.transition()
    assert f[0][1] == 0.5 and f[1][1] == 1.0
    assert abs(b[6] + 0.0018) < 1e-15
    assert abs(q[0][0] - 0.0225 * 0.5**4 / 4) < 1e-15


def check_config():
    cfg = m.Config()
    assert cfg.score_gate == 0.47
    assert sorted(cfg.classes) == sorted(m.CLASSES)
    again = m.Config.from_toml(cfg.to_toml())
    assert again.to_toml() == cfg.to_toml()
    try:
        m.Config.from_toml("[tracker]\nbogus = 1\n")
    except ValueError as e:
        assert "bogus" in str(e)
    else:
        raise AssertionError("unknown key accepted")


def check_streaming_tracker():
    calib = m.Calibration.load(FIXTURE / "calibration.json")
    assert len(calib.camera_names) == 6
    tracker = m.Tracker(m.Config(), calib)
    for k in range(8):
        x = 10.0 + 0.75 * k
        tracks = tracker.step(lidar=[m.LidarDetection("car", 0.9, [x, 2.0, 0.85], [1.9, 4.6, 1.7])])
    assert len(tracks) == 1, tracks
    t = tracks[0]
    assert t.class_name == "car" and t.existence > 0.5
    assert abs(t.center[0] - x) < 1.0
    assert t.velocity[0] > 0.5
    card = tracker.cardinality("car")
    assert abs(sum(card) - 1.0) < 1e-9
    # a frame where every sensor reports nothing
    tracker.step()
    assert tracker.frames_processed == 9


def check_pipeline(tmp):
    cfg = m.Config()
    cfg.n_objects = 4
    cfg.duration_steps = 15
    steps = m.simulate(cfg, tmp / "sim", seed=5)
    assert steps == 15
    n = m.track_file(cfg, tmp / "sim" / "detections.ndjson", tmp / "sim" / "calibration.json", tmp / "tracks.ndjson")
    assert n > 0
    scores = m.evaluate_files(tmp / "sim" / "gt.ndjson", tmp / "tracks.ndjson")
    overall = scores["overall"]
    assert 0.0 <= overall["recall"] <= 1.0 and overall["gt"] > 0
    assert m.run_cli(["evaluate", "--gt", str(tmp / "sim" / "gt.ndjson"), "--tracks", str(tmp / "tracks.ndjson"),
                      "--out", str(tmp / "metrics.csv")]) == 0
    with open(tmp / "metrics.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert rows[-1]["class"] == "overall"
    assert m.run_cli(["track", "--config"]) == 2
    return overall


def main():
    check_transition()
    check_config()
    check_streaming_tracker()
    with tempfile.TemporaryDirectory() as d:
        overall = check_pipeline(pathlib.Path(d))
    print(f"smoke test ok: MOTA {overall['mota']:.3f}, recall {overall['recall']:.3f}")


if __name__ == "__main__":
    main()
