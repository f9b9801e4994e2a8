use std::fs;
use std::path::{Path, PathBuf};

use msglmb::cli::io::{read_ndjson, GtRecord, TrackRecord};
use msglmb::cli::{run_command, EXIT_PARSE, EXIT_RUNTIME};
use sha2::{Digest, Sha256};

const SMALL: &str = r#"
[scenario]
n_objects = 4
duration_steps = 12
spawn_radius = 25.0
seed = 3
"#;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn run(args: &[&str]) -> i32 {
    run_command(std::iter::once("msglmb").chain(args.iter().copied()))
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("config.toml");
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_owned()
}

fn digest(path: &Path) -> Vec<u8> {
    Sha256::digest(fs::read(path).unwrap()).to_vec()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn pipeline(dir: &Path, config: &str) -> [Vec<u8>; 4] {
    let sim = dir.join("sim");
    assert_eq!(run(&["simulate", "--config", config, "--out", p(&sim)]), 0);
    let tracks = dir.join("tracks.ndjson");
    let code = run(&[
        "track",
        "--config",
        config,
        "--detections",
        p(&sim.join("detections.ndjson")),
        "--calib",
        p(&sim.join("calibration.json")),
        "--out",
        p(&tracks),
    ]);
    assert_eq!(code, 0);
    let metrics = dir.join("metrics.csv");
    let code = run(&[
        "evaluate",
        "--gt",
        p(&sim.join("gt.ndjson")),
        "--tracks",
        p(&tracks),
        "--out",
        p(&metrics),
    ]);
    assert_eq!(code, 0);
    [
        digest(&sim.join("detections.ndjson")),
        digest(&sim.join("gt.ndjson")),
        digest(&tracks),
        digest(&metrics),
    ]
}

#[test]
fn pipeline_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg_a = write_config(a.path(), SMALL);
    let cfg_b = write_config(b.path(), SMALL);
    assert_eq!(pipeline(a.path(), &cfg_a), pipeline(b.path(), &cfg_b));

    let gt: Vec<GtRecord> = read_ndjson(&a.path().join("sim/gt.ndjson")).unwrap();
    let tracks: Vec<TrackRecord> = read_ndjson(&a.path().join("tracks.ndjson")).unwrap();
    assert!(!gt.is_empty());
    assert!(!tracks.is_empty());
    let metrics = fs::read_to_string(a.path().join("metrics.csv")).unwrap();
    assert!(metrics.lines().last().unwrap().starts_with("overall,"));
}

#[test]
fn different_seed_changes_detections() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert_eq!(run(&["simulate", "--config", &cfg, "--seed", "1", "--out", p(&a)]), 0);
    assert_eq!(run(&["simulate", "--config", &cfg, "--seed", "2", "--out", p(&b)]), 0);
    assert_ne!(digest(&a.join("detections.ndjson")), digest(&b.join("detections.ndjson")));
}

#[test]
fn empty_detections_give_empty_tracks() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let det = dir.path().join("det.ndjson");
    fs::write(&det, "").unwrap();
    let tracks = dir.path().join("out/tracks.ndjson");
    let calib = fixture("nuscenes_mini/calibration.json");
    let code = run(&[
        "track",
        "--config",
        &cfg,
        "--detections",
        p(&det),
        "--calib",
        p(&calib),
        "--out",
        p(&tracks),
    ]);
    assert_eq!(code, 0);
    let records: Vec<TrackRecord> = read_ndjson(&tracks).unwrap();
    assert!(records.is_empty());
}

#[test]
fn below_gate_detections_give_no_tracks() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let det = dir.path().join("det.ndjson");
    let lines: String = (0..5)
        .map(|k| {
            format!(
                "{{\"schema_version\":1,\"frame\":{k},\"sensor\":\"lidar\",\"class\":\"car\",\"score\":0.2,\
                 \"center\":[10.0,0.0,0.8],\"size\":[1.9,4.5,1.6],\"yaw\":0.0}}\n"
            )
        })
        .collect();
    fs::write(&det, lines).unwrap();
    let tracks = dir.path().join("tracks.ndjson");
    let calib = fixture("nuscenes_mini/calibration.json");
    let code = run(&[
        "track",
        "--config",
        &cfg,
        "--detections",
        p(&det),
        "--calib",
        p(&calib),
        "--out",
        p(&tracks),
    ]);
    assert_eq!(code, 0);
    assert!(read_ndjson::<TrackRecord>(&tracks).unwrap().is_empty());
}

#[test]
fn nuscenes_style_fixture_is_tracked() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let tracks = dir.path().join("tracks.ndjson");
    let plots = dir.path().join("plots");
    let code = run(&[
        "track",
        "--config",
        &cfg,
        "--detections",
        p(&fixture("nuscenes_mini/detections.ndjson")),
        "--calib",
        p(&fixture("nuscenes_mini/calibration.json")),
        "--out",
        p(&tracks),
        "--emit-plots",
        p(&plots),
    ]);
    assert_eq!(code, 0);
    let records: Vec<TrackRecord> = read_ndjson(&tracks).unwrap();
    // the scene has 3 cars, 2 pedestrians and a bicycle
    let last = records.iter().map(|r| r.frame).max().unwrap();
    assert_eq!(last, 11);
    let count = |class: &str| {
        records
            .iter()
            .filter(|r| r.frame == last && r.class.to_string() == class)
            .count()
    };
    assert_eq!(count("car"), 3);
    assert_eq!(count("pedestrian"), 2);
    assert_eq!(count("bicycle"), 1);
    let card = fs::read_to_string(plots.join("cardinality.csv")).unwrap();
    assert_eq!(card.lines().count(), 13);
}

#[test]
fn evaluate_and_ablate_emit_plots() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        &format!("{SMALL}\n[ablation]\nseeds = [0, 1]\n"),
    );
    let out = dir.path().join("ablate");
    let plots = dir.path().join("plots");
    let code = run(&[
        "ablate",
        "--config",
        &cfg,
        "--mode",
        "lidar-only",
        "--out",
        p(&out),
        "--emit-plots",
        p(&plots),
    ]);
    assert_eq!(code, 0);
    let csv = fs::read_to_string(out.join("ablation-lidar-only.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    assert!(summary.lines().nth(1).unwrap().starts_with("lidar-only,2,"));
    assert!(plots.join("cardinality.csv").exists());
    assert!(plots.join("class_metrics.csv").exists());

    pipeline(dir.path(), &cfg);
    let eval_plots = dir.path().join("eval_plots");
    let code = run(&[
        "evaluate",
        "--gt",
        p(&dir.path().join("sim/gt.ndjson")),
        "--tracks",
        p(&dir.path().join("tracks.ndjson")),
        "--out",
        p(&dir.path().join("m.csv")),
        "--emit-plots",
        p(&eval_plots),
    ]);
    assert_eq!(code, 0);
    let card = fs::read_to_string(eval_plots.join("cardinality.csv")).unwrap();
    assert_eq!(card.lines().next().unwrap(), "frame,gt,est");
    assert_eq!(card.lines().count(), 13);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let calib = fixture("nuscenes_mini/calibration.json");
    let dets = fixture("nuscenes_mini/detections.ndjson");
    let out = d.join("t.ndjson");

    // unknown key in config
    let bad = write_config(d, "[tracker]\nscore_gate = 0.5\nbogus = 1\n");
    assert_eq!(run(&["simulate", "--config", &bad, "--out", p(&d.join("s"))]), EXIT_PARSE);

    // malformed detection line
    let good = d.join("good.toml");
    fs::write(&good, "").unwrap();
    let det = d.join("det.ndjson");
    fs::write(&det, "{\"schema_version\":1,\"frame\":0,\"sensor\":\"lidar\"\n").unwrap();
    let args = |det: &Path| {
        vec![
            "track".to_owned(),
            "--config".into(),
            p(&good).into(),
            "--detections".into(),
            p(det).into(),
            "--calib".into(),
            p(&calib).into(),
            "--out".into(),
            p(&out).into(),
        ]
    };
    assert_eq!(run_command(std::iter::once("msglmb".to_owned()).chain(args(&det))), EXIT_PARSE);

    // wrong schema version
    fs::write(&det, "{\"schema_version\":7,\"frame\":0,\"sensor\":\"CAM_FRONT\",\"class\":\"car\",\"score\":0.9,\"bbox\":[0,0,10,10]}\n").unwrap();
    assert_eq!(run_command(std::iter::once("msglmb".to_owned()).chain(args(&det))), EXIT_PARSE);

    // sensor missing from the calibration
    fs::write(&det, "{\"schema_version\":1,\"frame\":0,\"sensor\":\"CAM_ROOF\",\"class\":\"car\",\"score\":0.9,\"bbox\":[0,0,10,10]}\n").unwrap();
    assert_eq!(run_command(std::iter::once("msglmb".to_owned()).chain(args(&det))), EXIT_PARSE);

    // bad argv
    assert_eq!(run(&["track", "--config"]), EXIT_PARSE);
    assert_eq!(run(&["evaluate", "--gt", "a", "--tracks", "b", "--out", "c", "--radius=-1"]), EXIT_PARSE);

    // missing input file is a runtime failure
    let missing = d.join("nope.ndjson");
    assert_eq!(run_command(std::iter::once("msglmb".to_owned()).chain(args(&missing))), EXIT_RUNTIME);

    // output path that cannot be created
    let blocker = d.join("blocker");
    fs::write(&blocker, "").unwrap();
    let code = run(&[
        "track",
        "--config",
        p(&good),
        "--detections",
        p(&dets),
        "--calib",
        p(&calib),
        "--out",
        p(&blocker.join("t.ndjson")),
    ]);
    assert_eq!(code, EXIT_RUNTIME);

    assert_eq!(run(&["--help"]), 0);
}
