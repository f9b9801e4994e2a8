//! Command-line entry points and the batch pipeline behind them:
//! `simulate`, `track`, `evaluate` and `ablate`.

pub mod config;
pub mod io;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::error::{Error, Result};
use crate::filter::{MultiClassTracker, TrackEstimate};
use crate::metrics::{evaluate, EvalFrame, Evaluation, MotSummary};
use crate::sensors::{Scan, SensorFrame};
use crate::sim::{generate_truth, render_detections, GroundTruth, ScenarioConfig};

pub use config::{load_config, parse_config, SensorMode, TrackerConfig};
pub use io::{emit_tracks, ingest, Calibration};

/// Exit code for malformed input files, configuration or arguments.
pub const EXIT_PARSE: i32 = 2;
/// Exit code for failures while running a valid command.
pub const EXIT_RUNTIME: i32 = 3;

/// A simulated scene in the same form as ingested data.
#[derive(Clone, Debug)]
pub struct SimulatedRun {
    pub calibration: Calibration,
    pub truth: GroundTruth,
    pub frames: Vec<Vec<SensorFrame>>,
}

pub fn simulate_scenario(cfg: &ScenarioConfig) -> Result<SimulatedRun> {
    let truth = generate_truth(cfg)?;
    let frames = render_detections(&truth, cfg, cfg.seed)?;
    let calibration = Calibration::from_cameras(&cfg.rig.cameras()?, cfg.lidar_range);
    Ok(SimulatedRun {
        calibration,
        truth,
        frames,
    })
}

/// Runs the per-class trackers over every step and returns the estimates.
pub fn run_tracker(
    cfg: &TrackerConfig,
    calibration: &Calibration,
    frames: &[Vec<SensorFrame>],
    mode: SensorMode,
) -> Result<Vec<Vec<TrackEstimate>>> {
    let cameras = calibration.camera_models()?;
    let models = cfg.class_models(&cameras, calibration.lidar.range_m, mode)?;
    let mut tracker = MultiClassTracker::new(models, cfg.tracker.score_gate, cfg.tracker.seed)?;
    frames
        .iter()
        .map(|step| {
            let scan = Scan::from_frames(step.clone(), cameras.len())?;
            let scan = match mode {
                SensorMode::Fused => scan,
                SensorMode::CameraOnly => scan.without_lidar(),
                SensorMode::LidarOnly => scan.without_cameras(),
            };
            tracker.step(&scan)
        })
        .collect()
}

fn eval_frames(gt: &[io::GtRecord], tracks: &[io::TrackRecord]) -> Result<Vec<EvalFrame>> {
    io::eval_frames(gt, tracks).map_err(Error::InvalidConfig)
}

/// One ablation run: simulate with `seed`, track with `mode`, evaluate.
pub fn ablation_run(cfg: &TrackerConfig, mode: SensorMode, seed: u64) -> Result<(Evaluation, Vec<EvalFrame>)> {
    let scenario = ScenarioConfig {
        seed,
        ..cfg.scenario.clone()
    };
    let sim = simulate_scenario(&scenario)?;
    let estimates = run_tracker(cfg, &sim.calibration, &sim.frames, mode)?;
    let frames = eval_frames(&io::truth_to_records(&sim.truth), &io::estimates_to_records(&estimates))?;
    let eval = evaluate(&frames, cfg.metrics.recall_points, cfg.metrics.radius)?;
    Ok((eval, frames))
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    match v.len() {
        0 => f64::NAN,
        n if n % 2 == 1 => v[n / 2],
        n => 0.5 * (v[n / 2 - 1] + v[n / 2]),
    }
}

const SUMMARY_HEADER: &str = "amota,amotp,mota,motp,recall,mt,ml,tp,fp,fn,ids,gt";

fn summary_csv(s: &MotSummary) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{}",
        s.amota, s.amotp, s.mota, s.motp, s.recall, s.mt, s.ml, s.tp, s.fp, s.fn_, s.ids, s.gt
    )
}

fn evaluation_csv(eval: &Evaluation) -> String {
    let mut out = format!("class,{SUMMARY_HEADER}\n");
    for (class, s) in &eval.per_class {
        let _ = writeln!(out, "{class},{}", summary_csv(s));
    }
    let _ = writeln!(out, "overall,{}", summary_csv(&eval.overall));
    out
}

fn evaluation_table(eval: &Evaluation) -> String {
    let mut out = format!(
        "{:<12}{:>8}{:>8}{:>8}{:>8}{:>8}{:>6}{:>6}{:>7}{:>7}{:>7}{:>6}\n",
        "class", "AMOTA", "AMOTP", "MOTA", "MOTP", "recall", "MT", "ML", "TP", "FP", "FN", "IDS"
    );
    let rows = eval
        .per_class
        .iter()
        .map(|(c, s)| (c.to_string(), s))
        .chain(std::iter::once(("overall".to_string(), &eval.overall)));
    for (name, s) in rows {
        let _ = writeln!(
            out,
            "{:<12}{:>8.3}{:>8.3}{:>8.3}{:>8.3}{:>8.3}{:>6}{:>6}{:>7}{:>7}{:>7}{:>6}",
            name, s.amota, s.amotp, s.mota, s.motp, s.recall, s.mt, s.ml, s.tp, s.fp, s.fn_, s.ids
        );
    }
    out
}

fn cardinality_rows(prefix: &str, frames: &[EvalFrame]) -> String {
    frames
        .iter()
        .enumerate()
        .map(|(k, f)| format!("{prefix}{k},{},{}\n", f.gt.len(), f.est.len()))
        .collect()
}

fn class_metric_rows(prefix: &str, eval: &Evaluation) -> String {
    eval.per_class
        .iter()
        .map(|(c, s)| format!("{prefix}{c},{},{},{}\n", s.amota, s.mota, s.recall))
        .collect()
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, text)?;
    Ok(())
}

#[derive(Parser, Debug)]
#[command(name = "msglmb", version, about = "Multi-sensor GLMB tracking for camera + LiDAR detections")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic scene: detections, calibration and ground truth.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Track a detection file and write one record per estimated object.
    Track {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        detections: PathBuf,
        #[arg(long)]
        calib: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "fused")]
        mode: SensorMode,
        #[arg(long)]
        emit_plots: Option<PathBuf>,
    },
    /// Score tracks against ground truth.
    Evaluate {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        tracks: PathBuf,
        #[arg(long, default_value_t = 2.0)]
        radius: f64,
        #[arg(long, default_value_t = 40)]
        recall_points: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        emit_plots: Option<PathBuf>,
    },
    /// Simulate, track and evaluate each configured seed with restricted sensors.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        /// Repeatable; all three modes when omitted.
        #[arg(long)]
        mode: Vec<SensorMode>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        emit_plots: Option<PathBuf>,
    },
}

impl clap::ValueEnum for SensorMode {
    fn value_variants<'a>() -> &'a [Self] {
        &[SensorMode::Fused, SensorMode::CameraOnly, SensorMode::LidarOnly]
    }

    fn to_possible_value(&self) -> Option<clap::builder::PossibleValue> {
        Some(clap::builder::PossibleValue::new(self.as_str()))
    }
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Simulate { config, seed, out } => {
            let cfg = load_config(&config)?;
            let scenario = ScenarioConfig {
                seed: seed.unwrap_or(cfg.scenario.seed),
                ..cfg.scenario
            };
            let sim = simulate_scenario(&scenario)?;
            std::fs::create_dir_all(&out)?;
            io::write_ndjson(&out.join("detections.ndjson"), &io::frames_to_records(&sim.frames, &sim.calibration))?;
            io::write_calibration(&out.join("calibration.json"), &sim.calibration)?;
            io::write_ndjson(&out.join("gt.ndjson"), &io::truth_to_records(&sim.truth))?;
            println!("wrote {} steps to {}", sim.frames.len(), out.display());
        }
        Command::Track {
            config,
            detections,
            calib,
            out,
            seed,
            mode,
            emit_plots,
        } => {
            let mut cfg = load_config(&config)?;
            if let Some(s) = seed {
                cfg.tracker.seed = s;
            }
            let (calibration, frames) = ingest(&detections, &calib)?;
            let estimates = run_tracker(&cfg, &calibration, &frames, mode)?;
            if let Some(parent) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent)?;
            }
            emit_tracks(&estimates, &out)?;
            if let Some(dir) = emit_plots {
                let mut csv = String::from("frame,tracks\n");
                for (k, es) in estimates.iter().enumerate() {
                    let _ = writeln!(csv, "{k},{}", es.len());
                }
                write_file(&dir.join("cardinality.csv"), &csv)?;
            }
            let n: usize = estimates.iter().map(Vec::len).sum();
            println!("wrote {n} track records over {} frames to {}", estimates.len(), out.display());
        }
        Command::Evaluate {
            gt,
            tracks,
            radius,
            recall_points,
            out,
            emit_plots,
        } => {
            if !(radius > 0.0) || recall_points == 0 {
                return Err(Error::InvalidConfig("radius and recall points must be > 0".into()));
            }
            let gt: Vec<io::GtRecord> = io::read_ndjson(&gt)?;
            let tracks: Vec<io::TrackRecord> = io::read_ndjson(&tracks)?;
            let frames = eval_frames(&gt, &tracks)?;
            let eval = evaluate(&frames, recall_points, radius)?;
            write_file(&out, &evaluation_csv(&eval))?;
            if let Some(dir) = emit_plots {
                write_file(&dir.join("cardinality.csv"), &format!("frame,gt,est\n{}", cardinality_rows("", &frames)))?;
                write_file(&dir.join("class_metrics.csv"), &format!("class,amota,mota,recall\n{}", class_metric_rows("", &eval)))?;
            }
            print!("{}", evaluation_table(&eval));
        }
        Command::Ablate {
            config,
            mode,
            out,
            emit_plots,
        } => {
            let cfg = load_config(&config)?;
            let modes = if mode.is_empty() {
                vec![SensorMode::Fused, SensorMode::CameraOnly, SensorMode::LidarOnly]
            } else {
                mode
            };
            std::fs::create_dir_all(&out)?;
            let mut summary = String::from("mode,runs,median_mota,median_amota\n");
            let mut cardinality = String::from("mode,seed,frame,gt,est\n");
            let mut class_bars = String::from("mode,seed,class,amota,mota,recall\n");
            for m in modes {
                let mut csv = format!("seed,{SUMMARY_HEADER}\n");
                let (mut motas, mut amotas) = (Vec::new(), Vec::new());
                for &seed in &cfg.ablation.seeds {
                    let (eval, frames) = ablation_run(&cfg, m, seed)?;
                    let _ = writeln!(csv, "{seed},{}", summary_csv(&eval.overall));
                    cardinality += &cardinality_rows(&format!("{},{seed},", m.as_str()), &frames);
                    class_bars += &class_metric_rows(&format!("{},{seed},", m.as_str()), &eval);
                    motas.push(eval.overall.mota);
                    amotas.push(eval.overall.amota);
                }
                write_file(&out.join(format!("ablation-{}.csv", m.as_str())), &csv)?;
                let line = format!("{},{},{},{}", m.as_str(), motas.len(), median(&motas), median(&amotas));
                println!("{:<12} median MOTA {:.3}  median AMOTA {:.3}", m.as_str(), median(&motas), median(&amotas));
                summary += &line;
                summary.push('\n');
            }
            write_file(&out.join("summary.csv"), &summary)?;
            if let Some(dir) = emit_plots {
                write_file(&dir.join("cardinality.csv"), &cardinality)?;
                write_file(&dir.join("class_metrics.csv"), &class_bars)?;
            }
        }
    }
    Ok(())
}

/// Parses `argv` (program name first) and runs the command. Returns the
/// process exit code: 0 ok, 2 parse error, 3 runtime error.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_PARSE } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_parse_error() {
                EXIT_PARSE
            } else {
                EXIT_RUNTIME
            }
        }
    }
}
