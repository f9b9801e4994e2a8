//! Python bindings: configuration, calibration, the multi-class tracker,
//! the scene simulator and the evaluation entry points.

use std::path::PathBuf;

use msglmb::cli::config::{parse_config, SensorMode, TrackerConfig};
use msglmb::cli::io::{self, CameraRecord, DetectionRecord, GtRecord, LidarRecord, TrackRecord};
use msglmb::cli::{self as pipeline, Calibration as CoreCalibration};
use msglmb::dynamics::{build_transition, MotionConfig};
use msglmb::filter::{MultiClassTracker, TrackEstimate};
use msglmb::metrics::{evaluate, MotSummary};
use msglmb::sensors::{ObjectClass, Scan, SensorFrame};
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(e: msglmb::Error) -> PyErr {
    match e {
        msglmb::Error::Io(e) => PyIOError::new_err(e.to_string()),
        e if e.is_parse_error() => PyValueError::new_err(e.to_string()),
        e => PyRuntimeError::new_err(e.to_string()),
    }
}

fn parse_class(name: &str) -> PyResult<ObjectClass> {
    name.parse().map_err(PyValueError::new_err)
}

fn parse_mode(name: &str) -> PyResult<SensorMode> {
    name.parse().map_err(PyValueError::new_err)
}

/// Tracker, metrics, scenario and ablation settings.
#[pyclass(name = "Config", from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: TrackerConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    fn new() -> Self {
        Self {
            inner: TrackerConfig::default(),
        }
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        pipeline::load_config(&path).map(|inner| Self { inner }).map_err(to_py)
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        parse_config(text, "<string>").map(|inner| Self { inner }).map_err(to_py)
    }

    fn to_toml(&self) -> PyResult<String> {
        toml::to_string(&self.inner).map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.tracker.seed
    }

    #[setter]
    fn set_seed(&mut self, seed: u64) {
        self.inner.tracker.seed = seed;
    }

    #[getter]
    fn score_gate(&self) -> f64 {
        self.inner.tracker.score_gate
    }

    #[getter]
    fn classes(&self) -> Vec<String> {
        self.inner.tracker.classes.iter().map(|c| c.to_string()).collect()
    }

    #[getter]
    fn scenario_seed(&self) -> u64 {
        self.inner.scenario.seed
    }

    #[setter]
    fn set_scenario_seed(&mut self, seed: u64) {
        self.inner.scenario.seed = seed;
    }

    #[getter]
    fn duration_steps(&self) -> usize {
        self.inner.scenario.duration_steps
    }

    #[setter]
    fn set_duration_steps(&mut self, steps: usize) {
        self.inner.scenario.duration_steps = steps;
    }

    #[getter]
    fn n_objects(&self) -> usize {
        self.inner.scenario.n_objects
    }

    #[setter]
    fn set_n_objects(&mut self, n: usize) {
        self.inner.scenario.n_objects = n;
    }

    fn __repr__(&self) -> String {
        format!(
            "Config(classes={:?}, score_gate={}, seed={})",
            self.classes(),
            self.inner.tracker.score_gate,
            self.inner.tracker.seed
        )
    }
}

/// Camera projections and LiDAR range of a sensor rig.
#[pyclass(name = "Calibration", from_py_object)]
#[derive(Clone)]
struct PyCalibration {
    inner: CoreCalibration,
}

#[pymethods]
impl PyCalibration {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        io::read_calibration(&path).map(|inner| Self { inner }).map_err(to_py)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        io::write_calibration(&path, &self.inner).map_err(to_py)
    }

    #[getter]
    fn camera_names(&self) -> Vec<String> {
        self.inner.cameras.iter().map(|c| c.name.clone()).collect()
    }

    #[getter]
    fn lidar_range(&self) -> f64 {
        self.inner.lidar.range_m
    }

    fn __repr__(&self) -> String {
        format!("Calibration(cameras={:?}, lidar_range={})", self.camera_names(), self.lidar_range())
    }
}

/// A 2D box from one named camera, `bbox = (x1, y1, x2, y2)` in pixels.
#[pyclass(name = "CameraDetection", from_py_object, get_all, set_all)]
#[derive(Clone)]
struct PyCameraDetection {
    sensor: String,
    class_name: String,
    score: f64,
    bbox: [f64; 4],
}

#[pymethods]
impl PyCameraDetection {
    #[new]
    fn new(sensor: String, class_name: String, score: f64, bbox: [f64; 4]) -> Self {
        Self {
            sensor,
            class_name,
            score,
            bbox,
        }
    }

    fn __repr__(&self) -> String {
        format!("CameraDetection({:?}, {:?}, score={}, bbox={:?})", self.sensor, self.class_name, self.score, self.bbox)
    }
}

/// A 3D LiDAR box: centre in metres, `size = (w, l, h)`.
#[pyclass(name = "LidarDetection", from_py_object, get_all, set_all)]
#[derive(Clone)]
struct PyLidarDetection {
    class_name: String,
    score: f64,
    center: [f64; 3],
    size: [f64; 3],
    yaw: f64,
}

#[pymethods]
impl PyLidarDetection {
    #[new]
    #[pyo3(signature = (class_name, score, center, size, yaw = 0.0))]
    fn new(class_name: String, score: f64, center: [f64; 3], size: [f64; 3], yaw: f64) -> Self {
        Self {
            class_name,
            score,
            center,
            size,
            yaw,
        }
    }

    fn __repr__(&self) -> String {
        format!("LidarDetection({:?}, score={}, center={:?}, size={:?})", self.class_name, self.score, self.center, self.size)
    }
}

#[pyclass(name = "Track", frozen, get_all)]
struct PyTrack {
    label: String,
    class_name: String,
    center: [f64; 3],
    size: [f64; 3],
    velocity: [f64; 3],
    existence: f64,
}

impl From<&TrackEstimate> for PyTrack {
    fn from(e: &TrackEstimate) -> Self {
        Self {
            label: e.label.to_string(),
            class_name: e.class.to_string(),
            center: e.center.into(),
            size: e.dims.into(),
            velocity: e.velocity.into(),
            existence: e.existence,
        }
    }
}

#[pymethods]
impl PyTrack {
    fn __repr__(&self) -> String {
        format!(
            "Track({} {}, center=({:.2}, {:.2}, {:.2}), existence={:.3})",
            self.class_name, self.label, self.center[0], self.center[1], self.center[2], self.existence
        )
    }
}

/// Per-class GLMB trackers over one sensor rig. Each call to `step`
/// consumes one frame; every calibrated sensor is taken to have reported.
#[pyclass(name = "Tracker", unsendable)]
struct PyTracker {
    inner: MultiClassTracker,
    calibration: CoreCalibration,
    n_cameras: usize,
    mode: SensorMode,
    frame: u64,
}

#[pymethods]
impl PyTracker {
    #[new]
    #[pyo3(signature = (config, calibration, mode = "fused"))]
    fn new(config: &PyConfig, calibration: &PyCalibration, mode: &str) -> PyResult<Self> {
        let mode = parse_mode(mode)?;
        let cameras = calibration.inner.camera_models().map_err(to_py)?;
        let models = config
            .inner
            .class_models(&cameras, calibration.inner.lidar.range_m, mode)
            .map_err(to_py)?;
        let inner = MultiClassTracker::new(models, config.inner.tracker.score_gate, config.inner.tracker.seed).map_err(to_py)?;
        Ok(Self {
            inner,
            calibration: calibration.inner.clone(),
            n_cameras: cameras.len(),
            mode,
            frame: 0,
        })
    }

    #[pyo3(signature = (camera = Vec::new(), lidar = Vec::new()))]
    fn step(&mut self, camera: Vec<PyCameraDetection>, lidar: Vec<PyLidarDetection>) -> PyResult<Vec<PyTrack>> {
        let mut records = Vec::with_capacity(camera.len() + lidar.len());
        for c in camera {
            records.push(DetectionRecord::Camera(CameraRecord {
                frame: 0,
                sensor: c.sensor,
                class: parse_class(&c.class_name)?,
                score: c.score,
                bbox: c.bbox,
            }));
        }
        for l in lidar {
            records.push(DetectionRecord::Lidar(LidarRecord {
                frame: 0,
                sensor: "lidar".into(),
                class: parse_class(&l.class_name)?,
                score: l.score,
                center: l.center,
                size: l.size,
                yaw: l.yaw,
            }));
        }
        let mut frames = io::records_to_frames(&records, &self.calibration).map_err(PyValueError::new_err)?;
        // no records at all is still a frame in which every sensor reported nothing
        let step = frames.pop().unwrap_or_else(|| {
            (0..self.n_cameras)
                .map(|camera| SensorFrame::Camera {
                    camera,
                    detections: Vec::new(),
                })
                .chain(std::iter::once(SensorFrame::Lidar(Vec::new())))
                .collect()
        });
        let scan = Scan::from_frames(step, self.n_cameras).map_err(to_py)?;
        let scan = match self.mode {
            SensorMode::Fused => scan,
            SensorMode::CameraOnly => scan.without_lidar(),
            SensorMode::LidarOnly => scan.without_cameras(),
        };
        let estimates = self.inner.step(&scan).map_err(to_py)?;
        self.frame += 1;
        Ok(estimates.iter().map(PyTrack::from).collect())
    }

    #[getter]
    fn frames_processed(&self) -> u64 {
        self.frame
    }

    /// Posterior cardinality distribution of one class.
    fn cardinality(&self, class_name: &str) -> PyResult<Vec<f64>> {
        let class = parse_class(class_name)?;
        self.inner
            .filters()
            .iter()
            .find(|f| f.class() == class)
            .map(|f| f.density().cardinality_distribution())
            .ok_or_else(|| PyValueError::new_err(format!("class {class_name:?} is not tracked")))
    }
}

fn summary_dict<'py>(py: Python<'py>, s: &MotSummary) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("amota", s.amota)?;
    d.set_item("amotp", s.amotp)?;
    d.set_item("mota", s.mota)?;
    d.set_item("motp", s.motp)?;
    d.set_item("recall", s.recall)?;
    d.set_item("mt", s.mt)?;
    d.set_item("ml", s.ml)?;
    d.set_item("tp", s.tp)?;
    d.set_item("fp", s.fp)?;
    d.set_item("fn", s.fn_)?;
    d.set_item("ids", s.ids)?;
    d.set_item("gt", s.gt)?;
    Ok(d)
}

/// Simulates the configured scenario and writes `detections.ndjson`,
/// `calibration.json` and `gt.ndjson` into `out_dir`. Returns the step count.
#[pyfunction]
#[pyo3(signature = (config, out_dir, seed = None))]
fn simulate(config: &PyConfig, out_dir: PathBuf, seed: Option<u64>) -> PyResult<usize> {
    let mut scenario = config.inner.scenario.clone();
    if let Some(s) = seed {
        scenario.seed = s;
    }
    let sim = pipeline::simulate_scenario(&scenario).map_err(to_py)?;
    std::fs::create_dir_all(&out_dir).map_err(|e| PyIOError::new_err(e.to_string()))?;
    io::write_ndjson(&out_dir.join("detections.ndjson"), &io::frames_to_records(&sim.frames, &sim.calibration)).map_err(to_py)?;
    io::write_calibration(&out_dir.join("calibration.json"), &sim.calibration).map_err(to_py)?;
    io::write_ndjson(&out_dir.join("gt.ndjson"), &io::truth_to_records(&sim.truth)).map_err(to_py)?;
    Ok(sim.frames.len())
}

/// Tracks a detection file and writes the track file; returns the number
/// of track records written.
#[pyfunction]
#[pyo3(signature = (config, detections, calibration, out, mode = "fused"))]
fn track_file(config: &PyConfig, detections: PathBuf, calibration: PathBuf, out: PathBuf, mode: &str) -> PyResult<usize> {
    let mode = parse_mode(mode)?;
    let (calib, frames) = io::ingest(&detections, &calibration).map_err(to_py)?;
    let estimates = pipeline::run_tracker(&config.inner, &calib, &frames, mode).map_err(to_py)?;
    io::emit_tracks(&estimates, &out).map_err(to_py)?;
    Ok(estimates.iter().map(Vec::len).sum())
}

/// Scores a track file against a ground-truth file. Returns a dict with
/// an `overall` summary and one summary per class.
#[pyfunction]
#[pyo3(signature = (gt, tracks, radius = 2.0, recall_points = 40))]
fn evaluate_files<'py>(py: Python<'py>, gt: PathBuf, tracks: PathBuf, radius: f64, recall_points: usize) -> PyResult<Bound<'py, PyDict>> {
    let gt: Vec<GtRecord> = io::read_ndjson(&gt).map_err(to_py)?;
    let tracks: Vec<TrackRecord> = io::read_ndjson(&tracks).map_err(to_py)?;
    let frames = io::eval_frames(&gt, &tracks).map_err(PyValueError::new_err)?;
    let eval = evaluate(&frames, recall_points, radius).map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("overall", summary_dict(py, &eval.overall)?)?;
    let per_class = PyDict::new(py);
    for (c, s) in &eval.per_class {
        per_class.set_item(c.to_string(), summary_dict(py, s)?)?;
    }
    out.set_item("per_class", per_class)?;
    Ok(out)
}

/// `(F, b, Q)` of the motion model as nested lists.
#[pyfunction]
#[pyo3(signature = (dt = 0.5, nu_zeta = [0.0036, 0.0036, 0.0004], nu_rho = [0.0225, 0.0225, 0.0225]))]
fn transition(dt: f64, nu_zeta: [f64; 3], nu_rho: [f64; 3]) -> PyResult<(Vec<Vec<f64>>, Vec<f64>, Vec<Vec<f64>>)> {
    let cfg = MotionConfig { dt, nu_zeta, nu_rho };
    cfg.validate().map_err(to_py)?;
    let tr = build_transition(&cfg);
    let rows = |m: &msglmb::geometry::StateMatrix| (0..9).map(|i| (0..9).map(|j| m[(i, j)]).collect()).collect();
    Ok((rows(&tr.f), tr.b.iter().copied().collect(), rows(&tr.q)))
}

/// Runs the command-line interface with `argv` (without the program name)
/// and returns its exit code.
#[pyfunction]
fn run_cli(argv: Vec<String>) -> i32 {
    pipeline::run_command(std::iter::once("msglmb".to_owned()).chain(argv))
}

#[pymodule]
fn msglmb_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PyCalibration>()?;
    m.add_class::<PyCameraDetection>()?;
    m.add_class::<PyLidarDetection>()?;
    m.add_class::<PyTrack>()?;
    m.add_class::<PyTracker>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(track_file, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_files, m)?)?;
    m.add_function(wrap_pyfunction!(transition, m)?)?;
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    m.add("CLASSES", ObjectClass::ALL.iter().map(|c| c.to_string()).collect::<Vec<_>>())?;
    Ok(())
}
