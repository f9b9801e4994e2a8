//! Newline-delimited JSON records for detections, tracks and ground truth,
//! plus the calibration document.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::{Matrix3x4, Vector3};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::filter::TrackEstimate;
use crate::geometry::{BBox2D, CameraModel, Label};
use crate::metrics::{EstObject, EvalFrame, GtObject};
use crate::sensors::{CameraMeasurement, LidarMeasurement, ObjectClass, SensorFrame};
use crate::sim::GroundTruth;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraRecord {
    pub frame: u64,
    /// Camera name from the calibration file.
    pub sensor: String,
    pub class: ObjectClass,
    pub score: f64,
    /// `[x1, y1, x2, y2]` in pixels.
    pub bbox: [f64; 4],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LidarRecord {
    pub frame: u64,
    /// Always `"lidar"`.
    pub sensor: String,
    pub class: ObjectClass,
    pub score: f64,
    pub center: [f64; 3],
    /// `[w, l, h]` in metres.
    pub size: [f64; 3],
    pub yaw: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DetectionRecord {
    Camera(CameraRecord),
    Lidar(LidarRecord),
}

impl DetectionRecord {
    pub fn frame(&self) -> u64 {
        match self {
            DetectionRecord::Camera(r) => r.frame,
            DetectionRecord::Lidar(r) => r.frame,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackRecord {
    pub frame: u64,
    pub class: ObjectClass,
    /// `"k-tau"`.
    pub label: String,
    pub center: [f64; 3],
    pub size: [f64; 3],
    pub velocity: [f64; 3],
    pub existence: f64,
}

impl TrackRecord {
    pub fn from_estimate(frame: u64, e: &TrackEstimate) -> Self {
        Self {
            frame,
            class: e.class,
            label: e.label.to_string(),
            center: e.center.into(),
            size: e.dims.into(),
            velocity: e.velocity.into(),
            existence: e.existence,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GtRecord {
    pub frame: u64,
    pub id: u64,
    pub class: ObjectClass,
    pub center: [f64; 3],
    pub size: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationCamera {
    pub name: String,
    /// Row-major 3x4 world-to-pixel projection.
    pub projection: [f64; 12],
    pub width: f64,
    pub height: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationLidar {
    pub range_m: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Calibration {
    pub cameras: Vec<CalibrationCamera>,
    pub lidar: CalibrationLidar,
}

impl Calibration {
    pub fn from_cameras(cameras: &[CameraModel], lidar_range: f64) -> Self {
        Self {
            cameras: cameras
                .iter()
                .map(|c| CalibrationCamera {
                    name: c.name.clone(),
                    projection: std::array::from_fn(|i| c.projection[(i / 4, i % 4)]),
                    width: c.width,
                    height: c.height,
                })
                .collect(),
            lidar: CalibrationLidar { range_m: lidar_range },
        }
    }

    pub fn camera_models(&self) -> Result<Vec<CameraModel>> {
        self.cameras
            .iter()
            .map(|c| CameraModel::new(c.name.clone(), Matrix3x4::from_row_slice(&c.projection), c.width, c.height))
            .collect()
    }
}

fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        message: message.into(),
    }
}

/// Raw JSON objects with their line numbers, after checking
/// `schema_version` (which is removed) and that `frame` never decreases.
fn read_values(path: &Path) -> Result<Vec<(usize, Value)>> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    let mut last_frame = 0u64;
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let n = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut value: Value = serde_json::from_str(&line).map_err(|e| parse_error(path, n, e.to_string()))?;
        let obj = value
            .as_object_mut()
            .ok_or_else(|| parse_error(path, n, "record is not a JSON object"))?;
        let version = obj
            .remove("schema_version")
            .ok_or_else(|| parse_error(path, n, "missing field `schema_version`"))?;
        let found = version
            .as_u64()
            .ok_or_else(|| parse_error(path, n, "`schema_version` must be an integer"))?;
        if found != SCHEMA_VERSION as u64 {
            return Err(Error::SchemaVersionMismatch {
                path: path.display().to_string(),
                line: n,
                found: found.min(u32::MAX as u64) as u32,
                expected: SCHEMA_VERSION,
            });
        }
        if let Some(frame) = obj.get("frame").and_then(Value::as_u64) {
            if frame < last_frame {
                return Err(parse_error(path, n, format!("frame {frame} after frame {last_frame}")));
            }
            last_frame = frame;
        }
        out.push((n, value));
    }
    Ok(out)
}

/// Reads one record per non-blank line.
pub fn read_ndjson<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    read_values(path)?
        .into_iter()
        .map(|(n, v)| T::deserialize(v).map_err(|e| parse_error(path, n, e.to_string())))
        .collect()
}

pub fn write_ndjson<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        let mut value = serde_json::to_value(r).map_err(|e| parse_error(path, 0, e.to_string()))?;
        if let Value::Object(obj) = &mut value {
            obj.insert("schema_version".into(), SCHEMA_VERSION.into());
        }
        serde_json::to_writer(&mut w, &value).map_err(|e| parse_error(path, 0, e.to_string()))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Detection records; lines whose `sensor` is `"lidar"` are LiDAR boxes,
/// everything else is a camera box.
pub fn read_detections(path: &Path) -> Result<Vec<DetectionRecord>> {
    read_values(path)?
        .into_iter()
        .map(|(n, v)| {
            let r = if v.get("sensor").and_then(Value::as_str) == Some("lidar") {
                LidarRecord::deserialize(v).map(DetectionRecord::Lidar)
            } else {
                CameraRecord::deserialize(v).map(DetectionRecord::Camera)
            };
            r.map_err(|e| parse_error(path, n, e.to_string()))
        })
        .collect()
}

pub fn read_calibration(path: &Path) -> Result<Calibration> {
    let text = std::fs::read_to_string(path)?;
    let mut value: Value = serde_json::from_str(&text).map_err(|e| parse_error(path, e.line(), e.to_string()))?;
    if let Some(obj) = value.as_object_mut() {
        if let Some(v) = obj.remove("schema_version") {
            if v.as_u64() != Some(SCHEMA_VERSION as u64) {
                return Err(Error::SchemaVersionMismatch {
                    path: path.display().to_string(),
                    line: 1,
                    found: v.as_u64().unwrap_or(0).min(u32::MAX as u64) as u32,
                    expected: SCHEMA_VERSION,
                });
            }
        }
    }
    let calib = Calibration::deserialize(value).map_err(|e| parse_error(path, 1, e.to_string()))?;
    calib.camera_models().map_err(|e| parse_error(path, 1, e.to_string()))?;
    if !(calib.lidar.range_m > 0.0) {
        return Err(parse_error(path, 1, "lidar.range_m must be > 0"));
    }
    Ok(calib)
}

pub fn write_calibration(path: &Path, calib: &Calibration) -> Result<()> {
    let mut value = serde_json::to_value(calib).map_err(|e| parse_error(path, 0, e.to_string()))?;
    if let Value::Object(obj) = &mut value {
        obj.insert("schema_version".into(), SCHEMA_VERSION.into());
    }
    let text = serde_json::to_string_pretty(&value).map_err(|e| parse_error(path, 0, e.to_string()))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

/// Sensor frames for every step `0..=last frame`. Every sensor is taken to
/// have reported at every step, possibly with no detections.
pub fn records_to_frames(records: &[DetectionRecord], calib: &Calibration) -> std::result::Result<Vec<Vec<SensorFrame>>, String> {
    let index: BTreeMap<&str, usize> = calib.cameras.iter().enumerate().map(|(i, c)| (c.name.as_str(), i)).collect();
    let n_steps = records.iter().map(|r| r.frame() + 1).max().unwrap_or(0) as usize;
    let mut cams: Vec<Vec<Vec<CameraMeasurement>>> = vec![vec![Vec::new(); calib.cameras.len()]; n_steps];
    let mut lidar: Vec<Vec<LidarMeasurement>> = vec![Vec::new(); n_steps];
    for r in records {
        match r {
            DetectionRecord::Camera(c) => {
                let cam = *index
                    .get(c.sensor.as_str())
                    .ok_or_else(|| format!("frame {}: unknown sensor {:?}", c.frame, c.sensor))?;
                let [x1, y1, x2, y2] = c.bbox;
                let bbox = BBox2D::from_corners(x1, y1, x2, y2)
                    .ok_or_else(|| format!("frame {}: degenerate bbox {:?}", c.frame, c.bbox))?;
                cams[c.frame as usize][cam].push(CameraMeasurement {
                    bbox,
                    score: c.score,
                    class: c.class,
                    camera: cam,
                });
            }
            DetectionRecord::Lidar(l) => {
                if l.size.iter().any(|s| !(*s > 0.0)) {
                    return Err(format!("frame {}: lidar size must be positive", l.frame));
                }
                lidar[l.frame as usize].push(LidarMeasurement {
                    center: Vector3::from(l.center),
                    log_dims: Vector3::from(l.size).map(f64::ln),
                    score: l.score,
                    class: l.class,
                    yaw: l.yaw,
                });
            }
        }
    }
    Ok(cams
        .into_iter()
        .zip(lidar)
        .map(|(cs, l)| {
            let mut frames: Vec<SensorFrame> = cs
                .into_iter()
                .enumerate()
                .map(|(camera, detections)| SensorFrame::Camera { camera, detections })
                .collect();
            frames.push(SensorFrame::Lidar(l));
            frames
        })
        .collect())
}

/// Inverse of [`records_to_frames`].
pub fn frames_to_records(frames: &[Vec<SensorFrame>], calib: &Calibration) -> Vec<DetectionRecord> {
    let mut out = Vec::new();
    for (k, step) in frames.iter().enumerate() {
        for f in step {
            match f {
                SensorFrame::Camera { camera, detections } => out.extend(detections.iter().map(|d| {
                    DetectionRecord::Camera(CameraRecord {
                        frame: k as u64,
                        sensor: calib.cameras[*camera].name.clone(),
                        class: d.class,
                        score: d.score,
                        bbox: d.bbox.corners(),
                    })
                })),
                SensorFrame::Lidar(dets) => out.extend(dets.iter().map(|d| {
                    DetectionRecord::Lidar(LidarRecord {
                        frame: k as u64,
                        sensor: "lidar".into(),
                        class: d.class,
                        score: d.score,
                        center: d.center.into(),
                        size: d.log_dims.map(f64::exp).into(),
                        yaw: d.yaw,
                    })
                })),
            }
        }
    }
    out
}

/// Reads a detection file and its calibration into per-step sensor frames.
pub fn ingest(detections: &Path, calibration: &Path) -> Result<(Calibration, Vec<Vec<SensorFrame>>)> {
    let calib = read_calibration(calibration)?;
    let records = read_detections(detections)?;
    let frames = records_to_frames(&records, &calib).map_err(|m| parse_error(detections, 0, m))?;
    Ok((calib, frames))
}

/// One record per estimate; the outer index is the frame.
pub fn estimates_to_records(estimates: &[Vec<TrackEstimate>]) -> Vec<TrackRecord> {
    estimates
        .iter()
        .enumerate()
        .flat_map(|(k, es)| es.iter().map(move |e| TrackRecord::from_estimate(k as u64, e)))
        .collect()
}

pub fn emit_tracks(estimates: &[Vec<TrackEstimate>], path: &Path) -> Result<()> {
    write_ndjson(path, &estimates_to_records(estimates))
}

pub fn truth_to_records(truth: &GroundTruth) -> Vec<GtRecord> {
    truth
        .steps
        .iter()
        .enumerate()
        .flat_map(|(k, objs)| {
            objs.iter().map(move |o| GtRecord {
                frame: k as u64,
                id: o.id,
                class: o.class,
                center: o.center.into(),
                size: o.dims.into(),
            })
        })
        .collect()
}

/// Joins ground truth and tracks frame by frame. Existence becomes the
/// confidence of each estimate.
pub fn eval_frames(gt: &[GtRecord], tracks: &[TrackRecord]) -> std::result::Result<Vec<EvalFrame>, String> {
    let n = gt
        .iter()
        .map(|g| g.frame + 1)
        .chain(tracks.iter().map(|t| t.frame + 1))
        .max()
        .unwrap_or(0) as usize;
    let mut frames = vec![EvalFrame::default(); n];
    for g in gt {
        frames[g.frame as usize].gt.push(GtObject {
            id: g.id,
            class: g.class,
            center: Vector3::from(g.center),
            dims: Vector3::from(g.size),
        });
    }
    for t in tracks {
        let label: Label = t.label.parse()?;
        frames[t.frame as usize].est.push(EstObject {
            label,
            class: t.class,
            center: Vector3::from(t.center),
            dims: Vector3::from(t.size),
            confidence: Some(t.existence),
        });
    }
    Ok(frames)
}
