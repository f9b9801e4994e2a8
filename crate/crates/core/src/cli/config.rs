//! TOML configuration: tracker parameters, the synthetic scenario and the
//! ablation sweep.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dynamics::{MotionConfig, SurvivalConfig};
use crate::error::{Error, Result};
use crate::filter::{BirthSource, ClassModel, FilterConfig};
use crate::geometry::CameraModel;
use crate::sensors::{CameraNoise, ClutterConfig, DetectionConfig, LidarNoise, ObjectClass, SensorModel};
use crate::sim::{camera_clutter_volume, lidar_clutter_volume, ScenarioConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClutterRates {
    /// Expected false positives per camera per frame.
    pub camera_rate: f64,
    pub lidar_rate: f64,
}

impl Default for ClutterRates {
    fn default() -> Self {
        Self {
            camera_rate: 5.0,
            lidar_rate: 5.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackerSection {
    /// Classes that get a filter; detections of other classes are dropped.
    pub classes: Vec<ObjectClass>,
    /// Detections at or below this score are discarded.
    pub score_gate: f64,
    pub seed: u64,
    pub motion: MotionConfig,
    pub survival: SurvivalConfig,
    pub detection: DetectionConfig,
    pub clutter: ClutterRates,
    pub camera_noise: BTreeMap<ObjectClass, CameraNoise>,
    pub lidar_noise: BTreeMap<ObjectClass, LidarNoise>,
    pub filter: FilterConfig,
}

impl Default for TrackerSection {
    fn default() -> Self {
        Self {
            classes: ObjectClass::ALL.to_vec(),
            score_gate: 0.47,
            seed: 0,
            motion: MotionConfig::default(),
            survival: SurvivalConfig::default(),
            detection: DetectionConfig::default(),
            clutter: ClutterRates::default(),
            camera_noise: ObjectClass::ALL.iter().map(|c| (*c, CameraNoise::for_class(*c))).collect(),
            lidar_noise: ObjectClass::ALL.iter().map(|c| (*c, LidarNoise::for_class(*c))).collect(),
            filter: FilterConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    pub radius: f64,
    pub recall_points: usize,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            radius: 2.0,
            recall_points: 40,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationConfig {
    /// Scenario seeds run by `ablate`.
    pub seeds: Vec<u64>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            seeds: (0..5).collect(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackerConfig {
    pub tracker: TrackerSection,
    pub metrics: MetricsConfig,
    pub scenario: ScenarioConfig,
    pub ablation: AblationConfig,
}

/// Which sensors the tracker is allowed to use.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SensorMode {
    Fused,
    CameraOnly,
    LidarOnly,
}

impl std::str::FromStr for SensorMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "fused" => Ok(SensorMode::Fused),
            "camera-only" => Ok(SensorMode::CameraOnly),
            "lidar-only" => Ok(SensorMode::LidarOnly),
            _ => Err(format!("unknown mode {s:?} (fused, camera-only, lidar-only)")),
        }
    }
}

impl SensorMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            SensorMode::Fused => "fused",
            SensorMode::CameraOnly => "camera-only",
            SensorMode::LidarOnly => "lidar-only",
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        let t = &self.tracker;
        let bad = |m: String| Err(Error::InvalidConfig(m));
        t.motion.validate()?;
        t.survival.validate()?;
        t.detection.validate()?;
        t.filter.validate()?;
        if !(0.0..=1.0).contains(&t.score_gate) {
            return bad("score_gate must be in [0, 1]".into());
        }
        if !(t.clutter.camera_rate >= 0.0 && t.clutter.lidar_rate >= 0.0) {
            return bad("clutter rates must be >= 0".into());
        }
        for class in ObjectClass::ALL {
            let (Some(c), Some(l)) = (t.camera_noise.get(&class), t.lidar_noise.get(&class)) else {
                return bad(format!("noise tables must cover class {class}"));
            };
            if c.variances().iter().chain(l.variances().iter()).any(|v| !(*v > 0.0)) {
                return bad(format!("noise variances for {class} must be > 0"));
            }
        }
        if !(self.metrics.radius > 0.0) {
            return bad("metrics radius must be > 0".into());
        }
        self.scenario.validate()
    }

    /// Per-class filter models for a given camera rig and LiDAR range.
    pub fn class_models(
        &self,
        cameras: &[CameraModel],
        lidar_range: f64,
        mode: SensorMode,
    ) -> Result<BTreeMap<ObjectClass, ClassModel>> {
        let t = &self.tracker;
        let mut detection = t.detection.clone();
        detection.lidar_range = lidar_range;
        let camera_clutter: Vec<ClutterConfig> = cameras
            .iter()
            .map(|c| ClutterConfig {
                rate: t.clutter.camera_rate,
                region_volume: camera_clutter_volume(c.width, c.height),
            })
            .collect();
        let lidar_clutter = ClutterConfig {
            rate: t.clutter.lidar_rate,
            region_volume: lidar_clutter_volume(lidar_range),
        };
        let mut filter = t.filter.clone();
        match mode {
            SensorMode::CameraOnly => filter.birth_source = BirthSource::Camera,
            SensorMode::LidarOnly | SensorMode::Fused => {
                if filter.birth_source == BirthSource::Camera {
                    filter.birth_source = BirthSource::Lidar;
                }
            }
        }
        t.classes
            .iter()
            .map(|class| {
                let sensors = SensorModel {
                    cameras: cameras.to_vec(),
                    camera_noise: t.camera_noise[class].clone(),
                    lidar_noise: t.lidar_noise[class].clone(),
                    detection: detection.clone(),
                    camera_clutter: camera_clutter.clone(),
                    lidar_clutter,
                };
                Ok((
                    *class,
                    ClassModel {
                        motion: t.motion.clone(),
                        survival: t.survival.clone(),
                        sensors,
                        filter: filter.clone(),
                    },
                ))
            })
            .collect()
    }
}

/// Reads and validates a TOML configuration file.
pub fn load_config(path: &Path) -> Result<TrackerConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config(&text, &path.display().to_string())
}

pub fn parse_config(text: &str, origin: &str) -> Result<TrackerConfig> {
    let cfg: TrackerConfig = toml::from_str(text).map_err(|e| {
        let line = e
            .span()
            .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1)
            .unwrap_or(0);
        Error::Parse {
            path: origin.to_string(),
            line,
            message: e.message().to_string(),
        }
    })?;
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn default_file() -> std::path::PathBuf {
        Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.toml")
    }

    #[test]
    fn default_file_is_the_default_config() {
        assert_eq!(load_config(&default_file()).unwrap(), TrackerConfig::default());
    }

    #[test]
    fn defaults_carry_the_published_parameters() {
        let t = TrackerConfig::default().tracker;
        assert_eq!(t.motion.dt, 0.5);
        assert_eq!(t.motion.nu_zeta, [0.0036, 0.0036, 0.0004]);
        assert_eq!(t.motion.nu_rho, [0.0225; 3]);
        assert_eq!(t.score_gate, 0.47);
        for class in ObjectClass::ALL {
            let c = &t.camera_noise[&class];
            assert_eq!(c.nu_p, [400.0, 400.0]);
            let expected = if class == ObjectClass::Pedestrian { [0.00995, 0.0025] } else { [0.0025, 0.00995] };
            assert_eq!(c.nu_e, expected, "{class}");
        }
        let table: [(ObjectClass, [f64; 6]); 7] = [
            (ObjectClass::Pedestrian, [0.1, 0.1, 0.1, 0.005, 0.005, 0.005]),
            (ObjectClass::Car, [2.0, 2.0, 2.0, 0.405, 0.405, 0.405]),
            (ObjectClass::Truck, [2.0, 2.0, 2.0, 0.405, 0.405, 0.405]),
            (ObjectClass::Bus, [2.0, 2.0, 2.0, 0.405, 0.405, 0.405]),
            (ObjectClass::Trailer, [2.0, 2.0, 2.0, 0.405, 0.405, 0.405]),
            (ObjectClass::Motorcycle, [0.5, 0.5, 0.5, 0.005, 0.405, 0.005]),
            (ObjectClass::Bicycle, [0.5, 0.5, 0.5, 0.005, 0.405, 0.005]),
        ];
        for (class, v) in table {
            assert_eq!(t.lidar_noise[&class].variances().as_slice(), &v, "{class}");
        }
    }

    #[test]
    fn empty_file_means_defaults() {
        assert_eq!(parse_config("", "x").unwrap(), TrackerConfig::default());
        let cfg = parse_config("[tracker]\nscore_gate = 0.5\n[tracker.filter]\ngate = 30.0\n", "x").unwrap();
        assert_eq!(cfg.tracker.score_gate, 0.5);
        assert_eq!(cfg.tracker.filter.gate, 30.0);
        assert_eq!(cfg.tracker.filter.r_b_max, FilterConfig::default().r_b_max);
    }

    #[test]
    fn unknown_keys_are_rejected_with_a_line() {
        match parse_config("[tracker]\nscore_gate = 0.5\nscore_gat = 0.4\n", "cfg.toml") {
            Err(Error::Parse { path, line, message }) => {
                assert_eq!(path, "cfg.toml");
                assert_eq!(line, 3);
                assert!(message.contains("score_gat"), "{message}");
            }
            other => panic!("{other:?}"),
        }
        assert!(parse_config("[tracker.filter]\nbogus = 1\n", "x").unwrap_err().is_parse_error());
        assert!(parse_config("[tracker]\nclasses = [\"boat\"]\n", "x").unwrap_err().is_parse_error());
    }

    #[test]
    fn invalid_values_are_rejected() {
        for text in [
            "[tracker.motion]\nnu_rho = [0.0, 0.1, 0.1]\n",
            "[tracker]\nscore_gate = 1.5\n",
            "[tracker.filter]\ngibbs_beta = 0.0\n",
            "[metrics]\nradius = 0.0\n",
            "[scenario]\nrig = \"kitti\"\n",
        ] {
            assert!(matches!(parse_config(text, "x"), Err(Error::InvalidConfig(_))), "{text}");
        }
        let mut cfg = TrackerConfig::default();
        cfg.tracker.lidar_noise.remove(&ObjectClass::Bus);
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn class_models_follow_the_mode() {
        let cfg = TrackerConfig::default();
        let cams = cfg.scenario.rig.cameras().unwrap();
        let models = cfg.class_models(&cams, 40.0, SensorMode::Fused).unwrap();
        assert_eq!(models.len(), 7);
        let car = &models[&ObjectClass::Car];
        assert_eq!(car.filter.birth_source, BirthSource::Lidar);
        assert_eq!(car.sensors.detection.lidar_range, 40.0);
        assert_eq!(car.sensors.camera_clutter.len(), 6);
        assert_eq!(car.sensors.lidar_noise, LidarNoise::for_class(ObjectClass::Car));
        let cam_only = cfg.class_models(&cams, 40.0, SensorMode::CameraOnly).unwrap();
        assert_eq!(cam_only[&ObjectClass::Car].filter.birth_source, BirthSource::Camera);
    }
}
