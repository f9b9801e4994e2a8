//! Synthetic scenes: ground-truth trajectories, camera rigs, a range-limited
//! LiDAR and noisy detector outputs with misses and clutter.

use nalgebra::{Matrix3, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::dynamics::{build_transition, sample_transition, Aabb, MotionConfig};
use crate::error::{Error, Result};
use crate::filter::mix_seed;
use crate::geometry::{compose_state, position, project_ellipsoid, project_point, velocity, BBox2D, CameraModel};
use crate::sensors::{CameraMeasurement, CameraNoise, LidarMeasurement, LidarNoise, ObjectClass, SensorFrame};

/// Log-extent range (pixels) of simulated camera clutter boxes.
pub const CAMERA_CLUTTER_LOG_EXTENT: [f64; 2] = [2.079_441_541_679_835_7, 5.991_464_547_107_982];
/// Log-dimension range (metres) of simulated LiDAR clutter boxes.
pub const LIDAR_CLUTTER_LOG_DIMS: [f64; 2] = [-1.203_972_804_325_935_9, 2.708_050_201_102_210_3];
/// Height band (metres) of simulated LiDAR clutter centres.
pub const LIDAR_CLUTTER_Z: [f64; 2] = [-1.0, 2.0];

/// Clutter volume of one camera in `[u, v, log w, log h]` space.
pub fn camera_clutter_volume(width: f64, height: f64) -> f64 {
    let span = CAMERA_CLUTTER_LOG_EXTENT[1] - CAMERA_CLUTTER_LOG_EXTENT[0];
    width * height * span * span
}

/// Clutter volume of a LiDAR of range `range` in `[x, y, z, log w, log l, log h]` space.
pub fn lidar_clutter_volume(range: f64) -> f64 {
    let span = LIDAR_CLUTTER_LOG_DIMS[1] - LIDAR_CLUTTER_LOG_DIMS[0];
    std::f64::consts::PI * range * range * (LIDAR_CLUTTER_Z[1] - LIDAR_CLUTTER_Z[0]) * span.powi(3)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraSpec {
    pub name: String,
    /// Yaw of the optical axis, degrees counter-clockwise from +x.
    pub heading_deg: f64,
    pub fov_deg: f64,
    pub position: [f64; 3],
    pub width: f64,
    pub height: f64,
}

impl CameraSpec {
    /// Level pinhole camera with square pixels and a centred principal point.
    pub fn build(&self) -> Result<CameraModel> {
        if !(self.fov_deg > 0.0 && self.fov_deg < 180.0) {
            return Err(Error::InvalidCamera(format!("{}: fov must be in (0, 180)", self.name)));
        }
        let f = 0.5 * self.width / (0.5 * self.fov_deg.to_radians()).tan();
        let k = Matrix3::new(f, 0.0, 0.5 * self.width, 0.0, f, 0.5 * self.height, 0.0, 0.0, 1.0);
        let (s, c) = self.heading_deg.to_radians().sin_cos();
        let r = Matrix3::new(s, -c, 0.0, 0.0, 0.0, -1.0, c, s, 0.0);
        CameraModel::from_pose(self.name.clone(), k, r, Vector3::from(self.position), self.width, self.height)
    }
}

/// Six cameras around a roof-mounted point: 70° views at 0°, ±55°, ±110°
/// and a 110° rear view.
pub fn nuscenes_rig() -> Vec<CameraSpec> {
    let cams = [
        ("CAM_FRONT", 0.0, 70.0),
        ("CAM_FRONT_LEFT", 55.0, 70.0),
        ("CAM_FRONT_RIGHT", -55.0, 70.0),
        ("CAM_BACK_LEFT", 110.0, 70.0),
        ("CAM_BACK_RIGHT", -110.0, 70.0),
        ("CAM_BACK", 180.0, 110.0),
    ];
    cams.iter()
        .map(|(name, heading, fov)| CameraSpec {
            name: name.to_string(),
            heading_deg: *heading,
            fov_deg: *fov,
            position: [0.0, 0.0, 1.5],
            width: 1600.0,
            height: 900.0,
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RigSpec {
    Preset(String),
    Cameras(Vec<CameraSpec>),
}

impl RigSpec {
    pub fn specs(&self) -> Result<Vec<CameraSpec>> {
        match self {
            RigSpec::Preset(name) if name == "nuscenes-rig" => Ok(nuscenes_rig()),
            RigSpec::Preset(name) => Err(Error::InvalidConfig(format!("unknown rig preset {name:?}"))),
            RigSpec::Cameras(c) => Ok(c.clone()),
        }
    }

    pub fn cameras(&self) -> Result<Vec<CameraModel>> {
        self.specs()?.iter().map(CameraSpec::build).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TruthModel {
    /// Kinematics sampled from the filter's own transition.
    Matched,
    /// Noise-free constant velocity.
    ConstantVelocity,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub n_objects: usize,
    pub classes: Vec<ObjectClass>,
    pub scene_bounds: Aabb,
    /// Objects start within this distance of the ego...
    pub spawn_radius: f64,
    /// ...and at least this far from it.
    pub min_ego_distance: f64,
    pub duration_steps: usize,
    /// Objects are born uniformly in `[0, duration_steps * birth_window)`.
    pub birth_window: f64,
    pub initial_speed_sd: f64,
    /// Relative size jitter around the class-typical dimensions.
    pub size_jitter: f64,
    pub motion: MotionConfig,
    pub truth_model: TruthModel,
    pub rig: RigSpec,
    pub lidar_range: f64,
    pub p_d_camera: f64,
    pub p_d_lidar: f64,
    pub camera_clutter_rate: f64,
    pub lidar_clutter_rate: f64,
    /// Detector noise overrides; class defaults when absent.
    pub camera_noise: Option<CameraNoise>,
    pub lidar_noise: Option<LidarNoise>,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            n_objects: 10,
            classes: vec![ObjectClass::Car],
            scene_bounds: Aabb::default(),
            spawn_radius: 40.0,
            min_ego_distance: 5.0,
            duration_steps: 100,
            birth_window: 0.5,
            initial_speed_sd: 2.0,
            size_jitter: 0.1,
            motion: MotionConfig::default(),
            truth_model: TruthModel::Matched,
            rig: RigSpec::Preset("nuscenes-rig".into()),
            lidar_range: 50.0,
            p_d_camera: 0.9,
            p_d_lidar: 0.9,
            camera_clutter_rate: 5.0,
            lidar_clutter_rate: 5.0,
            camera_noise: None,
            lidar_noise: None,
            seed: 0,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        self.motion.validate()?;
        if self.classes.is_empty() {
            return bad("scenario needs at least one class");
        }
        if !(self.spawn_radius > self.min_ego_distance && self.min_ego_distance >= 0.0) {
            return bad("spawn_radius must exceed min_ego_distance >= 0");
        }
        if !(0.0..=1.0).contains(&self.birth_window) || !(0.0..1.0).contains(&self.size_jitter) {
            return bad("birth_window in [0, 1] and size_jitter in [0, 1)");
        }
        if ![self.p_d_camera, self.p_d_lidar].iter().all(|p| (0.0..=1.0).contains(p)) {
            return bad("detection probabilities must be in [0, 1]");
        }
        if !(self.camera_clutter_rate >= 0.0 && self.lidar_clutter_rate >= 0.0 && self.initial_speed_sd >= 0.0) {
            return bad("rates and speeds must be >= 0");
        }
        if !(self.lidar_range > 0.0) {
            return bad("lidar_range must be > 0");
        }
        self.rig.cameras()?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TruthObject {
    pub id: u64,
    pub class: ObjectClass,
    pub center: Vector3<f64>,
    /// Full dimensions `[w, l, h]`, constant over the object's life.
    pub dims: Vector3<f64>,
    pub velocity: Vector3<f64>,
}

/// Objects present at each step.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GroundTruth {
    pub steps: Vec<Vec<TruthObject>>,
}

/// One draw of the log-shape transition `ζ₊ = ζ - ν/2 + N(0, ν)`.
pub fn sample_shape_transition<R: Rng + ?Sized>(zeta: &Vector3<f64>, motion: &MotionConfig, rng: &mut R) -> Vector3<f64> {
    Vector3::from_fn(|i, _| {
        let nu = motion.nu_zeta[i];
        zeta[i] - nu / 2.0 + nu.sqrt() * rng.sample::<f64, _>(rand_distr::StandardNormal)
    })
}

/// Trajectories for `cfg.n_objects` objects. Horizontal kinematics follow
/// the truth model; height, vertical velocity and size stay fixed.
pub fn generate_truth(cfg: &ScenarioConfig) -> Result<GroundTruth> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 0));
    let tr = build_transition(&cfg.motion);
    let mut steps: Vec<Vec<TruthObject>> = vec![Vec::new(); cfg.duration_steps];
    let window = ((cfg.duration_steps as f64 * cfg.birth_window).floor() as usize).max(1);
    let speed = Normal::new(0.0, cfg.initial_speed_sd.max(0.0)).expect("finite sd");
    for id in 0..cfg.n_objects as u64 {
        let class = cfg.classes[rng.random_range(0..cfg.classes.len())];
        let typical = class.typical_size();
        let dims = Vector3::from_fn(|i, _| typical[i] * (1.0 + rng.random_range(-cfg.size_jitter..=cfg.size_jitter)));
        let born = rng.random_range(0..window);
        let r = rng.random_range(cfg.min_ego_distance..cfg.spawn_radius);
        let theta = rng.random_range(0.0..std::f64::consts::TAU);
        let pos = Vector3::new(r * theta.cos(), r * theta.sin(), 0.5 * dims[2]);
        let vel = Vector3::new(rng.sample(speed), rng.sample(speed), 0.0);
        let zeta = dims.map(|d| (d / 2.0).ln());
        let mut x = compose_state(&pos, &vel, &zeta);
        for k in born..cfg.duration_steps {
            if k > born {
                let mut next = match cfg.truth_model {
                    TruthModel::Matched => sample_transition(&x, &tr, &mut rng),
                    TruthModel::ConstantVelocity => tr.f * x,
                };
                next[4] = x[4];
                next[5] = 0.0;
                next.fixed_rows_mut::<3>(6).copy_from(&zeta);
                x = next;
            }
            let p = position(&x);
            if !cfg.scene_bounds.contains(&p) {
                break;
            }
            steps[k].push(TruthObject {
                id,
                class,
                center: p,
                dims,
                velocity: velocity(&x),
            });
        }
    }
    Ok(GroundTruth { steps })
}

/// Detector output for every step: one frame per camera then the LiDAR
/// frame. Deterministic in `(truth, cfg, seed)`.
pub fn render_detections(truth: &GroundTruth, cfg: &ScenarioConfig, seed: u64) -> Result<Vec<Vec<SensorFrame>>> {
    cfg.validate()?;
    let cameras = cfg.rig.cameras()?;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 1));
    let std_normal = rand_distr::StandardNormal;
    let n = |rng: &mut ChaCha8Rng| -> f64 { rng.sample(std_normal) };
    let cam_clutter = Poisson::new(cfg.camera_clutter_rate.max(1e-300)).expect("rate > 0");
    let lidar_clutter = Poisson::new(cfg.lidar_clutter_rate.max(1e-300)).expect("rate > 0");
    let mut out = Vec::with_capacity(truth.steps.len());
    for objects in &truth.steps {
        let mut frames = Vec::with_capacity(cameras.len() + 1);
        for (c, cam) in cameras.iter().enumerate() {
            let mut dets = Vec::new();
            for o in objects {
                let visible = project_point(cam, &o.center).is_ok_and(|px| cam.contains_pixel(&px));
                if !visible || !rng.random_bool(cfg.p_d_camera) {
                    continue;
                }
                let zeta = o.dims.map(|d| (d / 2.0).ln());
                let Ok(bb) = project_ellipsoid(cam, &o.center, &zeta) else {
                    continue;
                };
                let noise = cfg.camera_noise.clone().unwrap_or_else(|| CameraNoise::for_class(o.class));
                let v = noise.variances();
                let bbox = BBox2D {
                    center: bb.center + Vector2::new(v[0].sqrt() * n(&mut rng), v[1].sqrt() * n(&mut rng)),
                    log_extent: bb.log_extent + Vector2::new(v[2].sqrt() * n(&mut rng), v[3].sqrt() * n(&mut rng)),
                };
                dets.push(CameraMeasurement {
                    bbox,
                    score: rng.random_range(0.5..1.0),
                    class: o.class,
                    camera: c,
                });
            }
            let n_clutter = if cfg.camera_clutter_rate > 0.0 { rng.sample(cam_clutter) as usize } else { 0 };
            for _ in 0..n_clutter {
                let center = Vector2::new(rng.random_range(0.0..cam.width), rng.random_range(0.0..cam.height));
                let e = CAMERA_CLUTTER_LOG_EXTENT;
                let log_extent = Vector2::new(rng.random_range(e[0]..e[1]), rng.random_range(e[0]..e[1]));
                dets.push(CameraMeasurement {
                    bbox: BBox2D { center, log_extent },
                    score: rng.random_range(0.3..0.8),
                    class: cfg.classes[rng.random_range(0..cfg.classes.len())],
                    camera: c,
                });
            }
            frames.push(SensorFrame::Camera {
                camera: c,
                detections: dets,
            });
        }

        let mut dets = Vec::new();
        for o in objects {
            let in_range = o.center.norm() <= cfg.lidar_range;
            if !in_range || !rng.random_bool(cfg.p_d_lidar) {
                continue;
            }
            let noise = cfg.lidar_noise.clone().unwrap_or_else(|| LidarNoise::for_class(o.class));
            let v = noise.variances();
            let center = o.center + Vector3::from_fn(|i, _| v[i].sqrt() * n(&mut rng));
            let log_dims = o.dims.map(f64::ln) + Vector3::from_fn(|i, _| v[3 + i].sqrt() * n(&mut rng));
            dets.push(LidarMeasurement {
                center,
                log_dims,
                score: rng.random_range(0.5..1.0),
                class: o.class,
                yaw: o.velocity[1].atan2(o.velocity[0]),
            });
        }
        let n_clutter = if cfg.lidar_clutter_rate > 0.0 { rng.sample(lidar_clutter) as usize } else { 0 };
        for _ in 0..n_clutter {
            let r = cfg.lidar_range * rng.random::<f64>().sqrt();
            let theta = rng.random_range(0.0..std::f64::consts::TAU);
            let z = rng.random_range(LIDAR_CLUTTER_Z[0]..LIDAR_CLUTTER_Z[1]);
            let d = LIDAR_CLUTTER_LOG_DIMS;
            dets.push(LidarMeasurement {
                center: Vector3::new(r * theta.cos(), r * theta.sin(), z),
                log_dims: Vector3::from_fn(|_, _| rng.random_range(d[0]..d[1])),
                score: rng.random_range(0.3..0.8),
                class: cfg.classes[rng.random_range(0..cfg.classes.len())],
                yaw: rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
            });
        }
        frames.push(SensorFrame::Lidar(dets));
        out.push(frames);
    }
    Ok(out)
}
