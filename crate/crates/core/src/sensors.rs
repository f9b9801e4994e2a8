//! Camera and LiDAR measurement models: likelihoods, detection probability,
//! clutter intensity and score gating.

use std::fmt;
use std::str::FromStr;

use nalgebra::{SMatrix, SVector, Vector2, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    position, project_ellipsoid, project_point, shape, state_to_lidar_box, BBox2D, CameraModel, StateVector, POSITION,
    SHAPE, STATE_DIM,
};

/// Clutter intensity substituted when the configured rate is zero.
pub const KAPPA_FLOOR: f64 = 1e-12;

/// Central-difference step used to linearize the camera observation.
pub const CAMERA_JACOBIAN_STEP: f64 = 1e-5;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectClass {
    Pedestrian,
    Car,
    Truck,
    Bus,
    Trailer,
    Motorcycle,
    Bicycle,
}

impl ObjectClass {
    pub const ALL: [ObjectClass; 7] = [
        ObjectClass::Pedestrian,
        ObjectClass::Car,
        ObjectClass::Truck,
        ObjectClass::Bus,
        ObjectClass::Trailer,
        ObjectClass::Motorcycle,
        ObjectClass::Bicycle,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ObjectClass::Pedestrian => "pedestrian",
            ObjectClass::Car => "car",
            ObjectClass::Truck => "truck",
            ObjectClass::Bus => "bus",
            ObjectClass::Trailer => "trailer",
            ObjectClass::Motorcycle => "motorcycle",
            ObjectClass::Bicycle => "bicycle",
        }
    }

    /// Typical full dimensions `[w, l, h]` in metres.
    pub fn typical_size(&self) -> [f64; 3] {
        match self {
            ObjectClass::Pedestrian => [0.67, 0.73, 1.77],
            ObjectClass::Car => [1.95, 4.62, 1.73],
            ObjectClass::Truck => [2.51, 6.93, 2.84],
            ObjectClass::Bus => [2.94, 11.19, 3.47],
            ObjectClass::Trailer => [2.90, 12.29, 3.87],
            ObjectClass::Motorcycle => [0.77, 2.11, 1.47],
            ObjectClass::Bicycle => [0.60, 1.70, 1.28],
        }
    }
}

impl fmt::Display for ObjectClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ObjectClass {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        ObjectClass::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown object class {s:?}"))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LidarMeasurement {
    pub center: Vector3<f64>,
    pub log_dims: Vector3<f64>,
    pub score: f64,
    pub class: ObjectClass,
    /// Heading reported by the detector; carried through, never used.
    pub yaw: f64,
}

impl LidarMeasurement {
    pub fn as_vector(&self) -> SVector<f64, 6> {
        SVector::<f64, 6>::from_iterator(self.center.iter().chain(self.log_dims.iter()).copied())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CameraMeasurement {
    pub bbox: BBox2D,
    pub score: f64,
    pub class: ObjectClass,
    pub camera: usize,
}

pub trait Scored {
    fn score(&self) -> f64;
}

impl Scored for LidarMeasurement {
    fn score(&self) -> f64 {
        self.score
    }
}

impl Scored for CameraMeasurement {
    fn score(&self) -> f64 {
        self.score
    }
}

/// Keeps measurements whose score is strictly above `threshold`, in order.
pub fn gate_by_score<T: Scored + Clone>(frame: &[T], threshold: f64) -> Vec<T> {
    frame.iter().filter(|m| m.score() > threshold).cloned().collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LidarNoise {
    pub nu_p: [f64; 3],
    pub nu_e: [f64; 3],
}

impl LidarNoise {
    pub fn variances(&self) -> SVector<f64, 6> {
        SVector::<f64, 6>::from_iterator(self.nu_p.iter().chain(self.nu_e.iter()).copied())
    }

    /// Per-class defaults: larger objects get larger variances.
    pub fn for_class(class: ObjectClass) -> Self {
        match class {
            ObjectClass::Pedestrian => Self {
                nu_p: [0.1; 3],
                nu_e: [0.005; 3],
            },
            ObjectClass::Car | ObjectClass::Truck | ObjectClass::Bus | ObjectClass::Trailer => Self {
                nu_p: [2.0; 3],
                nu_e: [0.405; 3],
            },
            ObjectClass::Motorcycle | ObjectClass::Bicycle => Self {
                nu_p: [0.5; 3],
                nu_e: [0.005, 0.405, 0.005],
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraNoise {
    pub nu_p: [f64; 2],
    pub nu_e: [f64; 2],
}

impl CameraNoise {
    pub fn variances(&self) -> Vector4<f64> {
        Vector4::new(self.nu_p[0], self.nu_p[1], self.nu_e[0], self.nu_e[1])
    }

    pub fn for_class(class: ObjectClass) -> Self {
        match class {
            ObjectClass::Pedestrian => Self {
                nu_p: [400.0, 400.0],
                nu_e: [0.00995, 0.0025],
            },
            _ => Self {
                nu_p: [400.0, 400.0],
                nu_e: [0.0025, 0.00995],
            },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClutterConfig {
    /// Expected false positives per frame for the sensor.
    pub rate: f64,
    /// Volume of the measurement region where clutter is uniform.
    pub region_volume: f64,
}

impl ClutterConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rate >= 0.0 && self.region_volume > 0.0) {
            return Err(Error::InvalidConfig("clutter needs rate >= 0 and region_volume > 0".into()));
        }
        Ok(())
    }
}

/// Uniform clutter intensity. The measurement itself does not enter.
pub fn clutter_intensity(cfg: &ClutterConfig) -> f64 {
    cfg.rate / cfg.region_volume
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectionConfig {
    pub p_d_camera: f64,
    pub p_d_lidar: f64,
    pub lidar_range: f64,
    pub p_d_min: f64,
    /// LiDAR position used for the range test.
    #[serde(default)]
    pub lidar_origin: [f64; 3],
}

impl Default for DetectionConfig {
    fn default() -> Self {
        Self {
            p_d_camera: 0.9,
            p_d_lidar: 0.9,
            lidar_range: 50.0,
            p_d_min: 1e-4,
            lidar_origin: [0.0; 3],
        }
    }
}

impl DetectionConfig {
    pub fn validate(&self) -> Result<()> {
        let probs = [self.p_d_camera, self.p_d_lidar, self.p_d_min];
        if !probs.iter().all(|p| (0.0..=1.0).contains(p)) || !(self.lidar_range > 0.0) {
            return Err(Error::InvalidConfig("detection probabilities in [0,1] and lidar_range > 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
pub enum SensorRef<'a> {
    Camera(&'a CameraModel),
    Lidar,
}

/// Detection probability of `state`. `_context` is the rest of the
/// multi-object state; the default model ignores it (no occlusion).
pub fn detection_probability(
    sensor: SensorRef<'_>,
    state: &StateVector,
    _context: &[StateVector],
    cfg: &DetectionConfig,
) -> f64 {
    match sensor {
        SensorRef::Camera(cam) => match project_point(cam, &position(state)) {
            Ok(px) if cam.contains_pixel(&px) => cfg.p_d_camera,
            _ => cfg.p_d_min,
        },
        SensorRef::Lidar => {
            let origin = Vector3::from(cfg.lidar_origin);
            if (position(state) - origin).norm() <= cfg.lidar_range {
                cfg.p_d_lidar
            } else {
                cfg.p_d_min
            }
        }
    }
}

fn diag_gaussian_log_pdf<const N: usize>(residual: &SVector<f64, N>, variances: &SVector<f64, N>) -> f64 {
    let mut acc = 0.0;
    for i in 0..N {
        acc += LN_2PI + variances[i].ln() + residual[i] * residual[i] / variances[i];
    }
    -0.5 * acc
}

pub fn lidar_log_likelihood(z: &LidarMeasurement, state: &StateVector, noise: &LidarNoise) -> f64 {
    let (h, _) = lidar_observation(state);
    diag_gaussian_log_pdf(&(z.as_vector() - h), &noise.variances())
}

pub fn camera_log_likelihood(
    z: &CameraMeasurement,
    state: &StateVector,
    cam: &CameraModel,
    noise: &CameraNoise,
) -> Result<f64> {
    let bb = project_ellipsoid(cam, &position(state), &shape(state))?;
    Ok(diag_gaussian_log_pdf(&(z.bbox.as_vector() - bb.as_vector()), &noise.variances()))
}

pub type LidarJacobian = SMatrix<f64, 6, STATE_DIM>;
pub type CameraJacobian = SMatrix<f64, 4, STATE_DIM>;

/// Predicted LiDAR measurement and its (constant) Jacobian.
pub fn lidar_observation(state: &StateVector) -> (SVector<f64, 6>, LidarJacobian) {
    let (c, d) = state_to_lidar_box(state);
    let mut h = LidarJacobian::zeros();
    for i in 0..3 {
        h[(i, POSITION[i])] = 1.0;
        h[(3 + i, SHAPE[i])] = 1.0;
    }
    (SVector::<f64, 6>::from_iterator(c.iter().chain(d.iter()).copied()), h)
}

/// Predicted camera box `[u, v, log w, log h]` and its central-difference
/// Jacobian with respect to the state.
pub fn camera_observation(cam: &CameraModel, state: &StateVector) -> Result<(Vector4<f64>, CameraJacobian)> {
    let eval = |x: &StateVector| project_ellipsoid(cam, &position(x), &shape(x)).map(|b| b.as_vector());
    let h0 = eval(state)?;
    let mut jac = CameraJacobian::zeros();
    for k in 0..STATE_DIM {
        let mut plus = *state;
        let mut minus = *state;
        plus[k] += CAMERA_JACOBIAN_STEP;
        minus[k] -= CAMERA_JACOBIAN_STEP;
        let d = (eval(&plus)? - eval(&minus)?) / (2.0 * CAMERA_JACOBIAN_STEP);
        jac.set_column(k, &d);
    }
    Ok((h0, jac))
}

/// Projected centre of a state on a camera, if in front of it.
pub fn projected_center(cam: &CameraModel, state: &StateVector) -> Option<Vector2<f64>> {
    project_point(cam, &position(state)).ok()
}

/// Static description of the sensor suite used by one filter.
#[derive(Clone, Debug)]
pub struct SensorModel {
    pub cameras: Vec<CameraModel>,
    pub camera_noise: CameraNoise,
    pub lidar_noise: LidarNoise,
    pub detection: DetectionConfig,
    /// One clutter model per camera.
    pub camera_clutter: Vec<ClutterConfig>,
    pub lidar_clutter: ClutterConfig,
}

impl SensorModel {
    pub fn camera_kappa(&self, camera: usize) -> f64 {
        clutter_intensity(&self.camera_clutter[camera]).max(KAPPA_FLOOR)
    }

    pub fn lidar_kappa(&self) -> f64 {
        clutter_intensity(&self.lidar_clutter).max(KAPPA_FLOOR)
    }
}

/// One time step's measurements for one sensor.
#[derive(Clone, Debug, PartialEq)]
pub enum SensorFrame {
    Camera {
        camera: usize,
        detections: Vec<CameraMeasurement>,
    },
    Lidar(Vec<LidarMeasurement>),
}

/// All sensor data of one time step. `None` marks a sensor that did not
/// report, which is different from a sensor that reported nothing.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Scan {
    pub cameras: Vec<Option<Vec<CameraMeasurement>>>,
    pub lidar: Option<Vec<LidarMeasurement>>,
}

impl Scan {
    pub fn from_frames(frames: Vec<SensorFrame>, n_cameras: usize) -> Result<Self> {
        let mut scan = Scan {
            cameras: vec![None; n_cameras],
            lidar: None,
        };
        for frame in frames {
            match frame {
                SensorFrame::Camera { camera, detections } => {
                    let slot = scan
                        .cameras
                        .get_mut(camera)
                        .ok_or_else(|| Error::InvalidConfig(format!("camera index {camera} out of range")))?;
                    slot.get_or_insert_with(Vec::new).extend(detections);
                }
                SensorFrame::Lidar(d) => scan.lidar.get_or_insert_with(Vec::new).extend(d),
            }
        }
        Ok(scan)
    }

    pub fn is_empty_of_sensors(&self) -> bool {
        self.lidar.is_none() && self.cameras.iter().all(Option::is_none)
    }

    /// Measurements of one class only.
    pub fn for_class(&self, class: ObjectClass) -> Scan {
        Scan {
            cameras: self
                .cameras
                .iter()
                .map(|c| c.as_ref().map(|d| d.iter().filter(|m| m.class == class).cloned().collect()))
                .collect(),
            lidar: self
                .lidar
                .as_ref()
                .map(|d| d.iter().filter(|m| m.class == class).cloned().collect()),
        }
    }

    pub fn gated(&self, threshold: f64) -> Scan {
        Scan {
            cameras: self
                .cameras
                .iter()
                .map(|c| c.as_ref().map(|d| gate_by_score(d, threshold)))
                .collect(),
            lidar: self.lidar.as_ref().map(|d| gate_by_score(d, threshold)),
        }
    }

    pub fn without_lidar(&self) -> Scan {
        Scan {
            cameras: self.cameras.clone(),
            lidar: None,
        }
    }

    pub fn without_cameras(&self) -> Scan {
        Scan {
            cameras: vec![None; self.cameras.len()],
            lidar: self.lidar.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::compose_state;
    use approx::assert_relative_eq;
    use nalgebra::Matrix3x4;

    fn test_cam() -> CameraModel {
        let p = Matrix3x4::new(100.0, 0.0, 320.0, 0.0, 0.0, 100.0, 240.0, 0.0, 0.0, 0.0, 1.0, 0.0);
        CameraModel::new("test", p, 640.0, 480.0).unwrap()
    }

    fn oracle_diag_log_pdf(x: &[f64], mean: &[f64], var: &[f64]) -> f64 {
        x.iter()
            .zip(mean)
            .zip(var)
            .map(|((x, m), v)| {
                let pdf = (-(x - m).powi(2) / (2.0 * v)).exp() / (2.0 * std::f64::consts::PI * v).sqrt();
                pdf.ln()
            })
            .sum()
    }

    fn lidar_at(state: &StateVector, dc: [f64; 6]) -> LidarMeasurement {
        let (c, d) = state_to_lidar_box(state);
        LidarMeasurement {
            center: c + Vector3::new(dc[0], dc[1], dc[2]),
            log_dims: d + Vector3::new(dc[3], dc[4], dc[5]),
            score: 0.9,
            class: ObjectClass::Car,
            yaw: 0.0,
        }
    }

    #[test]
    fn lidar_likelihood_examples() {
        let noise = LidarNoise::for_class(ObjectClass::Car);
        let x = compose_state(&Vector3::new(3.0, -4.0, 0.5), &Vector3::zeros(), &Vector3::new(0.2, 0.8, 0.1));
        let z = lidar_at(&x, [0.0; 6]);
        let ll = lidar_log_likelihood(&z, &x, &noise);
        let zero = [0.0; 6];
        let var = [2.0, 2.0, 2.0, 0.405, 0.405, 0.405];
        assert_relative_eq!(ll, oracle_diag_log_pdf(&zero, &zero, &var), epsilon = 1e-12);
        assert_relative_eq!(ll, -5.198, epsilon = 1e-3);

        let one_sigma = lidar_at(&x, [0.0, 0.0, 0.0, 0.0, 0.405f64.sqrt(), 0.0]);
        assert_relative_eq!(lidar_log_likelihood(&one_sigma, &x, &noise), ll - 0.5, epsilon = 1e-12);

        let a = lidar_at(&x, [2f64.sqrt(), 0.0, 0.0, 0.0, 0.0, 0.0]);
        let b = lidar_at(&x, [0.0, 0.0, 0.0, 0.0, 0.0, -0.405f64.sqrt()]);
        assert_relative_eq!(
            lidar_log_likelihood(&a, &x, &noise),
            lidar_log_likelihood(&b, &x, &noise),
            epsilon = 1e-12
        );
    }

    #[test]
    fn camera_likelihood_examples() {
        let cam = test_cam();
        let noise = CameraNoise::for_class(ObjectClass::Pedestrian);
        let x = compose_state(&Vector3::new(0.5, 0.2, 12.0), &Vector3::zeros(), &Vector3::new(-0.5, -0.4, 0.3));
        let bb = project_ellipsoid(&cam, &position(&x), &shape(&x)).unwrap();
        let mut z = CameraMeasurement {
            bbox: bb,
            score: 0.8,
            class: ObjectClass::Pedestrian,
            camera: 0,
        };
        let ll = camera_log_likelihood(&z, &x, &cam, &noise).unwrap();
        let var = [400.0, 400.0, 0.00995, 0.0025];
        assert_relative_eq!(ll, oracle_diag_log_pdf(&[0.0; 4], &[0.0; 4], &var), epsilon = 1e-12);

        z.bbox.center[0] += 20.0;
        assert_relative_eq!(camera_log_likelihood(&z, &x, &cam, &noise).unwrap(), ll - 0.5, epsilon = 1e-12);

        let behind = compose_state(&Vector3::new(0.0, 0.0, -3.0), &Vector3::zeros(), &Vector3::zeros());
        assert!(matches!(
            camera_log_likelihood(&z, &behind, &cam, &noise),
            Err(Error::PointBehindCamera { .. })
        ));
    }

    #[test]
    fn detection_probability_examples() {
        let cam = test_cam();
        let cfg = DetectionConfig {
            p_d_camera: 0.9,
            p_d_lidar: 0.8,
            lidar_range: 50.0,
            p_d_min: 1e-4,
            lidar_origin: [0.0; 3],
        };
        let on_axis = compose_state(&Vector3::new(0.0, 0.0, 10.0), &Vector3::zeros(), &Vector3::zeros());
        assert_eq!(detection_probability(SensorRef::Camera(&cam), &on_axis, &[], &cfg), 0.9);
        let outside = compose_state(&Vector3::new(100.0, 0.0, 10.0), &Vector3::zeros(), &Vector3::zeros());
        assert_eq!(detection_probability(SensorRef::Camera(&cam), &outside, &[], &cfg), 1e-4);
        let at_range = compose_state(&Vector3::new(30.0, 40.0, 0.0), &Vector3::zeros(), &Vector3::zeros());
        assert_eq!(detection_probability(SensorRef::Lidar, &at_range, &[], &cfg), 0.8);
        let beyond = compose_state(&Vector3::new(30.0, 40.1, 0.0), &Vector3::zeros(), &Vector3::zeros());
        assert_eq!(detection_probability(SensorRef::Lidar, &beyond, &[], &cfg), 1e-4);
    }

    #[test]
    fn clutter_examples() {
        let c = ClutterConfig {
            rate: 5.0,
            region_volume: 100.0,
        };
        assert_relative_eq!(clutter_intensity(&c), 0.05);
        let none = ClutterConfig { rate: 0.0, ..c };
        assert_eq!(clutter_intensity(&none), 0.0);
        let double = ClutterConfig { rate: 10.0, ..c };
        assert_relative_eq!(clutter_intensity(&double), 2.0 * clutter_intensity(&c));
    }

    #[test]
    fn gating_examples() {
        let x = StateVector::zeros();
        let mut a = lidar_at(&x, [0.0; 6]);
        a.score = 0.5;
        let mut b = a.clone();
        b.score = 0.3;
        let kept = gate_by_score(&[a.clone(), b.clone()], 0.47);
        assert_eq!(kept, vec![a.clone()]);
        assert_eq!(gate_by_score(&[a.clone(), b.clone()], 0.0).len(), 2);
        assert!(gate_by_score::<LidarMeasurement>(&[], 0.47).is_empty());
    }

    #[test]
    fn camera_jacobian_matches_finite_difference_of_projection() {
        let cam = test_cam();
        let x = compose_state(&Vector3::new(1.0, -0.5, 15.0), &Vector3::new(1.0, 0.0, 0.0), &Vector3::new(0.1, 0.2, -0.3));
        let (h, jac) = camera_observation(&cam, &x).unwrap();
        // velocities do not enter the projection
        for k in [1, 3, 5] {
            assert!(jac.column(k).norm() < 1e-9);
        }
        let mut dx = StateVector::zeros();
        dx[0] = 1e-3;
        dx[4] = -2e-3;
        dx[7] = 1e-3;
        let (h2, _) = camera_observation(&cam, &(x + dx)).unwrap();
        assert!((h2 - h - jac * dx).norm() < 1e-4);
    }

    #[test]
    fn class_names_parse() {
        for c in ObjectClass::ALL {
            assert_eq!(c.as_str().parse::<ObjectClass>().unwrap(), c);
        }
        assert!("boat".parse::<ObjectClass>().unwrap_err().contains("boat"));
    }

    /// Riemann sum of the 6-dimensional density over a ±6σ box.
    #[test]
    fn lidar_likelihood_integrates_to_one() {
        let noise = LidarNoise {
            nu_p: [0.5, 1.0, 2.0],
            nu_e: [0.01, 0.05, 0.1],
        };
        let x = compose_state(&Vector3::new(1.0, 2.0, 0.3), &Vector3::zeros(), &Vector3::new(0.1, 0.5, -0.2));
        let (c, d) = state_to_lidar_box(&x);
        let mean: Vec<f64> = c.iter().chain(d.iter()).copied().collect();
        let sd: Vec<f64> = noise.variances().iter().map(|v| v.sqrt()).collect();
        let n = 13usize;
        let mut total = 0.0;
        let mut idx = [0usize; 6];
        let step: Vec<f64> = sd.iter().map(|s| 12.0 * s / (n - 1) as f64).collect();
        let cell: f64 = step.iter().product();
        loop {
            let v: Vec<f64> = (0..6).map(|i| mean[i] - 6.0 * sd[i] + idx[i] as f64 * step[i]).collect();
            let z = LidarMeasurement {
                center: Vector3::new(v[0], v[1], v[2]),
                log_dims: Vector3::new(v[3], v[4], v[5]),
                score: 1.0,
                class: ObjectClass::Car,
                yaw: 0.0,
            };
            total += lidar_log_likelihood(&z, &x, &noise).exp() * cell;
            let mut k = 0;
            loop {
                idx[k] += 1;
                if idx[k] < n {
                    break;
                }
                idx[k] = 0;
                k += 1;
                if k == 6 {
                    break;
                }
            }
            if k == 6 {
                break;
            }
        }
        assert!((total - 1.0).abs() < 1e-2, "integral {total}");
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn likelihood_decreases_with_residual(axis in 0usize..6, r in 0.0..3.0f64, extra in 0.01..3.0f64) {
                let noise = LidarNoise::for_class(ObjectClass::Motorcycle);
                let x = StateVector::zeros();
                let mut d1 = [0.0; 6];
                d1[axis] = r;
                let mut d2 = [0.0; 6];
                d2[axis] = r + extra;
                prop_assert!(
                    lidar_log_likelihood(&lidar_at(&x, d2), &x, &noise) < lidar_log_likelihood(&lidar_at(&x, d1), &x, &noise)
                );
            }

            #[test]
            fn gating_is_idempotent(scores in proptest::collection::vec(0.0..1.0f64, 0..20), t in 0.0..1.0f64) {
                let x = StateVector::zeros();
                let frame: Vec<LidarMeasurement> = scores.iter().map(|s| LidarMeasurement { score: *s, ..lidar_at(&x, [0.0; 6]) }).collect();
                let once = gate_by_score(&frame, t);
                prop_assert_eq!(gate_by_score(&once, t), once);
            }

            #[test]
            fn detection_probability_is_a_probability(px in -200.0..200.0f64, py in -200.0..200.0f64, pz in -50.0..50.0f64) {
                let cam = test_cam();
                let cfg = DetectionConfig::default();
                let x = compose_state(&Vector3::new(px, py, pz), &Vector3::zeros(), &Vector3::zeros());
                for s in [SensorRef::Camera(&cam), SensorRef::Lidar] {
                    let p = detection_probability(s, &x, &[], &cfg);
                    prop_assert!((0.0..=1.0).contains(&p));
                }
            }
        }
    }
}
