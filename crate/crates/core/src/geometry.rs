//! Object state layout, labels, pinhole cameras and the state to
//! measurement-space mappings shared by the sensor models.
//!
//! The state is a 9-vector `[x, vx, y, vy, z, vz, s1, s2, s3]` where the last
//! three entries are natural logs of the semi-axes of a world-axis-aligned
//! ellipsoid enclosing the object.

use std::fmt;

use nalgebra::{Matrix3, Matrix3x4, Matrix4, SMatrix, SVector, Vector2, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const STATE_DIM: usize = 9;

pub type StateVector = SVector<f64, STATE_DIM>;
pub type StateMatrix = SMatrix<f64, STATE_DIM, STATE_DIM>;

/// Indices of the position components inside a [`StateVector`].
pub const POSITION: [usize; 3] = [0, 2, 4];
/// Indices of the velocity components.
pub const VELOCITY: [usize; 3] = [1, 3, 5];
/// Indices of the log semi-axes.
pub const SHAPE: [usize; 3] = [6, 7, 8];

/// Eigenvalues below `-PSD_TOLERANCE` are treated as a genuine defect.
pub const PSD_TOLERANCE: f64 = 1e-9;

/// Persistent track identity `(birth step, disambiguator)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Label {
    pub birth_step: u64,
    pub disambiguator: u64,
}

impl Label {
    pub const fn new(birth_step: u64, disambiguator: u64) -> Self {
        Self {
            birth_step,
            disambiguator,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.birth_step, self.disambiguator)
    }
}

impl std::str::FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let (k, tau) = s
            .split_once('-')
            .ok_or_else(|| format!("label {s:?} is not of the form k-tau"))?;
        let birth_step = k.parse().map_err(|_| format!("bad birth step in {s:?}"))?;
        let disambiguator = tau.parse().map_err(|_| format!("bad disambiguator in {s:?}"))?;
        Ok(Label::new(birth_step, disambiguator))
    }
}

pub fn position(state: &StateVector) -> Vector3<f64> {
    Vector3::new(state[POSITION[0]], state[POSITION[1]], state[POSITION[2]])
}

pub fn velocity(state: &StateVector) -> Vector3<f64> {
    Vector3::new(state[VELOCITY[0]], state[VELOCITY[1]], state[VELOCITY[2]])
}

pub fn shape(state: &StateVector) -> Vector3<f64> {
    Vector3::new(state[SHAPE[0]], state[SHAPE[1]], state[SHAPE[2]])
}

/// Assemble a state from position, velocity and log semi-axes.
pub fn compose_state(pos: &Vector3<f64>, vel: &Vector3<f64>, zeta: &Vector3<f64>) -> StateVector {
    let mut x = StateVector::zeros();
    for i in 0..3 {
        x[POSITION[i]] = pos[i];
        x[VELOCITY[i]] = vel[i];
        x[SHAPE[i]] = zeta[i];
    }
    x
}

/// Gaussian density over the object state.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianState {
    pub mean: StateVector,
    pub cov: StateMatrix,
}

impl GaussianState {
    /// Validates finiteness and positive semi-definiteness, then clamps
    /// eigenvalues in `[-PSD_TOLERANCE, 0)` to zero.
    pub fn new(mean: StateVector, cov: StateMatrix) -> Result<Self> {
        if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("non-finite Gaussian parameters".into()));
        }
        let sym = symmetrize(&cov);
        if sym.cholesky().is_none() {
            let eig = sym.symmetric_eigen();
            let min = eig.eigenvalues.min();
            if min < -PSD_TOLERANCE {
                return Err(Error::NotPositiveSemiDefinite { min_eigenvalue: min });
            }
        }
        Ok(Self::from_parts_clamped(mean, sym))
    }

    /// Symmetrizes and clamps small negative eigenvalues without validation.
    pub fn from_parts_clamped(mean: StateVector, cov: StateMatrix) -> Self {
        Self {
            mean,
            cov: clamp_psd(&cov),
        }
    }
}

pub fn symmetrize<const N: usize>(m: &SMatrix<f64, N, N>) -> SMatrix<f64, N, N> {
    (m + m.transpose()) * 0.5
}

/// Symmetric part of `m` with negative eigenvalues raised to zero.
pub fn clamp_psd(m: &StateMatrix) -> StateMatrix {
    let sym = symmetrize(m);
    if sym.cholesky().is_some() {
        return sym;
    }
    let mut eig = sym.symmetric_eigen();
    let mut clamped = false;
    for v in eig.eigenvalues.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
            clamped = true;
        }
    }
    if clamped {
        symmetrize(&eig.recompose())
    } else {
        sym
    }
}

/// Pinhole camera given by a world-to-pixel projection matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct CameraModel {
    pub name: String,
    pub projection: Matrix3x4<f64>,
    pub width: f64,
    pub height: f64,
}

impl CameraModel {
    pub fn new(name: impl Into<String>, projection: Matrix3x4<f64>, width: f64, height: f64) -> Result<Self> {
        let name = name.into();
        if !(width > 0.0 && height > 0.0) {
            return Err(Error::InvalidCamera(format!("{name}: image size must be positive")));
        }
        if projection.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidCamera(format!("{name}: non-finite projection")));
        }
        let sv = projection.svd(false, false).singular_values;
        if sv.min() <= 1e-12 * sv.max().max(1.0) {
            return Err(Error::InvalidCamera(format!("{name}: projection must have rank 3")));
        }
        Ok(Self {
            name,
            projection,
            width,
            height,
        })
    }

    /// Camera from intrinsics, optical centre and a world-to-camera rotation
    /// whose rows are the camera x (right), y (down) and z (forward) axes.
    pub fn from_pose(
        name: impl Into<String>,
        intrinsics: Matrix3<f64>,
        rotation: Matrix3<f64>,
        center: Vector3<f64>,
        width: f64,
        height: f64,
    ) -> Result<Self> {
        let t = -(rotation * center);
        let mut rt = Matrix3x4::zeros();
        rt.fixed_view_mut::<3, 3>(0, 0).copy_from(&rotation);
        rt.set_column(3, &t);
        Self::new(name, intrinsics * rt, width, height)
    }

    pub fn depth(&self, p: &Vector3<f64>) -> f64 {
        self.projection.row(2).dot(&p.push(1.0).transpose())
    }

    pub fn contains_pixel(&self, px: &Vector2<f64>) -> bool {
        (0.0..=self.width).contains(&px[0]) && (0.0..=self.height).contains(&px[1])
    }

    /// Optical centre in world coordinates (right null vector of the projection).
    pub fn center(&self) -> Vector3<f64> {
        let m = self.projection.fixed_view::<3, 3>(0, 0).into_owned();
        let p4 = self.projection.column(3).into_owned();
        match m.try_inverse() {
            Some(inv) => -(inv * p4),
            None => Vector3::zeros(),
        }
    }

    /// World point at homogeneous depth `depth` along the ray through pixel `px`.
    pub fn back_project(&self, px: &Vector2<f64>, depth: f64) -> Option<Vector3<f64>> {
        let m = self.projection.fixed_view::<3, 3>(0, 0).into_owned();
        let inv = m.try_inverse()?;
        let dir = inv * Vector3::new(px[0], px[1], 1.0);
        Some(self.center() + dir * depth)
    }
}

/// 2D box as pixel centre plus log width/height.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BBox2D {
    pub center: Vector2<f64>,
    pub log_extent: Vector2<f64>,
}

impl BBox2D {
    pub fn from_corners(x1: f64, y1: f64, x2: f64, y2: f64) -> Option<Self> {
        let (w, h) = (x2 - x1, y2 - y1);
        if !(w > 0.0 && h > 0.0) {
            return None;
        }
        Some(Self {
            center: Vector2::new(0.5 * (x1 + x2), 0.5 * (y1 + y2)),
            log_extent: Vector2::new(w.ln(), h.ln()),
        })
    }

    pub fn corners(&self) -> [f64; 4] {
        let (w, h) = (self.log_extent[0].exp(), self.log_extent[1].exp());
        [
            self.center[0] - 0.5 * w,
            self.center[1] - 0.5 * h,
            self.center[0] + 0.5 * w,
            self.center[1] + 0.5 * h,
        ]
    }

    /// `[u, v, log w, log h]`.
    pub fn as_vector(&self) -> Vector4<f64> {
        Vector4::new(self.center[0], self.center[1], self.log_extent[0], self.log_extent[1])
    }
}

pub fn project_point(cam: &CameraModel, p: &Vector3<f64>) -> Result<Vector2<f64>> {
    let h = cam.projection * p.push(1.0);
    if h[2] <= 0.0 {
        return Err(Error::PointBehindCamera { depth: h[2] });
    }
    Ok(Vector2::new(h[0] / h[2], h[1] / h[2]))
}

/// Image bounding box of an axis-aligned ellipsoid.
///
/// The ellipsoid's dual quadric `Q*` is pushed through the camera to the dual
/// conic `C* = P Q* Pᵀ`; the box sides are the vertical and horizontal lines
/// tangent to that conic.
pub fn project_ellipsoid(cam: &CameraModel, center: &Vector3<f64>, zeta: &Vector3<f64>) -> Result<BBox2D> {
    let depth = cam.depth(center);
    if depth <= 0.0 {
        return Err(Error::PointBehindCamera { depth });
    }
    let axes2 = zeta.map(|z| (2.0 * z).exp());
    // Q* = T diag(a², -1) Tᵀ with T the translation to `center`.
    let mut dual = Matrix4::zeros();
    let top = Matrix3::from_diagonal(&axes2) - center * center.transpose();
    dual.fixed_view_mut::<3, 3>(0, 0).copy_from(&top);
    for i in 0..3 {
        dual[(i, 3)] = -center[i];
        dual[(3, i)] = -center[i];
    }
    dual[(3, 3)] = -1.0;
    let conic = cam.projection * dual * cam.projection.transpose();
    let c33 = conic[(2, 2)];
    // c33 >= 0 means the ellipsoid touches the camera's principal plane.
    if !(c33 < 0.0) {
        return Err(Error::DegenerateConic);
    }
    let (c13, c23) = (conic[(0, 2)], conic[(1, 2)]);
    let disc_u = c13 * c13 - conic[(0, 0)] * c33;
    let disc_v = c23 * c23 - conic[(1, 1)] * c33;
    if !(disc_u > 0.0 && disc_v > 0.0) {
        return Err(Error::DegenerateConic);
    }
    let half_w = disc_u.sqrt() / c33.abs();
    let half_h = disc_v.sqrt() / c33.abs();
    Ok(BBox2D {
        center: Vector2::new(c13 / c33, c23 / c33),
        log_extent: Vector2::new((2.0 * half_w).ln(), (2.0 * half_h).ln()),
    })
}

/// Predicted LiDAR box `(centre, log full dimensions)` of a state.
pub fn state_to_lidar_box(state: &StateVector) -> (Vector3<f64>, Vector3<f64>) {
    let log_dims = shape(state).add_scalar(std::f64::consts::LN_2);
    (position(state), log_dims)
}

/// Log semi-axes from log full dimensions.
pub fn log_dims_to_zeta(log_dims: &Vector3<f64>) -> Vector3<f64> {
    log_dims.add_scalar(-std::f64::consts::LN_2)
}
