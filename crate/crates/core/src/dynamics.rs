//! Single-object Markov transition: nearly-constant-velocity kinematics with
//! a log-space random walk on the shape, plus survival and birth models.

use nalgebra::{Matrix2, SVector, Vector2, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    position, symmetrize, GaussianState, Label, StateMatrix, StateVector, POSITION, SHAPE, STATE_DIM, VELOCITY,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MotionConfig {
    /// Sampling interval in seconds.
    pub dt: f64,
    /// Log-space shape noise variances.
    pub nu_zeta: [f64; 3],
    /// Position (acceleration-driven) noise variances.
    pub nu_rho: [f64; 3],
}

impl Default for MotionConfig {
    fn default() -> Self {
        Self {
            dt: 0.5,
            nu_zeta: [0.0036, 0.0036, 0.0004],
            nu_rho: [0.0225, 0.0225, 0.0225],
        }
    }
}

impl MotionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(Error::InvalidConfig("motion dt must be > 0".into()));
        }
        if self.nu_zeta.iter().chain(&self.nu_rho).any(|v| !(*v > 0.0)) {
            return Err(Error::InvalidConfig("motion variances must be > 0".into()));
        }
        Ok(())
    }
}

/// Linear-Gaussian transition `x₊ ~ N(F x + b, Q)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub f: StateMatrix,
    pub b: StateVector,
    pub q: StateMatrix,
}

pub fn build_transition(cfg: &MotionConfig) -> Transition {
    let t = cfg.dt;
    let mut f = StateMatrix::identity();
    let mut b = StateVector::zeros();
    let mut q = StateMatrix::zeros();
    let g = Vector2::new(0.5 * t * t, t);
    let block: Matrix2<f64> = g * g.transpose();
    for axis in 0..3 {
        let (p, v) = (POSITION[axis], VELOCITY[axis]);
        f[(p, v)] = t;
        let nu = cfg.nu_rho[axis];
        q[(p, p)] = nu * block[(0, 0)];
        q[(p, v)] = nu * block[(0, 1)];
        q[(v, p)] = nu * block[(1, 0)];
        q[(v, v)] = nu * block[(1, 1)];
        let s = SHAPE[axis];
        b[s] = -cfg.nu_zeta[axis] / 2.0;
        q[(s, s)] = cfg.nu_zeta[axis];
    }
    Transition { f, b, q }
}

pub fn predict_state(g: &GaussianState, tr: &Transition) -> GaussianState {
    let mean = tr.f * g.mean + tr.b;
    let cov = symmetrize(&(tr.f * g.cov * tr.f.transpose() + tr.q));
    GaussianState::from_parts_clamped(mean, cov)
}

/// Draws a sample from `N(mean, cov)` using a symmetric square root of `cov`,
/// so singular covariances (like the rank-deficient process noise) are fine.
pub fn sample_gaussian<R: Rng + ?Sized>(mean: &StateVector, cov: &StateMatrix, rng: &mut R) -> StateVector {
    let eig = symmetrize(cov).symmetric_eigen();
    let mut z = SVector::<f64, STATE_DIM>::zeros();
    for i in 0..STATE_DIM {
        let lambda = eig.eigenvalues[i].max(0.0);
        let n: f64 = rng.sample(StandardNormal);
        z[i] = lambda.sqrt() * n;
    }
    mean + eig.eigenvectors * z
}

/// One draw of `x₊ ~ f(· | x)`.
pub fn sample_transition<R: Rng + ?Sized>(x: &StateVector, tr: &Transition, rng: &mut R) -> StateVector {
    sample_gaussian(&(tr.f * x + tr.b), &tr.q, rng)
}

/// Closed axis-aligned box in world coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    pub fn volume(&self) -> f64 {
        (0..3).map(|i| (self.max[i] - self.min[i]).max(0.0)).product()
    }

    pub fn center(&self) -> Vector3<f64> {
        Vector3::from_fn(|i, _| 0.5 * (self.min[i] + self.max[i]))
    }
}

impl Default for Aabb {
    fn default() -> Self {
        Self {
            min: [-60.0, -60.0, -3.0],
            max: [60.0, 60.0, 6.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SurvivalConfig {
    pub p_s_base: f64,
    pub scene_bounds: Aabb,
    pub p_s_outside: f64,
}

impl Default for SurvivalConfig {
    fn default() -> Self {
        Self {
            p_s_base: 0.99,
            scene_bounds: Aabb::default(),
            p_s_outside: 0.1,
        }
    }
}

impl SurvivalConfig {
    pub fn validate(&self) -> Result<()> {
        if ![self.p_s_base, self.p_s_outside].iter().all(|p| (0.0..=1.0).contains(p)) {
            return Err(Error::InvalidConfig("survival probabilities must be in [0, 1]".into()));
        }
        Ok(())
    }
}

pub fn survival_probability(state: &StateVector, cfg: &SurvivalConfig) -> f64 {
    if cfg.scene_bounds.contains(&position(state)) {
        cfg.p_s_base
    } else {
        cfg.p_s_outside
    }
}

/// Labeled Bernoulli birth candidate.
#[derive(Clone, Debug, PartialEq)]
pub struct BirthComponent {
    pub r_b: f64,
    pub density: GaussianState,
    pub label: Label,
}

impl BirthComponent {
    pub fn new(r_b: f64, density: GaussianState, label: Label) -> Result<Self> {
        if !(0.0..=1.0).contains(&r_b) {
            return Err(Error::InvalidConfig(format!("birth probability {r_b} outside [0, 1]")));
        }
        Ok(Self { r_b, density, label })
    }
}
