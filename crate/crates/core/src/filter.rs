//! The labeled multi-object recursion: prediction with survival and birth,
//! the joint multi-sensor update, measurement-driven birth, pruning and
//! state extraction. One [`ClassFilter`] runs per object class.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap};
use std::sync::Arc;

use nalgebra::{DMatrix, SMatrix, SVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::association::{
    active_sensors, enumerate_nonzero_maps, gibbs_sample_mixed, measurement_count, PsiTable, SensorIndex, WeightedMap,
    ENUMERATION_BUDGET,
};
use crate::dynamics::{build_transition, predict_state, survival_probability, BirthComponent, MotionConfig, SurvivalConfig};
use crate::error::{Error, Result};
use crate::geometry::{
    compose_state, log_dims_to_zeta, position, project_ellipsoid, shape, symmetrize, velocity, CameraModel,
    GaussianState, Label, StateMatrix, StateVector, STATE_DIM,
};
use crate::sensors::{
    camera_observation, detection_probability, lidar_observation, CameraMeasurement, LidarMeasurement, ObjectClass,
    Scan, SensorModel, SensorRef,
};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AssociationStrategy {
    /// Enumerate when the non-zero map count fits the budget, else Gibbs.
    Auto,
    Gibbs,
    Enumerate,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BirthSource {
    Lidar,
    Camera,
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterConfig {
    pub r_b_max: f64,
    /// Upper bound on the expected number of births per step.
    pub birth_budget: f64,
    /// Births below this probability are not created.
    pub r_b_min: f64,
    pub birth_source: BirthSource,
    pub birth_position_var: [f64; 3],
    pub birth_velocity_var: [f64; 3],
    pub birth_shape_var: [f64; 3],
    /// Depth search interval for camera births, metres.
    pub camera_birth_depth: [f64; 2],
    /// Depth standard deviation of a camera birth as a fraction of depth.
    pub camera_birth_depth_sd: f64,
    pub weight_floor: f64,
    pub max_hypotheses: usize,
    pub predict_cap: usize,
    /// Predicted hypotheses below this ratio to the best are not generated.
    pub predict_floor: f64,
    pub association: AssociationStrategy,
    pub enumeration_budget: f64,
    pub gibbs_iterations: usize,
    pub gibbs_min_iterations: usize,
    /// Split the Gibbs iterations across hypotheses by prior weight.
    pub gibbs_weight_proportional: bool,
    /// Exponent applied to the exploring Gibbs chain (1 = plain Gibbs).
    pub gibbs_beta: f64,
    /// Sampled maps lighter than this fraction of the best map are dropped.
    pub map_floor: f64,
    /// Squared Mahalanobis distance beyond which a pairing gets ψ = 0.
    pub gate: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            r_b_max: 0.03,
            birth_budget: 1.0,
            r_b_min: 1e-6,
            birth_source: BirthSource::Lidar,
            birth_position_var: [1.0, 1.0, 0.5],
            birth_velocity_var: [4.0, 4.0, 0.25],
            birth_shape_var: [0.1, 0.1, 0.1],
            camera_birth_depth: [2.0, 80.0],
            camera_birth_depth_sd: 0.3,
            weight_floor: 1e-4,
            max_hypotheses: 1000,
            predict_cap: 300,
            predict_floor: 1e-9,
            association: AssociationStrategy::Auto,
            enumeration_budget: 2000.0,
            gibbs_iterations: 1000,
            gibbs_min_iterations: 10,
            gibbs_weight_proportional: true,
            gibbs_beta: 0.1,
            map_floor: 1e-9,
            gate: 60.0,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if !(0.0..=1.0).contains(&self.r_b_max) || !(self.birth_budget > 0.0) || !(self.r_b_min >= 0.0) {
            return bad("birth probabilities out of range");
        }
        let vars = self.birth_position_var.iter().chain(&self.birth_velocity_var).chain(&self.birth_shape_var);
        if vars.clone().any(|v| !(*v > 0.0)) {
            return bad("birth variances must be > 0");
        }
        if !(self.camera_birth_depth[0] > 0.0 && self.camera_birth_depth[1] > self.camera_birth_depth[0]) {
            return bad("camera_birth_depth must be an increasing positive interval");
        }
        if !(0.0..1.0).contains(&self.weight_floor) || !(0.0..1.0).contains(&self.predict_floor) {
            return bad("weight floors must be in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.map_floor) {
            return bad("map_floor must be in [0, 1)");
        }
        if self.max_hypotheses == 0 || self.predict_cap == 0 || self.gibbs_iterations == 0 {
            return bad("hypothesis caps and gibbs_iterations must be > 0");
        }
        if !(self.gibbs_beta > 0.0 && self.gibbs_beta <= 1.0) {
            return bad("gibbs_beta must be in (0, 1]");
        }
        if !(self.gate > 0.0) {
            return bad("gate must be > 0");
        }
        Ok(())
    }
}

/// Everything one class filter needs.
#[derive(Clone, Debug)]
pub struct ClassModel {
    pub motion: MotionConfig,
    pub survival: SurvivalConfig,
    pub sensors: SensorModel,
    pub filter: FilterConfig,
}

#[derive(Clone, Debug)]
pub struct Hypothesis {
    pub log_weight: f64,
    pub tracks: BTreeMap<Label, Arc<GaussianState>>,
}

impl Hypothesis {
    pub fn labels(&self) -> impl Iterator<Item = &Label> {
        self.tracks.keys()
    }

    pub fn len(&self) -> usize {
        self.tracks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tracks.is_empty()
    }
}

#[derive(Clone, Debug)]
pub struct GlmbDensity {
    pub class: ObjectClass,
    pub hypotheses: Vec<Hypothesis>,
}

impl GlmbDensity {
    /// No objects, with certainty.
    pub fn empty(class: ObjectClass) -> Self {
        Self {
            class,
            hypotheses: vec![Hypothesis {
                log_weight: 0.0,
                tracks: BTreeMap::new(),
            }],
        }
    }

    pub fn weights(&self) -> Vec<f64> {
        self.hypotheses.iter().map(|h| h.log_weight.exp()).collect()
    }

    pub fn normalize(&mut self) {
        let total = log_sum_exp(self.hypotheses.iter().map(|h| h.log_weight));
        if total.is_finite() {
            for h in &mut self.hypotheses {
                h.log_weight -= total;
            }
        }
    }

    /// Descending weight, ties by label set.
    pub fn sort(&mut self) {
        self.hypotheses.sort_by(|a, b| {
            b.log_weight
                .total_cmp(&a.log_weight)
                .then_with(|| a.tracks.keys().cmp(b.tracks.keys()))
        });
    }

    pub fn cardinality_distribution(&self) -> Vec<f64> {
        let n = self.hypotheses.iter().map(Hypothesis::len).max().unwrap_or(0);
        let mut out = vec![0.0; n + 1];
        for h in &self.hypotheses {
            out[h.len()] += h.log_weight.exp();
        }
        out
    }

    pub fn existence_probabilities(&self) -> BTreeMap<Label, f64> {
        let mut out = BTreeMap::new();
        for h in &self.hypotheses {
            let w = h.log_weight.exp();
            for l in h.labels() {
                *out.entry(*l).or_insert(0.0) += w;
            }
        }
        out
    }

    fn all_labels(&self) -> std::collections::BTreeSet<Label> {
        self.hypotheses.iter().flat_map(|h| h.tracks.keys().copied()).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrackEstimate {
    pub label: Label,
    pub class: ObjectClass,
    pub center: Vector3<f64>,
    /// Full extents `[w, l, h]`.
    pub dims: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub existence: f64,
}

pub fn log_sum_exp(values: impl IntoIterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.into_iter().collect();
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// splitmix64 finalizer over two words.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0x632B_E59B_D9B4_E019);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Moment-matched single Gaussian of a weighted mixture; weights need not
/// be normalized.
pub fn merge_gaussians(components: &[(f64, &GaussianState)]) -> GaussianState {
    let total: f64 = components.iter().map(|(w, _)| w).sum();
    let mut mean = StateVector::zeros();
    for (w, g) in components {
        mean += g.mean * (w / total);
    }
    let mut cov = StateMatrix::zeros();
    for (w, g) in components {
        let d = g.mean - mean;
        cov += (g.cov + d * d.transpose()) * (w / total);
    }
    GaussianState::from_parts_clamped(mean, symmetrize(&cov))
}

// ---------------------------------------------------------------- predict

/// Lazily yields subsets of flip positions in nondecreasing total cost;
/// `costs` must be sorted ascending.
struct SubsetStream {
    costs: Vec<f64>,
    heap: BinaryHeap<Reverse<Node>>,
    started: bool,
}

#[derive(Debug, PartialEq)]
struct Node {
    cost: f64,
    flips: Vec<usize>,
}

impl Eq for Node {}

impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Node {
    fn cmp(&self, other: &Self) -> Ordering {
        self.cost.total_cmp(&other.cost).then_with(|| self.flips.cmp(&other.flips))
    }
}

impl SubsetStream {
    fn new(costs: Vec<f64>) -> Self {
        Self {
            costs,
            heap: BinaryHeap::new(),
            started: false,
        }
    }

    fn next(&mut self) -> Option<(f64, Vec<usize>)> {
        if !self.started {
            self.started = true;
            if let Some(c) = self.costs.first() {
                self.heap.push(Reverse(Node { cost: *c, flips: vec![0] }));
            }
            return Some((0.0, Vec::new()));
        }
        let Reverse(node) = self.heap.pop()?;
        let last = *node.flips.last().expect("non-empty");
        if last + 1 < self.costs.len() {
            let mut grow = node.flips.clone();
            grow.push(last + 1);
            self.heap.push(Reverse(Node {
                cost: node.cost + self.costs[last + 1],
                flips: grow,
            }));
            let mut shift = node.flips.clone();
            *shift.last_mut().expect("non-empty") = last + 1;
            self.heap.push(Reverse(Node {
                cost: node.cost - self.costs[last] + self.costs[last + 1],
                flips: shift,
            }));
        }
        Some((node.cost, node.flips))
    }
}

struct PredictItem {
    label: Label,
    density: Arc<GaussianState>,
    prob: f64,
}

#[derive(PartialEq)]
struct Candidate {
    score: f64,
    hyp: usize,
    flips: Vec<usize>,
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.score
            .total_cmp(&other.score)
            .then_with(|| other.hyp.cmp(&self.hyp))
            .then_with(|| other.flips.cmp(&self.flips))
    }
}

/// Prediction with survival and birth, keeping the `cfg.predict_cap`
/// highest-weight predicted hypotheses (generated best-first, exactly).
pub fn predict(
    glmb: &GlmbDensity,
    births: &[BirthComponent],
    motion: &MotionConfig,
    survival: &SurvivalConfig,
    cfg: &FilterConfig,
) -> Result<GlmbDensity> {
    let existing = glmb.all_labels();
    let mut seen = std::collections::BTreeSet::new();
    for b in births {
        if existing.contains(&b.label) || !seen.insert(b.label) {
            return Err(Error::DuplicateBirthLabel(b.label));
        }
    }
    let tr = build_transition(motion);
    let birth_arcs: Vec<Arc<GaussianState>> = births.iter().map(|b| Arc::new(b.density.clone())).collect();
    let mut cache: HashMap<*const GaussianState, Arc<GaussianState>> = HashMap::new();

    let mut items_per_hyp: Vec<Vec<PredictItem>> = Vec::with_capacity(glmb.hypotheses.len());
    let mut streams = Vec::with_capacity(glmb.hypotheses.len());
    let mut orders = Vec::with_capacity(glmb.hypotheses.len());
    let mut heap = BinaryHeap::new();
    for (hi, h) in glmb.hypotheses.iter().enumerate() {
        let mut items = Vec::with_capacity(h.len() + births.len());
        for (label, g) in &h.tracks {
            let predicted = cache
                .entry(Arc::as_ptr(g))
                .or_insert_with(|| Arc::new(predict_state(g, &tr)))
                .clone();
            items.push(PredictItem {
                label: *label,
                density: predicted,
                prob: survival_probability(&g.mean, survival),
            });
        }
        for (b, arc) in births.iter().zip(&birth_arcs) {
            items.push(PredictItem {
                label: b.label,
                density: arc.clone(),
                prob: b.r_b,
            });
        }
        let mut base = h.log_weight;
        let mut flexible: Vec<(f64, usize)> = Vec::new();
        for (i, it) in items.iter().enumerate() {
            if it.prob > 0.0 && it.prob < 1.0 {
                base += it.prob.max(1.0 - it.prob).ln();
                flexible.push(((it.prob.ln() - (1.0 - it.prob).ln()).abs(), i));
            }
        }
        flexible.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut stream = SubsetStream::new(flexible.iter().map(|f| f.0).collect());
        if base > f64::NEG_INFINITY {
            if let Some((cost, flips)) = stream.next() {
                heap.push(Candidate {
                    score: base - cost,
                    hyp: hi,
                    flips,
                });
            }
        }
        items_per_hyp.push(items);
        streams.push((base, stream));
        orders.push(flexible.into_iter().map(|f| f.1).collect::<Vec<_>>());
    }

    let mut grouped: BTreeMap<Vec<Label>, Vec<(f64, BTreeMap<Label, Arc<GaussianState>>)>> = BTreeMap::new();
    let mut emitted = 0usize;
    let mut best = f64::NEG_INFINITY;
    let floor = if cfg.predict_floor > 0.0 {
        cfg.predict_floor.ln()
    } else {
        f64::NEG_INFINITY
    };
    while let Some(c) = heap.pop() {
        if emitted == 0 {
            best = c.score;
        } else if c.score < best + floor {
            break;
        }
        let items = &items_per_hyp[c.hyp];
        let mut present: Vec<bool> = items.iter().map(|it| it.prob >= 0.5).collect();
        for f in &c.flips {
            let i = orders[c.hyp][*f];
            present[i] = !present[i];
        }
        let tracks: BTreeMap<Label, Arc<GaussianState>> = items
            .iter()
            .zip(&present)
            .filter(|(_, p)| **p)
            .map(|(it, _)| (it.label, it.density.clone()))
            .collect();
        grouped
            .entry(tracks.keys().copied().collect())
            .or_default()
            .push((c.score, tracks));
        emitted += 1;
        if emitted >= cfg.predict_cap {
            break;
        }
        let (base, stream) = &mut streams[c.hyp];
        if let Some((cost, flips)) = stream.next() {
            heap.push(Candidate {
                score: *base - cost,
                hyp: c.hyp,
                flips,
            });
        }
    }

    let mut out = GlmbDensity {
        class: glmb.class,
        hypotheses: grouped.into_values().map(merge_hypotheses).collect(),
    };
    if out.hypotheses.is_empty() {
        out = GlmbDensity::empty(glmb.class);
    }
    out.normalize();
    out.sort();
    Ok(out)
}

/// Collapses hypotheses that share a label set into one, moment-matching
/// each label's density across them.
fn merge_hypotheses(mut group: Vec<(f64, BTreeMap<Label, Arc<GaussianState>>)>) -> Hypothesis {
    if group.len() == 1 {
        let (log_weight, tracks) = group.pop().expect("one");
        return Hypothesis { log_weight, tracks };
    }
    let total = log_sum_exp(group.iter().map(|g| g.0));
    let labels: Vec<Label> = group[0].1.keys().copied().collect();
    let mut tracks = BTreeMap::new();
    for l in labels {
        let first = &group[0].1[&l];
        if group.iter().all(|g| Arc::ptr_eq(&g.1[&l], first)) {
            tracks.insert(l, first.clone());
            continue;
        }
        let comps: Vec<(f64, &GaussianState)> = group.iter().map(|g| ((g.0 - total).exp(), g.1[&l].as_ref())).collect();
        tracks.insert(l, Arc::new(merge_gaussians(&comps)));
    }
    Hypothesis {
        log_weight: total,
        tracks,
    }
}

// ----------------------------------------------------------------- update

/// Per-measurement probability of being assigned to some track.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AssociationMass {
    pub cameras: Vec<Vec<f64>>,
    pub lidar: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct UpdateOutput {
    pub glmb: GlmbDensity,
    pub mass: AssociationMass,
}

struct Innovation<const M: usize> {
    residual: SVector<f64, M>,
    s_inv: SMatrix<f64, M, M>,
    log_lik: f64,
    d2: f64,
}

fn innovation<const M: usize>(
    g: &GaussianState,
    z: &SVector<f64, M>,
    h: &SVector<f64, M>,
    jac: &SMatrix<f64, M, STATE_DIM>,
    r: &SVector<f64, M>,
) -> Option<Innovation<M>> {
    let s = symmetrize(&(jac * g.cov * jac.transpose() + SMatrix::<f64, M, M>::from_diagonal(r)));
    let chol = s.cholesky()?;
    let residual = z - h;
    let y = chol.l().solve_lower_triangular(&residual)?;
    let d2 = y.norm_squared();
    let log_det: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    Some(Innovation {
        residual,
        s_inv: chol.inverse(),
        log_lik: -0.5 * (d2 + log_det + M as f64 * LN_2PI),
        d2,
    })
}

fn kalman_correct<const M: usize>(
    g: &GaussianState,
    jac: &SMatrix<f64, M, STATE_DIM>,
    r: &SVector<f64, M>,
    inn: &Innovation<M>,
) -> GaussianState {
    let k = g.cov * jac.transpose() * inn.s_inv;
    let mean = g.mean + k * inn.residual;
    let ikh = StateMatrix::identity() - k * jac;
    let cov = ikh * g.cov * ikh.transpose() + k * SMatrix::<f64, M, M>::from_diagonal(r) * k.transpose();
    GaussianState::from_parts_clamped(mean, symmetrize(&cov))
}

/// Log ψ of one sensor for a Gaussian track: the predicted measurement
/// likelihood replaces the point likelihood.
fn psi_row(model: &SensorModel, scan: &Scan, sensor: SensorIndex, g: &GaussianState, gate: f64) -> Vec<f64> {
    let m = measurement_count(scan, sensor);
    let mut row = vec![f64::NEG_INFINITY; m + 1];
    match sensor {
        SensorIndex::Lidar => {
            let p_d = detection_probability(SensorRef::Lidar, &g.mean, &[], &model.detection);
            row[0] = (1.0 - p_d).ln();
            if m == 0 || p_d <= 0.0 {
                return row;
            }
            let (h, jac) = lidar_observation(&g.mean);
            let r = model.lidar_noise.variances();
            let kappa = model.lidar_kappa().ln();
            for (j, z) in scan.lidar.as_ref().expect("lidar").iter().enumerate() {
                if let Some(inn) = innovation(g, &z.as_vector(), &h, &jac, &r) {
                    if inn.d2 <= gate {
                        row[j + 1] = p_d.ln() + inn.log_lik - kappa;
                    }
                }
            }
        }
        SensorIndex::Camera(c) => {
            let cam = &model.cameras[c];
            row[0] = 0.0;
            let visible = crate::geometry::project_point(cam, &position(&g.mean)).is_ok_and(|px| cam.contains_pixel(&px));
            if !visible {
                let p_d = detection_probability(SensorRef::Camera(cam), &g.mean, &[], &model.detection);
                row[0] = (1.0 - p_d).ln();
                return row;
            }
            let Ok((h, jac)) = camera_observation(cam, &g.mean) else {
                return row;
            };
            let p_d = detection_probability(SensorRef::Camera(cam), &g.mean, &[], &model.detection);
            row[0] = (1.0 - p_d).ln();
            if p_d <= 0.0 {
                return row;
            }
            let r = model.camera_noise.variances();
            let kappa = model.camera_kappa(c).ln();
            for (j, z) in scan.cameras[c].as_ref().expect("camera").iter().enumerate() {
                if let Some(inn) = innovation(g, &z.bbox.as_vector(), &h, &jac, &r) {
                    if inn.d2 <= gate {
                        row[j + 1] = p_d.ln() + inn.log_lik - kappa;
                    }
                }
            }
        }
    }
    row
}

/// Conditions a track on its assigned measurements: LiDAR first, then the
/// cameras in index order, relinearizing each camera at the current mean.
fn condition(model: &SensorModel, scan: &Scan, sensors: &[SensorIndex], tuple: &[i32], g: &GaussianState) -> GaussianState {
    let mut cur = g.clone();
    let order = sensors
        .iter()
        .enumerate()
        .filter(|(_, s)| matches!(s, SensorIndex::Lidar))
        .chain(sensors.iter().enumerate().filter(|(_, s)| matches!(s, SensorIndex::Camera(_))));
    for (pos, sensor) in order {
        let j = tuple[pos];
        if j <= 0 {
            continue;
        }
        let j = (j - 1) as usize;
        match sensor {
            SensorIndex::Lidar => {
                let z = &scan.lidar.as_ref().expect("lidar")[j];
                let (h, jac) = lidar_observation(&cur.mean);
                let r = model.lidar_noise.variances();
                if let Some(inn) = innovation(&cur, &z.as_vector(), &h, &jac, &r) {
                    cur = kalman_correct(&cur, &jac, &r, &inn);
                }
            }
            SensorIndex::Camera(c) => {
                let z = &scan.cameras[*c].as_ref().expect("camera")[j];
                let Ok((h, jac)) = camera_observation(&model.cameras[*c], &cur.mean) else {
                    continue;
                };
                let r = model.camera_noise.variances();
                if let Some(inn) = innovation(&cur, &z.bbox.as_vector(), &h, &jac, &r) {
                    cur = kalman_correct(&cur, &jac, &r, &inn);
                }
            }
        }
    }
    cur
}

fn association_maps(psi: &PsiTable, cfg: &FilterConfig, iterations: usize, seed: u64) -> Result<Vec<WeightedMap>> {
    let sample = || gibbs_sample_mixed(psi, iterations, seed, cfg.gibbs_beta, cfg.map_floor).maps;
    match cfg.association {
        AssociationStrategy::Enumerate => enumerate_nonzero_maps(psi, ENUMERATION_BUDGET),
        AssociationStrategy::Gibbs => Ok(sample()),
        AssociationStrategy::Auto => {
            if psi.nonzero_budget() <= cfg.enumeration_budget {
                enumerate_nonzero_maps(psi, cfg.enumeration_budget)
            } else {
                Ok(sample())
            }
        }
    }
}

/// The map set seen per sensor. In the update every label exists and a
/// measurement is exclusive only within its own sensor, so any mix of
/// per-sensor columns taken from the found maps is itself a valid map. The
/// weights are summed over that whole product set, which factorizes.
struct SensorColumns {
    log_total: f64,
    /// `[sensor][label][j]`: probability that the label takes index `j`.
    marginals: Vec<Vec<Vec<f64>>>,
}

fn sensor_columns(psi: &PsiTable, maps: &[WeightedMap]) -> SensorColumns {
    let n = psi.n_labels();
    let mut log_total = 0.0;
    let mut marginals = Vec::with_capacity(psi.n_sensors());
    for s in 0..psi.n_sensors() {
        let columns: BTreeSet<Vec<i32>> = maps
            .iter()
            .map(|wm| (0..n).map(|l| wm.map.tuple(l).expect("all labels exist")[s]).collect())
            .collect();
        let weights: Vec<f64> = columns
            .iter()
            .map(|c| c.iter().enumerate().map(|(l, &j)| psi.log_psi(s, l, j as usize)).sum())
            .collect();
        let z = log_sum_exp(weights.iter().copied());
        log_total += z;
        let mut m = vec![vec![0.0; psi.n_measurements(s) + 1]; n];
        for (c, w) in columns.iter().zip(&weights) {
            let p = (w - z).exp();
            for (l, &j) in c.iter().enumerate() {
                m[l][j as usize] += p;
            }
        }
        marginals.push(m);
    }
    SensorColumns { log_total, marginals }
}

impl SensorColumns {
    /// Tuple distribution of one label, dropping tuples lighter than
    /// `floor` times the heaviest.
    fn tuples(&self, label: usize, floor: f64) -> Vec<(Vec<i32>, f64)> {
        let mut out: Vec<(Vec<i32>, f64)> = vec![(Vec::new(), 1.0)];
        for m in &self.marginals {
            let row = &m[label];
            let best = row.iter().copied().fold(0.0, f64::max);
            out = out
                .into_iter()
                .flat_map(|(t, p)| {
                    row.iter().enumerate().filter(|(_, q)| **q > 0.0 && **q >= floor * best).map(move |(j, q)| {
                        let mut t = t.clone();
                        t.push(j as i32);
                        (t, p * q)
                    })
                })
                .collect();
        }
        let best = out.iter().map(|(_, p)| *p).fold(0.0, f64::max);
        out.retain(|(_, p)| *p >= floor * best);
        out
    }
}

/// Joint multi-sensor update. Each prior hypothesis yields one posterior
/// hypothesis whose weight sums its association maps and whose track
/// densities are the map-weighted mixtures of the conditioned tracks.
pub fn update(glmb: &GlmbDensity, scan: &Scan, model: &SensorModel, cfg: &FilterConfig, seed: u64) -> Result<UpdateOutput> {
    let sensors = active_sensors(scan);
    if sensors.is_empty() {
        return Err(Error::EmptyFrameSet);
    }
    let counts: Vec<usize> = sensors.iter().map(|s| measurement_count(scan, *s)).collect();
    let mut rows: HashMap<(*const GaussianState, usize), Arc<Vec<f64>>> = HashMap::new();
    let mut conditioned: HashMap<(*const GaussianState, Vec<i32>), Arc<GaussianState>> = HashMap::new();
    let prior_total = log_sum_exp(glmb.hypotheses.iter().map(|h| h.log_weight));

    let mut posterior = Vec::with_capacity(glmb.hypotheses.len());
    let mut local_mass: Vec<Vec<Vec<f64>>> = Vec::with_capacity(glmb.hypotheses.len());
    for (hi, h) in glmb.hypotheses.iter().enumerate() {
        let zero_mass: Vec<Vec<f64>> = counts.iter().map(|m| vec![0.0; *m]).collect();
        if h.is_empty() {
            posterior.push(h.clone());
            local_mass.push(zero_mass);
            continue;
        }
        let tracks: Vec<(&Label, &Arc<GaussianState>)> = h.tracks.iter().collect();
        let mut mats = Vec::with_capacity(sensors.len());
        for (s, sensor) in sensors.iter().enumerate() {
            let mut m = DMatrix::from_element(tracks.len(), counts[s] + 1, f64::NEG_INFINITY);
            for (i, (_, g)) in tracks.iter().enumerate() {
                let row = rows
                    .entry((Arc::as_ptr(g), s))
                    .or_insert_with(|| Arc::new(psi_row(model, scan, *sensor, g, cfg.gate)));
                for (j, v) in row.iter().enumerate() {
                    m[(i, j)] = *v;
                }
            }
            mats.push(m);
        }
        let psi = PsiTable::from_log(mats)?;
        let iterations = if cfg.gibbs_weight_proportional {
            let w = (h.log_weight - prior_total).exp();
            ((cfg.gibbs_iterations as f64 * w).ceil() as usize).max(cfg.gibbs_min_iterations)
        } else {
            cfg.gibbs_iterations
        };
        let maps = association_maps(&psi, cfg, iterations, mix_seed(seed, hi as u64))?;
        if maps.is_empty() {
            continue;
        }
        let columns = sensor_columns(&psi, &maps);
        let total = columns.log_total;
        if !total.is_finite() {
            continue;
        }
        let mut mass = zero_mass;
        for (s, m) in columns.marginals.iter().enumerate() {
            for row in m {
                for (j, p) in row.iter().enumerate().skip(1) {
                    mass[s][j - 1] += p;
                }
            }
        }
        let per_label: Vec<Vec<(Vec<i32>, f64)>> = (0..tracks.len()).map(|i| columns.tuples(i, cfg.map_floor)).collect();
        let mut new_tracks = BTreeMap::new();
        for (i, (label, g)) in tracks.iter().enumerate() {
            let mut comps: Vec<(f64, Arc<GaussianState>)> = Vec::with_capacity(per_label[i].len());
            for (tuple, p) in &per_label[i] {
                let arc = if tuple.iter().all(|j| *j == 0) {
                    (*g).clone()
                } else {
                    conditioned
                        .entry((Arc::as_ptr(g), tuple.clone()))
                        .or_insert_with(|| Arc::new(condition(model, scan, &sensors, tuple, g)))
                        .clone()
                };
                comps.push((*p, arc));
            }
            let merged = if comps.len() == 1 {
                comps.pop().expect("one").1
            } else {
                let refs: Vec<(f64, &GaussianState)> = comps.iter().map(|(p, a)| (*p, a.as_ref())).collect();
                Arc::new(merge_gaussians(&refs))
            };
            new_tracks.insert(**label, merged);
        }
        posterior.push(Hypothesis {
            log_weight: h.log_weight + total,
            tracks: new_tracks,
        });
        local_mass.push(mass);
    }

    let mut out = GlmbDensity {
        class: glmb.class,
        hypotheses: posterior,
    };
    if out.hypotheses.iter().all(|h| !h.log_weight.is_finite()) {
        // Nothing explains the data; keep the prediction.
        out = glmb.clone();
        local_mass = vec![counts.iter().map(|m| vec![0.0; *m]).collect(); out.hypotheses.len()];
    }
    out.normalize();

    let mut mass: Vec<Vec<f64>> = counts.iter().map(|m| vec![0.0; *m]).collect();
    for (h, lm) in out.hypotheses.iter().zip(&local_mass) {
        let w = h.log_weight.exp();
        for (s, v) in lm.iter().enumerate() {
            for (j, x) in v.iter().enumerate() {
                mass[s][j] += w * x;
            }
        }
    }
    let mut result = AssociationMass {
        cameras: vec![Vec::new(); scan.cameras.len()],
        lidar: Vec::new(),
    };
    for (s, sensor) in sensors.iter().enumerate() {
        let v: Vec<f64> = mass[s].iter().map(|x| x.clamp(0.0, 1.0)).collect();
        match sensor {
            SensorIndex::Lidar => result.lidar = v,
            SensorIndex::Camera(c) => result.cameras[*c] = v,
        }
    }
    out.sort();
    Ok(UpdateOutput { glmb: out, mass: result })
}

// ------------------------------------------------------------------ birth

fn birth_probabilities(mass: &[f64], cfg: &FilterConfig) -> Vec<f64> {
    let raw: Vec<f64> = mass.iter().map(|m| cfg.r_b_max * (1.0 - m.clamp(0.0, 1.0))).collect();
    let normalizer = (raw.iter().sum::<f64>() / cfg.birth_budget).max(1.0);
    raw.iter().map(|r| (r / normalizer).clamp(0.0, cfg.r_b_max)).collect()
}

fn birth_covariance(position_cov: &nalgebra::Matrix3<f64>, cfg: &FilterConfig) -> StateMatrix {
    let mut cov = StateMatrix::zeros();
    for a in 0..3 {
        for b in 0..3 {
            cov[(2 * a, 2 * b)] = position_cov[(a, b)];
        }
        cov[(2 * a + 1, 2 * a + 1)] = cfg.birth_velocity_var[a];
        cov[(6 + a, 6 + a)] = cfg.birth_shape_var[a];
    }
    cov
}

/// Birth candidates for step `next_step` from a LiDAR frame. `tau` is the
/// filter's running disambiguator and is advanced once per measurement.
pub fn adaptive_birth(
    lidar: &[LidarMeasurement],
    mass: &[f64],
    next_step: u64,
    tau: &mut u64,
    cfg: &FilterConfig,
) -> Result<Vec<BirthComponent>> {
    let r = birth_probabilities(mass, cfg);
    let pos_cov = nalgebra::Matrix3::from_diagonal(&Vector3::from(cfg.birth_position_var));
    let cov = birth_covariance(&pos_cov, cfg);
    let mut out = Vec::with_capacity(lidar.len());
    for (z, r_b) in lidar.iter().zip(r) {
        let mean = compose_state(&z.center, &Vector3::zeros(), &log_dims_to_zeta(&z.log_dims));
        let label = Label::new(next_step, *tau);
        *tau += 1;
        out.push(BirthComponent::new(r_b, GaussianState::new(mean, cov)?, label)?);
    }
    Ok(out)
}

/// Places a class-typical ellipsoid along the box centre's viewing ray at
/// the depth whose projected height matches the box.
pub fn camera_birth_density(cam: &CameraModel, z: &CameraMeasurement, cfg: &FilterConfig) -> Option<GaussianState> {
    let zeta = Vector3::from(z.class.typical_size()).map(|d| (d / 2.0).ln());
    // The box centre is not the image of the ellipsoid centre, so the ray
    // pixel is corrected a few times after each depth search.
    let mut px = z.bbox.center;
    let mut p = Vector3::zeros();
    let mut depth = cfg.camera_birth_depth[0];
    for _ in 0..8 {
        depth = depth_for_height(cam, &px, &zeta, z.bbox.log_extent[1], cfg.camera_birth_depth)?;
        p = cam.back_project(&px, depth)?;
        let bb = project_ellipsoid(cam, &p, &zeta).ok()?;
        let shift = bb.center - z.bbox.center;
        if shift.norm() < 1e-9 {
            break;
        }
        px -= shift;
    }
    let ray = (p - cam.center()).normalize();
    let along = (cfg.camera_birth_depth_sd * depth).powi(2);
    let across = cfg.birth_position_var[0];
    let pos_cov = nalgebra::Matrix3::identity() * across + ray * ray.transpose() * (along - across).max(0.0);
    let mean = compose_state(&p, &Vector3::zeros(), &zeta);
    GaussianState::new(mean, birth_covariance(&pos_cov, cfg)).ok()
}

/// Depth along the ray through `px` at which the ellipsoid's projected
/// log-height equals `target`, clamped to `range`.
fn depth_for_height(
    cam: &CameraModel,
    px: &nalgebra::Vector2<f64>,
    zeta: &Vector3<f64>,
    target: f64,
    range: [f64; 2],
) -> Option<f64> {
    let err = |d: f64| -> Option<f64> {
        let p = cam.back_project(px, d)?;
        project_ellipsoid(cam, &p, zeta).ok().map(|b| b.log_extent[1] - target)
    };
    let (mut lo, mut hi) = (range[0], range[1]);
    if err(lo)? <= 0.0 {
        return Some(lo);
    }
    if err(hi)? >= 0.0 {
        return Some(hi);
    }
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if err(mid)? > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

/// Camera-driven births, used when no LiDAR is available.
pub fn camera_birth(
    model: &SensorModel,
    scan: &Scan,
    mass: &AssociationMass,
    next_step: u64,
    tau: &mut u64,
    cfg: &FilterConfig,
) -> Result<Vec<BirthComponent>> {
    let mut out = Vec::new();
    for (c, frame) in scan.cameras.iter().enumerate() {
        let Some(frame) = frame else { continue };
        let m = mass.cameras.get(c).cloned().unwrap_or_default();
        let m: Vec<f64> = (0..frame.len()).map(|j| m.get(j).copied().unwrap_or(0.0)).collect();
        for (z, r_b) in frame.iter().zip(birth_probabilities(&m, cfg)) {
            let label = Label::new(next_step, *tau);
            *tau += 1;
            if let Some(density) = camera_birth_density(&model.cameras[c], z, cfg) {
                out.push(BirthComponent::new(r_b, density, label)?);
            }
        }
    }
    Ok(out)
}

// --------------------------------------------------------- prune / extract

/// Drops hypotheses below `weight_floor`, keeps the `max_hypotheses` best
/// and renormalizes; the best hypothesis always survives.
pub fn prune(glmb: &GlmbDensity, weight_floor: f64, max_hypotheses: usize) -> GlmbDensity {
    let mut out = glmb.clone();
    out.normalize();
    out.sort();
    let floor = weight_floor.ln();
    let keep = out
        .hypotheses
        .iter()
        .take(max_hypotheses.max(1))
        .enumerate()
        .take_while(|(i, h)| *i == 0 || h.log_weight >= floor)
        .count();
    out.hypotheses.truncate(keep.max(1));
    out.normalize();
    out
}

/// MAP-cardinality estimate, reported from the best hypothesis of that
/// cardinality.
pub fn extract(glmb: &GlmbDensity) -> Vec<TrackEstimate> {
    let card = glmb.cardinality_distribution();
    let n_star = card
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (n, p)| if *p > acc.1 { (n, *p) } else { acc })
        .0;
    let existence = glmb.existence_probabilities();
    let Some(best) = glmb
        .hypotheses
        .iter()
        .filter(|h| h.len() == n_star)
        .max_by(|a, b| a.log_weight.total_cmp(&b.log_weight).then_with(|| b.tracks.keys().cmp(a.tracks.keys())))
    else {
        return Vec::new();
    };
    best.tracks
        .iter()
        .map(|(label, g)| TrackEstimate {
            label: *label,
            class: glmb.class,
            center: position(&g.mean),
            dims: shape(&g.mean).map(|z| 2.0 * z.exp()),
            velocity: velocity(&g.mean),
            existence: existence.get(label).copied().unwrap_or(0.0).min(1.0),
        })
        .collect()
}

// ------------------------------------------------------------------ steps

/// The recursion for one class.
#[derive(Clone, Debug)]
pub struct ClassFilter {
    class: ObjectClass,
    model: ClassModel,
    glmb: GlmbDensity,
    births: Vec<BirthComponent>,
    step: u64,
    tau: u64,
    seed: u64,
}

impl ClassFilter {
    pub fn new(class: ObjectClass, model: ClassModel, seed: u64) -> Result<Self> {
        model.motion.validate()?;
        model.survival.validate()?;
        model.filter.validate()?;
        model.sensors.detection.validate()?;
        Ok(Self {
            class,
            model,
            glmb: GlmbDensity::empty(class),
            births: Vec::new(),
            step: 0,
            tau: 0,
            seed,
        })
    }

    /// Starts from a given density instead of the empty one.
    pub fn with_density(mut self, glmb: GlmbDensity) -> Self {
        self.glmb = glmb;
        self
    }

    pub fn class(&self) -> ObjectClass {
        self.class
    }

    pub fn density(&self) -> &GlmbDensity {
        &self.glmb
    }

    pub fn model(&self) -> &ClassModel {
        &self.model
    }

    pub fn pending_births(&self) -> &[BirthComponent] {
        &self.births
    }

    /// predict → update → birth → prune → extract. `scan` must already be
    /// restricted to this class and gated.
    pub fn step(&mut self, scan: &Scan) -> Result<Vec<TrackEstimate>> {
        let cfg = &self.model.filter;
        let births = std::mem::take(&mut self.births);
        let births: Vec<BirthComponent> = births.into_iter().filter(|b| b.r_b >= cfg.r_b_min).collect();
        let predicted = predict(&self.glmb, &births, &self.model.motion, &self.model.survival, cfg)?;
        let posterior = if scan.is_empty_of_sensors() {
            predicted
        } else {
            let out = update(&predicted, scan, &self.model.sensors, cfg, mix_seed(self.seed, self.step))?;
            let next = self.step + 1;
            self.births = match cfg.birth_source {
                BirthSource::Lidar => match &scan.lidar {
                    Some(frame) => adaptive_birth(frame, &out.mass.lidar, next, &mut self.tau, cfg)?,
                    None => Vec::new(),
                },
                BirthSource::Camera => camera_birth(&self.model.sensors, scan, &out.mass, next, &mut self.tau, cfg)?,
                BirthSource::None => Vec::new(),
            };
            out.glmb
        };
        self.glmb = prune(&posterior, cfg.weight_floor, cfg.max_hypotheses);
        self.step += 1;
        Ok(extract(&self.glmb))
    }
}

/// Independent per-class filters behind one score gate.
#[derive(Clone, Debug)]
pub struct MultiClassTracker {
    filters: Vec<ClassFilter>,
    score_gate: f64,
}

impl MultiClassTracker {
    pub fn new(models: BTreeMap<ObjectClass, ClassModel>, score_gate: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&score_gate) {
            return Err(Error::InvalidConfig("score gate must be in [0, 1]".into()));
        }
        let filters = models
            .into_iter()
            .map(|(class, model)| ClassFilter::new(class, model, seed))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { filters, score_gate })
    }

    pub fn filters(&self) -> &[ClassFilter] {
        &self.filters
    }

    /// One step over all classes; estimates are ordered by class then label.
    pub fn step(&mut self, scan: &Scan) -> Result<Vec<TrackEstimate>> {
        let gated = scan.gated(self.score_gate);
        let mut out = Vec::new();
        for f in &mut self.filters {
            out.extend(f.step(&gated.for_class(f.class))?);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::association::enumerate_maps;
    use crate::geometry::{state_to_lidar_box, BBox2D};
    use crate::sensors::{CameraNoise, ClutterConfig, DetectionConfig, LidarNoise};
    use approx::assert_relative_eq;
    use nalgebra::Matrix3;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn lidar_model(p_d: f64, clutter: f64) -> SensorModel {
        SensorModel {
            cameras: Vec::new(),
            camera_noise: CameraNoise::for_class(ObjectClass::Car),
            lidar_noise: LidarNoise::for_class(ObjectClass::Car),
            detection: DetectionConfig {
                p_d_lidar: p_d,
                lidar_range: 1e6,
                ..DetectionConfig::default()
            },
            camera_clutter: Vec::new(),
            lidar_clutter: ClutterConfig {
                rate: clutter,
                region_volume: 1e4,
            },
        }
    }

    fn rig_model() -> SensorModel {
        let k = Matrix3::new(400.0, 0.0, 320.0, 0.0, 400.0, 240.0, 0.0, 0.0, 1.0);
        let cam = |name: &str, heading: f64| {
            let (s, c) = heading.sin_cos();
            let r = Matrix3::new(s, -c, 0.0, 0.0, 0.0, -1.0, c, s, 0.0);
            CameraModel::from_pose(name, k, r, Vector3::new(0.0, 0.0, 1.5), 640.0, 480.0).unwrap()
        };
        let mut m = lidar_model(0.9, 2.0);
        m.cameras = vec![cam("front", 0.0), cam("left", 0.6)];
        m.camera_clutter = vec![
            ClutterConfig {
                rate: 2.0,
                region_volume: 640.0 * 480.0 * 25.0,
            };
            2
        ];
        m
    }

    fn track(x: f64, y: f64) -> GaussianState {
        let mean = compose_state(&Vector3::new(x, y, 0.0), &Vector3::new(1.0, 0.0, 0.0), &Vector3::new(0.0, 0.8, -0.1));
        let cov = StateMatrix::from_diagonal(&StateVector::from_column_slice(&[
            0.5, 0.3, 0.5, 0.3, 0.2, 0.1, 0.01, 0.01, 0.01,
        ]));
        GaussianState::new(mean, cov).unwrap()
    }

    fn lidar_z(g: &StateVector, offset: [f64; 3]) -> LidarMeasurement {
        let (c, d) = state_to_lidar_box(g);
        LidarMeasurement {
            center: c + Vector3::from(offset),
            log_dims: d,
            score: 0.9,
            class: ObjectClass::Car,
            yaw: 0.0,
        }
    }

    fn density(hyps: Vec<(f64, Vec<(Label, GaussianState)>)>) -> GlmbDensity {
        let mut g = GlmbDensity {
            class: ObjectClass::Car,
            hypotheses: hyps
                .into_iter()
                .map(|(w, t)| Hypothesis {
                    log_weight: w.ln(),
                    tracks: t.into_iter().map(|(l, g)| (l, Arc::new(g))).collect(),
                })
                .collect(),
        };
        g.normalize();
        g
    }

    fn label_set_weights(g: &GlmbDensity) -> BTreeMap<Vec<Label>, f64> {
        g.hypotheses
            .iter()
            .map(|h| (h.labels().copied().collect(), h.log_weight.exp()))
            .collect()
    }

    fn total_variation(a: &BTreeMap<Vec<Label>, f64>, b: &BTreeMap<Vec<Label>, f64>) -> f64 {
        let keys: std::collections::BTreeSet<_> = a.keys().chain(b.keys()).collect();
        0.5 * keys
            .into_iter()
            .map(|k| (a.get(k).copied().unwrap_or(0.0) - b.get(k).copied().unwrap_or(0.0)).abs())
            .sum::<f64>()
    }

    fn l(k: u64, t: u64) -> Label {
        Label::new(k, t)
    }

    #[test]
    fn subset_stream_is_sorted_and_complete() {
        let costs = vec![0.1, 0.5, 0.5, 1.3, 2.0];
        let mut s = SubsetStream::new(costs.clone());
        let mut seen = Vec::new();
        while let Some((c, f)) = s.next() {
            let direct: f64 = f.iter().map(|i| costs[*i]).sum();
            assert_relative_eq!(c, direct, epsilon = 1e-12);
            seen.push((c, f));
        }
        assert_eq!(seen.len(), 32);
        assert!(seen.windows(2).all(|w| w[0].0 <= w[1].0 + 1e-12));
        let mut sets: Vec<Vec<usize>> = seen.into_iter().map(|s| s.1).collect();
        sets.sort();
        sets.dedup();
        assert_eq!(sets.len(), 32);
    }

    #[test]
    fn predict_examples() {
        let cfg = FilterConfig::default();
        let motion = MotionConfig::default();
        let sure = SurvivalConfig {
            p_s_base: 1.0,
            p_s_outside: 1.0,
            ..SurvivalConfig::default()
        };
        let prior = density(vec![
            (0.7, vec![(l(0, 0), track(1.0, 2.0))]),
            (0.3, vec![(l(0, 0), track(1.0, 2.0)), (l(0, 1), track(5.0, 2.0))]),
        ]);
        let out = predict(&prior, &[], &motion, &sure, &cfg).unwrap();
        let tr = build_transition(&motion);
        assert_eq!(out.hypotheses.len(), 2);
        assert_relative_eq!(out.hypotheses[0].log_weight.exp(), 0.7, epsilon = 1e-12);
        assert_relative_eq!(out.hypotheses[1].log_weight.exp(), 0.3, epsilon = 1e-12);
        let expected = predict_state(&track(5.0, 2.0), &tr);
        assert_eq!(*out.hypotheses[1].tracks[&l(0, 1)], expected);

        let birth = BirthComponent::new(0.03, track(0.0, 0.0), l(1, 0)).unwrap();
        let out = predict(&GlmbDensity::empty(ObjectClass::Car), &[birth.clone()], &motion, &sure, &cfg).unwrap();
        let w = label_set_weights(&out);
        assert_relative_eq!(w[&vec![]], 0.97, epsilon = 1e-12);
        assert_relative_eq!(w[&vec![l(1, 0)]], 0.03, epsilon = 1e-12);

        let dead = SurvivalConfig {
            p_s_base: 0.0,
            p_s_outside: 0.0,
            ..SurvivalConfig::default()
        };
        let out = predict(&prior, &[birth], &motion, &dead, &cfg).unwrap();
        for h in &out.hypotheses {
            assert!(h.labels().all(|x| *x == l(1, 0)));
        }
        assert_relative_eq!(out.weights().iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn predict_rejects_reused_labels() {
        let cfg = FilterConfig::default();
        let prior = density(vec![(1.0, vec![(l(0, 0), track(1.0, 2.0))])]);
        let b = BirthComponent::new(0.1, track(0.0, 0.0), l(0, 0)).unwrap();
        let err = predict(&prior, &[b], &MotionConfig::default(), &SurvivalConfig::default(), &cfg).unwrap_err();
        assert!(matches!(err, Error::DuplicateBirthLabel(_)));
        let b1 = BirthComponent::new(0.1, track(0.0, 0.0), l(1, 0)).unwrap();
        let err = predict(&prior, &[b1.clone(), b1], &MotionConfig::default(), &SurvivalConfig::default(), &cfg);
        assert!(err.is_err());
    }

    /// Brute force over all 2^n survive/birth patterns.
    #[test]
    fn predict_matches_exhaustive_branching() {
        let cfg = FilterConfig {
            predict_floor: 0.0,
            ..FilterConfig::default()
        };
        let surv = SurvivalConfig {
            p_s_base: 0.8,
            ..SurvivalConfig::default()
        };
        let prior = density(vec![
            (0.6, vec![(l(0, 0), track(1.0, 2.0)), (l(0, 1), track(3.0, 2.0))]),
            (0.4, vec![(l(0, 0), track(1.0, 2.0))]),
        ]);
        let births = vec![
            BirthComponent::new(0.3, track(9.0, 9.0), l(1, 0)).unwrap(),
            BirthComponent::new(0.05, track(-9.0, 9.0), l(1, 1)).unwrap(),
        ];
        let out = predict(&prior, &births, &MotionConfig::default(), &surv, &cfg).unwrap();
        let mut oracle: BTreeMap<Vec<Label>, f64> = BTreeMap::new();
        for h in &prior.hypotheses {
            let mut items: Vec<(Label, f64)> = h.labels().map(|x| (*x, 0.8)).collect();
            items.extend(births.iter().map(|b| (b.label, b.r_b)));
            for mask in 0..(1u32 << items.len()) {
                let mut w = h.log_weight.exp();
                let mut set = Vec::new();
                for (i, (lab, p)) in items.iter().enumerate() {
                    if mask >> i & 1 == 1 {
                        w *= p;
                        set.push(*lab);
                    } else {
                        w *= 1.0 - p;
                    }
                }
                set.sort();
                *oracle.entry(set).or_insert(0.0) += w;
            }
        }
        let got = label_set_weights(&out);
        assert_eq!(got.len(), oracle.len());
        for (k, v) in &oracle {
            assert_relative_eq!(got[k], *v, epsilon = 1e-12);
        }
    }

    #[test]
    fn predict_cap_keeps_the_best() {
        let cfg = FilterConfig {
            predict_cap: 5,
            ..FilterConfig::default()
        };
        let full_cfg = FilterConfig {
            predict_floor: 0.0,
            ..FilterConfig::default()
        };
        let births: Vec<BirthComponent> = (0..6)
            .map(|i| BirthComponent::new(0.1 + 0.1 * i as f64, track(i as f64, 0.0), l(1, i)).unwrap())
            .collect();
        let empty = GlmbDensity::empty(ObjectClass::Car);
        let capped = predict(&empty, &births, &MotionConfig::default(), &SurvivalConfig::default(), &cfg).unwrap();
        let full = predict(&empty, &births, &MotionConfig::default(), &SurvivalConfig::default(), &full_cfg).unwrap();
        assert_eq!(capped.hypotheses.len(), 5);
        let top: Vec<Vec<Label>> = full.hypotheses[..5].iter().map(|h| h.labels().copied().collect()).collect();
        let got: Vec<Vec<Label>> = capped.hypotheses.iter().map(|h| h.labels().copied().collect()).collect();
        assert_eq!(got, top);
    }

    /// Textbook Kalman filter in dense matrices.
    struct Kalman {
        x: DMatrix<f64>,
        p: DMatrix<f64>,
    }

    impl Kalman {
        fn predict(&mut self, tr: &crate::dynamics::Transition) {
            let f = DMatrix::from_fn(9, 9, |i, j| tr.f[(i, j)]);
            let q = DMatrix::from_fn(9, 9, |i, j| tr.q[(i, j)]);
            let b = DMatrix::from_fn(9, 1, |i, _| tr.b[i]);
            self.x = &f * &self.x + b;
            self.p = &f * &self.p * f.transpose() + q;
        }

        fn update(&mut self, z: &[f64], r: &[f64]) {
            let mut h = DMatrix::zeros(6, 9);
            for (row, col) in [0, 2, 4, 6, 7, 8].iter().enumerate() {
                h[(row, *col)] = 1.0;
            }
            let mut zz = DMatrix::from_column_slice(6, 1, z);
            for i in 3..6 {
                zz[(i, 0)] -= std::f64::consts::LN_2;
            }
            let rr = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(r));
            let s = &h * &self.p * h.transpose() + rr;
            let k = &self.p * h.transpose() * s.try_inverse().unwrap();
            self.x = &self.x + &k * (zz - &h * &self.x);
            self.p = (DMatrix::identity(9, 9) - &k * &h) * &self.p;
        }
    }

    #[test]
    fn single_object_reduces_to_kalman() {
        let motion = MotionConfig::default();
        let tr = build_transition(&motion);
        let cfg = FilterConfig {
            birth_source: BirthSource::None,
            gate: f64::INFINITY,
            ..FilterConfig::default()
        };
        let model = ClassModel {
            motion: motion.clone(),
            survival: SurvivalConfig {
                p_s_base: 1.0,
                p_s_outside: 1.0,
                ..SurvivalConfig::default()
            },
            sensors: lidar_model(1.0, 0.0),
            filter: cfg,
        };
        let prior = track(2.0, -3.0);
        let mut filter = ClassFilter::new(ObjectClass::Car, model.clone(), 7)
            .unwrap()
            .with_density(density(vec![(1.0, vec![(l(0, 0), prior.clone())])]));
        let mut kf = Kalman {
            x: DMatrix::from_column_slice(9, 1, prior.mean.as_slice()),
            p: DMatrix::from_column_slice(9, 9, prior.cov.as_slice()),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut truth = prior.mean;
        let r = model.sensors.lidar_noise.variances();
        for _ in 0..50 {
            truth = crate::dynamics::sample_transition(&truth, &tr, &mut rng);
            let (c, d) = state_to_lidar_box(&truth);
            let noise: Vec<f64> = (0..6).map(|i| r[i].sqrt() * rng.sample::<f64, _>(rand_distr::StandardNormal)).collect();
            let z = LidarMeasurement {
                center: c + Vector3::new(noise[0], noise[1], noise[2]),
                log_dims: d + Vector3::new(noise[3], noise[4], noise[5]),
                score: 0.9,
                class: ObjectClass::Car,
                yaw: 0.0,
            };
            kf.predict(&tr);
            kf.update(z.as_vector().as_slice(), r.as_slice());
            filter
                .step(&Scan {
                    cameras: Vec::new(),
                    lidar: Some(vec![z]),
                })
                .unwrap();
            let g = filter.density();
            assert_eq!(g.hypotheses.len(), 1);
            let t = &g.hypotheses[0].tracks[&l(0, 0)];
            for i in 0..9 {
                assert!((t.mean[i] - kf.x[(i, 0)]).abs() <= 1e-9, "mean {i}");
                for j in 0..9 {
                    assert!((t.cov[(i, j)] - kf.p[(i, j)]).abs() <= 1e-9, "cov {i},{j}");
                }
            }
        }
    }

    #[test]
    /// Every track here is seen by the same sensors, so the miss factor is
    /// common to all hypotheses of equal size.
    fn empty_frames_leave_densities_unchanged() {
        let model = rig_model();
        let cfg = FilterConfig::default();
        let prior = density(vec![
            (0.5, vec![(l(0, 0), track(10.0, 1.0)), (l(0, 1), track(12.0, 1.5))]),
            (0.3, vec![(l(0, 0), track(10.0, 1.0)), (l(0, 2), track(30.0, 3.0))]),
            (0.2, vec![(l(0, 1), track(12.0, 1.5)), (l(0, 2), track(30.0, 3.0))]),
        ]);
        let scan = Scan {
            cameras: vec![Some(Vec::new()), Some(Vec::new())],
            lidar: Some(Vec::new()),
        };
        let out = update(&prior, &scan, &model, &cfg, 0).unwrap();
        let before: Vec<Vec<Label>> = prior.hypotheses.iter().map(|h| h.labels().copied().collect()).collect();
        let after: Vec<Vec<Label>> = out.glmb.hypotheses.iter().map(|h| h.labels().copied().collect()).collect();
        assert_eq!(before, after);
        for (a, b) in prior.hypotheses.iter().zip(&out.glmb.hypotheses) {
            for (x, y) in a.tracks.values().zip(b.tracks.values()) {
                assert_eq!(**x, **y);
            }
        }
        assert!(update(&prior, &Scan::default(), &model, &cfg, 0).is_err());
    }

    fn random_instance(rng: &mut ChaCha8Rng) -> (GlmbDensity, Scan) {
        let n_tracks = rng.random_range(1..=3u64);
        let tracks: Vec<(Label, GaussianState)> = (0..n_tracks)
            .map(|t| (l(0, t), track(rng.random_range(8.0..20.0), rng.random_range(-4.0..4.0))))
            .collect();
        let mut hyps = Vec::new();
        for mask in 1..(1u32 << n_tracks) {
            let set: Vec<(Label, GaussianState)> =
                tracks.iter().enumerate().filter(|(i, _)| mask >> i & 1 == 1).map(|(_, t)| t.clone()).collect();
            hyps.push((rng.random_range(0.1..1.0), set));
        }
        let model = rig_model();
        let mut scan = Scan {
            cameras: vec![Some(Vec::new()), Some(Vec::new())],
            lidar: Some(Vec::new()),
        };
        for (_, g) in &tracks {
            for c in 0..2 {
                if rng.random_bool(0.7) {
                    if let Ok(b) = project_ellipsoid(&model.cameras[c], &position(&g.mean), &shape(&g.mean)) {
                        let center = b.center + nalgebra::Vector2::new(rng.random_range(-15.0..15.0), rng.random_range(-15.0..15.0));
                        scan.cameras[c].as_mut().unwrap().push(CameraMeasurement {
                            bbox: BBox2D {
                                center,
                                log_extent: b.log_extent,
                            },
                            score: 0.9,
                            class: ObjectClass::Car,
                            camera: c,
                        });
                    }
                }
            }
            if rng.random_bool(0.8) {
                let o = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 0.0];
                scan.lidar.as_mut().unwrap().push(lidar_z(&g.mean, o));
            }
        }
        for c in 0..2 {
            let frame = scan.cameras[c].as_mut().unwrap();
            frame.truncate(3);
        }
        scan.lidar.as_mut().unwrap().truncate(3);
        (density(hyps), scan)
    }

    #[test]
    fn gibbs_update_matches_enumeration() {
        let model = rig_model();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let enumerate = FilterConfig {
            association: AssociationStrategy::Enumerate,
            ..FilterConfig::default()
        };
        let gibbs = FilterConfig {
            association: AssociationStrategy::Gibbs,
            gibbs_weight_proportional: false,
            ..FilterConfig::default()
        };
        for case in 0..20 {
            let (prior, scan) = random_instance(&mut rng);
            let a = update(&prior, &scan, &model, &enumerate, case).unwrap();
            let b = update(&prior, &scan, &model, &gibbs, case).unwrap();
            let tv = total_variation(&label_set_weights(&a.glmb), &label_set_weights(&b.glmb));
            assert!(tv <= 1e-6, "case {case}: tv {tv}");
        }
    }

    #[test]
    fn sensor_columns_sum_the_product_set() {
        let psi = PsiTable::from_values(vec![
            DMatrix::from_row_slice(2, 3, &[0.1, 2.0, 0.5, 0.2, 1.0, 3.0]),
            DMatrix::from_row_slice(2, 2, &[0.3, 4.0, 0.6, 2.0]),
        ])
        .unwrap();
        let all = enumerate_maps(&psi, 1e6).unwrap();
        let exact = log_sum_exp(all.iter().map(|m| m.log_weight));
        let c = sensor_columns(&psi, &all);
        assert_relative_eq!(c.log_total, exact, epsilon = 1e-12);

        // two maps that differ on both sensors imply the two cross maps
        let pick = |e: [i32; 4]| all.iter().find(|m| m.map.entries() == e).unwrap().clone();
        let seen = [pick([1, 0, 2, 1]), pick([2, 1, 1, 0])];
        let crossed = [pick([1, 1, 2, 0]), pick([2, 0, 1, 1])];
        let want = log_sum_exp(seen.iter().chain(&crossed).map(|m| m.log_weight));
        let c = sensor_columns(&psi, &seen);
        assert_relative_eq!(c.log_total, want, epsilon = 1e-12);
        let tuples = c.tuples(0, 0.0);
        assert_eq!(tuples.len(), 4);
        assert_relative_eq!(tuples.iter().map(|t| t.1).sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn enumeration_covers_every_map() {
        let model = rig_model();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (prior, scan) = random_instance(&mut rng);
        let cfg = FilterConfig {
            association: AssociationStrategy::Enumerate,
            ..FilterConfig::default()
        };
        let out = update(&prior, &scan, &model, &cfg, 0).unwrap();
        // Re-derive one hypothesis weight from the full (zero-including) enumeration.
        let h = &prior.hypotheses[prior.hypotheses.len() - 1];
        let sensors = active_sensors(&scan);
        let mats: Vec<DMatrix<f64>> = sensors
            .iter()
            .map(|s| {
                let m = measurement_count(&scan, *s);
                DMatrix::from_fn(h.len(), m + 1, |i, j| {
                    psi_row(&model, &scan, *s, h.tracks.values().nth(i).unwrap(), cfg.gate)[j]
                })
            })
            .collect();
        let psi = PsiTable::from_log(mats).unwrap();
        let all = enumerate_maps(&psi, 1e9).unwrap();
        let lw = h.log_weight + log_sum_exp(all.iter().map(|m| m.log_weight));
        let norm = log_sum_exp(prior.hypotheses.iter().map(|hh| {
            let mats: Vec<DMatrix<f64>> = sensors
                .iter()
                .map(|s| {
                    let m = measurement_count(&scan, *s);
                    DMatrix::from_fn(hh.len(), m + 1, |i, j| {
                        psi_row(&model, &scan, *s, hh.tracks.values().nth(i).unwrap(), cfg.gate)[j]
                    })
                })
                .collect();
            let p = PsiTable::from_log(mats).unwrap();
            hh.log_weight + log_sum_exp(enumerate_maps(&p, 1e9).unwrap().iter().map(|m| m.log_weight))
        }));
        let key: Vec<Label> = h.labels().copied().collect();
        assert_relative_eq!(label_set_weights(&out.glmb)[&key], (lw - norm).exp(), epsilon = 1e-12);
    }

    #[test]
    fn measurement_order_does_not_matter() {
        let model = rig_model();
        let exact = FilterConfig {
            association: AssociationStrategy::Enumerate,
            ..FilterConfig::default()
        };
        let sampled = FilterConfig {
            association: AssociationStrategy::Gibbs,
            gibbs_weight_proportional: false,
            ..FilterConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let (prior, scan) = random_instance(&mut rng);
            let mut perm = scan.clone();
            perm.lidar.as_mut().unwrap().reverse();
            for c in perm.cameras.iter_mut() {
                c.as_mut().unwrap().reverse();
            }
            for cfg in [&exact, &sampled] {
                let a = update(&prior, &scan, &model, cfg, 1).unwrap();
                let b = update(&prior, &perm, &model, cfg, 1).unwrap();
                let wa = label_set_weights(&a.glmb);
                let wb = label_set_weights(&b.glmb);
                for (k, v) in &wa {
                    assert!((v - wb[k]).abs() <= 1e-9, "{:?}: {v} vs {}", cfg.association, wb[k]);
                }
            }
        }
    }

    #[test]
    fn association_mass_is_a_probability() {
        let model = rig_model();
        let cfg = FilterConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..10 {
            let (prior, scan) = random_instance(&mut rng);
            let out = update(&prior, &scan, &model, &cfg, 1).unwrap();
            assert_eq!(out.mass.lidar.len(), scan.lidar.as_ref().unwrap().len());
            for m in out.mass.lidar.iter().chain(out.mass.cameras.iter().flatten()) {
                assert!((0.0..=1.0).contains(m));
            }
            assert_relative_eq!(out.glmb.weights().iter().sum::<f64>(), 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn adaptive_birth_examples() {
        let cfg = FilterConfig::default();
        let z = LidarMeasurement {
            center: Vector3::new(1.0, 2.0, 0.5),
            log_dims: Vector3::new(1.8f64.ln(), 4.6f64.ln(), 1.7f64.ln()),
            score: 0.9,
            class: ObjectClass::Car,
            yaw: 0.3,
        };
        let mut tau = 4;
        let b = adaptive_birth(&[z.clone(), z.clone()], &[1.0, 0.0], 7, &mut tau, &cfg).unwrap();
        assert_eq!(b[0].r_b, 0.0);
        assert_relative_eq!(b[1].r_b, 0.03, epsilon = 1e-15);
        assert_eq!((b[0].label, b[1].label, tau), (l(7, 4), l(7, 5), 6));
        let zeta = shape(&b[1].density.mean);
        assert_relative_eq!(zeta[0], 0.9f64.ln(), epsilon = 1e-12);
        assert_relative_eq!(zeta[1], 2.3f64.ln(), epsilon = 1e-12);
        assert_relative_eq!(zeta[2], 0.85f64.ln(), epsilon = 1e-12);
        assert_eq!(velocity(&b[1].density.mean), Vector3::zeros());

        let many = vec![z; 100];
        let b = adaptive_birth(&many, &vec![0.0; 100], 1, &mut tau, &cfg).unwrap();
        let total: f64 = b.iter().map(|x| x.r_b).sum();
        assert_relative_eq!(total, cfg.birth_budget, epsilon = 1e-12);
    }

    #[test]
    fn camera_birth_lands_on_the_viewing_ray() {
        let model = rig_model();
        let cam = &model.cameras[0];
        let truth = compose_state(
            &Vector3::new(20.0, 1.0, 0.0),
            &Vector3::zeros(),
            &Vector3::from(ObjectClass::Car.typical_size()).map(|d| (d / 2.0).ln()),
        );
        let bbox = project_ellipsoid(cam, &position(&truth), &shape(&truth)).unwrap();
        let z = CameraMeasurement {
            bbox,
            score: 0.9,
            class: ObjectClass::Car,
            camera: 0,
        };
        let g = camera_birth_density(cam, &z, &FilterConfig::default()).unwrap();
        assert!((position(&g.mean) - position(&truth)).norm() < 1e-6);
    }

    #[test]
    fn prune_examples() {
        let prior = density(vec![
            (0.6, vec![]),
            (0.39, vec![(l(0, 0), track(0.0, 0.0))]),
            (0.01, vec![(l(0, 1), track(0.0, 0.0))]),
        ]);
        let w = prune(&prior, 0.02, 10).weights();
        assert_eq!(w.len(), 2);
        assert_relative_eq!(w[0], 0.6 / 0.99, epsilon = 1e-12);
        assert_relative_eq!(w[1], 0.39 / 0.99, epsilon = 1e-12);
        let one = prune(&prior, 0.0, 1);
        assert_eq!(one.weights(), vec![1.0]);
        assert_eq!(one.hypotheses[0].len(), 0);
        let guard = prune(&prior, 0.9, 10);
        assert_eq!(guard.hypotheses.len(), 1);
        assert_relative_eq!(guard.weights()[0], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn extract_examples() {
        let zero = GaussianState::new(StateVector::zeros(), StateMatrix::identity()).unwrap();
        let g = density(vec![
            (0.7, vec![(l(0, 1), zero.clone())]),
            (0.3, vec![(l(0, 1), zero.clone()), (l(0, 2), track(3.0, 3.0))]),
        ]);
        let est = extract(&g);
        assert_eq!(est.len(), 1);
        assert_eq!(est[0].label, l(0, 1));
        assert_relative_eq!(est[0].existence, 1.0, epsilon = 1e-12);
        assert_eq!(est[0].dims, Vector3::new(2.0, 2.0, 2.0));
        assert!(extract(&GlmbDensity::empty(ObjectClass::Car)).is_empty());
    }

    fn car_model(cfg: FilterConfig) -> ClassModel {
        ClassModel {
            motion: MotionConfig::default(),
            survival: SurvivalConfig::default(),
            sensors: lidar_model(0.9, 2.0),
            filter: cfg,
        }
    }

    #[test]
    fn classes_are_isolated() {
        let mut models = BTreeMap::new();
        models.insert(ObjectClass::Motorcycle, car_model(FilterConfig::default()));
        models.insert(ObjectClass::Bicycle, car_model(FilterConfig::default()));
        let mut tracker = MultiClassTracker::new(models, 0.47, 3).unwrap();
        let x = track(10.0, 0.0).mean;
        let mut z = lidar_z(&x, [0.0; 3]);
        z.class = ObjectClass::Motorcycle;
        let scan = Scan {
            cameras: Vec::new(),
            lidar: Some(vec![z]),
        };
        for _ in 0..6 {
            let est = tracker.step(&scan).unwrap();
            assert!(est.iter().all(|e| e.class == ObjectClass::Motorcycle));
        }
        let bike = &tracker.filters()[1];
        assert_eq!(bike.class(), ObjectClass::Bicycle);
        assert!(bike.density().hypotheses.iter().all(|h| h.is_empty()));
        let moto = &tracker.filters()[0];
        assert!(!extract(moto.density()).is_empty());
    }

    #[test]
    fn identical_streams_evolve_identically() {
        let mut models = BTreeMap::new();
        models.insert(ObjectClass::Car, car_model(FilterConfig::default()));
        models.insert(ObjectClass::Truck, car_model(FilterConfig::default()));
        let mut tracker = MultiClassTracker::new(models, 0.47, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..10 {
            let mut frame = Vec::new();
            for _ in 0..3 {
                let x = track(rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0)).mean;
                for class in [ObjectClass::Car, ObjectClass::Truck] {
                    let mut z = lidar_z(&x, [0.0; 3]);
                    z.class = class;
                    frame.push(z);
                }
            }
            let est = tracker.step(&Scan {
                cameras: Vec::new(),
                lidar: Some(frame),
            })
            .unwrap();
            let (cars, trucks): (Vec<_>, Vec<_>) = est.into_iter().partition(|e| e.class == ObjectClass::Car);
            assert_eq!(cars.len(), trucks.len());
            for (a, b) in cars.iter().zip(&trucks) {
                assert_eq!((a.label, a.center, a.existence), (b.label, b.center, b.existence));
            }
        }
    }

    #[test]
    fn sensorless_scan_coasts() {
        let mut f = ClassFilter::new(ObjectClass::Car, car_model(FilterConfig::default()), 1)
            .unwrap()
            .with_density(density(vec![(1.0, vec![(l(0, 0), track(1.0, 1.0))])]));
        let before = f.density().hypotheses[0].tracks[&l(0, 0)].mean;
        f.step(&Scan::default()).unwrap();
        let after = extract(f.density());
        assert_eq!(after.len(), 1);
        assert_relative_eq!(after[0].center[0], before[0] + 0.5 * before[1], epsilon = 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn evidence_at_the_mean_never_hurts(seed in 0u64..10_000) {
            let model = rig_model();
            let cfg = FilterConfig::default();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (prior, scan) = random_instance(&mut rng);
            let labels: Vec<Label> = prior.all_labels().into_iter().collect();
            let target = labels[rng.random_range(0..labels.len())];
            let g = prior.hypotheses.iter().find_map(|h| h.tracks.get(&target)).unwrap().clone();
            let z = lidar_z(&g.mean, [0.0; 3]);
            let only = Scan { cameras: Vec::new(), lidar: Some(vec![z.clone()]) };
            // Another label able to take the new measurement can legitimately
            // pull weight away from the target.
            let contested = prior.hypotheses.iter().flat_map(|h| h.tracks.iter()).any(|(lab, t)| {
                *lab != target && psi_row(&model, &only, SensorIndex::Lidar, t, cfg.gate)[1] > f64::NEG_INFINITY
            });
            prop_assume!(!contested);
            let before = update(&prior, &scan, &model, &cfg, seed).unwrap();
            let mut more = scan.clone();
            more.lidar.as_mut().unwrap().push(z);
            let after = update(&prior, &more, &model, &cfg, seed).unwrap();
            let e0 = before.glmb.existence_probabilities().get(&target).copied().unwrap_or(0.0);
            let e1 = after.glmb.existence_probabilities().get(&target).copied().unwrap_or(0.0);
            prop_assert!(e1 >= e0 - 1e-12, "{e0} -> {e1}");
        }

        #[test]
        fn update_and_prune_normalize(seed in 0u64..10_000) {
            let model = rig_model();
            let cfg = FilterConfig::default();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (prior, scan) = random_instance(&mut rng);
            let out = update(&prior, &scan, &model, &cfg, seed).unwrap();
            prop_assert!((out.glmb.weights().iter().sum::<f64>() - 1.0).abs() <= 1e-9);
            let pruned = prune(&out.glmb, 1e-3, 2);
            prop_assert!((pruned.weights().iter().sum::<f64>() - 1.0).abs() <= 1e-9);
            let sets: std::collections::BTreeSet<Vec<Label>> =
                out.glmb.hypotheses.iter().map(|h| h.labels().copied().collect()).collect();
            prop_assert_eq!(sets.len(), out.glmb.hypotheses.len());
        }
    }
}
