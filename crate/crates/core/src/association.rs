//! Multi-sensor association maps, the ψ weights that score them, an
//! exhaustive enumerator used as ground truth, and a Gibbs sampler that
//! truncates the association posterior to its high-weight maps.
//!
//! Sensor order inside a tuple is cameras first (by index) then the LiDAR.
//! Measurement index 0 is a missed detection, `j > 0` refers to the
//! `(j-1)`-th measurement of that sensor, and `-1` marks a label that does
//! not exist.

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::StateVector;
use crate::sensors::{
    camera_log_likelihood, detection_probability, lidar_log_likelihood, Scan, SensorModel, SensorRef,
};

/// Budget above which [`enumerate_maps`] refuses to run.
pub const ENUMERATION_BUDGET: f64 = 1e6;

/// Above this many candidate tuples the per-label conditional is sampled one
/// sensor at a time instead of over the joint tuple space.
pub const JOINT_TUPLE_LIMIT: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SensorIndex {
    Camera(usize),
    Lidar,
}

/// The sensors that reported in a scan, in tuple order.
pub fn active_sensors(scan: &Scan) -> Vec<SensorIndex> {
    let mut out: Vec<SensorIndex> = scan
        .cameras
        .iter()
        .enumerate()
        .filter(|(_, f)| f.is_some())
        .map(|(c, _)| SensorIndex::Camera(c))
        .collect();
    if scan.lidar.is_some() {
        out.push(SensorIndex::Lidar);
    }
    out
}

pub fn measurement_count(scan: &Scan, sensor: SensorIndex) -> usize {
    match sensor {
        SensorIndex::Camera(c) => scan.cameras.get(c).and_then(|f| f.as_ref()).map_or(0, Vec::len),
        SensorIndex::Lidar => scan.lidar.as_ref().map_or(0, Vec::len),
    }
}

/// Two-branch ψ: miss weight `1 - P_D` for `j = 0`, otherwise
/// `P_D · g / κ`.
pub fn psi_value(j: usize, p_d: f64, likelihood: f64, kappa: f64) -> f64 {
    if j == 0 {
        1.0 - p_d
    } else {
        p_d * likelihood / kappa
    }
}

/// ψ of one sensor for one object state, evaluated at the state itself.
/// A camera that cannot image the object gives `P_D = 0` for it.
pub fn psi_single(
    model: &SensorModel,
    scan: &Scan,
    sensor: SensorIndex,
    j: usize,
    state: &StateVector,
    context: &[StateVector],
) -> f64 {
    match sensor {
        SensorIndex::Lidar => {
            let p_d = detection_probability(SensorRef::Lidar, state, context, &model.detection);
            if j == 0 {
                return psi_value(0, p_d, 0.0, 1.0);
            }
            let z = &scan.lidar.as_ref().expect("lidar frame")[j - 1];
            let g = lidar_log_likelihood(z, state, &model.lidar_noise).exp();
            psi_value(j, p_d, g, model.lidar_kappa())
        }
        SensorIndex::Camera(c) => {
            let cam = &model.cameras[c];
            let p_d = detection_probability(SensorRef::Camera(cam), state, context, &model.detection);
            if j == 0 {
                return psi_value(0, p_d, 0.0, 1.0);
            }
            let z = &scan.cameras[c].as_ref().expect("camera frame")[j - 1];
            match camera_log_likelihood(z, state, cam, &model.camera_noise) {
                Ok(ll) => psi_value(j, p_d, ll.exp(), model.camera_kappa(c)),
                Err(_) => 0.0,
            }
        }
    }
}

/// Product of [`psi_single`] over the active sensors of `scan`.
pub fn psi_joint(model: &SensorModel, scan: &Scan, tuple: &[usize], state: &StateVector, context: &[StateVector]) -> f64 {
    let sensors = active_sensors(scan);
    assert_eq!(tuple.len(), sensors.len(), "tuple length must match the active sensors");
    sensors
        .iter()
        .zip(tuple)
        .map(|(s, j)| psi_single(model, scan, *s, *j, state, context))
        .product()
}

/// Per-sensor ψ matrices, stored as logs; rows are labels and column `j`
/// is measurement index `j` (column 0 = missed detection).
#[derive(Clone, Debug, PartialEq)]
pub struct PsiTable {
    log_psi: Vec<DMatrix<f64>>,
    n_labels: usize,
}

impl PsiTable {
    pub fn from_values(values: Vec<DMatrix<f64>>) -> Result<Self> {
        if values.iter().flat_map(|m| m.iter()).any(|v| !(*v >= 0.0) || v.is_infinite()) {
            return Err(Error::InvalidConfig("ψ entries must be finite and non-negative".into()));
        }
        Self::from_log(values.into_iter().map(|m| m.map(f64::ln)).collect())
    }

    pub fn from_log(log_psi: Vec<DMatrix<f64>>) -> Result<Self> {
        let n_labels = log_psi.first().map_or(0, |m| m.nrows());
        if log_psi.iter().any(|m| m.nrows() != n_labels || m.ncols() == 0) {
            return Err(Error::InvalidConfig("ψ tables need one row per label and a miss column".into()));
        }
        if log_psi.iter().flat_map(|m| m.iter()).any(|v| v.is_nan() || *v == f64::INFINITY) {
            return Err(Error::InvalidConfig("log ψ entries must be < +inf".into()));
        }
        Ok(Self { log_psi, n_labels })
    }

    pub fn n_labels(&self) -> usize {
        self.n_labels
    }

    pub fn n_sensors(&self) -> usize {
        self.log_psi.len()
    }

    pub fn n_measurements(&self, sensor: usize) -> usize {
        self.log_psi[sensor].ncols() - 1
    }

    pub fn log_psi(&self, sensor: usize, label: usize, j: usize) -> f64 {
        self.log_psi[sensor][(label, j)]
    }

    pub fn psi(&self, sensor: usize, label: usize, j: usize) -> f64 {
        self.log_psi(sensor, label, j).exp()
    }

    /// Log of ψ_joint for one label and tuple.
    pub fn tuple_log_weight(&self, label: usize, tuple: &[i32]) -> f64 {
        tuple
            .iter()
            .enumerate()
            .map(|(s, &j)| self.log_psi(s, label, j as usize))
            .sum()
    }

    /// Upper bound on the number of non-zero-weight maps.
    pub fn nonzero_budget(&self) -> f64 {
        let mut total = 1.0;
        for m in &self.log_psi {
            for r in 0..m.nrows() {
                total *= m.row(r).iter().filter(|v| **v > f64::NEG_INFINITY).count() as f64;
            }
        }
        total
    }
}

/// Assignment of each label to a per-sensor measurement tuple.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AssociationMap {
    n_sensors: usize,
    entries: Vec<i32>,
}

impl AssociationMap {
    pub fn new(n_labels: usize, n_sensors: usize, entries: Vec<i32>) -> Result<Self> {
        if entries.len() != n_labels * n_sensors {
            return Err(Error::InvalidConfig("association map has the wrong size".into()));
        }
        Ok(Self { n_sensors, entries })
    }

    pub fn all_missed(n_labels: usize, n_sensors: usize) -> Self {
        Self {
            n_sensors,
            entries: vec![0; n_labels * n_sensors],
        }
    }

    pub fn n_labels(&self) -> usize {
        if self.n_sensors == 0 {
            0
        } else {
            self.entries.len() / self.n_sensors
        }
    }

    pub fn n_sensors(&self) -> usize {
        self.n_sensors
    }

    pub fn entries(&self) -> &[i32] {
        &self.entries
    }

    /// Per-sensor measurement indices of `label`, `None` if it does not exist.
    pub fn tuple(&self, label: usize) -> Option<&[i32]> {
        let t = &self.entries[label * self.n_sensors..(label + 1) * self.n_sensors];
        (t.first().is_some_and(|j| *j >= 0)).then_some(t)
    }

    fn set_tuple(&mut self, label: usize, tuple: &[i32]) {
        self.entries[label * self.n_sensors..(label + 1) * self.n_sensors].copy_from_slice(tuple);
    }

    /// Checks the two structural rules: a label is absent on all sensors
    /// or present on all, and a measurement is used by at most one label.
    pub fn validate(&self, measurement_counts: &[usize]) -> Result<()> {
        if measurement_counts.len() != self.n_sensors {
            return Err(Error::InvalidConfig("sensor count mismatch".into()));
        }
        let mut used: Vec<Vec<bool>> = measurement_counts.iter().map(|m| vec![false; m + 1]).collect();
        for l in 0..self.n_labels() {
            let t = &self.entries[l * self.n_sensors..(l + 1) * self.n_sensors];
            let absent = t.iter().filter(|j| **j == -1).count();
            if absent != 0 && absent != t.len() {
                return Err(Error::InvalidConfig(format!("label {l} is absent on only some sensors")));
            }
            for (s, &j) in t.iter().enumerate() {
                if j < -1 || j > measurement_counts[s] as i32 {
                    return Err(Error::InvalidConfig(format!("index {j} out of range on sensor {s}")));
                }
                if j > 0 {
                    if used[s][j as usize] {
                        return Err(Error::InvalidConfig(format!("measurement {j} of sensor {s} used twice")));
                    }
                    used[s][j as usize] = true;
                }
            }
        }
        Ok(())
    }

    /// Log of ∏_ℓ ψ_joint over existing labels.
    pub fn log_weight(&self, psi: &PsiTable) -> f64 {
        (0..self.n_labels())
            .filter_map(|l| self.tuple(l).map(|t| psi.tuple_log_weight(l, t)))
            .sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WeightedMap {
    pub map: AssociationMap,
    pub log_weight: f64,
}

impl WeightedMap {
    pub fn weight(&self) -> f64 {
        self.log_weight.exp()
    }
}

/// Descending weight, ties broken lexicographically on the entries.
fn rank(a: &WeightedMap, b: &WeightedMap) -> Ordering {
    b.log_weight
        .total_cmp(&a.log_weight)
        .then_with(|| a.map.entries.cmp(&b.map.entries))
}

/// Every valid map in which all labels exist, with its exact weight.
pub fn enumerate_maps(psi: &PsiTable, budget: f64) -> Result<Vec<WeightedMap>> {
    let n = psi.n_labels() as i32;
    let required: f64 = (0..psi.n_sensors())
        .map(|s| ((psi.n_measurements(s) + 1) as f64).powi(n))
        .product();
    if required > budget {
        return Err(Error::BudgetExceeded { required, budget });
    }
    Ok(enumerate_impl(psi, false))
}

/// Like [`enumerate_maps`] but skipping maps of zero weight; the budget is
/// checked against [`PsiTable::nonzero_budget`].
pub fn enumerate_nonzero_maps(psi: &PsiTable, budget: f64) -> Result<Vec<WeightedMap>> {
    let required = psi.nonzero_budget();
    if required > budget {
        return Err(Error::BudgetExceeded { required, budget });
    }
    Ok(enumerate_impl(psi, true))
}

fn enumerate_impl(psi: &PsiTable, nonzero_only: bool) -> Vec<WeightedMap> {
    let n_labels = psi.n_labels();
    let n_sensors = psi.n_sensors();
    let mut used: Vec<Vec<bool>> = (0..n_sensors).map(|s| vec![false; psi.n_measurements(s) + 1]).collect();
    let mut current = AssociationMap::all_missed(n_labels, n_sensors);
    let mut out = Vec::new();

    // Walk (label, sensor) slots in row-major order.
    fn recurse(
        slot: usize,
        psi: &PsiTable,
        nonzero_only: bool,
        used: &mut [Vec<bool>],
        current: &mut AssociationMap,
        out: &mut Vec<WeightedMap>,
    ) {
        let n_sensors = psi.n_sensors();
        if slot == current.entries.len() {
            let log_weight = current.log_weight(psi);
            if !nonzero_only || log_weight > f64::NEG_INFINITY {
                out.push(WeightedMap {
                    map: current.clone(),
                    log_weight,
                });
            }
            return;
        }
        let (label, sensor) = (slot / n_sensors, slot % n_sensors);
        for j in 0..=psi.n_measurements(sensor) {
            if j > 0 && used[sensor][j] {
                continue;
            }
            if nonzero_only && psi.log_psi(sensor, label, j) == f64::NEG_INFINITY {
                continue;
            }
            current.entries[slot] = j as i32;
            if j > 0 {
                used[sensor][j] = true;
            }
            recurse(slot + 1, psi, nonzero_only, used, current, out);
            if j > 0 {
                used[sensor][j] = false;
            }
        }
        current.entries[slot] = 0;
    }

    if n_sensors == 0 {
        out.push(WeightedMap {
            map: current,
            log_weight: 0.0,
        });
        return out;
    }
    recurse(0, psi, nonzero_only, &mut used, &mut current, &mut out);
    out.sort_by(rank);
    out
}

/// Measurements of each sensor not used by any label other than `label`.
fn free_mask(map: &AssociationMap, psi: &PsiTable, label: usize) -> Vec<Vec<bool>> {
    let mut free: Vec<Vec<bool>> = (0..psi.n_sensors()).map(|s| vec![true; psi.n_measurements(s) + 1]).collect();
    for l in 0..map.n_labels() {
        if l == label {
            continue;
        }
        if let Some(t) = map.tuple(l) {
            for (s, &j) in t.iter().enumerate() {
                if j > 0 {
                    free[s][j as usize] = false;
                }
            }
        }
    }
    free
}

fn open_mask(psi: &PsiTable) -> Vec<Vec<bool>> {
    (0..psi.n_sensors()).map(|s| vec![true; psi.n_measurements(s) + 1]).collect()
}

/// Per-sensor candidate indices with non-zero ψ for `label`.
fn candidates(psi: &PsiTable, free: &[Vec<bool>], label: usize) -> Vec<Vec<(i32, f64)>> {
    (0..psi.n_sensors())
        .map(|s| {
            (0..=psi.n_measurements(s))
                .filter(|&j| free[s][j])
                .map(|j| (j as i32, psi.log_psi(s, label, j)))
                .filter(|(_, lw)| *lw > f64::NEG_INFINITY)
                .collect()
        })
        .collect()
}

fn for_each_tuple(cands: &[Vec<(i32, f64)>], mut f: impl FnMut(&[i32], f64)) {
    if cands.iter().any(Vec::is_empty) {
        return;
    }
    let mut idx = vec![0usize; cands.len()];
    let mut tuple: Vec<i32> = cands.iter().map(|c| c[0].0).collect();
    loop {
        let lw: f64 = idx.iter().enumerate().map(|(s, &i)| cands[s][i].1).sum();
        f(&tuple, lw);
        let mut s = 0;
        loop {
            if s == cands.len() {
                return;
            }
            idx[s] += 1;
            if idx[s] < cands[s].len() {
                tuple[s] = cands[s][idx[s]].0;
                break;
            }
            idx[s] = 0;
            tuple[s] = cands[s][0].0;
            s += 1;
        }
    }
}

/// Full conditional of `label`'s tuple given the rest of `map`: every
/// tuple over currently free measurements with its normalized probability.
pub fn label_conditional(psi: &PsiTable, map: &AssociationMap, label: usize) -> Vec<(Vec<i32>, f64)> {
    let free = free_mask(map, psi, label);
    let cands = candidates(psi, &free, label);
    let mut out = Vec::new();
    for_each_tuple(&cands, |t, lw| out.push((t.to_vec(), lw)));
    let max = out.iter().map(|(_, lw)| *lw).fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = out.iter().map(|(_, lw)| (lw - max).exp()).sum();
    out.into_iter().map(|(t, lw)| (t, (lw - max).exp() / total)).collect()
}

fn sample_categorical<R: Rng>(log_w: &[f64], rng: &mut R) -> Option<usize> {
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return None;
    }
    let w: Vec<f64> = log_w.iter().map(|lw| (lw - max).exp()).collect();
    let total: f64 = w.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, wi) in w.iter().enumerate() {
        if u < *wi {
            return Some(i);
        }
        u -= wi;
    }
    w.iter().rposition(|wi| *wi > 0.0)
}

#[derive(Clone, Debug)]
pub struct GibbsOutput {
    /// Distinct maps of positive weight, ranked.
    pub maps: Vec<WeightedMap>,
    /// Number of sweeps that ended in each map, aligned with `maps`.
    pub visits: Vec<u64>,
}

/// Maps found so far, shared by every chain of one sampling run.
struct Harvest<'a> {
    psi: &'a PsiTable,
    seen: HashMap<AssociationMap, (f64, u64)>,
    /// Neighbourhoods already scored, keyed by the map with the resampled
    /// label blanked out.
    expanded: HashSet<AssociationMap>,
    best: f64,
    log_floor: f64,
}

impl<'a> Harvest<'a> {
    fn new(psi: &'a PsiTable, rel_floor: f64) -> Self {
        Self {
            psi,
            seen: HashMap::new(),
            expanded: HashSet::new(),
            best: f64::NEG_INFINITY,
            log_floor: if rel_floor > 0.0 { rel_floor.ln() } else { f64::NEG_INFINITY },
        }
    }

    fn record(&mut self, map: &AssociationMap, visit: bool) {
        if let Some(e) = self.seen.get_mut(map) {
            e.1 += visit as u64;
            return;
        }
        let lw = map.log_weight(self.psi);
        if lw == f64::NEG_INFINITY || lw < self.best + self.log_floor {
            return;
        }
        self.best = self.best.max(lw);
        self.seen.insert(map.clone(), (lw, visit as u64));
    }

    fn finish(self) -> GibbsOutput {
        let cut = self.best + self.log_floor;
        let mut ranked: Vec<(WeightedMap, u64)> = self
            .seen
            .into_iter()
            .filter(|(_, (lw, _))| *lw >= cut)
            .map(|(map, (log_weight, visits))| (WeightedMap { map, log_weight }, visits))
            .collect();
        ranked.sort_by(|a, b| rank(&a.0, &b.0));
        let (maps, visits) = ranked.into_iter().unzip();
        GibbsOutput { maps, visits }
    }

    /// One chain of `n_iter` sweeps from the all-missed map.
    fn run_chain(&mut self, n_iter: usize, rng: &mut ChaCha8Rng, beta: f64) {
        let psi = self.psi;
        let n_labels = psi.n_labels();
        let n_sensors = psi.n_sensors();
        let mut current = AssociationMap::all_missed(n_labels, n_sensors);
        if n_labels == 0 || n_sensors == 0 {
            self.record(&current, true);
        }
        let blank = vec![i32::MIN; n_sensors];
        for _ in 0..n_iter.max(1) {
            for label in 0..n_labels {
                let free = free_mask(&current, psi, label);
                let cands = candidates(psi, &free, label);
                let space: usize = cands.iter().map(Vec::len).product();
                if space == 0 {
                    continue;
                }
                if space <= JOINT_TUPLE_LIMIT {
                    let mut tuples: Vec<Vec<i32>> = Vec::with_capacity(space);
                    let mut lws = Vec::with_capacity(space);
                    for_each_tuple(&cands, |t, lw| {
                        tuples.push(t.to_vec());
                        lws.push(lw);
                    });
                    let mut key = current.clone();
                    key.set_tuple(label, &blank);
                    if self.expanded.insert(key) {
                        self.expand(&current, label, &free, &tuples);
                    }
                    let scaled: Vec<f64> = lws.iter().map(|lw| beta * lw).collect();
                    if let Some(pick) = sample_categorical(&scaled, rng) {
                        current.set_tuple(label, &tuples[pick]);
                    }
                } else {
                    // Conditional factorizes over sensors given the other labels.
                    let mut tuple: Vec<i32> = current.tuple(label).map_or(vec![0; n_sensors], <[i32]>::to_vec);
                    for (s, c) in cands.iter().enumerate() {
                        let lws: Vec<f64> = c.iter().map(|(_, lw)| beta * lw).collect();
                        if let Some(pick) = sample_categorical(&lws, rng) {
                            tuple[s] = c[pick].0;
                        }
                    }
                    current.set_tuple(label, &tuple);
                    let mut probe = current.clone();
                    for (s, c) in cands.iter().enumerate() {
                        for (j, _) in c {
                            let mut alt = tuple.clone();
                            alt[s] = *j;
                            probe.set_tuple(label, &alt);
                            self.record(&probe, false);
                        }
                    }
                }
            }
            self.record(&current, true);
        }
    }

    /// Scores every single-label alternative for `label`, and the two-label
    /// neighbours where `label` takes a measurement held by another label,
    /// which then misses on that sensor.
    fn expand(&mut self, current: &AssociationMap, label: usize, free: &[Vec<bool>], tuples: &[Vec<i32>]) {
        let psi = self.psi;
        let n_sensors = psi.n_sensors();
        let mut probe = current.clone();
        for t in tuples {
            probe.set_tuple(label, t);
            self.record(&probe, false);
        }
        let all = candidates(psi, &open_mask(psi), label);
        if all.iter().map(Vec::len).product::<usize>() > JOINT_TUPLE_LIMIT {
            return;
        }
        let mut steals = Vec::new();
        for_each_tuple(&all, |t, _| {
            if t.iter().enumerate().all(|(s, &j)| free[s][j as usize]) {
                return;
            }
            let mut steal = current.clone();
            steal.set_tuple(label, t);
            for other in (0..psi.n_labels()).filter(|o| *o != label) {
                for (s, &j) in t.iter().enumerate() {
                    let e = &mut steal.entries[other * n_sensors + s];
                    if j > 0 && *e == j {
                        *e = 0;
                    }
                }
            }
            steals.push(steal);
        });
        for steal in &steals {
            self.record(steal, false);
        }
    }
}

/// Gibbs sampler over per-label sensor tuples.
///
/// Each sweep resamples every label's full tuple from its conditional. Maps
/// the chain occupies are recorded, and so are the single-label alternatives
/// scored while drawing each conditional; all are reported with their exact
/// weight.
pub fn gibbs_sample(psi: &PsiTable, n_iter: usize, seed: u64) -> GibbsOutput {
    gibbs_sample_tempered(psi, n_iter, seed, 1.0)
}

/// [`gibbs_sample`] with the conditionals raised to the power `beta`.
/// `beta < 1` flattens the chain so it reaches low-weight maps sooner;
/// reported weights stay exact, only the visit counts change meaning.
pub fn gibbs_sample_tempered(psi: &PsiTable, n_iter: usize, seed: u64, beta: f64) -> GibbsOutput {
    let mut harvest = Harvest::new(psi, 0.0);
    harvest.run_chain(n_iter, &mut ChaCha8Rng::seed_from_u64(seed), beta);
    harvest.finish()
}

/// Two chains sharing one harvest: a plain chain that stays near the mode
/// and a tempered one that explores, each given half the sweeps. Maps
/// lighter than `rel_floor` times the heaviest map found are dropped.
pub fn gibbs_sample_mixed(psi: &PsiTable, n_iter: usize, seed: u64, beta: f64, rel_floor: f64) -> GibbsOutput {
    let mut harvest = Harvest::new(psi, rel_floor);
    let plain = n_iter.div_ceil(2);
    harvest.run_chain(plain, &mut ChaCha8Rng::seed_from_u64(seed), 1.0);
    if n_iter > plain {
        harvest.run_chain(n_iter - plain, &mut ChaCha8Rng::seed_from_u64(seed ^ 0x5851_f42d_4c95_7f2d), beta);
    }
    harvest.finish()
}
