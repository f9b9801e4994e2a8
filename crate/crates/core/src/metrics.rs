//! Tracking evaluation: per-frame matching, CLEAR-MOT counts and the
//! recall-averaged AMOTA/AMOTP sweep.

use std::collections::{BTreeMap, BTreeSet};
use std::ops::{Add, Sub};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Label;
use crate::sensors::ObjectClass;

/// Lowest recall target of the AMOTA sweep.
pub const MIN_RECALL: f64 = 0.1;

#[derive(Clone, Debug, PartialEq)]
pub struct GtObject {
    pub id: u64,
    pub class: ObjectClass,
    pub center: Vector3<f64>,
    pub dims: Vector3<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EstObject {
    pub label: Label,
    pub class: ObjectClass,
    pub center: Vector3<f64>,
    pub dims: Vector3<f64>,
    pub confidence: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalFrame {
    pub gt: Vec<GtObject>,
    pub est: Vec<EstObject>,
}

impl EvalFrame {
    pub fn for_class(&self, class: ObjectClass) -> EvalFrame {
        EvalFrame {
            gt: self.gt.iter().filter(|g| g.class == class).cloned().collect(),
            est: self.est.iter().filter(|e| e.class == class).cloned().collect(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct FrameMatch {
    /// `(gt index, est index, planar distance)`.
    pub pairs: Vec<(usize, usize, f64)>,
    pub unmatched_gt: Vec<usize>,
    pub unmatched_est: Vec<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MotSummary {
    pub amota: f64,
    pub amotp: f64,
    pub mota: f64,
    pub motp: f64,
    pub recall: f64,
    pub ids: u64,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub gt: u64,
    pub mt: u64,
    pub ml: u64,
}

fn planar_distance(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Lexicographic assignment cost: (unmatched count, distance, continuity breaks).
#[derive(Clone, Copy, Debug, Default, PartialEq)]
struct Cost([f64; 3]);

impl Add for Cost {
    type Output = Cost;
    fn add(self, o: Cost) -> Cost {
        Cost([self.0[0] + o.0[0], self.0[1] + o.0[1], self.0[2] + o.0[2]])
    }
}

impl Sub for Cost {
    type Output = Cost;
    fn sub(self, o: Cost) -> Cost {
        Cost([self.0[0] - o.0[0], self.0[1] - o.0[1], self.0[2] - o.0[2]])
    }
}

impl Cost {
    const INF: Cost = Cost([f64::INFINITY, 0.0, 0.0]);

    fn lt(&self, o: &Cost) -> bool {
        for i in 0..3 {
            if self.0[i] < o.0[i] {
                return true;
            }
            if self.0[i] > o.0[i] {
                return false;
            }
        }
        false
    }
}

/// Minimum-cost perfect assignment on a square matrix (shortest augmenting
/// paths with potentials). Returns the column for each row.
fn hungarian(cost: &[Vec<Cost>]) -> Vec<usize> {
    let n = cost.len();
    let mut u = vec![Cost::default(); n + 1];
    let mut v = vec![Cost::default(); n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![Cost::INF; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = Cost::INF;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur.lt(&minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j].lt(&delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] = u[p[j]] + delta;
                    v[j] = v[j] - delta;
                } else {
                    minv[j] = minv[j] - delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![0; n];
    for j in 1..=n {
        if p[j] > 0 {
            out[p[j] - 1] = j - 1;
        }
    }
    out
}

/// Optimal frame matching: as many pairs as possible within `radius`
/// (same class only), then minimum total planar distance, then fewest
/// breaks of the label each GT was last matched to.
pub fn match_frame(gt: &[GtObject], est: &[EstObject], radius: f64, previous: &BTreeMap<u64, Label>) -> FrameMatch {
    let (ng, ne) = (gt.len(), est.len());
    let n = ng + ne;
    if n == 0 {
        return FrameMatch::default();
    }
    let unmatched = Cost([1.0, 0.0, 0.0]);
    let forbidden = Cost([3.0, 0.0, 0.0]);
    let mut cost = vec![vec![Cost::default(); n]; n];
    for (i, row) in cost.iter_mut().enumerate() {
        for (j, c) in row.iter_mut().enumerate() {
            *c = match (i < ng, j < ne) {
                (true, true) => {
                    let d = planar_distance(&gt[i].center, &est[j].center);
                    if gt[i].class != est[j].class || d > radius {
                        forbidden
                    } else {
                        let brk = previous.get(&gt[i].id).is_some_and(|l| *l != est[j].label);
                        Cost([0.0, d, brk as u8 as f64])
                    }
                }
                (true, false) | (false, true) => unmatched,
                (false, false) => Cost::default(),
            };
        }
    }
    let assign = hungarian(&cost);
    let mut out = FrameMatch::default();
    let mut est_used = vec![false; ne];
    for (i, &j) in assign.iter().enumerate().take(ng) {
        if j < ne {
            let d = planar_distance(&gt[i].center, &est[j].center);
            if gt[i].class == est[j].class && d <= radius {
                out.pairs.push((i, j, d));
                est_used[j] = true;
                continue;
            }
        }
        out.unmatched_gt.push(i);
    }
    out.unmatched_est = (0..ne).filter(|j| !est_used[*j]).collect();
    out
}

/// CLEAR-MOT counts at a single operating point (all estimates used).
pub fn clear_mot(frames: &[EvalFrame], radius: f64) -> MotSummary {
    let mut last: BTreeMap<u64, Label> = BTreeMap::new();
    let mut present: BTreeMap<u64, (u64, u64)> = BTreeMap::new();
    let (mut tp, mut fp, mut fn_, mut ids) = (0u64, 0u64, 0u64, 0u64);
    let mut dist = 0.0;
    for f in frames {
        let m = match_frame(&f.gt, &f.est, radius, &last);
        for g in &f.gt {
            present.entry(g.id).or_default().0 += 1;
        }
        for (gi, ei, d) in &m.pairs {
            let id = f.gt[*gi].id;
            let label = f.est[*ei].label;
            if last.get(&id).is_some_and(|l| *l != label) {
                ids += 1;
            }
            last.insert(id, label);
            present.entry(id).or_default().1 += 1;
            dist += d;
        }
        tp += m.pairs.len() as u64;
        fp += m.unmatched_est.len() as u64;
        fn_ += m.unmatched_gt.len() as u64;
    }
    let gt = tp + fn_;
    let denom = gt.max(1) as f64;
    let mut mt = 0;
    let mut ml = 0;
    for (total, hit) in present.values() {
        let cover = *hit as f64 / *total as f64;
        if cover >= 0.8 {
            mt += 1;
        } else if cover < 0.2 {
            ml += 1;
        }
    }
    MotSummary {
        amota: 0.0,
        amotp: 0.0,
        mota: 1.0 - (fn_ + fp + ids) as f64 / denom,
        motp: if tp > 0 { dist / tp as f64 } else { 0.0 },
        recall: if gt > 0 { tp as f64 / gt as f64 } else { 0.0 },
        ids,
        tp,
        fp,
        fn_,
        gt,
        mt,
        ml,
    }
}

fn confidences(frames: &[EvalFrame]) -> Result<()> {
    for (i, f) in frames.iter().enumerate() {
        if f.est.iter().any(|e| e.confidence.is_none_or(|c| !c.is_finite())) {
            return Err(Error::NoConfidences { frame: i });
        }
    }
    Ok(())
}

fn above(frames: &[EvalFrame], threshold: f64) -> Vec<EvalFrame> {
    frames
        .iter()
        .map(|f| EvalFrame {
            gt: f.gt.clone(),
            est: f.est.iter().filter(|e| e.confidence.unwrap_or(0.0) >= threshold).cloned().collect(),
        })
        .collect()
}

/// Linear interpolation with flat extrapolation on the left and `right`
/// beyond the last knot; `xs` must be nondecreasing.
fn interp(x: f64, xs: &[f64], ys: &[f64], right: f64) -> f64 {
    if x < xs[0] {
        return ys[0];
    }
    if x > xs[xs.len() - 1] {
        return right;
    }
    let k = xs.partition_point(|v| *v <= x);
    if k == xs.len() {
        return ys[xs.len() - 1];
    }
    let (x0, x1, y0, y1) = (xs[k - 1], xs[k], ys[k - 1], ys[k]);
    y0 + (x - x0) * (y1 - y0) / (x1 - x0)
}

/// AMOTA and AMOTP over `recall_points` recall targets evenly spaced in
/// `[MIN_RECALL, 1]`. Each target is met by the confidence threshold
/// interpolated from the matched-estimate scores; unreachable targets score
/// MOTAR 0 and MOTP `radius`.
pub fn amota(frames: &[EvalFrame], recall_points: usize, radius: f64) -> Result<(f64, f64)> {
    if recall_points < 2 {
        return Err(Error::InvalidConfig("recall_points must be >= 2".into()));
    }
    confidences(frames)?;
    let total_gt: usize = frames.iter().map(|f| f.gt.len()).sum();
    if total_gt == 0 {
        return Ok((0.0, radius));
    }
    // Scores of the estimates matched when nothing is filtered.
    let mut last = BTreeMap::new();
    let mut scores = Vec::new();
    for f in frames {
        let m = match_frame(&f.gt, &f.est, radius, &last);
        for (gi, ei, _) in &m.pairs {
            last.insert(f.gt[*gi].id, f.est[*ei].label);
            scores.push(f.est[*ei].confidence.expect("checked"));
        }
    }
    if scores.is_empty() {
        return Ok((0.0, radius));
    }
    scores.sort_by(|a, b| b.total_cmp(a));
    let rec: Vec<f64> = (1..=scores.len()).map(|k| k as f64 / total_gt as f64).collect();
    let max_rec = rec[rec.len() - 1];

    let mut cache: BTreeMap<u64, (f64, f64)> = BTreeMap::new();
    let (mut sum_motar, mut sum_motp) = (0.0, 0.0);
    for i in 0..recall_points {
        let target = round12(MIN_RECALL + (1.0 - MIN_RECALL) * i as f64 / (recall_points - 1) as f64);
        if target > max_rec {
            sum_motp += radius;
            continue;
        }
        let threshold = interp(target, &rec, &scores, 0.0);
        let (motar, motp) = *cache.entry(threshold.to_bits()).or_insert_with(|| {
            let s = clear_mot(&above(frames, threshold), radius);
            if s.tp == 0 {
                (0.0, radius)
            } else {
                ((1.0 - (s.ids + s.fp) as f64 / s.tp as f64).max(0.0), s.motp)
            }
        });
        sum_motar += motar;
        sum_motp += motp;
    }
    Ok((sum_motar / recall_points as f64, sum_motp / recall_points as f64))
}

fn round12(x: f64) -> f64 {
    (x * 1e12).round() / 1e12
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub per_class: BTreeMap<ObjectClass, MotSummary>,
    pub overall: MotSummary,
}

/// Per-class summaries (classes with ground truth only) and the overall
/// row: counts summed over classes, AMOTA/AMOTP averaged over them.
pub fn evaluate(frames: &[EvalFrame], recall_points: usize, radius: f64) -> Result<Evaluation> {
    if !(radius > 0.0) {
        return Err(Error::InvalidConfig("match radius must be > 0".into()));
    }
    confidences(frames)?;
    let classes: BTreeSet<ObjectClass> = frames.iter().flat_map(|f| f.gt.iter().map(|g| g.class)).collect();
    let mut per_class = BTreeMap::new();
    for class in classes {
        let sub: Vec<EvalFrame> = frames.iter().map(|f| f.for_class(class)).collect();
        let mut s = clear_mot(&sub, radius);
        let (a, p) = amota(&sub, recall_points, radius)?;
        s.amota = a;
        s.amotp = p;
        per_class.insert(class, s);
    }
    let mut overall = MotSummary::default();
    let mut dist = 0.0;
    for s in per_class.values() {
        overall.tp += s.tp;
        overall.fp += s.fp;
        overall.fn_ += s.fn_;
        overall.ids += s.ids;
        overall.gt += s.gt;
        overall.mt += s.mt;
        overall.ml += s.ml;
        overall.amota += s.amota;
        overall.amotp += s.amotp;
        dist += s.motp * s.tp as f64;
    }
    // False positives of classes without any ground truth still count.
    let gt_classes: BTreeSet<ObjectClass> = per_class.keys().copied().collect();
    overall.fp += frames
        .iter()
        .flat_map(|f| f.est.iter())
        .filter(|e| !gt_classes.contains(&e.class))
        .count() as u64;
    let n = per_class.len().max(1) as f64;
    overall.amota /= n;
    overall.amotp = if per_class.is_empty() { radius } else { overall.amotp / n };
    overall.mota = 1.0 - (overall.fn_ + overall.fp + overall.ids) as f64 / overall.gt.max(1) as f64;
    overall.motp = if overall.tp > 0 { dist / overall.tp as f64 } else { 0.0 };
    overall.recall = if overall.gt > 0 {
        overall.tp as f64 / overall.gt as f64
    } else {
        0.0
    };
    Ok(Evaluation { per_class, overall })
}
