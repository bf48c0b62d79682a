//! Multi-person 3D pose evaluation.
//!
//! Predictions are first matched one-to-one to ground-truth persons with a
//! minimum-cost assignment. MPJPE-style errors are averaged over matched
//! joints; PCK counts every ground-truth joint, so a missed person lowers PCK
//! but does not enter MPJPE.

use nalgebra::{Matrix3, SVD};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Vec3, ViewVector};
use crate::hmor::{count_violations, enumerate_pairs, HmorConfig, ViolationCounts};
use crate::skeleton::{AbsolutePose, Scene};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alignment {
    /// Camera-frame coordinates as predicted.
    None,
    /// Both poses translated so their roots coincide.
    Root,
    /// Optimal similarity transform (rotation, translation, uniform scale).
    Procrustes,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchCost {
    /// Root-aligned mean joint distance in millimeters.
    #[default]
    RootAligned3d,
    /// Mean distance between projected joints in pixels.
    Projected2d,
}

/// Thresholds `start, start + step, ..., <= stop` in millimeters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdGrid {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl Default for ThresholdGrid {
    fn default() -> Self {
        Self {
            start: 1.0,
            stop: 150.0,
            step: 1.0,
        }
    }
}

impl ThresholdGrid {
    pub fn thresholds(&self) -> Result<Vec<f64>> {
        if !(self.start > 0.0) || !(self.step > 0.0) || !(self.stop >= self.start) {
            return Err(Error::invalid(format!("invalid threshold grid {self:?}")));
        }
        let count = ((self.stop - self.start) / self.step + 1e-9).floor() as usize + 1;
        Ok((0..count)
            .map(|i| self.start + i as f64 * self.step)
            .collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    pub pck_threshold_mm: f64,
    pub auc_grid: ThresholdGrid,
    pub matching: MatchCost,
    /// Sampled views audited for ordinal violations in addition to the
    /// camera normal.
    pub audit_views: usize,
    pub audit_seed: u64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            pck_threshold_mm: 150.0,
            auc_grid: ThresholdGrid::default(),
            matching: MatchCost::default(),
            audit_views: 0,
            audit_seed: 0,
        }
    }
}

impl MetricsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.pck_threshold_mm > 0.0) {
            return Err(Error::invalid(format!(
                "PCK threshold must be positive, got {}",
                self.pck_threshold_mm
            )));
        }
        self.auc_grid.thresholds().map(|_| ())
    }

    /// Camera normal followed by `audit_views` seeded samples.
    pub fn views(&self, scene: &Scene) -> Vec<ViewVector> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.audit_seed);
        std::iter::once(scene.camera.normal_view())
            .chain((0..self.audit_views).map(|_| ViewVector::sample(&mut rng)))
            .collect()
    }
}

/// Minimum total cost assignment. Returns, for each row, the matched
/// column; rows beyond the number of columns stay unmatched.
pub fn assign_min_cost(cost: &[Vec<f64>]) -> Vec<Option<usize>> {
    let rows = cost.len();
    if rows == 0 {
        return Vec::new();
    }
    let cols = cost[0].len();
    if rows > cols {
        let transposed: Vec<Vec<f64>> = (0..cols)
            .map(|c| (0..rows).map(|r| cost[r][c]).collect())
            .collect();
        let mut out = vec![None; rows];
        for (c, r) in assign_min_cost(&transposed).into_iter().enumerate() {
            if let Some(r) = r {
                out[r] = Some(c);
            }
        }
        return out;
    }

    // Shortest augmenting paths with row/column potentials, 1-based with a
    // virtual column 0.
    let inf = f64::INFINITY;
    let mut u = vec![0.0; rows + 1];
    let mut v = vec![0.0; cols + 1];
    let mut owner = vec![0usize; cols + 1];
    let mut way = vec![0usize; cols + 1];
    for row in 1..=rows {
        owner[0] = row;
        let mut col0 = 0;
        let mut min_to = vec![inf; cols + 1];
        let mut used = vec![false; cols + 1];
        loop {
            used[col0] = true;
            let r0 = owner[col0];
            let mut delta = inf;
            let mut col1 = 0;
            for c in 1..=cols {
                if used[c] {
                    continue;
                }
                let reduced = cost[r0 - 1][c - 1] - u[r0] - v[c];
                if reduced < min_to[c] {
                    min_to[c] = reduced;
                    way[c] = col0;
                }
                if min_to[c] < delta {
                    delta = min_to[c];
                    col1 = c;
                }
            }
            for c in 0..=cols {
                if used[c] {
                    u[owner[c]] += delta;
                    v[c] -= delta;
                } else {
                    min_to[c] -= delta;
                }
            }
            col0 = col1;
            if owner[col0] == 0 {
                break;
            }
        }
        loop {
            let prev = way[col0];
            owner[col0] = owner[prev];
            col0 = prev;
            if col0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![None; rows];
    for c in 1..=cols {
        if owner[c] != 0 {
            out[owner[c] - 1] = Some(c - 1);
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub pred: usize,
    pub gt: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    /// Matched pairs ordered by ground-truth index.
    pub pairs: Vec<MatchedPair>,
    pub unmatched_pred: Vec<usize>,
    pub unmatched_gt: Vec<usize>,
}

fn root_aligned_cost(pred: &AbsolutePose, gt: &AbsolutePose, root: usize) -> Result<f64> {
    mpjpe(pred, gt, Alignment::Root, root)
}

fn projected_cost(pred: &Scene, p: usize, gt: &Scene, g: usize) -> f64 {
    let a = &pred.persons()[p];
    let b = &gt.persons()[g];
    let n = a.rel_pose.len().min(b.rel_pose.len());
    let sum: f64 = (0..n)
        .map(|j| {
            let (ua, va) = a.pixel(j);
            let (ub, vb) = b.pixel(j);
            ((ua - ub).powi(2) + (va - vb).powi(2)).sqrt()
        })
        .sum();
    sum / n as f64
}

pub fn match_persons(pred: &Scene, gt: &Scene, cost_kind: MatchCost) -> Result<Assignment> {
    if pred.topology() != gt.topology() {
        return Err(Error::ShapeMismatch(
            "predicted and ground-truth topologies differ".into(),
        ));
    }
    let root = gt.topology().root_index();
    let cost: Vec<Vec<f64>> = match cost_kind {
        MatchCost::RootAligned3d => {
            let pp = pred.absolute_poses()?;
            let gp = gt.absolute_poses()?;
            pp.iter()
                .map(|p| {
                    gp.iter()
                        .map(|g| root_aligned_cost(p, g, root))
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<_>>()?
        }
        MatchCost::Projected2d => (0..pred.len())
            .map(|p| {
                (0..gt.len())
                    .map(|g| projected_cost(pred, p, gt, g))
                    .collect()
            })
            .collect(),
    };
    let rows = assign_min_cost(&cost);
    let mut pairs: Vec<MatchedPair> = rows
        .iter()
        .enumerate()
        .filter_map(|(p, g)| g.map(|g| MatchedPair { pred: p, gt: g }))
        .collect();
    pairs.sort_by_key(|m| m.gt);
    let unmatched_pred = rows
        .iter()
        .enumerate()
        .filter_map(|(p, g)| g.is_none().then_some(p))
        .collect();
    let unmatched_gt = (0..gt.len())
        .filter(|g| !pairs.iter().any(|m| m.gt == *g))
        .collect();
    Ok(Assignment {
        pairs,
        unmatched_pred,
        unmatched_gt,
    })
}

/// Similarity transform `s R x + t` minimizing squared distance from
/// `source` to `target` (Umeyama). Returns the transformed source.
pub fn procrustes_align(source: &[Vec3], target: &[Vec3]) -> Vec<Vec3> {
    let n = source.len() as f64;
    let mu_s: Vec3 = source.iter().sum::<Vec3>() / n;
    let mu_t: Vec3 = target.iter().sum::<Vec3>() / n;
    let mut cov = Matrix3::zeros();
    let mut var_s = 0.0;
    for (s, t) in source.iter().zip(target) {
        let ds = s - mu_s;
        cov += (t - mu_t) * ds.transpose();
        var_s += ds.norm_squared();
    }
    if var_s == 0.0 {
        return vec![mu_t; source.len()];
    }
    let svd = SVD::new(cov, true, true);
    let (u, vt) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
    let mut d = Matrix3::identity();
    if (u * vt).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let rotation = u * d * vt;
    let scale = (Matrix3::from_diagonal(&svd.singular_values) * d).trace() / var_s;
    source
        .iter()
        .map(|s| rotation * (s - mu_s) * scale + mu_t)
        .collect()
}

/// Per-joint Euclidean distances after the requested alignment.
pub fn joint_errors(
    pred: &AbsolutePose,
    gt: &AbsolutePose,
    alignment: Alignment,
    root: usize,
) -> Result<Vec<f64>> {
    if pred.len() != gt.len() || pred.is_empty() {
        return Err(Error::invalid(format!(
            "joint count mismatch: {} predicted vs {} ground truth",
            pred.len(),
            gt.len()
        )));
    }
    if root >= gt.len() {
        return Err(Error::invalid(format!("root index {root} out of range")));
    }
    let p = pred.joints();
    let g = gt.joints();
    Ok(match alignment {
        Alignment::None => p.iter().zip(g).map(|(a, b)| (a - b).norm()).collect(),
        Alignment::Root => {
            let shift = g[root] - p[root];
            p.iter()
                .zip(g)
                .map(|(a, b)| (a + shift - b).norm())
                .collect()
        }
        Alignment::Procrustes => procrustes_align(p, g)
            .iter()
            .zip(g)
            .map(|(a, b)| (a - b).norm())
            .collect(),
    })
}

/// Mean per-joint position error in millimeters.
pub fn mpjpe(
    pred: &AbsolutePose,
    gt: &AbsolutePose,
    alignment: Alignment,
    root: usize,
) -> Result<f64> {
    let e = joint_errors(pred, gt, alignment, root)?;
    Ok(e.iter().sum::<f64>() / e.len() as f64)
}

/// Per ground-truth person: joint errors of its match, or `None` if missed.
fn matched_errors(
    pred: &[AbsolutePose],
    gt: &[AbsolutePose],
    assignment: &Assignment,
    alignment: Alignment,
    root: usize,
) -> Result<Vec<Option<Vec<f64>>>> {
    let mut out = vec![None; gt.len()];
    for m in &assignment.pairs {
        out[m.gt] = Some(joint_errors(&pred[m.pred], &gt[m.gt], alignment, root)?);
    }
    Ok(out)
}

fn count_within(errors: &[Option<Vec<f64>>], threshold: f64) -> usize {
    errors
        .iter()
        .flatten()
        .flat_map(|e| e.iter())
        .filter(|&&d| d <= threshold)
        .count()
}

fn total_joints(errors: &[Option<Vec<f64>>], joints_per_person: usize) -> usize {
    errors.len() * joints_per_person
}

/// Percentage of ground-truth joints within `threshold_mm` (inclusive).
/// Joints of unmatched ground-truth persons count as misses.
pub fn pck(
    pred: &Scene,
    gt: &Scene,
    alignment: Alignment,
    threshold_mm: f64,
    matching: MatchCost,
) -> Result<f64> {
    if !(threshold_mm > 0.0) {
        return Err(Error::invalid(format!(
            "PCK threshold must be positive, got {threshold_mm}"
        )));
    }
    let assignment = match_persons(pred, gt, matching)?;
    let errors = matched_errors(
        &pred.absolute_poses()?,
        &gt.absolute_poses()?,
        &assignment,
        alignment,
        gt.topology().root_index(),
    )?;
    let total = total_joints(&errors, gt.topology().joint_count());
    Ok(100.0 * count_within(&errors, threshold_mm) as f64 / total as f64)
}

/// Area under the root-aligned PCK curve, as the mean PCK over `grid`.
pub fn auc(pred: &Scene, gt: &Scene, grid: &ThresholdGrid, matching: MatchCost) -> Result<f64> {
    let assignment = match_persons(pred, gt, matching)?;
    let errors = matched_errors(
        &pred.absolute_poses()?,
        &gt.absolute_poses()?,
        &assignment,
        Alignment::Root,
        gt.topology().root_index(),
    )?;
    let total = total_joints(&errors, gt.topology().joint_count()) as f64;
    let thresholds = grid.thresholds()?;
    let sum: f64 = thresholds
        .iter()
        .map(|&t| 100.0 * count_within(&errors, t) as f64 / total)
        .sum();
    Ok(sum / thresholds.len() as f64)
}

/// Ordinal violations of index-aligned scenes, summed over `views`.
pub fn ordinal_violations(
    pred: &Scene,
    gt: &Scene,
    views: &[ViewVector],
    config: &HmorConfig,
) -> Result<ViolationCounts> {
    if pred.len() != gt.len() || pred.topology() != gt.topology() {
        return Err(Error::ShapeMismatch(format!(
            "violation audit needs matched scenes ({} vs {} persons)",
            pred.len(),
            gt.len()
        )));
    }
    let pred_abs = pred.absolute_poses()?;
    let mut counts = ViolationCounts::default();
    for view in views {
        let pairs = enumerate_pairs(gt, view, config)?;
        counts += count_violations(&pred_abs, pred.topology(), &pairs, config)?;
    }
    Ok(counts)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PckPoint {
    pub threshold_mm: f64,
    pub pck_rel: f64,
    pub pck_abs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mpjpe: f64,
    pub pa_mpjpe: f64,
    pub abs_mpjpe: f64,
    pub pck_rel: f64,
    pub pck_abs: f64,
    pub auc_rel: f64,
    pub ordinal_violations: ViolationCounts,
    pub matched_pairs: Vec<MatchedPair>,
    pub unmatched_pred: Vec<usize>,
    pub unmatched_gt: Vec<usize>,
    pub pck_curve: Vec<PckPoint>,
}

/// Running sums from which a [`MetricReport`] over one or many scenes is
/// produced. Scenes must be added in a fixed order for reproducible output.
#[derive(Clone, Debug)]
pub struct MetricAccumulator {
    config: MetricsConfig,
    thresholds: Vec<f64>,
    sum_root: f64,
    sum_pa: f64,
    sum_abs: f64,
    matched_joints: usize,
    gt_joints: usize,
    within_rel: usize,
    within_abs: usize,
    curve_rel: Vec<usize>,
    curve_abs: Vec<usize>,
    violations: ViolationCounts,
    matched_pairs: Vec<MatchedPair>,
    unmatched_pred: Vec<usize>,
    unmatched_gt: Vec<usize>,
}

impl MetricAccumulator {
    pub fn new(config: &MetricsConfig) -> Result<Self> {
        config.validate()?;
        let thresholds = config.auc_grid.thresholds()?;
        Ok(Self {
            config: config.clone(),
            curve_rel: vec![0; thresholds.len()],
            curve_abs: vec![0; thresholds.len()],
            thresholds,
            sum_root: 0.0,
            sum_pa: 0.0,
            sum_abs: 0.0,
            matched_joints: 0,
            gt_joints: 0,
            within_rel: 0,
            within_abs: 0,
            violations: ViolationCounts::default(),
            matched_pairs: Vec::new(),
            unmatched_pred: Vec::new(),
            unmatched_gt: Vec::new(),
        })
    }

    pub fn add_scene(&mut self, pred: &Scene, gt: &Scene, hmor: &HmorConfig) -> Result<()> {
        let assignment = match_persons(pred, gt, self.config.matching)?;
        let pred_abs = pred.absolute_poses()?;
        let gt_abs = gt.absolute_poses()?;
        let root = gt.topology().root_index();
        let rel = matched_errors(&pred_abs, &gt_abs, &assignment, Alignment::Root, root)?;
        let abs = matched_errors(&pred_abs, &gt_abs, &assignment, Alignment::None, root)?;
        let pa = matched_errors(&pred_abs, &gt_abs, &assignment, Alignment::Procrustes, root)?;
        let sum = |e: &[Option<Vec<f64>>]| e.iter().flatten().flatten().sum::<f64>();
        self.sum_root += sum(&rel);
        self.sum_abs += sum(&abs);
        self.sum_pa += sum(&pa);
        self.matched_joints += rel.iter().flatten().map(Vec::len).sum::<usize>();
        self.gt_joints += total_joints(&rel, gt.topology().joint_count());
        self.within_rel += count_within(&rel, self.config.pck_threshold_mm);
        self.within_abs += count_within(&abs, self.config.pck_threshold_mm);
        for (i, &t) in self.thresholds.iter().enumerate() {
            self.curve_rel[i] += count_within(&rel, t);
            self.curve_abs[i] += count_within(&abs, t);
        }

        let pred_idx: Vec<usize> = assignment.pairs.iter().map(|m| m.pred).collect();
        let gt_idx: Vec<usize> = assignment.pairs.iter().map(|m| m.gt).collect();
        self.violations += ordinal_violations(
            &pred.select(&pred_idx)?,
            &gt.select(&gt_idx)?,
            &self.config.views(gt),
            hmor,
        )?;
        self.matched_pairs.extend(assignment.pairs);
        self.unmatched_pred.extend(assignment.unmatched_pred);
        self.unmatched_gt.extend(assignment.unmatched_gt);
        Ok(())
    }

    /// Folds in another accumulator built with the same configuration, as if
    /// its scenes had been added here. Merging per-scene accumulators in a
    /// fixed order gives the same sums as adding the scenes sequentially.
    pub fn merge(&mut self, other: &MetricAccumulator) -> Result<()> {
        if other.config != self.config {
            return Err(Error::invalid(
                "cannot merge metric accumulators with different configurations",
            ));
        }
        self.sum_root += other.sum_root;
        self.sum_pa += other.sum_pa;
        self.sum_abs += other.sum_abs;
        self.matched_joints += other.matched_joints;
        self.gt_joints += other.gt_joints;
        self.within_rel += other.within_rel;
        self.within_abs += other.within_abs;
        for (a, b) in self.curve_rel.iter_mut().zip(&other.curve_rel) {
            *a += b;
        }
        for (a, b) in self.curve_abs.iter_mut().zip(&other.curve_abs) {
            *a += b;
        }
        self.violations += other.violations;
        self.matched_pairs.extend_from_slice(&other.matched_pairs);
        self.unmatched_pred.extend_from_slice(&other.unmatched_pred);
        self.unmatched_gt.extend_from_slice(&other.unmatched_gt);
        Ok(())
    }

    pub fn finish(&self) -> MetricReport {
        let mean = |s: f64| {
            if self.matched_joints == 0 {
                0.0
            } else {
                s / self.matched_joints as f64
            }
        };
        let pct = |c: usize| {
            if self.gt_joints == 0 {
                0.0
            } else {
                100.0 * c as f64 / self.gt_joints as f64
            }
        };
        let pck_curve: Vec<PckPoint> = self
            .thresholds
            .iter()
            .zip(self.curve_rel.iter().zip(&self.curve_abs))
            .map(|(&t, (&r, &a))| PckPoint {
                threshold_mm: t,
                pck_rel: pct(r),
                pck_abs: pct(a),
            })
            .collect();
        let auc_rel = pck_curve.iter().map(|p| p.pck_rel).sum::<f64>() / pck_curve.len() as f64;
        MetricReport {
            mpjpe: mean(self.sum_root),
            pa_mpjpe: mean(self.sum_pa),
            abs_mpjpe: mean(self.sum_abs),
            pck_rel: pct(self.within_rel),
            pck_abs: pct(self.within_abs),
            auc_rel,
            ordinal_violations: self.violations,
            matched_pairs: self.matched_pairs.clone(),
            unmatched_pred: self.unmatched_pred.clone(),
            unmatched_gt: self.unmatched_gt.clone(),
            pck_curve,
        }
    }
}

/// Full metric report for a single scene.
pub fn evaluate_scene(
    pred: &Scene,
    gt: &Scene,
    config: &MetricsConfig,
    hmor: &HmorConfig,
) -> Result<MetricReport> {
    let mut acc = MetricAccumulator::new(config)?;
    acc.add_scene(pred, gt, hmor)?;
    Ok(acc.finish())
}
