//! Coarse-to-fine human depth arithmetic and the regression losses.
//!
//! Absolute depths are normalized by `sqrt(fx * fy)` so that a single
//! regressor works across cameras, then rescaled by `sqrt(A_box / A_roi)` to
//! account for the resize applied when a person crop is pooled to a fixed
//! RoI. A residual on top of the equivalent initial depth yields the final
//! estimate, which [`recover_absolute_depth`] maps back to millimeters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Camera, Vec3};
use crate::skeleton::{AbsolutePose, RelativePose};

/// Per-person depth prediction in normalized units (mm per pixel).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthEstimate {
    pub z_init_norm: f64,
    pub z_eq_init: f64,
    pub delta: f64,
    pub a_box: f64,
    pub a_roi: f64,
}

impl DepthEstimate {
    /// Builds an estimate from an initial normalized depth and a residual.
    pub fn new(z_init_norm: f64, delta: f64, a_box: f64, a_roi: f64) -> Result<Self> {
        let z_eq_init = equivalent_depth(z_init_norm, a_box, a_roi)?;
        Ok(Self {
            z_init_norm,
            z_eq_init,
            delta,
            a_box,
            a_roi,
        })
    }

    pub fn absolute_depth(&self, camera: &Camera) -> Result<f64> {
        recover_absolute_depth(self.delta, self.z_eq_init, camera, self.a_box, self.a_roi)
    }
}

fn check_areas(a_box: f64, a_roi: f64) -> Result<()> {
    if !(a_box > 0.0) || !(a_roi > 0.0) {
        return Err(Error::invalid(format!(
            "box and RoI areas must be positive (a_box = {a_box}, a_roi = {a_roi})"
        )));
    }
    Ok(())
}

pub fn normalize_depth(z_abs: f64, camera: &Camera) -> Result<f64> {
    if !(z_abs > 0.0) {
        return Err(Error::InvalidDepth {
            depth: z_abs,
            context: "only positive depths can be normalized".into(),
        });
    }
    Ok(z_abs / camera.focal_scale())
}

pub fn equivalent_depth(z_norm: f64, a_box: f64, a_roi: f64) -> Result<f64> {
    check_areas(a_box, a_roi)?;
    Ok(z_norm * (a_box / a_roi).sqrt())
}

/// `(delta + z_eq_init) * sqrt(fx * fy * a_roi / a_box)`.
pub fn recover_absolute_depth(
    delta: f64,
    z_eq_init: f64,
    camera: &Camera,
    a_box: f64,
    a_roi: f64,
) -> Result<f64> {
    check_areas(a_box, a_roi)?;
    let z = (delta + z_eq_init) * (camera.fx * camera.fy * a_roi / a_box).sqrt();
    if !(z > 0.0) {
        return Err(Error::InvalidDepth {
            depth: z,
            context: "recovered human depth must be positive".into(),
        });
    }
    Ok(z)
}

fn check_same_len(pred: usize, gt: usize, what: &str) -> Result<()> {
    if pred != gt || pred == 0 {
        return Err(Error::ShapeMismatch(format!(
            "{what}: {pred} predicted vs {gt} ground-truth persons"
        )));
    }
    Ok(())
}

/// L1 subgradient with 0 at the kink.
fn sign0(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Mean absolute error between predicted normalized initial depths and the
/// normalized ground truth.
pub fn loss_init(pred_z_norm: &[f64], gt_z_abs: &[f64], camera: &Camera) -> Result<f64> {
    Ok(loss_init_grad(pred_z_norm, gt_z_abs, camera)?.0)
}

/// Value and gradient with respect to `pred_z_norm`.
pub fn loss_init_grad(
    pred_z_norm: &[f64],
    gt_z_abs: &[f64],
    camera: &Camera,
) -> Result<(f64, Vec<f64>)> {
    check_same_len(pred_z_norm.len(), gt_z_abs.len(), "initial depth loss")?;
    let n = pred_z_norm.len() as f64;
    let mut value = 0.0;
    let mut grad = Vec::with_capacity(pred_z_norm.len());
    for (&pred, &gt) in pred_z_norm.iter().zip(gt_z_abs) {
        let diff = pred - normalize_depth(gt, camera)?;
        value += diff.abs();
        grad.push(sign0(diff) / n);
    }
    Ok((value / n, grad))
}

/// Mean of `|z_eq_norm_gt - z_eq_init - delta|`, with the ground-truth
/// equivalent depth using each estimate's own box and RoI areas.
pub fn loss_refine(pred: &[DepthEstimate], gt_z_abs: &[f64], camera: &Camera) -> Result<f64> {
    Ok(loss_refine_grad(pred, gt_z_abs, camera)?.0)
}

/// Value and gradient with respect to each estimate's `delta`. The gradient
/// with respect to `z_eq_init` is identical.
pub fn loss_refine_grad(
    pred: &[DepthEstimate],
    gt_z_abs: &[f64],
    camera: &Camera,
) -> Result<(f64, Vec<f64>)> {
    check_same_len(pred.len(), gt_z_abs.len(), "refinement loss")?;
    let n = pred.len() as f64;
    let mut value = 0.0;
    let mut grad = Vec::with_capacity(pred.len());
    for (est, &gt) in pred.iter().zip(gt_z_abs) {
        let target = equivalent_depth(normalize_depth(gt, camera)?, est.a_box, est.a_roi)?;
        let diff = est.z_eq_init + est.delta - target;
        value += diff.abs();
        grad.push(sign0(diff) / n);
    }
    Ok((value / n, grad))
}

fn l1_mean_grad(pred: &[&[Vec3]], gt: &[&[Vec3]], what: &str) -> Result<(f64, Vec<Vec<Vec3>>)> {
    check_same_len(pred.len(), gt.len(), what)?;
    let joints = gt[0].len();
    for (m, (p, g)) in pred.iter().zip(gt).enumerate() {
        if p.len() != joints || g.len() != joints || joints == 0 {
            return Err(Error::ShapeMismatch(format!(
                "{what}: person {m} has {} predicted vs {} ground-truth joints (expected {joints})",
                p.len(),
                g.len()
            )));
        }
    }
    let scale = 1.0 / (pred.len() * joints) as f64;
    let mut value = 0.0;
    let grad = pred
        .iter()
        .zip(gt)
        .map(|(p, g)| {
            p.iter()
                .zip(g.iter())
                .map(|(a, b)| {
                    let d = a - b;
                    value += d.abs().sum();
                    d.map(sign0) * scale
                })
                .collect()
        })
        .collect();
    Ok((value * scale, grad))
}

/// `(1/N)(1/J) sum |pred - gt|_1` over root-relative `(u, v, z_rel)`.
pub fn loss_pose(pred: &[RelativePose], gt: &[RelativePose]) -> Result<f64> {
    Ok(loss_pose_grad(pred, gt)?.0)
}

pub fn loss_pose_grad(pred: &[RelativePose], gt: &[RelativePose]) -> Result<(f64, Vec<Vec<Vec3>>)> {
    let p: Vec<&[Vec3]> = pred.iter().map(|r| r.joints()).collect();
    let g: Vec<&[Vec3]> = gt.iter().map(|r| r.joints()).collect();
    l1_mean_grad(&p, &g, "pose loss")
}

/// Mean per-joint L1 distance between absolute poses.
pub fn loss_abs(pred: &[AbsolutePose], gt: &[AbsolutePose]) -> Result<f64> {
    Ok(loss_abs_grad(pred, gt)?.0)
}

pub fn loss_abs_grad(pred: &[AbsolutePose], gt: &[AbsolutePose]) -> Result<(f64, Vec<Vec<Vec3>>)> {
    let p: Vec<&[Vec3]> = pred.iter().map(|r| r.joints()).collect();
    let g: Vec<&[Vec3]> = gt.iter().map(|r| r.joints()).collect();
    l1_mean_grad(&p, &g, "absolute pose loss")
}

/// The individual training losses, detection excluded.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub pose: f64,
    pub init: f64,
    pub refine: f64,
    pub hmor: f64,
    pub abs: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub pose: f64,
    pub init: f64,
    pub refine: f64,
    pub hmor: f64,
    pub abs: f64,
}

impl Default for LossWeights {
    /// Unit weights on every term of the end-to-end objective; the absolute
    /// pose term is only used by the ablation baseline.
    fn default() -> Self {
        Self {
            pose: 1.0,
            init: 1.0,
            refine: 1.0,
            hmor: 1.0,
            abs: 0.0,
        }
    }
}

pub fn total_loss(c: &LossComponents, w: &LossWeights) -> Result<f64> {
    let parts = [c.pose, c.init, c.refine, c.hmor, c.abs];
    if parts.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid(format!(
            "loss components must be finite: {c:?}"
        )));
    }
    Ok(w.pose * c.pose + w.init * c.init + w.refine * c.refine + w.hmor * c.hmor + w.abs * c.abs)
}
