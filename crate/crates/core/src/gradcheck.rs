//! Finite-difference verification of the analytic gradients.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::depth::{
    equivalent_depth, loss_abs, loss_abs_grad, loss_init, loss_init_grad, loss_pose,
    loss_pose_grad, loss_refine, loss_refine_grad, normalize_depth, DepthEstimate,
};
use crate::error::{Error, Result};
use crate::geometry::{Camera, Vec3, ViewVector};
use crate::hmor::{
    err_instance, err_instance_grad, err_joint, err_joint_grad, err_part, err_part_grad,
    err_part_particle, err_part_particle_grad, PairError, RelationLabel,
};
use crate::skeleton::{AbsolutePose, RelativePose};

/// Central differences `(f(x + h e_i) - f(x - h e_i)) / 2h` for every coordinate.
pub fn central_difference<F>(mut f: F, x: &[f64], step: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let mut probe = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        probe[i] = x[i] + step;
        let hi = f(&probe)?;
        probe[i] = x[i] - step;
        let lo = f(&probe)?;
        probe[i] = x[i];
        out.push((hi - lo) / (2.0 * step));
    }
    Ok(out)
}

/// `|a - b| / max(|a|, |b|)` on whole vectors; 0 when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let denom = norm(a).max(norm(b));
    if denom == 0.0 {
        0.0
    } else {
        norm(&diff) / denom
    }
}

/// Functions with hand-written gradients.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradTarget {
    ErrInstance,
    ErrPart,
    ErrPartParticle,
    ErrJoint,
    LossPose,
    LossInit,
    LossRefine,
    LossAbs,
}

impl GradTarget {
    pub const ALL: [GradTarget; 8] = [
        GradTarget::ErrInstance,
        GradTarget::ErrPart,
        GradTarget::ErrPartParticle,
        GradTarget::ErrJoint,
        GradTarget::LossPose,
        GradTarget::LossInit,
        GradTarget::LossRefine,
        GradTarget::LossAbs,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GradTarget::ErrInstance => "err_instance",
            GradTarget::ErrPart => "err_part",
            GradTarget::ErrPartParticle => "err_part_particle",
            GradTarget::ErrJoint => "err_joint",
            GradTarget::LossPose => "loss_pose",
            GradTarget::LossInit => "loss_init",
            GradTarget::LossRefine => "loss_refine",
            GradTarget::LossAbs => "loss_abs",
        }
    }
}

impl fmt::Display for GradTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GradTarget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        GradTarget::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown gradient target `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub target: GradTarget,
    pub cases: usize,
    pub max_relative_error: f64,
    pub mean_relative_error: f64,
}

/// Minimum distance from any kink, in loss units. Far larger than any
/// sensible finite-difference step.
const KINK_MARGIN: f64 = 1e-2;

fn random_vec(rng: &mut ChaCha8Rng, half_width: f64) -> Vec3 {
    Vec3::new(
        rng.random_range(-half_width..half_width),
        rng.random_range(-half_width..half_width),
        rng.random_range(-half_width..half_width),
    )
}

fn vec6(a: &Vec3, b: &Vec3) -> Vec<f64> {
    a.iter().chain(b.iter()).copied().collect()
}

fn split6(x: &[f64]) -> (Vec3, Vec3) {
    (Vec3::new(x[0], x[1], x[2]), Vec3::new(x[3], x[4], x[5]))
}

type PairFn = fn(&Vec3, &Vec3, RelationLabel, &ViewVector) -> f64;
type PairGradFn = fn(&Vec3, &Vec3, RelationLabel, &ViewVector) -> PairError;

/// Draws an active pair: the label is chosen so the hinge is open, with the
/// margin kept away from zero.
fn check_pair(
    rng: &mut ChaCha8Rng,
    step: f64,
    margin: impl Fn(&Vec3, &Vec3, &ViewVector) -> f64,
    value: PairFn,
    grad: PairGradFn,
) -> Result<f64> {
    let (a, b, view, gap) = loop {
        let a = random_vec(rng, 3.0);
        let b = random_vec(rng, 3.0);
        let view = ViewVector::sample(rng);
        let gap = margin(&a, &b, &view);
        if gap.abs() > KINK_MARGIN {
            break (a, b, view, gap);
        }
    };
    let label = if gap > 0.0 {
        RelationLabel::Positive
    } else {
        RelationLabel::Negative
    };
    let g = grad(&a, &b, label, &view);
    let numeric = central_difference(
        |x| {
            let (p, q) = split6(x);
            Ok(value(&p, &q, label, &view))
        },
        &vec6(&a, &b),
        step,
    )?;
    Ok(relative_error(&vec6(&g.d_first, &g.d_second), &numeric))
}

/// Offsets every coordinate of `base` by at least `KINK_MARGIN` so that no
/// L1 residual sits on its kink.
fn offset_away(rng: &mut ChaCha8Rng, base: f64) -> f64 {
    let mag = rng.random_range(KINK_MARGIN..0.5);
    if rng.random_bool(0.5) {
        base + mag
    } else {
        base - mag
    }
}

fn flatten(poses: &[Vec<Vec3>]) -> Vec<f64> {
    poses
        .iter()
        .flatten()
        .flat_map(|v| v.iter().copied())
        .collect()
}

fn unflatten(x: &[f64], persons: usize, joints: usize) -> Vec<Vec<Vec3>> {
    (0..persons)
        .map(|m| {
            (0..joints)
                .map(|j| {
                    let k = 3 * (m * joints + j);
                    Vec3::new(x[k], x[k + 1], x[k + 2])
                })
                .collect()
        })
        .collect()
}

fn check_joint_loss(rng: &mut ChaCha8Rng, step: f64, relative: bool) -> Result<f64> {
    let persons = rng.random_range(1..=4);
    let joints = 17;
    let gt: Vec<Vec<Vec3>> = (0..persons)
        .map(|_| {
            let offset = Vec3::new(
                rng.random_range(-2.0..2.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(3.0..7.0),
            );
            (0..joints)
                .map(|j| {
                    let v = random_vec(rng, 0.8);
                    if relative && j == 0 {
                        Vec3::new(v.x, v.y, 0.0)
                    } else if relative {
                        v
                    } else {
                        v + offset
                    }
                })
                .collect()
        })
        .collect();
    let pred: Vec<Vec<Vec3>> = gt
        .iter()
        .map(|p| p.iter().map(|v| v.map(|c| offset_away(rng, c))).collect())
        .collect();

    // Relative poses pin the root depth to zero, so the root z residual is
    // exactly |0 - 0| and cannot be probed; it is left out of the check.
    if relative {
        let gt_rel: Vec<RelativePose> = gt
            .iter()
            .map(|p| RelativePose::new(p.clone(), 0))
            .collect::<Result<_>>()?;
        let build = |x: &[f64]| -> Result<Vec<RelativePose>> {
            unflatten(x, persons, joints)
                .into_iter()
                .map(|p| RelativePose::new(p, 0))
                .collect()
        };
        let x = flatten(&pred);
        let (_, g) = loss_pose_grad(&build(&x)?, &gt_rel)?;
        let mut analytic = flatten(&g);
        let mut numeric = central_difference(|x| loss_pose(&build(x)?, &gt_rel), &x, step)?;
        for m in 0..persons {
            let k = 3 * m * joints + 2;
            analytic[k] = 0.0;
            numeric[k] = 0.0;
        }
        Ok(relative_error(&analytic, &numeric))
    } else {
        let gt_abs: Vec<AbsolutePose> = gt
            .into_iter()
            .map(AbsolutePose::new)
            .collect::<Result<_>>()?;
        let build = |x: &[f64]| -> Result<Vec<AbsolutePose>> {
            unflatten(x, persons, joints)
                .into_iter()
                .map(AbsolutePose::new)
                .collect()
        };
        let x = flatten(&pred);
        let (_, g) = loss_abs_grad(&build(&x)?, &gt_abs)?;
        let numeric = central_difference(|x| loss_abs(&build(x)?, &gt_abs), &x, step)?;
        Ok(relative_error(&flatten(&g), &numeric))
    }
}

fn check_depth_loss(rng: &mut ChaCha8Rng, step: f64, refine: bool) -> Result<f64> {
    let camera = Camera::new(
        rng.random_range(500.0..2000.0),
        rng.random_range(500.0..2000.0),
        500.0,
        500.0,
    )?;
    let n = rng.random_range(1..=4);
    let gt_z: Vec<f64> = (0..n).map(|_| rng.random_range(2000.0..9000.0)).collect();
    if refine {
        let shapes: Vec<(f64, f64, f64)> = (0..n)
            .map(|_| {
                let a_roi = rng.random_range(100.0f64..900.0).powi(2);
                let a_box = a_roi * rng.random_range(0.2..1.0);
                (rng.random_range(1.0..10.0), a_box, a_roi)
            })
            .collect();
        let build = |x: &[f64]| -> Result<Vec<DepthEstimate>> {
            shapes
                .iter()
                .zip(x)
                .map(|(&(z, a_box, a_roi), &delta)| DepthEstimate::new(z, delta, a_box, a_roi))
                .collect()
        };
        // Pick deltas whose residual sits well away from zero.
        let mut x = Vec::with_capacity(n);
        for (m, &(z, a_box, a_roi)) in shapes.iter().enumerate() {
            let est = DepthEstimate::new(z, 0.0, a_box, a_roi)?;
            let target = equivalent_depth(normalize_depth(gt_z[m], &camera)?, a_box, a_roi)?;
            x.push(offset_away(rng, target - est.z_eq_init));
        }
        let (_, analytic) = loss_refine_grad(&build(&x)?, &gt_z, &camera)?;
        let numeric = central_difference(|x| loss_refine(&build(x)?, &gt_z, &camera), &x, step)?;
        Ok(relative_error(&analytic, &numeric))
    } else {
        let x: Vec<f64> = gt_z
            .iter()
            .map(|&z| Ok(offset_away(rng, normalize_depth(z, &camera)?)))
            .collect::<Result<_>>()?;
        let (_, analytic) = loss_init_grad(&x, &gt_z, &camera)?;
        let numeric = central_difference(|x| loss_init(x, &gt_z, &camera), &x, step)?;
        Ok(relative_error(&analytic, &numeric))
    }
}

/// Relative gradient error of `target` at one random point away from kinks.
pub fn check_once(target: GradTarget, rng: &mut ChaCha8Rng, step: f64) -> Result<f64> {
    let depth_gap = |a: &Vec3, b: &Vec3, v: &ViewVector| (a - b).dot(v.direction());
    match target {
        GradTarget::ErrInstance => {
            check_pair(rng, step, depth_gap, err_instance, err_instance_grad)
        }
        GradTarget::ErrPartParticle => check_pair(
            rng,
            step,
            depth_gap,
            err_part_particle,
            err_part_particle_grad,
        ),
        GradTarget::ErrJoint => check_pair(rng, step, depth_gap, err_joint, err_joint_grad),
        GradTarget::ErrPart => check_pair(
            rng,
            step,
            |a, b, v| -a.cross(b).dot(v.direction()),
            err_part,
            err_part_grad,
        ),
        GradTarget::LossPose => check_joint_loss(rng, step, true),
        GradTarget::LossAbs => check_joint_loss(rng, step, false),
        GradTarget::LossInit => check_depth_loss(rng, step, false),
        GradTarget::LossRefine => check_depth_loss(rng, step, true),
    }
}

/// Checks `target` at `cases` seeded random points.
pub fn run(target: GradTarget, cases: usize, seed: u64, step: f64) -> Result<GradCheckReport> {
    if cases == 0 {
        return Err(Error::invalid("gradient check needs at least one case"));
    }
    if !(step > 0.0) || !step.is_finite() {
        return Err(Error::invalid(format!(
            "finite-difference step must be positive, got {step}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max = 0.0f64;
    let mut sum = 0.0;
    for _ in 0..cases {
        let e = check_once(target, &mut rng, step)?;
        max = max.max(e);
        sum += e;
    }
    Ok(GradCheckReport {
        target,
        cases,
        max_relative_error: max,
        mean_relative_error: sum / cases as f64,
    })
}
