//! Objective terms behind a common trait, registered by name.
//!
//! Every term maps a predicted [`Scene`] to a scalar in loss units and its
//! analytic gradient with respect to the raw scene parameters (human depth
//! in mm, joint `u`/`v` in pixels, joint `z_rel` in mm). The solver and the
//! CLI pick terms by name from a [`TermRegistry`], so new terms plug in
//! without touching either.

use std::collections::BTreeMap;
use std::fmt;

use crate::depth::{self, DepthEstimate};
use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::hmor::{hmor_loss_grad, HmorConfig, RelationPairs};
use crate::skeleton::{AbsolutePose, RelativePose, Scene};

/// Inputs shared by all terms during one evaluation.
pub struct TermContext<'a> {
    /// Targets of the data terms.
    pub anchors: &'a Scene,
    /// Ground-truth relation pairs, one set per view.
    pub pairs: &'a [RelationPairs],
    pub hmor: &'a HmorConfig,
}

/// Gradient with respect to every raw scene parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneGradient {
    pub root_depth: Vec<f64>,
    /// Per joint `(d/du, d/dv, d/dz_rel)`.
    pub joints: Vec<Vec<Vec3>>,
}

impl SceneGradient {
    pub fn zeros(scene: &Scene) -> Self {
        Self {
            root_depth: vec![0.0; scene.len()],
            joints: scene
                .persons()
                .iter()
                .map(|p| vec![Vec3::zeros(); p.rel_pose.len()])
                .collect(),
        }
    }

    pub fn add_scaled(&mut self, other: &SceneGradient, weight: f64) {
        for (a, b) in self.root_depth.iter_mut().zip(&other.root_depth) {
            *a += weight * b;
        }
        for (a, b) in self
            .joints
            .iter_mut()
            .flatten()
            .zip(other.joints.iter().flatten())
        {
            *a += b * weight;
        }
    }

    /// Chains a gradient with respect to camera-frame joints (per mm)
    /// through the back-projection of each joint.
    pub fn from_absolute(scene: &Scene, grad_abs: &[Vec<Vec3>]) -> Self {
        let cam = &scene.camera;
        let root = scene.topology().root_index();
        let mut out = Self::zeros(scene);
        for (m, person) in scene.persons().iter().enumerate() {
            for (j, g) in grad_abs[m].iter().enumerate() {
                let (u, v) = person.pixel(j);
                let ray = cam.ray(u, v);
                let depth = person.joint_depth(j);
                let along_ray = g.dot(&ray);
                out.root_depth[m] += along_ray;
                out.joints[m][j] = Vec3::new(
                    g.x * depth / cam.fx,
                    g.y * depth / cam.fy,
                    if j == root { 0.0 } else { along_ray },
                );
            }
        }
        out
    }
}

pub struct TermValue {
    pub value: f64,
    pub gradient: SceneGradient,
}

pub trait ObjectiveTerm: Send + Sync {
    fn name(&self) -> &'static str;

    fn evaluate(&self, pred: &Scene, ctx: &TermContext<'_>) -> Result<TermValue>;
}

impl fmt::Debug for dyn ObjectiveTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ObjectiveTerm({})", self.name())
    }
}

fn check_matched(pred: &Scene, anchors: &Scene) -> Result<()> {
    if pred.len() != anchors.len() || pred.topology() != anchors.topology() {
        return Err(Error::ShapeMismatch(format!(
            "prediction has {} persons, anchors have {}",
            pred.len(),
            anchors.len()
        )));
    }
    Ok(())
}

fn scaled_rel(scene: &Scene, s: f64) -> Result<Vec<RelativePose>> {
    let root = scene.topology().root_index();
    scene
        .persons()
        .iter()
        .map(|p| RelativePose::new(p.rel_pose.joints().iter().map(|j| j * s).collect(), root))
        .collect()
}

/// L1 on root-relative `(u, v, z_rel)`, in loss units.
pub struct PoseTerm;

impl ObjectiveTerm for PoseTerm {
    fn name(&self) -> &'static str {
        "pose"
    }

    fn evaluate(&self, pred: &Scene, ctx: &TermContext<'_>) -> Result<TermValue> {
        check_matched(pred, ctx.anchors)?;
        let s = ctx.hmor.depth_unit_scale;
        let (value, grad) =
            depth::loss_pose_grad(&scaled_rel(pred, s)?, &scaled_rel(ctx.anchors, s)?)?;
        let root = pred.topology().root_index();
        let mut gradient = SceneGradient::zeros(pred);
        for (out, g) in gradient.joints.iter_mut().zip(grad) {
            for (j, (o, gj)) in out.iter_mut().zip(g).enumerate() {
                *o = gj * s;
                if j == root {
                    o.z = 0.0;
                }
            }
        }
        Ok(TermValue { value, gradient })
    }
}

/// L1 between focal-normalized human depths.
pub struct InitDepthTerm;

impl ObjectiveTerm for InitDepthTerm {
    fn name(&self) -> &'static str {
        "init"
    }

    fn evaluate(&self, pred: &Scene, ctx: &TermContext<'_>) -> Result<TermValue> {
        check_matched(pred, ctx.anchors)?;
        let cam = &pred.camera;
        let z_norm = pred
            .persons()
            .iter()
            .map(|p| depth::normalize_depth(p.root_depth(), cam))
            .collect::<Result<Vec<_>>>()?;
        let gt: Vec<f64> = ctx
            .anchors
            .persons()
            .iter()
            .map(|p| p.root_depth())
            .collect();
        let (value, grad) = depth::loss_init_grad(&z_norm, &gt, cam)?;
        let mut gradient = SceneGradient::zeros(pred);
        for (o, g) in gradient.root_depth.iter_mut().zip(grad) {
            *o = g / cam.focal_scale();
        }
        Ok(TermValue { value, gradient })
    }
}

/// L1 between RoI-equivalent depths. The current human depth is taken as
/// the refined estimate (`z_eq_init + delta`), using each predicted
/// person's own box and RoI areas.
pub struct RefineDepthTerm;

impl ObjectiveTerm for RefineDepthTerm {
    fn name(&self) -> &'static str {
        "refine"
    }

    fn evaluate(&self, pred: &Scene, ctx: &TermContext<'_>) -> Result<TermValue> {
        check_matched(pred, ctx.anchors)?;
        let cam = &pred.camera;
        let estimates = pred
            .persons()
            .iter()
            .map(|p| {
                let z = depth::normalize_depth(p.root_depth(), cam)?;
                DepthEstimate::new(z, 0.0, p.bbox.area(), p.roi_area())
            })
            .collect::<Result<Vec<_>>>()?;
        let gt: Vec<f64> = ctx
            .anchors
            .persons()
            .iter()
            .map(|p| p.root_depth())
            .collect();
        let (value, grad) = depth::loss_refine_grad(&estimates, &gt, cam)?;
        let mut gradient = SceneGradient::zeros(pred);
        for ((o, g), est) in gradient.root_depth.iter_mut().zip(grad).zip(&estimates) {
            *o = g * (est.a_box / est.a_roi).sqrt() / cam.focal_scale();
        }
        Ok(TermValue { value, gradient })
    }
}

/// L1 on camera-frame joints, in loss units.
pub struct AbsolutePoseTerm;

impl ObjectiveTerm for AbsolutePoseTerm {
    fn name(&self) -> &'static str {
        "abs"
    }

    fn evaluate(&self, pred: &Scene, ctx: &TermContext<'_>) -> Result<TermValue> {
        check_matched(pred, ctx.anchors)?;
        let s = ctx.hmor.depth_unit_scale;
        let scale = |poses: Vec<AbsolutePose>| -> Result<Vec<AbsolutePose>> {
            poses
                .iter()
                .map(|p| AbsolutePose::new(p.joints().iter().map(|j| j * s).collect()))
                .collect()
        };
        let (value, grad) = depth::loss_abs_grad(
            &scale(pred.absolute_poses()?)?,
            &scale(ctx.anchors.absolute_poses()?)?,
        )?;
        let per_mm: Vec<Vec<Vec3>> = grad
            .into_iter()
            .map(|g| g.into_iter().map(|x| x * s).collect())
            .collect();
        Ok(TermValue {
            value,
            gradient: SceneGradient::from_absolute(pred, &per_mm),
        })
    }
}

/// HMOR loss averaged over the context's views.
pub struct HmorTerm;

impl ObjectiveTerm for HmorTerm {
    fn name(&self) -> &'static str {
        "hmor"
    }

    fn evaluate(&self, pred: &Scene, ctx: &TermContext<'_>) -> Result<TermValue> {
        let mut gradient = SceneGradient::zeros(pred);
        if ctx.pairs.is_empty() {
            return Ok(TermValue {
                value: 0.0,
                gradient,
            });
        }
        let poses = pred.absolute_poses()?;
        let share = 1.0 / ctx.pairs.len() as f64;
        let mut value = 0.0;
        for pairs in ctx.pairs {
            let (loss, grad) = hmor_loss_grad(&poses, pred.topology(), pairs, ctx.hmor)?;
            value += share * loss.total;
            gradient.add_scaled(&SceneGradient::from_absolute(pred, &grad), share);
        }
        Ok(TermValue { value, gradient })
    }
}

pub type TermFactory = fn() -> Box<dyn ObjectiveTerm>;

/// Name-indexed constructors for objective terms.
#[derive(Clone)]
pub struct TermRegistry {
    factories: BTreeMap<&'static str, TermFactory>,
}

impl TermRegistry {
    pub fn empty() -> Self {
        Self {
            factories: BTreeMap::new(),
        }
    }

    /// `pose`, `init`, `refine`, `abs` and `hmor`.
    pub fn builtin() -> Self {
        let mut r = Self::empty();
        let builtins: [(&'static str, TermFactory); 5] = [
            ("pose", || Box::new(PoseTerm)),
            ("init", || Box::new(InitDepthTerm)),
            ("refine", || Box::new(RefineDepthTerm)),
            ("abs", || Box::new(AbsolutePoseTerm)),
            ("hmor", || Box::new(HmorTerm)),
        ];
        for (name, f) in builtins {
            r.register(name, f).expect("builtin names are unique");
        }
        r
    }

    pub fn register(&mut self, name: &'static str, factory: TermFactory) -> Result<()> {
        if self.factories.contains_key(name) {
            return Err(Error::invalid(format!(
                "objective term `{name}` is already registered"
            )));
        }
        self.factories.insert(name, factory);
        Ok(())
    }

    pub fn create(&self, name: &str) -> Result<Box<dyn ObjectiveTerm>> {
        self.factories.get(name).map(|f| f()).ok_or_else(|| {
            Error::invalid(format!(
                "unknown objective term `{name}` (known: {})",
                self.names().collect::<Vec<_>>().join(", ")
            ))
        })
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.factories.keys().copied()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.factories.contains_key(name)
    }
}

impl Default for TermRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}

impl fmt::Debug for TermRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.factories.keys()).finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Constant;

    impl ObjectiveTerm for Constant {
        fn name(&self) -> &'static str {
            "constant"
        }

        fn evaluate(&self, pred: &Scene, _: &TermContext<'_>) -> Result<TermValue> {
            Ok(TermValue {
                value: 1.0,
                gradient: SceneGradient::zeros(pred),
            })
        }
    }

    #[test]
    fn builtin_names() {
        let r = TermRegistry::builtin();
        assert_eq!(
            r.names().collect::<Vec<_>>(),
            vec!["abs", "hmor", "init", "pose", "refine"]
        );
        for name in r.names() {
            assert_eq!(r.create(name).unwrap().name(), name);
        }
        assert!(r.create("det").is_err());
    }

    #[test]
    fn custom_terms_register_once() {
        let mut r = TermRegistry::builtin();
        r.register("constant", || Box::new(Constant)).unwrap();
        assert!(r.contains("constant"));
        assert!(r.register("constant", || Box::new(Constant)).is_err());
        assert!(r.register("hmor", || Box::new(Constant)).is_err());
    }
}
