//! Gradient-descent refinement of a predicted scene.
//!
//! The optimization variables are scene quantities rather than network
//! weights: the human depths, and optionally every joint's `(u, v, z_rel)`.
//! Variables are held in loss units (raw value times
//! [`HmorConfig::depth_unit_scale`]) so that one step size suits depths and
//! pixels alike. Data terms are anchored to the input prediction; ordinal
//! pairs come from the ground truth.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Vec3, ViewVector};
use crate::hmor::{
    count_violations, enumerate_weighted_pairs, HmorConfig, LevelWeights, RelationPairs,
};
use crate::skeleton::{RelativePose, Scene};
use crate::terms::{ObjectiveTerm, SceneGradient, TermContext, TermRegistry};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FreeVariables {
    #[default]
    RootDepthsOnly,
    FullPose,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub steps: usize,
    pub step_size: f64,
    /// Objective weight per registered term name.
    pub weights: BTreeMap<String, f64>,
    /// Sampled virtual views per step, on top of the camera normal.
    pub views_per_step: usize,
    pub free_variables: FreeVariables,
    pub seed: u64,
    /// Backtrack by halving the step whenever the objective would increase.
    /// Views are then drawn once per run so the objective stays fixed.
    pub step_halving: bool,
    pub max_halvings: u32,
    pub divergence_limit: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let weights = [
            ("pose", 1.0),
            ("init", 1.0),
            ("refine", 1.0),
            ("hmor", 1.0),
            ("abs", 0.0),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        Self {
            steps: 500,
            step_size: 1e-2,
            weights,
            views_per_step: 1,
            free_variables: FreeVariables::RootDepthsOnly,
            seed: 0,
            step_halving: false,
            max_halvings: 30,
            divergence_limit: 1e12,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self, registry: &TermRegistry) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::invalid("solver steps must be at least 1"));
        }
        if !(self.step_size > 0.0) || !self.step_size.is_finite() {
            return Err(Error::invalid(format!(
                "step size must be positive, got {}",
                self.step_size
            )));
        }
        for (name, w) in &self.weights {
            if !registry.contains(name) {
                registry.create(name)?;
            }
            if !(*w >= 0.0) || !w.is_finite() {
                return Err(Error::invalid(format!(
                    "weight of `{name}` must be >= 0, got {w}"
                )));
            }
        }
        if !(self.divergence_limit > 0.0) {
            return Err(Error::invalid("divergence limit must be positive"));
        }
        Ok(())
    }

    /// Same configuration with only the given term weights set.
    pub fn with_weights<'a>(mut self, weights: impl IntoIterator<Item = (&'a str, f64)>) -> Self {
        self.weights = weights
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        self
    }
}

/// Weighted sum of registered terms.
#[derive(Debug)]
pub struct Objective {
    terms: Vec<(Box<dyn ObjectiveTerm>, f64)>,
}

#[derive(Clone, Debug)]
pub struct ObjectiveValue {
    pub value: f64,
    pub gradient: SceneGradient,
    /// Unweighted value of each active term.
    pub terms: Vec<(&'static str, f64)>,
}

impl Objective {
    /// Instantiates every term with a nonzero weight.
    pub fn from_weights(registry: &TermRegistry, weights: &BTreeMap<String, f64>) -> Result<Self> {
        let terms = weights
            .iter()
            .filter(|(_, &w)| w != 0.0)
            .map(|(name, &w)| Ok((registry.create(name)?, w)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { terms })
    }

    pub fn term_names(&self) -> Vec<&'static str> {
        self.terms.iter().map(|(t, _)| t.name()).collect()
    }

    pub fn evaluate(&self, pred: &Scene, ctx: &TermContext<'_>) -> Result<ObjectiveValue> {
        let mut value = 0.0;
        let mut gradient = SceneGradient::zeros(pred);
        let mut terms = Vec::with_capacity(self.terms.len());
        for (term, w) in &self.terms {
            let t = term.evaluate(pred, ctx)?;
            let finite_grad = t.gradient.root_depth.iter().all(|g| g.is_finite())
                && t.gradient
                    .joints
                    .iter()
                    .flatten()
                    .all(|g| g.iter().all(|c| c.is_finite()));
            if !t.value.is_finite() || !finite_grad {
                return Err(Error::NonFinite {
                    term: term.name().to_string(),
                    value: t.value,
                });
            }
            value += w * t.value;
            gradient.add_scaled(&t.gradient, *w);
            terms.push((term.name(), t.value));
        }
        Ok(ObjectiveValue {
            value,
            gradient,
            terms,
        })
    }
}

/// Flattens the free variables of `scene` into loss units.
pub fn pack(scene: &Scene, free: FreeVariables, scale: f64) -> Vec<f64> {
    let root = scene.topology().root_index();
    let mut x = Vec::new();
    for p in scene.persons() {
        x.push(p.root_depth() * scale);
        if free == FreeVariables::FullPose {
            for (j, r) in p.rel_pose.joints().iter().enumerate() {
                x.push(r.x * scale);
                x.push(r.y * scale);
                if j != root {
                    x.push(r.z * scale);
                }
            }
        }
    }
    x
}

/// Gradient with respect to the packed variables.
pub fn pack_gradient(
    scene: &Scene,
    grad: &SceneGradient,
    free: FreeVariables,
    scale: f64,
) -> Vec<f64> {
    let root = scene.topology().root_index();
    let mut g = Vec::new();
    for (m, joints) in grad.joints.iter().enumerate() {
        g.push(grad.root_depth[m] / scale);
        if free == FreeVariables::FullPose {
            for (j, d) in joints.iter().enumerate() {
                g.push(d.x / scale);
                g.push(d.y / scale);
                if j != root {
                    g.push(d.z / scale);
                }
            }
        }
    }
    g
}

/// Writes packed variables back into a copy of `template`. Human depths are
/// kept at least 1 mm beyond the point where a joint would reach the
/// camera plane.
pub fn unpack(template: &Scene, x: &[f64], free: FreeVariables, scale: f64) -> Result<Scene> {
    let mut out = template.clone();
    let root = template.topology().root_index();
    let mut it = x.iter().map(|v| v / scale);
    let mut next = || {
        it.next()
            .ok_or_else(|| Error::ShapeMismatch("too few solver variables".into()))
    };
    for p in out.persons_mut() {
        let z = next()?;
        if free == FreeVariables::FullPose {
            let joints = (0..p.rel_pose.len())
                .map(|j| {
                    let u = next()?;
                    let v = next()?;
                    let z_rel = if j == root { 0.0 } else { next()? };
                    Ok(Vec3::new(u, v, z_rel))
                })
                .collect::<Result<Vec<_>>>()?;
            p.rel_pose = RelativePose::new(joints, root)?;
        }
        if !z.is_finite() {
            return Err(Error::NonFinite {
                term: "human depth".into(),
                value: z,
            });
        }
        p.set_root_depth(z.max(p.min_root_depth() + 1.0))?;
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub value: f64,
    /// Instance-level ordinal violations under the camera normal.
    pub violations: usize,
}

#[derive(Clone, Debug)]
pub struct Refinement {
    pub scene: Scene,
    pub trace: Vec<TraceRow>,
}

#[derive(Debug)]
pub struct Solver {
    config: SolverConfig,
    hmor: HmorConfig,
    objective: Objective,
}

impl Solver {
    pub fn new(config: SolverConfig, hmor: HmorConfig, registry: &TermRegistry) -> Result<Self> {
        config.validate(registry)?;
        hmor.validate()?;
        let objective = Objective::from_weights(registry, &config.weights)?;
        Ok(Self {
            config,
            hmor,
            objective,
        })
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    pub fn objective(&self) -> &Objective {
        &self.objective
    }

    fn draw_views(&self, gt: &Scene, rng: &mut ChaCha8Rng) -> Vec<ViewVector> {
        std::iter::once(gt.camera.normal_view())
            .chain((0..self.config.views_per_step).map(|_| ViewVector::sample(rng)))
            .collect()
    }

    fn pairs_for(&self, gt: &Scene, views: &[ViewVector]) -> Result<Vec<RelationPairs>> {
        views
            .iter()
            .map(|v| enumerate_weighted_pairs(gt, v, &self.hmor))
            .collect()
    }

    fn check_divergence(&self, step: usize, v: &ObjectiveValue) -> Result<()> {
        if v.value > self.config.divergence_limit {
            let term = v
                .terms
                .iter()
                .max_by(|a, b| a.1.total_cmp(&b.1))
                .map(|t| t.0)
                .unwrap_or("none");
            return Err(Error::Divergence {
                step,
                value: v.value,
                term: term.to_string(),
            });
        }
        Ok(())
    }

    /// Refines `pred` toward the ordinal structure of `gt`, with data terms
    /// anchored to `pred` itself.
    pub fn refine(&self, pred: &Scene, gt: &Scene) -> Result<Refinement> {
        if pred.len() != gt.len() || pred.topology() != gt.topology() {
            return Err(Error::ShapeMismatch(format!(
                "refinement needs matched scenes ({} vs {} persons)",
                pred.len(),
                gt.len()
            )));
        }
        let free = self.config.free_variables;
        let scale = self.hmor.depth_unit_scale;
        let anchors = pred.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        let audit_config = HmorConfig {
            weights: LevelWeights {
                instance: 1.0,
                part: 0.0,
                joint: 0.0,
            },
            ..self.hmor.clone()
        };
        let audit_pairs = enumerate_weighted_pairs(gt, &gt.camera.normal_view(), &audit_config)?;
        let violations = |scene: &Scene| -> Result<usize> {
            Ok(count_violations(
                &scene.absolute_poses()?,
                scene.topology(),
                &audit_pairs,
                &audit_config,
            )?
            .instance)
        };

        let fixed_pairs = if self.config.step_halving {
            let views = self.draw_views(gt, &mut rng);
            Some(self.pairs_for(gt, &views)?)
        } else {
            None
        };

        let mut x = pack(pred, free, scale);
        let mut scene = pred.clone();
        let first_pairs = match &fixed_pairs {
            Some(p) => p.clone(),
            None => self.pairs_for(gt, &[gt.camera.normal_view()])?,
        };
        let ctx = TermContext {
            anchors: &anchors,
            pairs: &first_pairs,
            hmor: &self.hmor,
        };
        let initial = self.objective.evaluate(&scene, &ctx)?;
        self.check_divergence(0, &initial)?;
        let mut trace = vec![TraceRow {
            step: 0,
            value: initial.value,
            violations: violations(&scene)?,
        }];

        for step in 1..=self.config.steps {
            let step_pairs = match &fixed_pairs {
                Some(p) => p.clone(),
                None => {
                    let views = self.draw_views(gt, &mut rng);
                    self.pairs_for(gt, &views)?
                }
            };
            let ctx = TermContext {
                anchors: &anchors,
                pairs: &step_pairs,
                hmor: &self.hmor,
            };
            let current = self.objective.evaluate(&scene, &ctx)?;
            self.check_divergence(step, &current)?;
            let grad = pack_gradient(&scene, &current.gradient, free, scale);

            let mut eta = self.config.step_size;
            let mut halvings = 0;
            let (next_x, next_scene, next_value) = loop {
                let trial_x: Vec<f64> = x.iter().zip(&grad).map(|(xi, gi)| xi - eta * gi).collect();
                let trial = unpack(&scene, &trial_x, free, scale)?;
                let trial_value = self.objective.evaluate(&trial, &ctx)?;
                self.check_divergence(step, &trial_value)?;
                if !self.config.step_halving || trial_value.value <= current.value {
                    break (trial_x, trial, trial_value.value);
                }
                halvings += 1;
                if halvings > self.config.max_halvings {
                    break (x.clone(), scene.clone(), current.value);
                }
                eta *= 0.5;
            };
            x = next_x;
            scene = next_scene;
            trace.push(TraceRow {
                step,
                value: next_value,
                violations: violations(&scene)?,
            });
        }
        Ok(Refinement { scene, trace })
    }
}

/// Largest relative discrepancy between the analytic gradient of `term` and
/// central finite differences over every free variable.
///
/// The relative error is `|a - n| / max(|a|, |n|)` on the whole gradient
/// vector (0 when both vanish).
pub fn grad_check(
    term: &dyn ObjectiveTerm,
    scene: &Scene,
    ctx: &TermContext<'_>,
    free: FreeVariables,
    epsilon: f64,
) -> Result<f64> {
    let scale = ctx.hmor.depth_unit_scale;
    let analytic = term.evaluate(scene, ctx)?;
    let analytic = pack_gradient(scene, &analytic.gradient, free, scale);
    let x = pack(scene, free, scale);
    let f = |x: &[f64]| -> Result<f64> {
        Ok(term.evaluate(&unpack(scene, x, free, scale)?, ctx)?.value)
    };
    let numeric = crate::gradcheck::central_difference(f, &x, epsilon)?;
    Ok(crate::gradcheck::relative_error(&analytic, &numeric))
}
