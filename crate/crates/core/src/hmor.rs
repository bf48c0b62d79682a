//! Hierarchical multi-person ordinal relations.
//!
//! Three levels of pairwise supervision are built from a ground-truth scene
//! under a view direction `n`:
//!
//! * instance: depth order of person centroids (mean of joints),
//! * part: rotational order of body-part vectors projected onto the plane
//!   orthogonal to `n` (or, in the particle variant, depth order of part
//!   midpoints),
//! * joint: depth order of individual joints.
//!
//! A pair labelled `+1` says the first element should be "smaller" along the
//! relation (closer to the camera, or earlier in angle). Errors are zero for
//! correctly ordered predictions and grow with the size of the violation.
//!
//! Positions entering the error functions are expected in loss units, i.e.
//! millimeters multiplied by [`HmorConfig::depth_unit_scale`]. The
//! scene-level entry points do that conversion.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Vec3, ViewVector};
use crate::skeleton::{AbsolutePose, Scene, SkeletonTopology};

/// Ground-truth ordinal relation of an ordered pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "i8", into = "i8")]
pub enum RelationLabel {
    /// `+1`: the first element comes first along the relation.
    Positive,
    /// `-1`: the second element comes first.
    Negative,
    /// `0`: tied within the equality tolerance.
    Zero,
}

impl RelationLabel {
    /// Label for a signed gap `first - second` along the relation:
    /// `+1` below `-tolerance`, `-1` above `+tolerance`, else `0`.
    pub fn from_gap(gap: f64, tolerance: f64) -> Self {
        if gap < -tolerance {
            RelationLabel::Positive
        } else if gap > tolerance {
            RelationLabel::Negative
        } else {
            RelationLabel::Zero
        }
    }

    pub fn value(self) -> f64 {
        match self {
            RelationLabel::Positive => 1.0,
            RelationLabel::Negative => -1.0,
            RelationLabel::Zero => 0.0,
        }
    }

    pub fn negated(self) -> Self {
        match self {
            RelationLabel::Positive => RelationLabel::Negative,
            RelationLabel::Negative => RelationLabel::Positive,
            RelationLabel::Zero => RelationLabel::Zero,
        }
    }
}

impl TryFrom<i8> for RelationLabel {
    type Error = Error;

    fn try_from(v: i8) -> Result<Self> {
        match v {
            1 => Ok(RelationLabel::Positive),
            -1 => Ok(RelationLabel::Negative),
            0 => Ok(RelationLabel::Zero),
            other => Err(Error::invalid(format!(
                "relation label must be -1, 0 or 1, got {other}"
            ))),
        }
    }
}

impl From<RelationLabel> for i8 {
    fn from(l: RelationLabel) -> Self {
        l.value() as i8
    }
}

/// How body parts enter the part level.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartMode {
    /// Angle relations between part vectors.
    #[default]
    Vector,
    /// Depth relations between part midpoints.
    Particle,
}

/// Which form of the joint-level error is evaluated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JointErrorForm {
    /// `log(1 + max(0, label * gap))`, the same shape as the instance error.
    #[default]
    ClampedProduct,
    /// `log(1 + max(label, 0) * gap)`: only `+1` pairs contribute and the
    /// product itself is not clamped, so correct orders give negative
    /// values. Kept for comparison only.
    ClampedLabel,
}

/// Which part and joint pairs are enumerated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairScope {
    /// Intra- and inter-person pairs.
    #[default]
    All,
    /// Only pairs within the same person.
    IntraPerson,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LevelWeights {
    pub instance: f64,
    pub part: f64,
    pub joint: f64,
}

impl Default for LevelWeights {
    fn default() -> Self {
        Self {
            instance: 1.0,
            part: 1.0,
            joint: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HmorConfig {
    /// Millimeters to loss units; 1e-3 puts depth gaps in meters.
    pub depth_unit_scale: f64,
    /// Ties below this gap (in loss units) get label 0.
    pub equality_tolerance: f64,
    pub weights: LevelWeights,
    /// Upper bound on pairs per level; larger sets are subsampled.
    pub pair_cap: Option<usize>,
    pub pair_seed: u64,
    pub part_mode: PartMode,
    pub joint_form: JointErrorForm,
    pub pair_scope: PairScope,
}

impl Default for HmorConfig {
    fn default() -> Self {
        Self {
            depth_unit_scale: 1e-3,
            equality_tolerance: 0.0,
            weights: LevelWeights::default(),
            pair_cap: None,
            pair_seed: 0,
            part_mode: PartMode::Vector,
            joint_form: JointErrorForm::ClampedProduct,
            pair_scope: PairScope::All,
        }
    }
}

impl HmorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.depth_unit_scale > 0.0) || !self.depth_unit_scale.is_finite() {
            return Err(Error::invalid(format!(
                "depth_unit_scale must be positive, got {}",
                self.depth_unit_scale
            )));
        }
        if !(self.equality_tolerance >= 0.0) {
            return Err(Error::invalid(format!(
                "equality_tolerance must be >= 0, got {}",
                self.equality_tolerance
            )));
        }
        let w = &self.weights;
        if [w.instance, w.part, w.joint]
            .iter()
            .any(|x| !(*x >= 0.0) || !x.is_finite())
        {
            return Err(Error::invalid(format!(
                "level weights must be >= 0, got {w:?}"
            )));
        }
        if self.pair_cap == Some(0) {
            return Err(Error::invalid("pair_cap must be at least 1"));
        }
        Ok(())
    }
}

/// Value of a pairwise error and its gradient with respect to both inputs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairError {
    pub value: f64,
    pub d_first: Vec3,
    pub d_second: Vec3,
}

impl PairError {
    fn zero() -> Self {
        Self {
            value: 0.0,
            d_first: Vec3::zeros(),
            d_second: Vec3::zeros(),
        }
    }
}

pub fn relation_instance(a: &Vec3, b: &Vec3, view: &ViewVector, tolerance: f64) -> RelationLabel {
    RelationLabel::from_gap((a - b).dot(view.direction()), tolerance)
}

/// Joint depth relations use the same rule as instances.
pub fn relation_joint(a: &Vec3, b: &Vec3, view: &ViewVector, tolerance: f64) -> RelationLabel {
    relation_instance(a, b, view, tolerance)
}

/// Label is `-sign((t1 x t2) . n)`, so a prediction with the correct
/// rotational order always has a cross-product projection of the opposite
/// sign and is ignored by the error.
pub fn relation_part(t1: &Vec3, t2: &Vec3, view: &ViewVector, tolerance: f64) -> RelationLabel {
    RelationLabel::from_gap(t1.cross(t2).dot(view.direction()), tolerance)
}

fn depth_order_error(a: &Vec3, b: &Vec3, label: RelationLabel, view: &ViewVector) -> PairError {
    let n = view.direction();
    let margin = label.value() * (a - b).dot(n);
    if margin <= 0.0 {
        return PairError::zero();
    }
    let slope = label.value() / (1.0 + margin);
    PairError {
        value: margin.ln_1p(),
        d_first: n * slope,
        d_second: -n * slope,
    }
}

/// `log(1 + max(0, label * (a - b) . n))` on instance positions.
pub fn err_instance(a: &Vec3, b: &Vec3, label: RelationLabel, view: &ViewVector) -> f64 {
    depth_order_error(a, b, label, view).value
}

pub fn err_instance_grad(a: &Vec3, b: &Vec3, label: RelationLabel, view: &ViewVector) -> PairError {
    depth_order_error(a, b, label, view)
}

/// `max(0, label * (t1 x t2) . n)` on part vectors.
pub fn err_part(t1: &Vec3, t2: &Vec3, label: RelationLabel, view: &ViewVector) -> f64 {
    err_part_grad(t1, t2, label, view).value
}

pub fn err_part_grad(t1: &Vec3, t2: &Vec3, label: RelationLabel, view: &ViewVector) -> PairError {
    let n = view.direction();
    let l = label.value();
    let margin = l * t1.cross(t2).dot(n);
    if margin <= 0.0 {
        return PairError::zero();
    }
    // (t1 x t2) . n = t1 . (t2 x n) = t2 . (n x t1)
    PairError {
        value: margin,
        d_first: t2.cross(n) * l,
        d_second: n.cross(t1) * l,
    }
}

/// Particle-part variant: the instance error applied to part midpoints.
pub fn err_part_particle(c1: &Vec3, c2: &Vec3, label: RelationLabel, view: &ViewVector) -> f64 {
    depth_order_error(c1, c2, label, view).value
}

pub fn err_part_particle_grad(
    c1: &Vec3,
    c2: &Vec3,
    label: RelationLabel,
    view: &ViewVector,
) -> PairError {
    depth_order_error(c1, c2, label, view)
}

/// `log(1 + max(0, label * (k1 - k2) . n))` on joints.
pub fn err_joint(k1: &Vec3, k2: &Vec3, label: RelationLabel, view: &ViewVector) -> f64 {
    depth_order_error(k1, k2, label, view).value
}

pub fn err_joint_grad(k1: &Vec3, k2: &Vec3, label: RelationLabel, view: &ViewVector) -> PairError {
    depth_order_error(k1, k2, label, view)
}

/// Joint error with the clamp on the label instead of the product. Returns
/// NaN or -inf once `gap <= -1` for a `+1` pair.
pub fn err_joint_clamped_label(
    k1: &Vec3,
    k2: &Vec3,
    label: RelationLabel,
    view: &ViewVector,
) -> PairError {
    if label != RelationLabel::Positive {
        return PairError::zero();
    }
    let n = view.direction();
    let gap = (k1 - k2).dot(n);
    let slope = 1.0 / (1.0 + gap);
    PairError {
        value: gap.ln_1p(),
        d_first: n * slope,
        d_second: -n * slope,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PartRef {
    pub person: usize,
    pub part: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct JointRef {
    pub person: usize,
    pub joint: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pair<T> {
    pub first: T,
    pub second: T,
    pub label: RelationLabel,
}

/// Labelled pair sets for one view.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelationPairs {
    pub view: ViewVector,
    pub part_mode: PartMode,
    pub instance: Vec<Pair<usize>>,
    pub part: Vec<Pair<PartRef>>,
    pub joint: Vec<Pair<JointRef>>,
}

impl RelationPairs {
    pub fn total_len(&self) -> usize {
        self.instance.len() + self.part.len() + self.joint.len()
    }
}

/// Camera-frame joints of each person converted to loss units.
pub(crate) fn scaled_joints(poses: &[AbsolutePose], scale: f64) -> Vec<Vec<Vec3>> {
    poses
        .iter()
        .map(|p| p.joints().iter().map(|j| j * scale).collect())
        .collect()
}

fn centroid(joints: &[Vec3]) -> Vec3 {
    joints.iter().sum::<Vec3>() / joints.len() as f64
}

fn part_vector(joints: &[Vec3], (s, e): (usize, usize)) -> Vec3 {
    joints[e] - joints[s]
}

fn part_midpoint(joints: &[Vec3], (s, e): (usize, usize)) -> Vec3 {
    (joints[e] + joints[s]) * 0.5
}

type SameGroup<T> = dyn Fn(&T, &T) -> bool;

/// All unordered pairs `(i, j)`, `i < j`, over `items`, optionally only
/// those with equal group keys.
fn unordered_pairs<T: Copy>(items: &[T], same_group: Option<&SameGroup<T>>) -> Vec<(T, T)> {
    let mut out = Vec::new();
    for i in 0..items.len() {
        for j in (i + 1)..items.len() {
            if same_group.is_none_or(|g| g(&items[i], &items[j])) {
                out.push((items[i], items[j]));
            }
        }
    }
    out
}

fn cap_pairs<T>(pairs: Vec<T>, cap: Option<usize>, rng: &mut ChaCha8Rng) -> Vec<T> {
    match cap {
        Some(cap) if pairs.len() > cap => {
            let mut keep = index::sample(rng, pairs.len(), cap).into_vec();
            keep.sort_unstable();
            let mut keep = keep.into_iter().peekable();
            pairs
                .into_iter()
                .enumerate()
                .filter_map(|(i, p)| {
                    if keep.peek() == Some(&i) {
                        keep.next();
                        Some(p)
                    } else {
                        None
                    }
                })
                .collect()
        }
        _ => pairs,
    }
}

/// Builds the labelled instance, part and joint pair sets of `gt` under
/// `view`.
pub fn enumerate_pairs(
    gt: &Scene,
    view: &ViewVector,
    config: &HmorConfig,
) -> Result<RelationPairs> {
    enumerate_levels(gt, view, config, false)
}

/// Like [`enumerate_pairs`], but levels with zero weight are left empty.
/// They contribute nothing to the loss, and the joint level is quadratic in
/// the number of joints in the scene.
pub fn enumerate_weighted_pairs(
    gt: &Scene,
    view: &ViewVector,
    config: &HmorConfig,
) -> Result<RelationPairs> {
    enumerate_levels(gt, view, config, true)
}

fn enumerate_levels(
    gt: &Scene,
    view: &ViewVector,
    config: &HmorConfig,
    skip_unweighted: bool,
) -> Result<RelationPairs> {
    config.validate()?;
    let want = |w: f64| !skip_unweighted || w != 0.0;
    let levels = (
        want(config.weights.instance),
        want(config.weights.part),
        want(config.weights.joint),
    );
    let joints = scaled_joints(&gt.absolute_poses()?, config.depth_unit_scale);
    let topology = gt.topology();
    let tol = config.equality_tolerance;
    let mut rng = ChaCha8Rng::seed_from_u64(config.pair_seed);

    let persons: Vec<usize> = (0..gt.len()).collect();
    let centroids: Vec<Vec3> = joints.iter().map(|j| centroid(j)).collect();
    let instance = unordered_pairs(if levels.0 { &persons[..] } else { &[] }, None)
        .into_iter()
        .map(|(a, b)| Pair {
            first: a,
            second: b,
            label: relation_instance(&centroids[a], &centroids[b], view, tol),
        })
        .collect();

    let intra_part = |a: &PartRef, b: &PartRef| a.person == b.person;
    let intra_joint = |a: &JointRef, b: &JointRef| a.person == b.person;
    let intra = config.pair_scope == PairScope::IntraPerson;

    let part_refs: Vec<PartRef> = persons
        .iter()
        .flat_map(|&person| (0..topology.part_count()).map(move |part| PartRef { person, part }))
        .collect();
    let part_refs = if levels.1 { part_refs } else { Vec::new() };
    let part = unordered_pairs(
        &part_refs,
        intra.then_some(&intra_part as &dyn Fn(&_, &_) -> bool),
    )
    .into_iter()
    .map(|(a, b)| {
        let pa = topology.parts()[a.part];
        let pb = topology.parts()[b.part];
        let ja = &joints[a.person];
        let jb = &joints[b.person];
        let label = match config.part_mode {
            PartMode::Vector => {
                relation_part(&part_vector(ja, pa), &part_vector(jb, pb), view, tol)
            }
            PartMode::Particle => {
                relation_instance(&part_midpoint(ja, pa), &part_midpoint(jb, pb), view, tol)
            }
        };
        Pair {
            first: a,
            second: b,
            label,
        }
    })
    .collect();

    let joint_refs: Vec<JointRef> = persons
        .iter()
        .flat_map(|&person| {
            (0..topology.joint_count()).map(move |joint| JointRef { person, joint })
        })
        .collect();
    let joint_refs = if levels.2 { joint_refs } else { Vec::new() };
    let joint = unordered_pairs(
        &joint_refs,
        intra.then_some(&intra_joint as &dyn Fn(&_, &_) -> bool),
    )
    .into_iter()
    .map(|(a, b)| Pair {
        first: a,
        second: b,
        label: relation_joint(
            &joints[a.person][a.joint],
            &joints[b.person][b.joint],
            view,
            tol,
        ),
    })
    .collect();

    Ok(RelationPairs {
        view: *view,
        part_mode: config.part_mode,
        instance: cap_pairs(instance, config.pair_cap, &mut rng),
        part: cap_pairs(part, config.pair_cap, &mut rng),
        joint: cap_pairs(joint, config.pair_cap, &mut rng),
    })
}

/// Part-level labels from 2D keypoints alone.
///
/// Pixel-space part vectors `(du, dv, 0)` are compared under the camera axis,
/// which matches the 3D relation whenever the image is a per-person scaled
/// orthographic projection of the skeleton. `tolerance` is in pixels squared.
pub fn part_relations_from_2d(
    keypoints: &[Vec<[f64; 2]>],
    topology: &SkeletonTopology,
    scope: PairScope,
    tolerance: f64,
) -> Result<Vec<Pair<PartRef>>> {
    for (m, k) in keypoints.iter().enumerate() {
        if k.len() != topology.joint_count() {
            return Err(Error::ShapeMismatch(format!(
                "person {m} has {} keypoints, topology expects {}",
                k.len(),
                topology.joint_count()
            )));
        }
    }
    let view = ViewVector::camera_axis();
    let vectors: Vec<Vec<Vec3>> = keypoints
        .iter()
        .map(|k| {
            topology
                .parts()
                .iter()
                .map(|&(s, e)| Vec3::new(k[e][0] - k[s][0], k[e][1] - k[s][1], 0.0))
                .collect()
        })
        .collect();
    let refs: Vec<PartRef> = (0..keypoints.len())
        .flat_map(|person| (0..topology.part_count()).map(move |part| PartRef { person, part }))
        .collect();
    let intra = |a: &PartRef, b: &PartRef| a.person == b.person;
    let filter = (scope == PairScope::IntraPerson).then_some(&intra as &dyn Fn(&_, &_) -> bool);
    Ok(unordered_pairs(&refs, filter)
        .into_iter()
        .map(|(a, b)| Pair {
            first: a,
            second: b,
            label: relation_part(
                &vectors[a.person][a.part],
                &vectors[b.person][b.part],
                &view,
                tolerance,
            ),
        })
        .collect())
}

/// Per-level mean errors and their weighted total.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct HmorLoss {
    pub total: f64,
    pub instance: f64,
    pub part: f64,
    pub joint: f64,
}

fn check_pairs(
    pairs: &RelationPairs,
    joints: &[Vec<Vec3>],
    topology: &SkeletonTopology,
) -> Result<()> {
    let n = joints.len();
    let bad = |what: &str| {
        Err(Error::ShapeMismatch(format!(
            "{what} pair references a missing element"
        )))
    };
    if pairs.instance.iter().any(|p| p.first >= n || p.second >= n) {
        return bad("instance");
    }
    let part_ok = |r: &PartRef| r.person < n && r.part < topology.part_count();
    if !pairs
        .part
        .iter()
        .all(|p| part_ok(&p.first) && part_ok(&p.second))
    {
        return bad("part");
    }
    let joint_ok = |r: &JointRef| r.person < n && r.joint < topology.joint_count();
    if !pairs
        .joint
        .iter()
        .all(|p| joint_ok(&p.first) && joint_ok(&p.second))
    {
        return bad("joint");
    }
    if joints.iter().any(|j| j.len() != topology.joint_count()) {
        return Err(Error::ShapeMismatch(
            "pose length differs from topology".into(),
        ));
    }
    Ok(())
}

fn mean_or_zero(sum: f64, count: usize) -> f64 {
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// Loss on joints already in loss units. When `grad` is given, the gradient
/// with respect to every joint (in loss units) is accumulated into it.
pub(crate) fn evaluate_scaled(
    joints: &[Vec<Vec3>],
    topology: &SkeletonTopology,
    pairs: &RelationPairs,
    config: &HmorConfig,
    mut grad: Option<&mut [Vec<Vec3>]>,
) -> Result<HmorLoss> {
    check_pairs(pairs, joints, topology)?;
    let view = &pairs.view;
    let w = config.weights;

    // Instance level.
    let centroids: Vec<Vec3> = joints.iter().map(|j| centroid(j)).collect();
    let ins_coef = w.instance / pairs.instance.len().max(1) as f64;
    let mut ins_sum = 0.0;
    for p in &pairs.instance {
        let e = err_instance_grad(&centroids[p.first], &centroids[p.second], p.label, view);
        ins_sum += e.value;
        if let Some(g) = grad.as_deref_mut() {
            if e.value != 0.0 && ins_coef != 0.0 {
                for (m, d) in [(p.first, e.d_first), (p.second, e.d_second)] {
                    let share = d * (ins_coef / joints[m].len() as f64);
                    g[m].iter_mut().for_each(|gj| *gj += share);
                }
            }
        }
    }

    // Part level.
    let part_coef = w.part / pairs.part.len().max(1) as f64;
    let mut part_sum = 0.0;
    for p in &pairs.part {
        let ea = topology.parts()[p.first.part];
        let eb = topology.parts()[p.second.part];
        let ja = &joints[p.first.person];
        let jb = &joints[p.second.person];
        let (e, endpoint_weight) = match pairs.part_mode {
            PartMode::Vector => (
                err_part_grad(&part_vector(ja, ea), &part_vector(jb, eb), p.label, view),
                (-1.0, 1.0),
            ),
            PartMode::Particle => (
                err_part_particle_grad(
                    &part_midpoint(ja, ea),
                    &part_midpoint(jb, eb),
                    p.label,
                    view,
                ),
                (0.5, 0.5),
            ),
        };
        part_sum += e.value;
        if let Some(g) = grad.as_deref_mut() {
            if e.value != 0.0 && part_coef != 0.0 {
                for (r, (s, t), d) in [(p.first, ea, e.d_first), (p.second, eb, e.d_second)] {
                    g[r.person][s] += d * (endpoint_weight.0 * part_coef);
                    g[r.person][t] += d * (endpoint_weight.1 * part_coef);
                }
            }
        }
    }

    // Joint level.
    let jt_coef = w.joint / pairs.joint.len().max(1) as f64;
    let mut jt_sum = 0.0;
    for p in &pairs.joint {
        let ka = &joints[p.first.person][p.first.joint];
        let kb = &joints[p.second.person][p.second.joint];
        let e = match config.joint_form {
            JointErrorForm::ClampedProduct => err_joint_grad(ka, kb, p.label, view),
            JointErrorForm::ClampedLabel => err_joint_clamped_label(ka, kb, p.label, view),
        };
        jt_sum += e.value;
        if let Some(g) = grad.as_deref_mut() {
            if e.value != 0.0 && jt_coef != 0.0 {
                g[p.first.person][p.first.joint] += e.d_first * jt_coef;
                g[p.second.person][p.second.joint] += e.d_second * jt_coef;
            }
        }
    }

    let instance = mean_or_zero(ins_sum, pairs.instance.len());
    let part = mean_or_zero(part_sum, pairs.part.len());
    let joint = mean_or_zero(jt_sum, pairs.joint.len());
    Ok(HmorLoss {
        total: w.instance * instance + w.part * part + w.joint * joint,
        instance,
        part,
        joint,
    })
}

/// HMOR loss of a predicted scene against pairs labelled from ground truth.
pub fn hmor_loss(pred: &Scene, pairs: &RelationPairs, config: &HmorConfig) -> Result<HmorLoss> {
    hmor_loss_abs(&pred.absolute_poses()?, pred.topology(), pairs, config)
}

pub fn hmor_loss_abs(
    pred: &[AbsolutePose],
    topology: &SkeletonTopology,
    pairs: &RelationPairs,
    config: &HmorConfig,
) -> Result<HmorLoss> {
    config.validate()?;
    let joints = scaled_joints(pred, config.depth_unit_scale);
    evaluate_scaled(&joints, topology, pairs, config, None)
}

/// Loss and its gradient with respect to every camera-frame joint
/// coordinate, in loss units per millimeter.
pub fn hmor_loss_grad(
    pred: &[AbsolutePose],
    topology: &SkeletonTopology,
    pairs: &RelationPairs,
    config: &HmorConfig,
) -> Result<(HmorLoss, Vec<Vec<Vec3>>)> {
    config.validate()?;
    let s = config.depth_unit_scale;
    let joints = scaled_joints(pred, s);
    let mut grad: Vec<Vec<Vec3>> = joints
        .iter()
        .map(|j| vec![Vec3::zeros(); j.len()])
        .collect();
    let loss = evaluate_scaled(&joints, topology, pairs, config, Some(&mut grad))?;
    for g in grad.iter_mut().flatten() {
        *g *= s;
    }
    Ok((loss, grad))
}

/// Number of pairs per level whose predicted relation differs from the
/// ground-truth label.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViolationCounts {
    pub instance: usize,
    pub part: usize,
    pub joint: usize,
}

impl ViolationCounts {
    pub fn total(&self) -> usize {
        self.instance + self.part + self.joint
    }
}

impl std::ops::AddAssign for ViolationCounts {
    fn add_assign(&mut self, rhs: Self) {
        self.instance += rhs.instance;
        self.part += rhs.part;
        self.joint += rhs.joint;
    }
}

/// Re-labels every pair from the predicted poses and counts disagreements.
pub fn count_violations(
    pred: &[AbsolutePose],
    topology: &SkeletonTopology,
    pairs: &RelationPairs,
    config: &HmorConfig,
) -> Result<ViolationCounts> {
    config.validate()?;
    let joints = scaled_joints(pred, config.depth_unit_scale);
    check_pairs(pairs, &joints, topology)?;
    let view = &pairs.view;
    let tol = config.equality_tolerance;
    let centroids: Vec<Vec3> = joints.iter().map(|j| centroid(j)).collect();

    let instance = pairs
        .instance
        .iter()
        .filter(|p| {
            relation_instance(&centroids[p.first], &centroids[p.second], view, tol) != p.label
        })
        .count();
    let part = pairs
        .part
        .iter()
        .filter(|p| {
            let ea = topology.parts()[p.first.part];
            let eb = topology.parts()[p.second.part];
            let ja = &joints[p.first.person];
            let jb = &joints[p.second.person];
            let predicted = match pairs.part_mode {
                PartMode::Vector => {
                    relation_part(&part_vector(ja, ea), &part_vector(jb, eb), view, tol)
                }
                PartMode::Particle => {
                    relation_instance(&part_midpoint(ja, ea), &part_midpoint(jb, eb), view, tol)
                }
            };
            predicted != p.label
        })
        .count();
    let joint = pairs
        .joint
        .iter()
        .filter(|p| {
            let ka = &joints[p.first.person][p.first.joint];
            let kb = &joints[p.second.person][p.second.joint];
            relation_joint(ka, kb, view, tol) != p.label
        })
        .count();
    Ok(ViolationCounts {
        instance,
        part,
        joint,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn axis() -> ViewVector {
        ViewVector::camera_axis()
    }

    fn at_depth(z: f64) -> Vec3 {
        Vec3::new(0.0, 0.0, z)
    }

    #[test]
    fn instance_relation_examples() {
        let n = axis();
        assert_eq!(
            relation_instance(&at_depth(2.0), &at_depth(3.0), &n, 0.0),
            RelationLabel::Positive
        );
        assert_eq!(
            relation_instance(&at_depth(3.0), &at_depth(2.0), &n, 0.0),
            RelationLabel::Negative
        );
        assert_eq!(
            relation_instance(&at_depth(2.0), &at_depth(2.0), &n, 0.0),
            RelationLabel::Zero
        );
        assert_eq!(
            relation_instance(&at_depth(2.0), &at_depth(2.05), &n, 0.1),
            RelationLabel::Zero
        );
    }

    #[test]
    fn instance_error_examples() {
        let n = axis();
        let pos = RelationLabel::Positive;
        assert_eq!(err_instance(&at_depth(2.0), &at_depth(3.0), pos, &n), 0.0);
        assert_abs_diff_eq!(
            err_instance(&at_depth(3.5), &at_depth(3.0), pos, &n),
            0.405_465_108_108_164_4,
            epsilon = 1e-12
        );
        assert_eq!(
            err_instance(&at_depth(9.0), &at_depth(1.0), RelationLabel::Zero, &n),
            0.0
        );
    }

    #[test]
    fn part_relation_examples() {
        let n = axis();
        assert_eq!(
            relation_part(&Vec3::x(), &Vec3::y(), &n, 0.0),
            RelationLabel::Negative
        );
        assert_eq!(
            relation_part(&Vec3::y(), &Vec3::x(), &n, 0.0),
            RelationLabel::Positive
        );
        assert_eq!(
            relation_part(&Vec3::x(), &(Vec3::x() * 3.0), &n, 0.0),
            RelationLabel::Zero
        );
    }

    #[test]
    fn part_error_examples() {
        let n = axis();
        let t1 = Vec3::new(0.3, -1.2, 0.4);
        let t2 = Vec3::new(0.9, 0.2, -0.1);
        let label = relation_part(&t1, &t2, &n, 0.0);
        assert_eq!(err_part(&t1, &t2, label, &n), 0.0);
        assert_abs_diff_eq!(
            err_part(&Vec3::y(), &Vec3::x(), RelationLabel::Negative, &n),
            1.0,
            epsilon = 1e-15
        );
        assert_eq!(
            err_part(&Vec3::x(), &(Vec3::x() * -2.0), RelationLabel::Positive, &n),
            0.0
        );
    }

    #[test]
    fn particle_error_examples() {
        let n = axis();
        let pos = RelationLabel::Positive;
        assert_eq!(
            err_part_particle(&at_depth(1.0), &at_depth(1.5), pos, &n),
            0.0
        );
        assert_abs_diff_eq!(
            err_part_particle(&at_depth(2.0), &at_depth(1.5), pos, &n),
            1.5f64.ln(),
            epsilon = 1e-12
        );
        assert_eq!(
            err_part_particle(&at_depth(2.0), &at_depth(1.5), RelationLabel::Zero, &n),
            0.0
        );
    }

    #[test]
    fn joint_error_examples() {
        let n = axis();
        let pos = RelationLabel::Positive;
        assert_eq!(err_joint(&at_depth(1.0), &at_depth(1.4), pos, &n), 0.0);
        assert_abs_diff_eq!(
            err_joint(&at_depth(1.2), &at_depth(1.0), pos, &n),
            0.182_321_556_793_954_6,
            epsilon = 1e-12
        );
        let a = at_depth(1.0);
        let b = at_depth(1.7);
        assert_eq!(
            relation_joint(&a, &b, &n, 0.0),
            relation_joint(&b, &a, &n, 0.0).negated()
        );
    }

    #[test]
    fn clamped_label_form_drops_negative_pairs() {
        let n = axis();
        let e =
            err_joint_clamped_label(&at_depth(1.0), &at_depth(3.0), RelationLabel::Negative, &n);
        assert_eq!(e.value, 0.0);
        // Correct order with a +1 label goes negative instead of clamping.
        let e =
            err_joint_clamped_label(&at_depth(1.0), &at_depth(1.5), RelationLabel::Positive, &n);
        assert!(e.value < 0.0);
    }

    #[test]
    fn label_serde_is_integer() {
        for l in [
            RelationLabel::Positive,
            RelationLabel::Negative,
            RelationLabel::Zero,
        ] {
            let i: i8 = l.into();
            assert_eq!(RelationLabel::try_from(i).unwrap(), l);
        }
        assert!(RelationLabel::try_from(2).is_err());
    }

    #[test]
    fn pair_capping_keeps_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let capped = cap_pairs((0..100).collect::<Vec<_>>(), Some(10), &mut rng);
        assert_eq!(capped.len(), 10);
        assert!(capped.windows(2).all(|w| w[0] < w[1]));
        let all = cap_pairs((0..5).collect::<Vec<_>>(), Some(10), &mut rng);
        assert_eq!(all, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn config_validation() {
        assert!(HmorConfig::default().validate().is_ok());
        let bad = HmorConfig {
            depth_unit_scale: 0.0,
            ..HmorConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = HmorConfig {
            equality_tolerance: -1.0,
            ..HmorConfig::default()
        };
        assert!(bad.validate().is_err());
        let mut bad = HmorConfig::default();
        bad.weights.part = -0.5;
        assert!(bad.validate().is_err());
    }
}
