//! Skeleton topology and the person/scene data model.
//!
//! A person is stored the way a top-down estimator emits it: a bounding box,
//! box-relative joint pixels with root-relative depths, and the absolute
//! depth of the root joint. [`assemble_absolute`] lifts that into camera
//! coordinates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Camera, Vec3};

pub const DEFAULT_JOINT_COUNT: usize = 17;
pub const DEFAULT_ROOT_INDEX: usize = 0;

/// Joint names for the default 17-joint layout, in index order.
pub const DEFAULT_JOINT_NAMES: [&str; DEFAULT_JOINT_COUNT] = [
    "pelvis",
    "spine",
    "neck",
    "head",
    "left_shoulder",
    "left_elbow",
    "left_wrist",
    "right_shoulder",
    "right_elbow",
    "right_wrist",
    "left_hip",
    "left_knee",
    "left_ankle",
    "right_hip",
    "right_knee",
    "right_ankle",
    "head_top",
];

/// The 14 default parts as (start, end) joint indices.
pub const DEFAULT_PARTS: [(usize, usize); 14] = [
    (2, 16),  // neck -> head top
    (0, 2),   // pelvis -> neck
    (2, 4),   // neck -> left shoulder
    (2, 7),   // neck -> right shoulder
    (4, 5),   // left upper arm
    (7, 8),   // right upper arm
    (5, 6),   // left forearm
    (8, 9),   // right forearm
    (0, 10),  // pelvis -> left hip
    (0, 13),  // pelvis -> right hip
    (10, 11), // left thigh
    (13, 14), // right thigh
    (11, 12), // left shin
    (14, 15), // right shin
];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkeletonTopology {
    joint_count: usize,
    root_index: usize,
    parts: Vec<(usize, usize)>,
}

impl SkeletonTopology {
    pub fn new(joint_count: usize, root_index: usize, parts: Vec<(usize, usize)>) -> Result<Self> {
        if joint_count == 0 {
            return Err(Error::invalid("skeleton needs at least one joint"));
        }
        if root_index >= joint_count {
            return Err(Error::invalid(format!(
                "root index {root_index} out of range for {joint_count} joints"
            )));
        }
        for (i, &(start, end)) in parts.iter().enumerate() {
            if start >= joint_count || end >= joint_count {
                return Err(Error::invalid(format!(
                    "part {i} ({start}, {end}) references a joint >= {joint_count}"
                )));
            }
            if start == end {
                return Err(Error::invalid(format!(
                    "part {i} starts and ends at joint {start}"
                )));
            }
        }
        Ok(Self {
            joint_count,
            root_index,
            parts,
        })
    }

    pub fn joint_count(&self) -> usize {
        self.joint_count
    }

    pub fn root_index(&self) -> usize {
        self.root_index
    }

    pub fn parts(&self) -> &[(usize, usize)] {
        &self.parts
    }

    pub fn part_count(&self) -> usize {
        self.parts.len()
    }
}

impl Default for SkeletonTopology {
    fn default() -> Self {
        Self {
            joint_count: DEFAULT_JOINT_COUNT,
            root_index: DEFAULT_ROOT_INDEX,
            parts: DEFAULT_PARTS.to_vec(),
        }
    }
}

/// Axis-aligned box in pixels, anchored at its top-left corner.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub u_top: f64,
    pub v_top: f64,
    pub w: f64,
    pub h: f64,
}

impl BoundingBox {
    pub fn new(u_top: f64, v_top: f64, w: f64, h: f64) -> Result<Self> {
        if !(w > 0.0 && h > 0.0) || !u_top.is_finite() || !v_top.is_finite() {
            return Err(Error::invalid(format!(
                "bounding box must be finite with positive size (w = {w}, h = {h})"
            )));
        }
        Ok(Self { u_top, v_top, w, h })
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }
}

/// Per-joint `(u, v, z_rel)`: pixels relative to the box corner and depth
/// in millimeters relative to the root joint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelativePose {
    joints: Vec<Vec3>,
}

impl RelativePose {
    /// The root's relative depth is set to exactly zero.
    pub fn new(mut joints: Vec<Vec3>, root_index: usize) -> Result<Self> {
        if root_index >= joints.len() {
            return Err(Error::invalid(format!(
                "root index {root_index} out of range for {} joints",
                joints.len()
            )));
        }
        if joints.iter().any(|j| !j.iter().all(|c| c.is_finite())) {
            return Err(Error::invalid(
                "relative pose contains a non-finite coordinate",
            ));
        }
        joints[root_index].z = 0.0;
        Ok(Self { joints })
    }

    pub fn joints(&self) -> &[Vec3] {
        &self.joints
    }

    pub fn len(&self) -> usize {
        self.joints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joints.is_empty()
    }
}

/// Camera-frame joint positions in millimeters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AbsolutePose {
    joints: Vec<Vec3>,
}

impl AbsolutePose {
    pub fn new(joints: Vec<Vec3>) -> Result<Self> {
        if let Some(j) = joints.iter().find(|j| !(j.z > 0.0)) {
            return Err(Error::InvalidDepth {
                depth: j.z,
                context: "absolute pose joint must be in front of the camera".into(),
            });
        }
        Ok(Self { joints })
    }

    pub fn joints(&self) -> &[Vec3] {
        &self.joints
    }

    pub fn len(&self) -> usize {
        self.joints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joints.is_empty()
    }

    /// Same pose with every joint shifted by `offset`.
    pub fn translated(&self, offset: &Vec3) -> Result<Self> {
        Self::new(self.joints.iter().map(|j| j + offset).collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Person {
    pub bbox: BoundingBox,
    pub rel_pose: RelativePose,
    root_depth: f64,
    roi_area: f64,
}

impl Person {
    /// The RoI area defaults to the box area.
    pub fn new(bbox: BoundingBox, rel_pose: RelativePose, root_depth: f64) -> Result<Self> {
        let roi_area = bbox.area();
        Self::with_roi_area(bbox, rel_pose, root_depth, roi_area)
    }

    pub fn with_roi_area(
        bbox: BoundingBox,
        rel_pose: RelativePose,
        root_depth: f64,
        roi_area: f64,
    ) -> Result<Self> {
        if !(root_depth > 0.0) || !root_depth.is_finite() {
            return Err(Error::InvalidDepth {
                depth: root_depth,
                context: "human depth must be positive".into(),
            });
        }
        if !(roi_area > 0.0) || !roi_area.is_finite() {
            return Err(Error::invalid(format!(
                "RoI area must be positive, got {roi_area}"
            )));
        }
        Ok(Self {
            bbox,
            rel_pose,
            root_depth,
            roi_area,
        })
    }

    pub fn root_depth(&self) -> f64 {
        self.root_depth
    }

    pub fn set_root_depth(&mut self, depth: f64) -> Result<()> {
        if !(depth > 0.0) || !depth.is_finite() {
            return Err(Error::InvalidDepth {
                depth,
                context: "human depth must be positive".into(),
            });
        }
        self.root_depth = depth;
        Ok(())
    }

    pub fn roi_area(&self) -> f64 {
        self.roi_area
    }

    /// Global pixel coordinates of joint `j`.
    pub fn pixel(&self, j: usize) -> (f64, f64) {
        let r = &self.rel_pose.joints[j];
        (r.x + self.bbox.u_top, r.y + self.bbox.v_top)
    }

    /// Absolute depth of joint `j` in millimeters.
    pub fn joint_depth(&self, j: usize) -> f64 {
        self.rel_pose.joints[j].z + self.root_depth
    }

    /// Smallest root depth that keeps every joint in front of the camera.
    pub fn min_root_depth(&self) -> f64 {
        self.rel_pose
            .joints
            .iter()
            .map(|j| -j.z)
            .fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub camera: Camera,
    persons: Vec<Person>,
    topology: SkeletonTopology,
}

impl Scene {
    pub fn new(camera: Camera, persons: Vec<Person>, topology: SkeletonTopology) -> Result<Self> {
        if persons.is_empty() {
            return Err(Error::invalid("a scene needs at least one person"));
        }
        for (m, p) in persons.iter().enumerate() {
            if p.rel_pose.len() != topology.joint_count() {
                return Err(Error::ShapeMismatch(format!(
                    "person {m} has {} joints, topology expects {}",
                    p.rel_pose.len(),
                    topology.joint_count()
                )));
            }
        }
        Ok(Self {
            camera,
            persons,
            topology,
        })
    }

    pub fn persons(&self) -> &[Person] {
        &self.persons
    }

    pub fn persons_mut(&mut self) -> &mut [Person] {
        &mut self.persons
    }

    pub fn topology(&self) -> &SkeletonTopology {
        &self.topology
    }

    pub fn len(&self) -> usize {
        self.persons.len()
    }

    pub fn is_empty(&self) -> bool {
        self.persons.is_empty()
    }

    pub fn absolute_poses(&self) -> Result<Vec<AbsolutePose>> {
        self.persons
            .iter()
            .map(|p| assemble_absolute(p, &self.camera))
            .collect()
    }

    /// Scene restricted to the given persons, in the given order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let persons = indices
            .iter()
            .map(|&i| {
                self.persons
                    .get(i)
                    .cloned()
                    .ok_or_else(|| Error::invalid(format!("person index {i} out of range")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(self.camera, persons, self.topology.clone())
    }
}

/// Back-projects every joint of `person` into the camera frame.
pub fn assemble_absolute(person: &Person, camera: &Camera) -> Result<AbsolutePose> {
    let joints = (0..person.rel_pose.len())
        .map(|j| {
            let (u, v) = person.pixel(j);
            camera.back_project(u, v, person.joint_depth(j))
        })
        .collect::<Result<Vec<_>>>()?;
    AbsolutePose::new(joints)
}

/// `end - start` for each part, in topology order.
pub fn part_vectors(pose: &AbsolutePose, topology: &SkeletonTopology) -> Vec<Vec3> {
    topology
        .parts()
        .iter()
        .map(|&(s, e)| pose.joints[e] - pose.joints[s])
        .collect()
}

/// Midpoint of each part's endpoints, in topology order.
pub fn part_midpoints(pose: &AbsolutePose, topology: &SkeletonTopology) -> Vec<Vec3> {
    topology
        .parts()
        .iter()
        .map(|&(s, e)| (pose.joints[e] + pose.joints[s]) * 0.5)
        .collect()
}

/// Arithmetic mean of the joints.
pub fn instance_position(pose: &AbsolutePose) -> Vec3 {
    let sum: Vec3 = pose.joints.iter().sum();
    sum / pose.joints.len() as f64
}
