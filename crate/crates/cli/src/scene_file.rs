//! On-disk scene format.
//!
//! ```json
//! {
//!   "schema_version": "hmor-scene/1",
//!   "camera": {"fx": 1000.0, "fy": 1000.0, "cx": 500.0, "cy": 500.0},
//!   "persons": [{
//!     "box": {"u_top": 400.0, "v_top": 400.0, "w": 200.0, "h": 200.0},
//!     "roi_area": 40000.0,
//!     "root_depth_mm": 4700.0,
//!     "joints": [{"u": 100.0, "v": 100.0, "z_rel_mm": 0.0}, ...]
//!   }],
//!   "topology": {"joints": 17, "root_index": 0, "parts": [[2, 16], ...]}
//! }
//! ```
//!
//! Joint `u`/`v` are box-relative pixels. `topology` is optional and defaults
//! to the 17-joint skeleton.

use std::fs;
use std::path::Path;

use hmor_core::geometry::{Camera, Vec3};
use hmor_core::skeleton::{BoundingBox, Person, RelativePose, Scene, SkeletonTopology};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const SCHEMA_VERSION: &str = "hmor-scene/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneFile {
    pub schema_version: String,
    pub camera: CameraRecord,
    pub persons: Vec<PersonRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topology: Option<TopologyRecord>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraRecord {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PersonRecord {
    #[serde(rename = "box")]
    pub bbox: BoxRecord,
    pub roi_area: f64,
    pub root_depth_mm: f64,
    pub joints: Vec<JointRecord>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxRecord {
    pub u_top: f64,
    pub v_top: f64,
    pub w: f64,
    pub h: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointRecord {
    pub u: f64,
    pub v: f64,
    pub z_rel_mm: f64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyRecord {
    pub joints: usize,
    pub root_index: usize,
    pub parts: Vec<[usize; 2]>,
}

impl SceneFile {
    pub fn from_scene(scene: &Scene) -> Self {
        let topo = scene.topology();
        let topology = (topo != &SkeletonTopology::default()).then(|| TopologyRecord {
            joints: topo.joint_count(),
            root_index: topo.root_index(),
            parts: topo.parts().iter().map(|&(s, e)| [s, e]).collect(),
        });
        let c = &scene.camera;
        Self {
            schema_version: SCHEMA_VERSION.to_string(),
            camera: CameraRecord {
                fx: c.fx,
                fy: c.fy,
                cx: c.cx,
                cy: c.cy,
            },
            persons: scene
                .persons()
                .iter()
                .map(|p| PersonRecord {
                    bbox: BoxRecord {
                        u_top: p.bbox.u_top,
                        v_top: p.bbox.v_top,
                        w: p.bbox.w,
                        h: p.bbox.h,
                    },
                    roi_area: p.roi_area(),
                    root_depth_mm: p.root_depth(),
                    joints: p
                        .rel_pose
                        .joints()
                        .iter()
                        .map(|j| JointRecord {
                            u: j.x,
                            v: j.y,
                            z_rel_mm: j.z,
                        })
                        .collect(),
                })
                .collect(),
            topology,
        }
    }

    pub fn to_scene(&self) -> Result<Scene> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(CliError::Validation(format!(
                "unsupported schema_version `{}` (expected `{SCHEMA_VERSION}`)",
                self.schema_version
            )));
        }
        let topology = match &self.topology {
            Some(t) => SkeletonTopology::new(
                t.joints,
                t.root_index,
                t.parts.iter().map(|p| (p[0], p[1])).collect(),
            )?,
            None => SkeletonTopology::default(),
        };
        let c = self.camera;
        let camera = Camera::new(c.fx, c.fy, c.cx, c.cy)?;
        let root = topology.root_index();
        let persons = self
            .persons
            .iter()
            .enumerate()
            .map(|(m, p)| {
                if p.joints.len() != topology.joint_count() {
                    return Err(CliError::Validation(format!(
                        "persons[{m}].joints has {} entries, topology has {} joints",
                        p.joints.len(),
                        topology.joint_count()
                    )));
                }
                if p.joints[root].z_rel_mm != 0.0 {
                    return Err(CliError::Validation(format!(
                        "persons[{m}].joints[{root}].z_rel_mm is the root offset and must be 0"
                    )));
                }
                let joints = p
                    .joints
                    .iter()
                    .map(|j| Vec3::new(j.u, j.v, j.z_rel_mm))
                    .collect();
                let b = p.bbox;
                let person = Person::with_roi_area(
                    BoundingBox::new(b.u_top, b.v_top, b.w, b.h)?,
                    RelativePose::new(joints, root)?,
                    p.root_depth_mm,
                    p.roi_area,
                )
                .map_err(|e| CliError::from(e).in_scene(&format!("persons[{m}]")))?;
                Ok(person)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Scene::new(camera, persons, topology)?)
    }
}

pub fn parse_scene(text: &str) -> Result<Scene> {
    let file: SceneFile =
        serde_json::from_str(text).map_err(|e| CliError::Validation(e.to_string()))?;
    file.to_scene()
}

pub fn scene_to_json(scene: &Scene) -> String {
    let mut s = serde_json::to_string_pretty(&SceneFile::from_scene(scene))
        .expect("scene records serialize");
    s.push('\n');
    s
}

pub fn load_scene(path: &Path) -> Result<Scene> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_scene(&text).map_err(|e| match e {
        CliError::Validation(m) => CliError::Validation(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn save_scene(path: &Path, scene: &Scene) -> Result<()> {
    fs::write(path, scene_to_json(scene)).map_err(|e| CliError::io(path, e))
}
