//! Deterministic synthetic multi-person scenes.
//!
//! Each person is a fixed template skeleton, scaled, yawed, jittered and
//! placed at a random depth and lateral offset. All randomness comes from a
//! ChaCha8 stream seeded by [`GenSpec::seed`], so the same spec always yields
//! the same scene.

use std::f64::consts::TAU;

use nalgebra::Rotation3;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Camera, Vec3};
use crate::skeleton::{
    BoundingBox, Person, RelativePose, Scene, SkeletonTopology, DEFAULT_JOINT_COUNT,
};

/// Template joints relative to the pelvis, in millimeters for a thigh of
/// 450 mm. x right, y down, z away from the camera.
const TEMPLATE: [[f64; 3]; DEFAULT_JOINT_COUNT] = [
    [0.0, 0.0, 0.0],        // pelvis
    [0.0, -230.0, 10.0],    // spine
    [0.0, -480.0, 0.0],     // neck
    [0.0, -570.0, -30.0],   // head
    [-180.0, -450.0, 0.0],  // left shoulder
    [-230.0, -180.0, 40.0], // left elbow
    [-240.0, 60.0, -60.0],  // left wrist
    [180.0, -450.0, 0.0],   // right shoulder
    [230.0, -180.0, 40.0],  // right elbow
    [240.0, 60.0, -60.0],   // right wrist
    [-110.0, 10.0, 0.0],    // left hip
    [-120.0, 455.0, 30.0],  // left knee
    [-125.0, 880.0, -10.0], // left ankle
    [110.0, 10.0, 0.0],     // right hip
    [120.0, 455.0, 30.0],   // right knee
    [125.0, 880.0, -10.0],  // right ankle
    [0.0, -700.0, -10.0],   // head top
];

const TEMPLATE_THIGH_MM: f64 = 450.0;
const MAX_PLACEMENT_ATTEMPTS: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraSpec {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Default for CameraSpec {
    fn default() -> Self {
        Self {
            fx: 1000.0,
            fy: 1000.0,
            cx: 500.0,
            cy: 500.0,
        }
    }
}

impl CameraSpec {
    pub fn camera(&self) -> Result<Camera> {
        Camera::new(self.fx, self.fy, self.cx, self.cy)
    }
}

/// Controlled corruption applied to a copy of a scene.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Perturbation {
    #[default]
    None,
    /// Gaussian noise: `sigma_z_mm` on each human depth, `sigma_xy_mm` on
    /// each joint laterally (converted to pixels at the person's depth).
    Gauss { sigma_xy_mm: f64, sigma_z_mm: f64 },
    /// Exchanges the human depths of each listed person pair.
    DepthSwap { pairs: Vec<(usize, usize)> },
    /// Adds a constant to every human depth.
    RootOffset { offset_mm: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenSpec {
    pub seed: u64,
    pub n_persons: usize,
    /// Root depth range `[min, max]` in millimeters.
    pub depth_range: (f64, f64),
    /// Roots are placed with lateral offset in `[-lateral_range, lateral_range]`.
    pub lateral_range: f64,
    /// Thigh length in millimeters; all template bones scale with it.
    pub bone_scale: f64,
    /// Standard deviation of per-joint jitter in millimeters.
    pub joint_jitter: f64,
    pub camera: CameraSpec,
    /// Image size in pixels; defaults to twice the principal point.
    pub image_size: Option<(f64, f64)>,
    pub perturbation: Perturbation,
}

impl Default for GenSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            n_persons: 2,
            depth_range: (3000.0, 7000.0),
            lateral_range: 1500.0,
            bone_scale: TEMPLATE_THIGH_MM,
            joint_jitter: 15.0,
            camera: CameraSpec::default(),
            image_size: None,
            perturbation: Perturbation::None,
        }
    }
}

impl GenSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_persons == 0 {
            return Err(Error::invalid("n_persons must be at least 1"));
        }
        let (lo, hi) = self.depth_range;
        if !(lo > 0.0) || !(hi >= lo) || !hi.is_finite() {
            return Err(Error::invalid(format!("invalid depth range ({lo}, {hi})")));
        }
        if !(self.lateral_range >= 0.0) || !(self.bone_scale > 0.0) || !(self.joint_jitter >= 0.0) {
            return Err(Error::invalid(
                "lateral_range and joint_jitter must be >= 0, bone_scale > 0",
            ));
        }
        if let Some((w, h)) = self.image_size {
            if !(w > 0.0 && h > 0.0) {
                return Err(Error::invalid(format!("invalid image size ({w}, {h})")));
            }
        }
        match &self.perturbation {
            Perturbation::Gauss {
                sigma_xy_mm,
                sigma_z_mm,
            } if !(*sigma_xy_mm >= 0.0 && *sigma_z_mm >= 0.0) => {
                Err(Error::invalid("perturbation sigmas must be >= 0"))
            }
            Perturbation::RootOffset { offset_mm } if !offset_mm.is_finite() => {
                Err(Error::invalid("root offset must be finite"))
            }
            _ => self.camera.camera().map(|_| ()),
        }
    }

    fn image_size(&self) -> (f64, f64) {
        self.image_size
            .unwrap_or((2.0 * self.camera.cx, 2.0 * self.camera.cy))
    }
}

fn place_person(
    spec: &GenSpec,
    camera: &Camera,
    rng: &mut ChaCha8Rng,
    jitter: &Normal<f64>,
) -> Option<Vec<Vec3>> {
    let scale = spec.bone_scale / TEMPLATE_THIGH_MM;
    let yaw = rng.random_range(0.0..TAU);
    let lean = rng.random_range(-0.15..0.15);
    let rot = Rotation3::from_euler_angles(lean, yaw, 0.0);
    let (lo, hi) = spec.depth_range;
    let depth = if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    };
    let lateral = if spec.lateral_range > 0.0 {
        rng.random_range(-spec.lateral_range..=spec.lateral_range)
    } else {
        0.0
    };
    let vertical = rng.random_range(-150.0..=150.0) * scale;
    let root = Vec3::new(lateral, vertical, depth);

    let joints: Vec<Vec3> = TEMPLATE
        .iter()
        .enumerate()
        .map(|(j, t)| {
            let local = Vec3::new(t[0], t[1], t[2]) * scale;
            let noise = if j == 0 {
                Vec3::zeros()
            } else {
                Vec3::new(jitter.sample(rng), jitter.sample(rng), jitter.sample(rng))
            };
            root + rot * local + noise
        })
        .collect();

    let (w, h) = spec.image_size();
    let visible = joints.iter().all(|k| {
        k.z > 0.0
            && camera
                .project(k)
                .is_ok_and(|(u, v)| (0.0..=w).contains(&u) && (0.0..=h).contains(&v))
    });
    visible.then_some(joints)
}

/// Converts camera-frame joints into the box/relative-pose representation,
/// with the box set to the tight 2D extent of the projected joints.
pub fn person_from_joints(joints: &[Vec3], camera: &Camera, root_index: usize) -> Result<Person> {
    let pixels = joints
        .iter()
        .map(|k| camera.project(k))
        .collect::<Result<Vec<_>>>()?;
    let (mut u_min, mut v_min) = (f64::INFINITY, f64::INFINITY);
    let (mut u_max, mut v_max) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for &(u, v) in &pixels {
        u_min = u_min.min(u);
        v_min = v_min.min(v);
        u_max = u_max.max(u);
        v_max = v_max.max(v);
    }
    let bbox = BoundingBox::new(u_min, v_min, u_max - u_min, v_max - v_min)?;
    let root_depth = joints[root_index].z;
    let rel = joints
        .iter()
        .zip(&pixels)
        .map(|(k, &(u, v))| Vec3::new(u - u_min, v - v_min, k.z - root_depth))
        .collect();
    Person::new(bbox, RelativePose::new(rel, root_index)?, root_depth)
}

pub fn generate_scene(spec: &GenSpec) -> Result<Scene> {
    spec.validate()?;
    let camera = spec.camera.camera()?;
    let topology = SkeletonTopology::default();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let jitter = Normal::new(0.0, spec.joint_jitter * spec.bone_scale / TEMPLATE_THIGH_MM)
        .map_err(|e| Error::invalid(format!("joint jitter: {e}")))?;

    let mut persons = Vec::with_capacity(spec.n_persons);
    for m in 0..spec.n_persons {
        let joints = (0..MAX_PLACEMENT_ATTEMPTS)
            .find_map(|_| place_person(spec, &camera, &mut rng, &jitter))
            .ok_or_else(|| {
                Error::Generation(format!(
                    "person {m} could not be placed inside the image after {MAX_PLACEMENT_ATTEMPTS} attempts"
                ))
            })?;
        persons.push(person_from_joints(&joints, &camera, topology.root_index())?);
    }
    Scene::new(camera, persons, topology)
}

/// Seed of the perturbation stream, kept apart from the generation stream.
fn perturbation_seed(seed: u64) -> u64 {
    seed ^ 0x9E37_79B9_7F4A_7C15
}

pub fn perturb(scene: &Scene, spec: &GenSpec) -> Result<Scene> {
    perturb_with(scene, &spec.perturbation, spec.seed)
}

/// Applies `perturbation` to a copy of `scene`. Human depths are kept at
/// least 1 mm beyond the depth at which any joint would leave the view.
pub fn perturb_with(scene: &Scene, perturbation: &Perturbation, seed: u64) -> Result<Scene> {
    let mut out = scene.clone();
    match perturbation {
        Perturbation::None => {}
        Perturbation::DepthSwap { pairs } => {
            for &(a, b) in pairs {
                if a >= scene.len() || b >= scene.len() {
                    return Err(Error::invalid(format!(
                        "depth swap ({a}, {b}) out of range for {} persons",
                        scene.len()
                    )));
                }
                let persons = out.persons_mut();
                let (za, zb) = (persons[a].root_depth(), persons[b].root_depth());
                persons[a].set_root_depth(zb.max(persons[a].min_root_depth() + 1.0))?;
                persons[b].set_root_depth(za.max(persons[b].min_root_depth() + 1.0))?;
            }
        }
        Perturbation::RootOffset { offset_mm } => {
            for p in out.persons_mut() {
                let z = (p.root_depth() + offset_mm).max(p.min_root_depth() + 1.0);
                p.set_root_depth(z)?;
            }
        }
        Perturbation::Gauss {
            sigma_xy_mm,
            sigma_z_mm,
        } => {
            let mut rng = ChaCha8Rng::seed_from_u64(perturbation_seed(seed));
            let nz = Normal::new(0.0, *sigma_z_mm).map_err(|e| Error::invalid(e.to_string()))?;
            let nxy = Normal::new(0.0, *sigma_xy_mm).map_err(|e| Error::invalid(e.to_string()))?;
            let camera = scene.camera;
            let root = scene.topology().root_index();
            for p in out.persons_mut() {
                let z = (p.root_depth() + nz.sample(&mut rng)).max(p.min_root_depth() + 1.0);
                let joints: Vec<Vec3> = p
                    .rel_pose
                    .joints()
                    .iter()
                    .map(|r| {
                        let depth = z + r.z;
                        let du = nxy.sample(&mut rng) * camera.fx / depth;
                        let dv = nxy.sample(&mut rng) * camera.fy / depth;
                        Vec3::new(r.x + du, r.y + dv, r.z)
                    })
                    .collect();
                p.rel_pose = RelativePose::new(joints, root)?;
                p.set_root_depth(z)?;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic() {
        let spec = GenSpec {
            seed: 42,
            n_persons: 3,
            ..GenSpec::default()
        };
        assert_eq!(
            generate_scene(&spec).unwrap(),
            generate_scene(&spec).unwrap()
        );
        let other = GenSpec {
            seed: 43,
            ..spec.clone()
        };
        assert_ne!(
            generate_scene(&spec).unwrap(),
            generate_scene(&other).unwrap()
        );
    }

    #[test]
    fn generated_persons_satisfy_invariants() {
        let spec = GenSpec {
            seed: 9,
            n_persons: 3,
            ..GenSpec::default()
        };
        let scene = generate_scene(&spec).unwrap();
        assert_eq!(scene.len(), 3);
        for (p, abs) in scene.persons().iter().zip(scene.absolute_poses().unwrap()) {
            assert!(p.root_depth() >= 3000.0 && p.root_depth() <= 7000.0);
            assert_eq!(p.rel_pose.joints()[0].z, 0.0);
            assert!(p.bbox.w > 0.0 && p.bbox.h > 0.0);
            assert!(abs.joints().iter().all(|k| k.z > 0.0));
            // Tight box: some joint touches each edge.
            let us: Vec<f64> = p.rel_pose.joints().iter().map(|j| j.x).collect();
            assert!(us.contains(&0.0));
        }
    }

    #[test]
    fn impossible_placement_fails() {
        let spec = GenSpec {
            depth_range: (200.0, 300.0),
            ..GenSpec::default()
        };
        assert!(matches!(generate_scene(&spec), Err(Error::Generation(_))));
    }

    #[test]
    fn spec_validation() {
        assert!(GenSpec {
            n_persons: 0,
            ..GenSpec::default()
        }
        .validate()
        .is_err());
        assert!(GenSpec {
            depth_range: (0.0, 10.0),
            ..GenSpec::default()
        }
        .validate()
        .is_err());
        let bad = GenSpec {
            perturbation: Perturbation::Gauss {
                sigma_xy_mm: -1.0,
                sigma_z_mm: 0.0,
            },
            ..GenSpec::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn perturbations() {
        let spec = GenSpec {
            seed: 5,
            n_persons: 2,
            ..GenSpec::default()
        };
        let scene = generate_scene(&spec).unwrap();
        assert_eq!(perturb_with(&scene, &Perturbation::None, 1).unwrap(), scene);
        let zero = Perturbation::Gauss {
            sigma_xy_mm: 0.0,
            sigma_z_mm: 0.0,
        };
        assert_eq!(perturb_with(&scene, &zero, 1).unwrap(), scene);

        let swapped = perturb_with(
            &scene,
            &Perturbation::DepthSwap {
                pairs: vec![(0, 1)],
            },
            0,
        )
        .unwrap();
        assert_eq!(
            swapped.persons()[0].root_depth(),
            scene.persons()[1].root_depth()
        );
        assert_eq!(
            swapped.persons()[1].root_depth(),
            scene.persons()[0].root_depth()
        );
        assert!(perturb_with(
            &scene,
            &Perturbation::DepthSwap {
                pairs: vec![(0, 2)]
            },
            0
        )
        .is_err());

        let shifted =
            perturb_with(&scene, &Perturbation::RootOffset { offset_mm: 250.0 }, 0).unwrap();
        for (a, b) in shifted.persons().iter().zip(scene.persons()) {
            assert_eq!(a.root_depth(), b.root_depth() + 250.0);
        }

        let noisy = Perturbation::Gauss {
            sigma_xy_mm: 10.0,
            sigma_z_mm: 300.0,
        };
        let a = perturb_with(&scene, &noisy, 3).unwrap();
        assert_eq!(a, perturb_with(&scene, &noisy, 3).unwrap());
        assert_ne!(a, scene);
    }
}
