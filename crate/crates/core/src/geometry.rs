//! Pinhole camera model, plane projection and virtual-view sampling.
//!
//! Lengths are millimeters and pixel coordinates follow the usual image
//! convention (u right, v down). The camera frame has z along the optical
//! axis, so every visible point has z > 0.

use std::f64::consts::TAU;

use nalgebra::Vector3;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

const UNIT_TOLERANCE: f64 = 1e-9;

/// Pinhole intrinsics plus the camera normal used for ordinal comparisons.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    normal: Vec3,
}

impl Camera {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        if !(fx > 0.0 && fx.is_finite()) || !(fy > 0.0 && fy.is_finite()) {
            return Err(Error::invalid(format!(
                "focal lengths must be positive and finite (fx = {fx}, fy = {fy})"
            )));
        }
        if !cx.is_finite() || !cy.is_finite() {
            return Err(Error::invalid("principal point must be finite"));
        }
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            normal: Vec3::z(),
        })
    }

    /// Replaces the camera normal. The vector must already be unit length.
    pub fn with_normal(mut self, normal: Vec3) -> Result<Self> {
        check_unit(&normal, "camera normal")?;
        self.normal = normal;
        Ok(self)
    }

    pub fn normal(&self) -> Vec3 {
        self.normal
    }

    pub fn normal_view(&self) -> ViewVector {
        ViewVector(self.normal)
    }

    /// Geometric mean of the focal lengths, `sqrt(fx * fy)`.
    pub fn focal_scale(&self) -> f64 {
        (self.fx * self.fy).sqrt()
    }

    /// Ray through a pixel, scaled so that its z component is 1.
    pub fn ray(&self, u: f64, v: f64) -> Vec3 {
        Vec3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }

    pub fn back_project(&self, u: f64, v: f64, depth: f64) -> Result<Vec3> {
        if !(depth > 0.0) {
            return Err(Error::InvalidDepth {
                depth,
                context: "back-projection needs a positive depth".into(),
            });
        }
        Ok(self.ray(u, v) * depth)
    }

    pub fn project(&self, point: &Vec3) -> Result<(f64, f64)> {
        if !(point.z > 0.0) {
            return Err(Error::BehindCamera(point.z));
        }
        Ok((
            self.fx * point.x / point.z + self.cx,
            self.fy * point.y / point.z + self.cy,
        ))
    }
}

fn check_unit(v: &Vec3, what: &str) -> Result<()> {
    let norm = v.norm();
    if !norm.is_finite() || (norm - 1.0).abs() > UNIT_TOLERANCE {
        return Err(Error::invalid(format!(
            "{what} must be unit length, got |v| = {norm}"
        )));
    }
    Ok(())
}

/// Removes the component of `vec` along `normal`.
pub fn project_to_plane(vec: &Vec3, normal: &Vec3) -> Vec3 {
    vec - normal * vec.dot(normal)
}

/// A unit direction against which depth and angle relations are evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 3]", into = "[f64; 3]")]
pub struct ViewVector(Vec3);

impl ViewVector {
    pub fn new(direction: Vec3) -> Result<Self> {
        check_unit(&direction, "view direction")?;
        Ok(Self(direction))
    }

    /// Optical axis of an unrotated camera, `(0, 0, 1)`.
    pub fn camera_axis() -> Self {
        Self(Vec3::z())
    }

    pub fn direction(&self) -> &Vec3 {
        &self.0
    }

    /// Spherical parameterization `(sqrt(1-u^2) cos t, sqrt(1-u^2) sin t, u)`.
    ///
    /// `u` is restricted to `[0, 1]`, so only the hemisphere facing the
    /// scene is reachable.
    pub fn from_spherical(theta: f64, u: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&u) {
            return Err(Error::invalid(format!("u must lie in [0, 1], got {u}")));
        }
        if !theta.is_finite() {
            return Err(Error::invalid("theta must be finite"));
        }
        let r = (1.0 - u * u).sqrt();
        let dir = Vec3::new(r * theta.cos(), r * theta.sin(), u);
        // cos/sin rounding can leave |dir| a few ulps away from 1.
        Ok(Self(dir / dir.norm()))
    }

    /// Draws `theta ~ U[0, 2pi)` and `u ~ U[0, 1]` from `rng`.
    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let theta = rng.random_range(0.0..TAU);
        let u = rng.random_range(0.0..=1.0);
        Self::from_spherical(theta, u).expect("sampled parameters are in range")
    }
}

impl TryFrom<[f64; 3]> for ViewVector {
    type Error = Error;

    fn try_from(v: [f64; 3]) -> Result<Self> {
        Self::new(Vec3::new(v[0], v[1], v[2]))
    }
}

impl From<ViewVector> for [f64; 3] {
    fn from(v: ViewVector) -> Self {
        [v.0.x, v.0.y, v.0.z]
    }
}
