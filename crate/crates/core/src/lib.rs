//! Hierarchical multi-person ordinal relations (HMOR) for monocular 3D
//! multi-person pose estimation.
//!
//! The crate covers camera geometry, skeleton and scene types, the
//! three-level ordinal losses with analytic gradients, bounding-box-aware
//! depth normalization and recovery, evaluation metrics, a seeded synthetic
//! scene generator, and a gradient-descent refiner built on a registry of
//! named objective terms.

pub mod depth;
pub mod error;
pub mod geometry;
pub mod gradcheck;
pub mod hmor;
pub mod metrics;
pub mod skeleton;
pub mod solver;
pub mod synth;
pub mod terms;

pub use error::{Error, Result};
pub use geometry::{Camera, Vec3, ViewVector};
pub use hmor::{HmorConfig, HmorLoss, RelationLabel, RelationPairs};
pub use skeleton::{AbsolutePose, BoundingBox, Person, RelativePose, Scene, SkeletonTopology};
pub use solver::{FreeVariables, Solver, SolverConfig};
pub use terms::{ObjectiveTerm, TermRegistry};
