//! TOML run configuration.
//!
//! Every section is optional and falls back to library defaults:
//!
//! ```toml
//! [hmor]
//! weights = { instance = 1.0, part = 1.0, joint = 1.0 }
//!
//! [solver]
//! steps = 500
//! step_size = 0.01
//! weights = { pose = 1.0, init = 1.0, refine = 1.0, hmor = 1.0 }
//!
//! [metrics]
//! pck_threshold_mm = 150.0
//!
//! [gen]
//! n_persons = 2
//! perturbation = { kind = "gauss", sigma_xy_mm = 0.0, sigma_z_mm = 300.0 }
//! ```
//!
//! A `[solver.weights]` table replaces the default weights as a whole; terms
//! it does not list are disabled.

use std::fs;
use std::path::Path;

use hmor_core::hmor::HmorConfig;
use hmor_core::metrics::MetricsConfig;
use hmor_core::solver::SolverConfig;
use hmor_core::synth::GenSpec;
use hmor_core::terms::TermRegistry;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub hmor: HmorConfig,
    pub solver: SolverConfig,
    pub metrics: MetricsConfig,
    pub gen: GenSpec,
    pub loss: LossOptions,
    pub gradcheck: GradCheckOptions,
}

/// Views used by `loss`: the camera normal plus `extra_views` samples.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossOptions {
    pub extra_views: usize,
    pub view_seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradCheckOptions {
    pub cases: usize,
    pub step: f64,
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            cases: 100,
            step: 1e-5,
            tolerance: 1e-5,
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        toml::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
    }

    /// Loads `path` if given, otherwise the defaults.
    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    /// Points every seed in the configuration at `seed`.
    pub fn reseed(&mut self, seed: u64) {
        self.gen.seed = seed;
        self.solver.seed = seed;
        self.loss.view_seed = seed;
        self.gradcheck.seed = seed;
        self.metrics.audit_seed = seed;
    }

    pub fn validate(&self, registry: &TermRegistry) -> Result<()> {
        let section = |name: &str, r: hmor_core::Result<()>| {
            r.map_err(|e| CliError::Validation(format!("[{name}] {e}")))
        };
        section("hmor", self.hmor.validate())?;
        section("solver", self.solver.validate(registry))?;
        section("metrics", self.metrics.validate())?;
        section("gen", self.gen.validate())?;
        let g = &self.gradcheck;
        if g.cases == 0 || !(g.step > 0.0) || !(g.tolerance > 0.0) {
            return Err(CliError::Validation(format!(
                "[gradcheck] cases, step and tolerance must be positive (got {}, {}, {})",
                g.cases, g.step, g.tolerance
            )));
        }
        Ok(())
    }
}
