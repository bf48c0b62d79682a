//! Machine-readable records and their JSON / CSV rendering.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use hmor_core::gradcheck::GradCheckReport;
use hmor_core::metrics::{MetricReport, PckPoint};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::Format;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub scene: String,
    pub views: usize,
    pub hmor_total: f64,
    pub hmor_instance: f64,
    pub hmor_part: f64,
    pub hmor_joint: f64,
    pub pose: f64,
    pub init: f64,
    pub refine: f64,
    pub abs: f64,
    /// Weighted sum under the configured solver weights.
    pub objective: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefineRecord {
    pub scene: String,
    pub steps: usize,
    pub initial_value: f64,
    pub final_value: f64,
    pub initial_violations: usize,
    pub final_violations: usize,
}

/// Scalar metrics; the CSV form of an evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub scenes: usize,
    pub mpjpe: f64,
    pub pa_mpjpe: f64,
    pub abs_mpjpe: f64,
    pub pck_rel: f64,
    pub pck_abs: f64,
    pub auc_rel: f64,
    pub violations_instance: usize,
    pub violations_part: usize,
    pub violations_joint: usize,
    pub matched: usize,
    pub unmatched_pred: usize,
    pub unmatched_gt: usize,
}

/// JSON form of an evaluation: the summary plus the PCK curve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(flatten)]
    pub summary: MetricSummary,
    pub pck_curve: Vec<PckPoint>,
}

impl EvalReport {
    pub fn new(scenes: usize, r: MetricReport) -> Self {
        Self {
            summary: MetricSummary {
                scenes,
                mpjpe: r.mpjpe,
                pa_mpjpe: r.pa_mpjpe,
                abs_mpjpe: r.abs_mpjpe,
                pck_rel: r.pck_rel,
                pck_abs: r.pck_abs,
                auc_rel: r.auc_rel,
                violations_instance: r.ordinal_violations.instance,
                violations_part: r.ordinal_violations.part,
                violations_joint: r.ordinal_violations.joint,
                matched: r.matched_pairs.len(),
                unmatched_pred: r.unmatched_pred.len(),
                unmatched_gt: r.unmatched_gt.len(),
            },
            pck_curve: r.pck_curve,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckRecord {
    pub target: String,
    pub cases: usize,
    pub max_relative_error: f64,
    pub mean_relative_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl GradCheckRecord {
    pub fn new(r: &GradCheckReport, tolerance: f64) -> Self {
        Self {
            target: r.target.name().to_string(),
            cases: r.cases,
            max_relative_error: r.max_relative_error,
            mean_relative_error: r.mean_relative_error,
            tolerance,
            passed: r.max_relative_error < tolerance,
        }
    }
}

pub fn json<T: Serialize + ?Sized>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("report records serialize");
    out.push(b'\n');
    out
}

pub fn csv<T: Serialize>(rows: &[T]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row).expect("report records are flat");
    }
    w.into_inner().expect("writing to memory cannot fail")
}

pub fn render<T: Serialize>(rows: &[T], format: Format) -> Vec<u8> {
    match format {
        Format::Json => json(rows),
        Format::Csv => csv(rows),
    }
}

/// Writes `bytes` to `out` if given, otherwise to `stdout`.
pub fn emit(bytes: &[u8], out: Option<&Path>, stdout: &mut dyn Write) -> Result<()> {
    match out {
        Some(path) => write_file(path, bytes),
        None => stdout
            .write_all(bytes)
            .and_then(|_| stdout.flush())
            .map_err(|e| CliError::io(Path::new("<stdout>"), e)),
    }
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

pub fn create_dir(path: &Path) -> Result<PathBuf> {
    fs::create_dir_all(path).map_err(|e| CliError::io(path, e))?;
    Ok(path.to_path_buf())
}
