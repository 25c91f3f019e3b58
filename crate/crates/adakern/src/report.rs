//! JSON reports and CSV traces. Nothing here records wall-clock time, so
//! identical runs produce identical bytes.

use std::path::{Path, PathBuf};

use adakern_core::problems::{IcpIteration, PolicySummary, SweepConfig, SweepRecord};
use adakern_core::{AlphaEstimate, EmRecord, TerminationReason};
use serde::Serialize;
use serde_json::Value;

use crate::error::Result;
use crate::io::write_text;

/// Where a command writes its files.
#[derive(Debug, Clone)]
pub struct OutputDir {
    root: PathBuf,
}

impl OutputDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn write(&self, name: &str, text: &str) -> Result<PathBuf> {
        let path = self.path(name);
        write_text(&path, text)?;
        Ok(path)
    }

    pub fn write_json<T: Serialize + ?Sized>(&self, name: &str, value: &T) -> Result<PathBuf> {
        self.write(name, &to_json(value)?)
    }
}

pub fn to_json<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

/// `None` for the non-finite values JSON cannot hold.
pub fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

/// Report of one `fit`, `icp` or `ba` solve.
#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub command: &'static str,
    pub policy: String,
    pub seed: u64,
    pub scale: f64,
    pub converged: bool,
    pub termination: TerminationReason,
    /// `null` for Welsch, whose shape is the `-inf` limit.
    pub final_alpha: Option<f64>,
    /// Residual blocks in the problem.
    pub blocks: usize,
    /// Items replaced by the outlier model.
    pub outliers: usize,
    pub parameters: Value,
    /// Error against the generating ground truth; `null` for loaded data.
    pub error: Option<Value>,
    pub records: Vec<EmRecord>,
    /// ICP only: one entry per association round.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub icp_iterations: Option<Vec<IcpIteration>>,
}

impl RunReport {
    pub fn singular(&self) -> bool {
        self.termination == TerminationReason::SingularSystem
    }
}

fn num(v: f64) -> String {
    format!("{v}")
}

fn csv_text(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    let bytes = w.into_inner().map_err(|e| crate::error::Error::Output(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv of utf-8 fields"))
}

/// One row per EM iteration.
pub fn em_trace_csv(records: &[EmRecord]) -> Result<String> {
    csv_text(
        &[
            "em_iteration",
            "alpha",
            "robust_cost",
            "weighted_sq_cost",
            "adaptive_cost",
            "irls_iterations",
            "max_step",
            "termination",
            "invalid_blocks",
            "degenerate",
        ],
        records.iter().enumerate().map(|(i, r)| {
            vec![
                i.to_string(),
                num(r.alpha),
                num(r.robust_cost),
                num(r.weighted_sq_cost),
                r.adaptive_cost.map(num).unwrap_or_default(),
                r.irls_iterations.to_string(),
                num(r.max_step),
                r.termination.as_str().to_string(),
                r.invalid_blocks.to_string(),
                r.degenerate.to_string(),
            ]
        }),
    )
}

/// One row per ICP association round.
pub fn icp_trace_csv(iterations: &[IcpIteration]) -> Result<String> {
    csv_text(
        &[
            "iteration",
            "alpha",
            "robust_cost",
            "em_iterations",
            "irls_iterations",
            "rotation_step",
            "translation_step",
            "termination",
        ],
        iterations.iter().enumerate().map(|(i, it)| {
            vec![
                i.to_string(),
                num(it.alpha),
                num(it.robust_cost),
                it.em_iterations.to_string(),
                it.irls_iterations.to_string(),
                num(it.rotation_step),
                num(it.translation_step),
                it.termination.as_str().to_string(),
            ]
        }),
    )
}

/// Side-by-side comparison: one row per policy, error columns taken from
/// each report's `error` object in `error_keys` order.
pub fn compare_csv(reports: &[RunReport], error_keys: &[&str]) -> Result<String> {
    let mut header = vec!["policy", "converged", "termination", "final_alpha", "robust_cost", "irls_iterations"];
    header.extend_from_slice(error_keys);
    csv_text(
        &header,
        reports.iter().map(|r| {
            let last = r.records.last();
            let mut row = vec![
                r.policy.clone(),
                r.converged.to_string(),
                r.termination.as_str().to_string(),
                r.final_alpha.map(num).unwrap_or_default(),
                last.map(|l| num(l.robust_cost)).unwrap_or_default(),
                r.records.iter().map(|l| l.irls_iterations).sum::<usize>().to_string(),
            ];
            for key in error_keys {
                let v = r.error.as_ref().and_then(|e| e.get(*key)).and_then(Value::as_f64);
                row.push(v.map(num).unwrap_or_default());
            }
            row
        }),
    )
}

/// Columns `policy, sigma, sample, seed, success, rms_error, final_alpha, iterations`.
pub fn sweep_csv(records: &[SweepRecord]) -> Result<String> {
    csv_text(
        &["policy", "sigma", "sample", "seed", "success", "rms_error", "final_alpha", "iterations"],
        records.iter().map(|r| {
            vec![
                r.policy.clone(),
                num(r.sigma),
                r.sample.to_string(),
                r.seed.to_string(),
                r.success.to_string(),
                num(r.rms_error),
                num(r.final_alpha),
                r.iterations.to_string(),
            ]
        }),
    )
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepSummary<'a> {
    pub master_seed: u64,
    pub sigmas: &'a [f64],
    pub samples: usize,
    pub success_threshold: f64,
    pub rotation_sigma_deg: f64,
    pub policies: &'a [PolicySummary],
}

impl<'a> SweepSummary<'a> {
    pub fn new(config: &'a SweepConfig, policies: &'a [PolicySummary]) -> Self {
        Self {
            master_seed: config.master_seed,
            sigmas: &config.sigmas,
            samples: config.samples,
            success_threshold: config.success_threshold,
            rotation_sigma_deg: config.rotation_sigma_deg,
            policies,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AlphaReport<'a> {
    pub scale: f64,
    #[serde(flatten)]
    pub estimate: &'a AlphaEstimate,
}

#[derive(Debug, Clone, Serialize)]
pub struct TableReport {
    pub path: String,
    pub entries: usize,
    pub alpha_min: f64,
    pub alpha_max: f64,
    pub resolution: f64,
    pub tau: f64,
    pub intervals: usize,
    /// Verification only: largest `|log Z~|` change under step halving.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_deviation: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub passed: Option<bool>,
}
