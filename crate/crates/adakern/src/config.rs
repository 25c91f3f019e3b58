//! Run configuration, read from a TOML file with one section per concern.
//! Every key is optional; unknown keys are rejected with their line number.

use std::fmt;
use std::path::{Path, PathBuf};

use adakern_core::kernel::KernelFamily;
use adakern_core::problems::{AlphaCadence, BaSceneConfig, OutlierModel, OutlierSpec, RegistrationVariant};
use adakern_core::{AlphaPolicy, SolverConfig};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::read_text;

/// A kernel policy written as a string: `adaptive`, `squared`,
/// `pseudo-huber` (alias `huber`), `cauchy`, `geman-mcclure`, `welsch`,
/// or `fixed:<alpha>`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Policy(pub AlphaPolicy);

impl std::str::FromStr for Policy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let p = match s.trim() {
            "adaptive" => AlphaPolicy::Adaptive,
            "squared" | "l2" => AlphaPolicy::Squared,
            "huber" | "pseudo-huber" => AlphaPolicy::Named(KernelFamily::PseudoHuber),
            "cauchy" => AlphaPolicy::Named(KernelFamily::Cauchy),
            "geman-mcclure" => AlphaPolicy::Named(KernelFamily::GemanMcClure),
            "welsch" => AlphaPolicy::Named(KernelFamily::Welsch),
            other => match other.strip_prefix("fixed:").map(str::parse::<f64>) {
                Some(Ok(a)) if a.is_finite() => AlphaPolicy::Fixed(a),
                _ => return Err(format!("unknown policy `{other}`")),
            },
        };
        Ok(Policy(p))
    }
}

impl TryFrom<String> for Policy {
    type Error = String;

    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

impl From<Policy> for String {
    fn from(p: Policy) -> String {
        p.to_string()
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            AlphaPolicy::Fixed(a) => write!(f, "fixed:{a}"),
            p => f.write_str(&p.label()),
        }
    }
}

/// `[solver]`. `scale` and `max_irls_iterations` default per problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    pub scale: Option<f64>,
    pub alpha_min: f64,
    pub alpha_max: f64,
    pub alpha_resolution: f64,
    pub tau_factor: f64,
    pub max_em_iterations: usize,
    pub max_irls_iterations: Option<usize>,
    pub damping_initial: f64,
    pub damping_up: f64,
    pub damping_down: f64,
    pub step_tolerance: f64,
    pub cost_tolerance: f64,
    pub estep_subsample_cap: usize,
    pub estep_seed: u64,
}

impl Default for SolverSection {
    fn default() -> Self {
        let d = SolverConfig::default();
        Self {
            scale: None,
            alpha_min: d.alpha_min,
            alpha_max: d.alpha_max,
            alpha_resolution: d.alpha_resolution,
            tau_factor: d.tau_factor,
            max_em_iterations: d.max_em_iterations,
            max_irls_iterations: None,
            damping_initial: d.damping_initial,
            damping_up: d.damping_up,
            damping_down: d.damping_down,
            step_tolerance: d.step_tolerance,
            cost_tolerance: d.cost_tolerance,
            estep_subsample_cap: d.estep_subsample_cap,
            estep_seed: d.estep_seed,
        }
    }
}

impl SolverSection {
    pub fn resolve(&self, policy: AlphaPolicy, scale: f64, max_irls: usize) -> Result<SolverConfig> {
        let config = SolverConfig {
            scale: self.scale.unwrap_or(scale),
            policy,
            alpha_min: self.alpha_min,
            alpha_max: self.alpha_max,
            alpha_resolution: self.alpha_resolution,
            tau_factor: self.tau_factor,
            max_em_iterations: self.max_em_iterations,
            max_irls_iterations: self.max_irls_iterations.unwrap_or(max_irls),
            damping_initial: self.damping_initial,
            damping_up: self.damping_up,
            damping_down: self.damping_down,
            step_tolerance: self.step_tolerance,
            cost_tolerance: self.cost_tolerance,
            estep_subsample_cap: self.estep_subsample_cap,
            estep_seed: self.estep_seed,
        };
        config.validate().map_err(|e| Error::Config(format!("[solver]: {e}")))?;
        Ok(config)
    }
}

/// `[outliers]`. `model` defaults per problem: `uniform` for line fits,
/// `clustered-offset` for ICP, `shuffle` for bundle adjustment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutlierSection {
    pub fraction: f64,
    pub model: Option<String>,
    pub low: f64,
    pub high: f64,
    pub magnitude: f64,
    pub cluster_size: usize,
    /// Defaults to the run seed plus 1.
    pub seed: Option<u64>,
}

impl Default for OutlierSection {
    fn default() -> Self {
        Self {
            fraction: 0.0,
            model: None,
            low: -50.0,
            high: 50.0,
            magnitude: 3.0,
            cluster_size: 25,
            seed: None,
        }
    }
}

impl OutlierSection {
    pub fn spec(&self, default_model: &str, run_seed: u64) -> Result<OutlierSpec> {
        let model = match self.model.as_deref().unwrap_or(default_model) {
            "uniform" => OutlierModel::Uniform { low: self.low, high: self.high },
            "shuffle" => OutlierModel::Shuffle,
            "clustered-offset" => OutlierModel::ClusteredOffset {
                magnitude: self.magnitude,
                cluster_size: self.cluster_size,
            },
            other => return Err(Error::Config(format!("[outliers]: unknown model `{other}`"))),
        };
        OutlierSpec::new(self.fraction, model, self.seed.unwrap_or(run_seed.wrapping_add(1)))
            .map_err(|e| Error::Config(format!("[outliers]: {e}")))
    }
}

/// `[line]`: synthetic `y = slope x + intercept` data, or `data` file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LineSection {
    pub points: usize,
    pub slope: f64,
    pub intercept: f64,
    pub noise: f64,
    pub x_min: f64,
    pub x_max: f64,
    pub data: Option<PathBuf>,
}

impl Default for LineSection {
    fn default() -> Self {
        Self {
            points: 200,
            slope: 2.0,
            intercept: 1.0,
            noise: 0.5,
            x_min: -5.0,
            x_max: 5.0,
            data: None,
        }
    }
}

/// `[icp]`: synthetic courtyard scans related by a yaw and a translation,
/// or `source` / `target` files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IcpSection {
    pub points: usize,
    pub noise: f64,
    pub half_length: f64,
    pub half_width: f64,
    pub wall_height: f64,
    pub yaw_deg: f64,
    pub translation: [f64; 3],
    pub variant: RegistrationVariant,
    pub cadence: AlphaCadence,
    pub max_iterations: usize,
    pub rotation_tolerance: f64,
    pub translation_tolerance: f64,
    pub source: Option<PathBuf>,
    pub target: Option<PathBuf>,
}

impl Default for IcpSection {
    fn default() -> Self {
        Self {
            points: 500,
            noise: 0.01,
            half_length: 5.0,
            half_width: 4.0,
            wall_height: 3.0,
            yaw_deg: 10.0,
            translation: [0.3, 0.1, 0.0],
            variant: RegistrationVariant::PointToPlane,
            cadence: AlphaCadence::PerIteration,
            max_iterations: 50,
            rotation_tolerance: 1e-9,
            translation_tolerance: 1e-9,
            source: None,
            target: None,
        }
    }
}

/// `[ba]`: the scene (synthetic layout in `[ba.scene]`, or a `file`) and
/// the initial perturbation of camera centres.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaSection {
    pub scene: BaSceneConfig,
    pub file: Option<PathBuf>,
    pub init_sigma: f64,
    pub rotation_sigma_deg: f64,
}

impl Default for BaSection {
    fn default() -> Self {
        Self {
            scene: BaSceneConfig::default(),
            file: None,
            init_sigma: 0.1,
            rotation_sigma_deg: 0.0,
        }
    }
}

/// `[sweep]`: the convergence-basin grid. The scene comes from `[ba]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub sigmas: Vec<f64>,
    pub samples: usize,
    pub policies: Vec<Policy>,
    pub rotation_sigma_deg: f64,
    pub success_threshold: f64,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            sigmas: vec![0.1, 0.5, 1.0, 2.0, 5.0],
            samples: 20,
            policies: ["squared", "pseudo-huber", "geman-mcclure", "adaptive"]
                .iter()
                .map(|s| s.parse().expect("built-in policy"))
                .collect(),
            rotation_sigma_deg: 0.0,
            success_threshold: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub policy: Policy,
    /// Policies run side by side on identical data; empty runs `policy` only.
    pub compare: Vec<Policy>,
    pub output_dir: Option<PathBuf>,
    /// Cached partition table; built on the fly when absent.
    pub table: Option<PathBuf>,
    pub solver: SolverSection,
    pub outliers: OutlierSection,
    pub line: LineSection,
    pub icp: IcpSection,
    pub ba: BaSection,
    pub sweep: SweepSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            policy: Policy(AlphaPolicy::Adaptive),
            compare: Vec::new(),
            output_dir: None,
            table: None,
            solver: SolverSection::default(),
            outliers: OutlierSection::default(),
            line: LineSection::default(),
            icp: IcpSection::default(),
            ba: BaSection::default(),
            sweep: SweepSection::default(),
        }
    }
}

impl RunConfig {
    pub fn parse(path: &Path, text: &str) -> Result<Self> {
        let mut config: RunConfig = toml::from_str(text).map_err(|e| {
            let line = e.span().map_or(0, |s| text[..s.start].matches('\n').count() + 1);
            Error::Parse {
                path: path.to_path_buf(),
                line,
                message: e.message().trim().to_string(),
            }
        })?;
        // relative data paths are relative to the config file
        if let Some(dir) = path.parent() {
            for p in [
                &mut config.output_dir,
                &mut config.table,
                &mut config.line.data,
                &mut config.icp.source,
                &mut config.icp.target,
                &mut config.ba.file,
            ]
            .into_iter()
            .flatten()
            {
                if p.is_relative() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(path, &read_text(path)?)
    }

    /// Policies to run: `compare` when given, else `policy`.
    pub fn policies(&self) -> Vec<AlphaPolicy> {
        if self.compare.is_empty() {
            vec![self.policy.0]
        } else {
            self.compare.iter().map(|p| p.0).collect()
        }
    }
}
