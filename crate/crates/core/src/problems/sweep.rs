//! Convergence-basin sweep for bundle adjustment: perturb the camera
//! centres, re-triangulate, solve, and score by camera-centre RMS error.

use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::{UnitQuaternion, Vector3};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::ba::{ba_problem, retriangulate, BAScene, BaProblem, BaState};
use crate::error::{Error, Result};
use crate::kernel::KernelFamily;
use crate::partition::PartitionTable;
use crate::solver::{solve, AlphaPolicy, SolverConfig};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct SweepConfig {
    /// Translation noise levels, metres.
    pub sigmas: Vec<f64>,
    pub samples: usize,
    pub policies: Vec<AlphaPolicy>,
    pub master_seed: u64,
    /// Rotation noise per axis, degrees.
    pub rotation_sigma_deg: f64,
    /// Success when the camera-centre RMS error is below this, metres.
    pub success_threshold: f64,
    pub solver: SolverConfig,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            sigmas: alloc::vec![0.1, 0.5, 1.0, 2.0, 5.0],
            samples: 20,
            policies: alloc::vec![
                AlphaPolicy::Squared,
                AlphaPolicy::Named(KernelFamily::PseudoHuber),
                AlphaPolicy::Named(KernelFamily::GemanMcClure),
                AlphaPolicy::Adaptive,
            ],
            master_seed: 0,
            rotation_sigma_deg: 0.0,
            success_threshold: 0.01,
            solver: SolverConfig {
                max_irls_iterations: 100,
                ..SolverConfig::default().with_scale(1.0)
            },
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.policies.is_empty() {
            return Err(Error::InvalidParameter("basin sweep needs at least one policy".into()));
        }
        if self.sigmas.iter().any(|s| !(s.is_finite() && *s >= 0.0)) || !(self.rotation_sigma_deg >= 0.0) {
            return Err(Error::InvalidParameter("noise levels must be finite and non-negative".into()));
        }
        if !(self.success_threshold > 0.0) {
            return Err(Error::InvalidParameter("success threshold must be positive".into()));
        }
        self.solver.validate()
    }

    /// `(sigma index, sample, policy index)` for every cell, in output order.
    pub fn cells(&self) -> Vec<(usize, usize, usize)> {
        let mut out = Vec::with_capacity(self.sigmas.len() * self.samples * self.policies.len());
        for s in 0..self.sigmas.len() {
            for k in 0..self.samples {
                for p in 0..self.policies.len() {
                    out.push((s, k, p));
                }
            }
        }
        out
    }

    /// Seed of one (noise level, sample) pair; shared by all policies so
    /// the comparison is paired.
    pub fn sample_seed(&self, sigma_index: usize, sample: usize) -> u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(((sigma_index as u64) << 32) | sample as u64);
        rng.next_u64()
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SweepRecord {
    pub policy: String,
    pub sigma: f64,
    pub sample: usize,
    pub seed: u64,
    pub success: bool,
    /// Camera-centre RMS error, metres; infinite when the solve failed.
    pub rms_error: f64,
    pub final_alpha: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PolicySummary {
    pub policy: String,
    /// `(sigma, success rate)` per noise level.
    pub per_sigma: Vec<(f64, f64)>,
    pub successes: usize,
    pub total: usize,
    pub success_rate: f64,
}

/// Perturbed initial state for one sample: Gaussian centre noise on every
/// camera but the gauge-fixed ones, optional rotation noise, then landmark
/// re-triangulation from the perturbed poses.
pub fn perturbed_start(
    problem: &BaProblem<'_>,
    truth: &BaState,
    sigma: f64,
    rotation_sigma_deg: f64,
    seed: u64,
) -> BaState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let mut state = truth.clone();
    for k in 1..state.centers.len() {
        let noise = Vector3::from_fn(|_, _| sigma * unit.sample(&mut rng));
        for axis in 0..3 {
            if !(k == 1 && axis == problem.fixed_axis()) {
                state.centers[k][axis] += noise[axis];
            }
        }
        if rotation_sigma_deg > 0.0 {
            let omega = Vector3::from_fn(|_, _| rotation_sigma_deg.to_radians() * unit.sample(&mut rng));
            state.rotations[k] = UnitQuaternion::from_scaled_axis(omega) * state.rotations[k];
        }
    }
    retriangulate(problem.scene(), &mut state);
    state
}

/// Runs one cell. Solver failures are recorded as unsuccessful samples.
pub fn run_cell(
    problem: &BaProblem<'_>,
    truth: &BaState,
    config: &SweepConfig,
    table: Option<&PartitionTable>,
    (sigma_index, sample, policy_index): (usize, usize, usize),
) -> SweepRecord {
    let sigma = config.sigmas[sigma_index];
    let seed = config.sample_seed(sigma_index, sample);
    let policy = config.policies[policy_index];
    let start = perturbed_start(problem, truth, sigma, config.rotation_sigma_deg, seed);
    let solver = config.solver.clone().with_policy(policy);
    let (rms_error, final_alpha, iterations) = match solve(problem, start, &solver, table) {
        Ok(report) => {
            let rms = report.state.center_rms(truth);
            (
                if rms.is_finite() { rms } else { f64::INFINITY },
                report.final_alpha().unwrap_or(f64::NAN),
                report.total_irls_iterations(),
            )
        }
        Err(_) => (f64::INFINITY, f64::NAN, 0),
    };
    SweepRecord {
        policy: policy.label(),
        sigma,
        sample,
        seed,
        success: rms_error < config.success_threshold,
        rms_error,
        final_alpha,
        iterations,
    }
}

/// Success rates per policy, in policy order.
pub fn summarize(config: &SweepConfig, records: &[SweepRecord]) -> Vec<PolicySummary> {
    config
        .policies
        .iter()
        .map(|policy| {
            let label = policy.label();
            let mine: Vec<&SweepRecord> = records.iter().filter(|r| r.policy == label).collect();
            let rate = |rs: &[&SweepRecord]| {
                if rs.is_empty() {
                    0.0
                } else {
                    rs.iter().filter(|r| r.success).count() as f64 / rs.len() as f64
                }
            };
            let per_sigma = config
                .sigmas
                .iter()
                .map(|&s| {
                    let at: Vec<&SweepRecord> = mine.iter().copied().filter(|r| r.sigma == s).collect();
                    (s, rate(&at))
                })
                .collect();
            let successes = mine.iter().filter(|r| r.success).count();
            PolicySummary {
                policy: label,
                per_sigma,
                successes,
                total: mine.len(),
                success_rate: rate(&mine),
            }
        })
        .collect()
}

/// Sweep over every cell; the scene's poses and landmarks are the ground
/// truth. With the `parallel` feature cells run on the rayon pool; records
/// keep cell order either way.
pub fn basin_sweep(
    scene: &BAScene,
    config: &SweepConfig,
    table: Option<&PartitionTable>,
) -> Result<(Vec<SweepRecord>, Vec<PolicySummary>)> {
    config.validate()?;
    if config.policies.contains(&AlphaPolicy::Adaptive) && table.is_none() {
        return Err(Error::InvalidParameter("adaptive policy requires a partition table".into()));
    }
    let problem = ba_problem(scene)?;
    let truth = BaState::from_scene(scene);
    #[cfg(feature = "parallel")]
    let records: Vec<SweepRecord> = {
        use rayon::prelude::*;
        config
            .cells()
            .into_par_iter()
            .map(|cell| run_cell(&problem, &truth, config, table, cell))
            .collect()
    };
    #[cfg(not(feature = "parallel"))]
    let records: Vec<SweepRecord> = config
        .cells()
        .into_iter()
        .map(|cell| run_cell(&problem, &truth, config, table, cell))
        .collect();
    let summary = summarize(config, &records);
    Ok((records, summary))
}
