//! ICP: alternate nearest-neighbour association with a robust solve.

use alloc::vec::Vec;

use super::cloud::{nearest_correspondences, PointCloud};
use super::geometry::{pose_error, RigidMotion};
use super::registration::{registration_problem, RegistrationVariant};
use crate::error::Result;
use crate::partition::PartitionTable;
use crate::solver::{solve, AlphaPolicy, SolveReport, SolverConfig, TerminationReason};

/// When the adaptive policy re-estimates `alpha`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum AlphaCadence {
    /// A full EM solve in every ICP iteration.
    #[default]
    PerIteration,
    /// EM in the first ICP iteration only; its final `alpha` is then held.
    PerFrame,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct IcpConfig {
    pub solver: SolverConfig,
    pub variant: RegistrationVariant,
    pub max_iterations: usize,
    /// Stop when the rotation increment (radians) and the translation
    /// increment both fall below their tolerances.
    pub rotation_tolerance: f64,
    pub translation_tolerance: f64,
    pub cadence: AlphaCadence,
}

impl Default for IcpConfig {
    fn default() -> Self {
        Self {
            solver: SolverConfig::default(),
            variant: RegistrationVariant::PointToPlane,
            max_iterations: 50,
            rotation_tolerance: 1e-9,
            translation_tolerance: 1e-9,
            cadence: AlphaCadence::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct IcpIteration {
    pub alpha: f64,
    pub robust_cost: f64,
    pub em_iterations: usize,
    pub irls_iterations: usize,
    /// Rotation increment of this iteration, radians.
    pub rotation_step: f64,
    pub translation_step: f64,
    pub termination: TerminationReason,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IcpReport<T> {
    pub transform: T,
    pub converged: bool,
    pub iterations: Vec<IcpIteration>,
    /// The solve of the last ICP iteration.
    pub last_solve: SolveReport<T>,
}

impl<T> IcpReport<T> {
    pub fn alpha_trace(&self) -> Vec<f64> {
        self.iterations.iter().map(|it| it.alpha).collect()
    }

    pub fn final_alpha(&self) -> Option<f64> {
        self.iterations.last().map(|it| it.alpha)
    }
}

/// Registers `source` onto `target` starting from `init`. The adaptive
/// policy needs `table`.
pub fn icp_pipeline<const D: usize, T: RigidMotion<D>>(
    source: &PointCloud<D>,
    target: &PointCloud<D>,
    init: T,
    config: &IcpConfig,
    table: Option<&PartitionTable>,
) -> Result<IcpReport<T>> {
    config.solver.validate()?;
    let mut transform = init;
    let mut solver = config.solver.clone();
    let mut iterations = Vec::new();
    let mut last_solve = None;
    let mut converged = false;

    for _ in 0..config.max_iterations.max(1) {
        let pairs = nearest_correspondences(source, target, &transform)?;
        let problem = registration_problem::<D, T>(source, target, &pairs, config.variant)?;
        let report = solve(&problem, transform.clone(), &solver, table)?;
        let (rot_deg, trans) = pose_error(&report.state, &transform);
        let rotation_step = rot_deg.to_radians();
        let last = report.records.last().expect("a solve yields at least one record");
        iterations.push(IcpIteration {
            alpha: last.alpha,
            robust_cost: last.robust_cost,
            em_iterations: report.records.len(),
            irls_iterations: report.total_irls_iterations(),
            rotation_step,
            translation_step: trans,
            termination: report.termination,
        });
        if config.cadence == AlphaCadence::PerFrame && solver.policy == AlphaPolicy::Adaptive {
            solver.policy = AlphaPolicy::Fixed(last.alpha);
        }
        transform = report.state.clone();
        let singular = report.termination == TerminationReason::SingularSystem;
        last_solve = Some(report);
        if singular {
            break;
        }
        if rotation_step < config.rotation_tolerance && trans < config.translation_tolerance {
            converged = true;
            break;
        }
    }

    Ok(IcpReport {
        transform,
        converged,
        iterations,
        last_solve: last_solve.expect("at least one ICP iteration"),
    })
}
