//! IRLS / Levenberg-Marquardt M-step and the EM loop around it.
//!
//! A [`Problem`] exposes residual blocks, block-sparse Jacobians and a
//! manifold update. Each IRLS iteration weights every block by
//! `w(||r_i||)` and solves the damped normal equations
//!
//! ```text
//! (J^T W J + lambda I) delta = -J^T W r
//! ```
//!
//! densely. A step is accepted only if the robust cost `sum rho(||r_i||)`
//! decreases, so the cost at accepted iterates is non-increasing.
//!
//! [`em_solve`] alternates a grid-search E-step for `alpha` with a full
//! M-step at that fixed `alpha`, starting from `alpha = 2`.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::adaptive::{estimate_alpha_with, EStepOptions, ResidualSet};
use crate::error::{Error, Result};
use crate::kernel::{KernelFamily, KernelParams, NamedKernel, RobustLoss};
use crate::math;
use crate::partition::{self, PartitionTable};

/// Jacobian of one residual block, stored as dense column segments.
#[derive(Debug, Clone, Default)]
pub struct BlockJacobian {
    rows: usize,
    segments: Vec<(usize, usize, usize)>,
    data: Vec<f64>,
}

impl BlockJacobian {
    pub fn new() -> Self {
        Self::default()
    }

    /// Resets to an empty Jacobian with `rows` rows.
    pub fn reset(&mut self, rows: usize) {
        self.rows = rows;
        self.segments.clear();
        self.data.clear();
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Appends a segment covering tangent columns `col..col + width` and
    /// returns its `rows x width` row-major storage, zero-initialized.
    pub fn segment(&mut self, col: usize, width: usize) -> &mut [f64] {
        let offset = self.data.len();
        self.segments.push((col, width, offset));
        self.data.resize(offset + self.rows * width, 0.0);
        &mut self.data[offset..]
    }

    /// `(first column, width, rows x width values)` for every segment.
    pub fn segments(&self) -> impl Iterator<Item = (usize, usize, &[f64])> + '_ {
        self.segments
            .iter()
            .map(move |&(col, width, off)| (col, width, &self.data[off..off + self.rows * width]))
    }

    /// Dense `rows x tangent_dim` row-major copy.
    pub fn to_dense(&self, tangent_dim: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.rows * tangent_dim];
        for (col, width, values) in self.segments() {
            for r in 0..self.rows {
                for k in 0..width {
                    out[r * tangent_dim + col + k] += values[r * width + k];
                }
            }
        }
        out
    }
}

/// A non-linear least-squares problem over a manifold.
pub trait Problem {
    type State: Clone;

    /// Size of the tangent space (number of free parameters).
    fn tangent_dim(&self) -> usize;

    fn num_blocks(&self) -> usize;

    fn block_dim(&self, block: usize) -> usize;

    /// Writes the residual of `block` into `out` (length `block_dim`).
    /// Returns `false` when the block cannot be evaluated at `state`
    /// (e.g. a landmark behind its camera); such blocks get zero weight.
    fn residual(&self, state: &Self::State, block: usize, out: &mut [f64]) -> bool;

    /// Jacobian of `block` with respect to the tangent update at `state`.
    fn jacobian(&self, state: &Self::State, block: usize, jac: &mut BlockJacobian);

    /// Manifold retraction; `plus(state, 0) == state`.
    fn plus(&self, state: &Self::State, delta: &[f64]) -> Self::State;
}

/// How the kernel shape is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum AlphaPolicy {
    /// EM estimation of `alpha` on the table grid.
    Adaptive,
    /// Generalized kernel at a fixed `alpha`.
    Fixed(f64),
    /// A named member of the family.
    Named(KernelFamily),
    /// Plain least squares.
    Squared,
}

impl AlphaPolicy {
    pub fn label(&self) -> String {
        match self {
            AlphaPolicy::Adaptive => "adaptive".into(),
            AlphaPolicy::Fixed(a) => format!("fixed({a})"),
            AlphaPolicy::Named(f) => f.name().into(),
            AlphaPolicy::Squared => "squared".into(),
        }
    }
}

/// Solver controls. Defaults follow the reference constants: `alpha` grid
/// `[-10, 2]` at 0.1, `tau = 10 c`, `alpha` starts at 2.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct SolverConfig {
    /// Kernel scale `c`, in residual units.
    pub scale: f64,
    pub policy: AlphaPolicy,
    pub alpha_min: f64,
    pub alpha_max: f64,
    pub alpha_resolution: f64,
    /// Truncation limit in multiples of `c`.
    pub tau_factor: f64,
    pub max_em_iterations: usize,
    pub max_irls_iterations: usize,
    /// Initial damping relative to the largest diagonal entry of the first
    /// normal matrix. Zero gives undamped Gauss-Newton.
    pub damping_initial: f64,
    pub damping_up: f64,
    pub damping_down: f64,
    /// Stop when `max |delta|` falls below this.
    pub step_tolerance: f64,
    /// Stop when the relative robust-cost decrease falls below this.
    pub cost_tolerance: f64,
    pub estep_subsample_cap: usize,
    pub estep_seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            scale: 1.0,
            policy: AlphaPolicy::Adaptive,
            alpha_min: partition::DEFAULT_ALPHA_MIN,
            alpha_max: partition::DEFAULT_ALPHA_MAX,
            alpha_resolution: partition::DEFAULT_RESOLUTION,
            tau_factor: partition::DEFAULT_TAU,
            max_em_iterations: 50,
            max_irls_iterations: 20,
            damping_initial: 1e-4,
            damping_up: 10.0,
            damping_down: 0.1,
            step_tolerance: 1e-10,
            cost_tolerance: 1e-12,
            estep_subsample_cap: crate::adaptive::DEFAULT_SUBSAMPLE_CAP,
            estep_seed: 0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if !(self.scale > 0.0) || !self.scale.is_finite() {
            return bad(format!("scale must be positive, got {}", self.scale));
        }
        if self.max_em_iterations == 0 || self.max_irls_iterations == 0 {
            return bad("iteration caps must be at least 1".into());
        }
        if !(self.step_tolerance > 0.0) || !(self.cost_tolerance > 0.0) {
            return bad("tolerances must be positive".into());
        }
        if !(self.damping_initial >= 0.0) || !(self.damping_up > 1.0) || !(self.damping_down > 0.0 && self.damping_down < 1.0) {
            return bad("damping needs initial >= 0, up > 1 and 0 < down < 1".into());
        }
        if !(self.tau_factor > 0.0) {
            return bad(format!("tau factor must be positive, got {}", self.tau_factor));
        }
        if let AlphaPolicy::Fixed(a) = self.policy {
            KernelParams::new(a, self.scale)?;
        }
        Ok(())
    }

    pub fn with_policy(mut self, policy: AlphaPolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn with_scale(mut self, scale: f64) -> Self {
        self.scale = scale;
        self
    }

    /// Builds the partition table matching this configuration's grid.
    pub fn build_table(&self) -> Result<PartitionTable> {
        PartitionTable::build(self.alpha_min, self.alpha_max, self.alpha_resolution, self.tau_factor)
    }

    fn estep_options(&self) -> EStepOptions {
        EStepOptions {
            subsample_cap: self.estep_subsample_cap,
            seed: self.estep_seed,
        }
    }
}

/// Kernel held fixed during one M-step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FixedKernel {
    General(KernelParams),
    Named(NamedKernel),
}

impl FixedKernel {
    fn alpha(&self) -> f64 {
        match self {
            FixedKernel::General(p) => p.alpha(),
            FixedKernel::Named(k) => k.family.alpha(),
        }
    }
}

impl RobustLoss for FixedKernel {
    #[inline]
    fn loss(&self, r: f64) -> f64 {
        match self {
            FixedKernel::General(p) => p.loss(r),
            FixedKernel::Named(k) => k.loss(r),
        }
    }

    #[inline]
    fn derivative(&self, r: f64) -> f64 {
        match self {
            FixedKernel::General(p) => p.derivative(r),
            FixedKernel::Named(k) => k.derivative(r),
        }
    }

    #[inline]
    fn weight_of(&self, r: f64) -> f64 {
        match self {
            FixedKernel::General(p) => p.weight_of(r),
            FixedKernel::Named(k) => k.weight_of(r),
        }
    }

    fn shape_alpha(&self) -> f64 {
        self.alpha()
    }
}

impl From<KernelParams> for FixedKernel {
    fn from(p: KernelParams) -> Self {
        FixedKernel::General(p)
    }
}

impl From<NamedKernel> for FixedKernel {
    fn from(k: NamedKernel) -> Self {
        FixedKernel::Named(k)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum TerminationReason {
    /// `max |delta|` below the step tolerance.
    StepTolerance,
    /// Relative robust-cost decrease below the cost tolerance.
    CostTolerance,
    /// No damped step decreases the cost any further.
    NoDescent,
    /// Iteration cap reached.
    MaxIterations,
    /// Normal equations could not be factored even with damping.
    SingularSystem,
}

impl TerminationReason {
    pub fn is_converged(self) -> bool {
        matches!(
            self,
            TerminationReason::StepTolerance | TerminationReason::CostTolerance | TerminationReason::NoDescent
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TerminationReason::StepTolerance => "step tolerance",
            TerminationReason::CostTolerance => "cost tolerance",
            TerminationReason::NoDescent => "no descent",
            TerminationReason::MaxIterations => "max iterations",
            TerminationReason::SingularSystem => "singular system",
        }
    }
}

/// One EM iteration (or the single pass of a fixed-kernel solve).
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EmRecord {
    /// Kernel shape used by the M-step; `-inf` for Welsch.
    pub alpha: f64,
    /// `sum rho(||r_i||, alpha, c)` after the M-step.
    pub robust_cost: f64,
    /// `sum w_i ||r_i||^2` after the M-step.
    pub weighted_sq_cost: f64,
    /// `sum rho~_a(||r_i||, alpha, c)` after the M-step (adaptive policy only).
    pub adaptive_cost: Option<f64>,
    pub irls_iterations: usize,
    /// Largest absolute tangent update accepted during the M-step.
    pub max_step: f64,
    pub termination: TerminationReason,
    /// Blocks that could not be evaluated at the final iterate.
    pub invalid_blocks: usize,
    /// The E-step saw a degenerate (near-zero MAD) residual set.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SolveReport<S> {
    pub state: S,
    pub converged: bool,
    pub termination: TerminationReason,
    pub records: Vec<EmRecord>,
}

impl<S> SolveReport<S> {
    pub fn final_alpha(&self) -> Option<f64> {
        self.records.last().map(|r| r.alpha)
    }

    pub fn alpha_trace(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.alpha).collect()
    }

    pub fn total_irls_iterations(&self) -> usize {
        self.records.iter().map(|r| r.irls_iterations).sum()
    }

    pub fn map_state<T>(self, f: impl FnOnce(S) -> T) -> SolveReport<T> {
        SolveReport {
            state: f(self.state),
            converged: self.converged,
            termination: self.termination,
            records: self.records,
        }
    }
}

/// Residuals of every block at one state.
struct Evaluation {
    /// Block norms; `None` for invalid blocks.
    norms: Vec<Option<f64>>,
    residuals: Vec<f64>,
    offsets: Vec<usize>,
    invalid: usize,
}

impl Evaluation {
    fn new<P: Problem>(problem: &P, state: &P::State) -> Result<Self> {
        let n = problem.num_blocks();
        let mut offsets = Vec::with_capacity(n + 1);
        let mut total = 0;
        for b in 0..n {
            offsets.push(total);
            total += problem.block_dim(b);
        }
        offsets.push(total);
        let mut residuals = vec![0.0; total];
        let mut norms = Vec::with_capacity(n);
        let mut invalid = 0;
        for b in 0..n {
            let out = &mut residuals[offsets[b]..offsets[b + 1]];
            if problem.residual(state, b, out) {
                if out.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFiniteResidual { block: b });
                }
                norms.push(Some(math::sqrt(out.iter().map(|v| v * v).sum())));
            } else {
                out.fill(0.0);
                norms.push(None);
                invalid += 1;
            }
        }
        Ok(Self {
            norms,
            residuals,
            offsets,
            invalid,
        })
    }

    fn block(&self, b: usize) -> &[f64] {
        &self.residuals[self.offsets[b]..self.offsets[b + 1]]
    }

    fn valid_norms(&self) -> Vec<f64> {
        self.norms.iter().flatten().copied().collect()
    }

    fn robust_cost<K: RobustLoss>(&self, kernel: &K) -> f64 {
        self.norms.iter().flatten().map(|&n| kernel.loss(n)).sum()
    }

    fn weighted_sq_cost<K: RobustLoss>(&self, kernel: &K) -> f64 {
        self.norms
            .iter()
            .flatten()
            .map(|&n| kernel.weight_of(n) * n * n)
            .sum()
    }

    /// Fewer invalid blocks first, then lower robust cost.
    fn improves_on(&self, cost: f64, other: &Evaluation, other_cost: f64) -> bool {
        self.invalid < other.invalid || (self.invalid == other.invalid && cost < other_cost)
    }
}

/// Assembles `J^T W J` and `J^T W r`. Blocks are visited in index order.
fn normal_equations<P: Problem, K: RobustLoss>(
    problem: &P,
    state: &P::State,
    eval: &Evaluation,
    kernel: &K,
    jac: &mut BlockJacobian,
) -> (DMatrix<f64>, DVector<f64>) {
    let n = problem.tangent_dim();
    let mut h = DMatrix::<f64>::zeros(n, n);
    let mut g = DVector::<f64>::zeros(n);
    for b in 0..problem.num_blocks() {
        let Some(norm) = eval.norms[b] else { continue };
        let w = kernel.weight_of(norm);
        if w == 0.0 {
            continue;
        }
        let r = eval.block(b);
        jac.reset(r.len());
        problem.jacobian(state, b, jac);
        let rows = jac.rows();
        for (ci, wi, ji) in jac.segments() {
            for a in 0..wi {
                let mut acc = 0.0;
                for k in 0..rows {
                    acc += ji[k * wi + a] * r[k];
                }
                g[ci + a] += w * acc;
            }
            for (cj, wj, jj) in jac.segments() {
                for a in 0..wi {
                    for bcol in 0..wj {
                        let mut acc = 0.0;
                        for k in 0..rows {
                            acc += ji[k * wi + a] * jj[k * wj + bcol];
                        }
                        h[(ci + a, cj + bcol)] += w * acc;
                    }
                }
            }
        }
    }
    (h, g)
}

/// Robust M-step at a fixed kernel.
pub fn irls_solve<P: Problem>(
    problem: &P,
    initial: P::State,
    kernel: impl Into<FixedKernel>,
    config: &SolverConfig,
) -> Result<SolveReport<P::State>> {
    config.validate()?;
    let kernel = kernel.into();
    let out = m_step(problem, initial, &kernel, config)?;
    let record = EmRecord {
        alpha: kernel.alpha(),
        robust_cost: out.robust_cost,
        weighted_sq_cost: out.weighted_sq_cost,
        adaptive_cost: None,
        irls_iterations: out.iterations,
        max_step: out.max_step,
        termination: out.termination,
        invalid_blocks: out.eval.invalid,
        degenerate: false,
    };
    Ok(SolveReport {
        state: out.state,
        converged: out.termination.is_converged(),
        termination: out.termination,
        records: vec![record],
    })
}

struct MStep<S> {
    state: S,
    eval: Evaluation,
    robust_cost: f64,
    weighted_sq_cost: f64,
    iterations: usize,
    max_step: f64,
    termination: TerminationReason,
}

const DAMPING_CEILING: f64 = 1e32;

fn m_step<P: Problem, K: RobustLoss>(
    problem: &P,
    initial: P::State,
    kernel: &K,
    config: &SolverConfig,
) -> Result<MStep<P::State>> {
    let mut state = initial;
    let mut eval = Evaluation::new(problem, &state)?;
    let mut cost = eval.robust_cost(kernel);
    let mut jac = BlockJacobian::new();
    let mut lambda: Option<f64> = None;
    let mut max_step = 0.0f64;
    let mut termination = TerminationReason::MaxIterations;
    let mut iterations = 0;
    let dim = problem.tangent_dim();

    'outer: for _ in 0..config.max_irls_iterations {
        iterations += 1;
        let (h, g) = normal_equations(problem, &state, &eval, kernel, &mut jac);
        let lam = lambda.get_or_insert_with(|| {
            let max_diag = (0..dim).map(|i| h[(i, i)]).fold(0.0, f64::max);
            config.damping_initial * max_diag.max(1e-12)
        });
        let gauss_newton = config.damping_initial == 0.0;
        loop {
            let mut a = h.clone();
            for i in 0..dim {
                a[(i, i)] += *lam;
            }
            let Some(chol) = a.cholesky() else {
                if gauss_newton || *lam > DAMPING_CEILING {
                    termination = TerminationReason::SingularSystem;
                    break 'outer;
                }
                *lam = (*lam * config.damping_up).max(1e-12);
                continue;
            };
            let delta = chol.solve(&(-&g));
            let step = delta.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if !step.is_finite() {
                termination = TerminationReason::SingularSystem;
                break 'outer;
            }
            if step < config.step_tolerance {
                termination = TerminationReason::StepTolerance;
                break 'outer;
            }
            let candidate = problem.plus(&state, delta.as_slice());
            let cand_eval = Evaluation::new(problem, &candidate)?;
            let cand_cost = cand_eval.robust_cost(kernel);
            if gauss_newton || cand_eval.improves_on(cand_cost, &eval, cost) {
                let same_support = cand_eval.invalid == eval.invalid;
                let decrease = cost - cand_cost;
                state = candidate;
                eval = cand_eval;
                let previous = cost;
                cost = cand_cost;
                max_step = max_step.max(step);
                *lam *= config.damping_down;
                if same_support && decrease.abs() <= config.cost_tolerance * previous.abs() {
                    termination = TerminationReason::CostTolerance;
                    break 'outer;
                }
                continue 'outer;
            }
            *lam = (*lam * config.damping_up).max(1e-12);
            if *lam > DAMPING_CEILING {
                termination = TerminationReason::NoDescent;
                break 'outer;
            }
        }
    }

    Ok(MStep {
        weighted_sq_cost: eval.weighted_sq_cost(kernel),
        robust_cost: cost,
        state,
        eval,
        iterations,
        max_step,
        termination,
    })
}

/// Joint EM over `alpha` (grid search) and the problem state (IRLS).
pub fn em_solve<P: Problem>(
    problem: &P,
    initial: P::State,
    config: &SolverConfig,
    table: &PartitionTable,
) -> Result<SolveReport<P::State>> {
    config.validate()?;
    if !table.same_grid(config.alpha_min, config.alpha_max, config.alpha_resolution, config.tau_factor) {
        return Err(Error::GridMismatch(format!(
            "table [{}, {}] step {} tau {} vs config [{}, {}] step {} tau {}",
            table.alpha_min(),
            table.alpha_max(),
            table.resolution(),
            table.tau(),
            config.alpha_min,
            config.alpha_max,
            config.alpha_resolution,
            config.tau_factor
        )));
    }
    let c = config.scale;
    let options = config.estep_options();
    let mut state = initial;
    let mut alpha_prev = 2.0;
    let mut records = Vec::new();
    let mut termination = TerminationReason::MaxIterations;
    let mut converged = false;

    for _ in 0..config.max_em_iterations {
        let eval = Evaluation::new(problem, &state)?;
        let norms = eval.valid_norms();
        if norms.is_empty() {
            return Err(Error::InvalidData("no valid residual blocks for the E-step".into()));
        }
        let estimate = estimate_alpha_with(&ResidualSet::new(norms)?, c, table, &options)?;
        let alpha = estimate.alpha;
        let kernel = KernelParams::new(alpha, c)?;
        let out = m_step(problem, state, &kernel, config)?;
        let shift = math::ln(c) + table.log_z_at(alpha)?;
        let valid = out.eval.norms.iter().flatten().count() as f64;
        records.push(EmRecord {
            alpha,
            robust_cost: out.robust_cost,
            weighted_sq_cost: out.weighted_sq_cost,
            adaptive_cost: Some(out.robust_cost + valid * shift),
            irls_iterations: out.iterations,
            max_step: out.max_step,
            termination: out.termination,
            invalid_blocks: out.eval.invalid,
            degenerate: estimate.degenerate,
        });
        state = out.state;
        termination = out.termination;
        if termination == TerminationReason::SingularSystem {
            break;
        }
        if alpha == alpha_prev && termination.is_converged() {
            converged = true;
            break;
        }
        alpha_prev = alpha;
    }

    Ok(SolveReport {
        state,
        converged,
        termination,
        records,
    })
}

/// Dispatches on `config.policy`. The adaptive policy needs a table.
pub fn solve<P: Problem>(
    problem: &P,
    initial: P::State,
    config: &SolverConfig,
    table: Option<&PartitionTable>,
) -> Result<SolveReport<P::State>> {
    match config.policy {
        AlphaPolicy::Adaptive => {
            let table = table.ok_or_else(|| {
                Error::InvalidParameter("adaptive policy requires a partition table".into())
            })?;
            em_solve(problem, initial, config, table)
        }
        AlphaPolicy::Fixed(alpha) => {
            irls_solve(problem, initial, KernelParams::new(alpha, config.scale)?, config)
        }
        AlphaPolicy::Named(family) => {
            irls_solve(problem, initial, NamedKernel::new(family, config.scale)?, config)
        }
        AlphaPolicy::Squared => irls_solve(
            problem,
            initial,
            NamedKernel::new(KernelFamily::SquaredL2, config.scale)?,
            config,
        ),
    }
}

/// Outcome of [`check_jacobian`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JacobianCheck {
    /// Largest `|analytic - numeric| / max(1, |numeric|)` over all entries.
    pub max_error: f64,
    pub block: usize,
    pub row: usize,
    pub column: usize,
}

/// Compares analytic Jacobians with central differences of `residual`
/// through `plus`, for every valid block.
pub fn check_jacobian<P: Problem>(problem: &P, state: &P::State, step: f64) -> JacobianCheck {
    let n = problem.tangent_dim();
    let mut worst = JacobianCheck {
        max_error: 0.0,
        block: 0,
        row: 0,
        column: 0,
    };
    let mut jac = BlockJacobian::new();
    let mut base = Vec::new();
    let mut fwd = Vec::new();
    let mut bwd = Vec::new();
    let mut delta = vec![0.0; n];
    let perturbed: Vec<(P::State, P::State)> = (0..n)
        .map(|k| {
            delta[k] = step;
            let p = problem.plus(state, &delta);
            delta[k] = -step;
            let m = problem.plus(state, &delta);
            delta[k] = 0.0;
            (p, m)
        })
        .collect();
    for b in 0..problem.num_blocks() {
        let d = problem.block_dim(b);
        base.resize(d, 0.0);
        fwd.resize(d, 0.0);
        bwd.resize(d, 0.0);
        if !problem.residual(state, b, &mut base) {
            continue;
        }
        jac.reset(d);
        problem.jacobian(state, b, &mut jac);
        let dense = jac.to_dense(n);
        for (k, (p, m)) in perturbed.iter().enumerate() {
            if !problem.residual(p, b, &mut fwd) || !problem.residual(m, b, &mut bwd) {
                continue;
            }
            for row in 0..d {
                let numeric = (fwd[row] - bwd[row]) / (2.0 * step);
                let analytic = dense[row * n + k];
                let err = (analytic - numeric).abs() / numeric.abs().max(1.0);
                if err > worst.max_error {
                    worst = JacobianCheck {
                        max_error: err,
                        block: b,
                        row,
                        column: k,
                    };
                }
            }
        }
    }
    worst
}
