//! E-step: maximum-likelihood `alpha` for a residual set by exhaustive search
//! over the partition table grid.

use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kernel::{KernelParams, RobustLoss};
use crate::math;
use crate::partition::PartitionTable;

/// Default cap on the number of residuals the E-step looks at.
pub const DEFAULT_SUBSAMPLE_CAP: usize = 200_000;

/// Residual sets with a MAD below this fraction of `c` are flagged degenerate.
pub const DEGENERACY_MAD_FRACTION: f64 = 1e-6;

/// Non-empty set of finite scalar residuals. Vector blocks contribute their
/// Euclidean norm.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualSet {
    values: Vec<f64>,
}

impl ResidualSet {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyResiduals);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("residual"));
        }
        Ok(Self { values })
    }

    /// Builds the set from vector residual blocks, one norm per block.
    pub fn from_blocks<'a, I>(blocks: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        Self::new(
            blocks
                .into_iter()
                .map(|b| math::sqrt(b.iter().map(|v| v * v).sum()))
                .collect(),
        )
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Median absolute deviation from the median.
    pub fn mad(&self) -> f64 {
        let med = median(self.values.clone());
        median(self.values.iter().map(|v| (v - med).abs()).collect())
    }

    /// Uniform subsample without replacement; indices stay in original order.
    fn subsample(&self, cap: usize, seed: u64) -> ResidualSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx = rand::seq::index::sample(&mut rng, self.values.len(), cap).into_vec();
        idx.sort_unstable();
        ResidualSet {
            values: idx.into_iter().map(|i| self.values[i]).collect(),
        }
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    let n = v.len();
    v.sort_unstable_by(f64::total_cmp);
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Controls for [`estimate_alpha_with`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EStepOptions {
    pub subsample_cap: usize,
    pub seed: u64,
}

impl Default for EStepOptions {
    fn default() -> Self {
        Self {
            subsample_cap: DEFAULT_SUBSAMPLE_CAP,
            seed: 0,
        }
    }
}

/// Result of the grid search.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AlphaEstimate {
    pub alpha: f64,
    pub log_likelihood: f64,
    /// `(alpha, L(alpha))` for every grid node, in grid order.
    pub profile: Vec<(f64, f64)>,
    /// Residual MAD fell below `1e-6 c`; the likelihood then only sees `Z~`.
    pub degenerate: bool,
    /// Number of residuals actually used.
    pub samples_used: usize,
}

/// `L(alpha) = -N log(c Z~(alpha)) - sum_i rho(r_i, alpha, c)`.
pub fn log_likelihood(
    residuals: &ResidualSet,
    alpha: f64,
    c: f64,
    table: &PartitionTable,
) -> Result<f64> {
    if residuals.is_empty() {
        return Err(Error::EmptyResiduals);
    }
    let params = KernelParams::new(alpha, c)?;
    let log_z = table.log_z_at(alpha)?;
    Ok(likelihood_unchecked(residuals.values(), params, log_z))
}

fn likelihood_unchecked(values: &[f64], params: KernelParams, log_z: f64) -> f64 {
    let sum_rho: f64 = values.iter().map(|&r| params.loss(r)).sum();
    -(values.len() as f64) * (math::ln(params.scale()) + log_z) - sum_rho
}

/// Grid-search `alpha` with the default options.
pub fn estimate_alpha(residuals: &ResidualSet, c: f64, table: &PartitionTable) -> Result<AlphaEstimate> {
    estimate_alpha_with(residuals, c, table, &EStepOptions::default())
}

/// Grid-search `alpha`. Ties go to the larger `alpha`.
pub fn estimate_alpha_with(
    residuals: &ResidualSet,
    c: f64,
    table: &PartitionTable,
    options: &EStepOptions,
) -> Result<AlphaEstimate> {
    if residuals.is_empty() {
        return Err(Error::EmptyResiduals);
    }
    // validates c
    KernelParams::new(0.0, c)?;
    let sampled;
    let used = if options.subsample_cap > 0 && residuals.len() > options.subsample_cap {
        sampled = residuals.subsample(options.subsample_cap, options.seed);
        &sampled
    } else {
        residuals
    };

    let mut profile = Vec::with_capacity(table.len());
    let mut best = (f64::NAN, f64::NEG_INFINITY);
    for (i, alpha) in table.alphas().enumerate() {
        let params = KernelParams::new(alpha, c)?;
        let ll = likelihood_unchecked(used.values(), params, table.log_z()[i]);
        profile.push((alpha, ll));
        if ll >= best.1 {
            best = (alpha, ll);
        }
    }
    Ok(AlphaEstimate {
        alpha: best.0,
        log_likelihood: best.1,
        profile,
        degenerate: used.mad() < DEGENERACY_MAD_FRACTION * c,
        samples_used: used.len(),
    })
}

/// Picks the profile maximizer, preferring the later (larger-`alpha`) entry on ties.
pub fn argmax_profile(profile: &[(f64, f64)]) -> Option<(f64, f64)> {
    profile
        .iter()
        .copied()
        .fold(None, |best: Option<(f64, f64)>, p| match best {
            Some(b) if b.1 > p.1 => Some(b),
            _ => Some(p),
        })
}
