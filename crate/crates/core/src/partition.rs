//! Truncated partition function and the lookup table over the `alpha` grid.
//!
//! `Z~(alpha)` integrates `exp(-rho(r, alpha, 1))` over `[-tau, tau]`, with `tau`
//! in normalized units (`r / c`). The integrand is even, so the rule runs on
//! `[0, tau]` and doubles. Composite Simpson with a fixed node count keeps
//! the table deterministic.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::kernel::{KernelParams, RobustLoss};
use crate::math;

pub const DEFAULT_ALPHA_MIN: f64 = -10.0;
pub const DEFAULT_ALPHA_MAX: f64 = 2.0;
pub const DEFAULT_RESOLUTION: f64 = 0.1;
/// Truncation limit in units of `c`.
pub const DEFAULT_TAU: f64 = 10.0;
/// Simpson intervals on `[0, tau]`.
pub const DEFAULT_INTERVALS: usize = 1 << 14;

/// Relative tolerance used when matching an `alpha` against grid nodes.
const GRID_MATCH_TOL: f64 = 1e-9;

/// `log Z~(alpha)` with the default quadrature.
pub fn compute_log_partition(alpha: f64, tau: f64) -> Result<f64> {
    log_partition_with_intervals(alpha, tau, DEFAULT_INTERVALS)
}

/// `log Z~(alpha)` with an explicit (even, non-zero) number of Simpson intervals.
pub fn log_partition_with_intervals(alpha: f64, tau: f64, intervals: usize) -> Result<f64> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "truncation limit must be positive, got {tau}"
        )));
    }
    if intervals == 0 || intervals % 2 != 0 {
        return Err(Error::InvalidParameter(format!(
            "Simpson rule needs an even number of intervals, got {intervals}"
        )));
    }
    let kernel = KernelParams::new(alpha, 1.0)?;
    let h = tau / intervals as f64;
    let f = |i: usize| math::exp(-kernel.loss(i as f64 * h));
    let mut odd = 0.0;
    let mut even = 0.0;
    for i in 1..intervals {
        if i % 2 == 1 {
            odd += f(i);
        } else {
            even += f(i);
        }
    }
    let half = h / 3.0 * (f(0) + 4.0 * odd + 2.0 * even + f(intervals));
    Ok(math::ln(2.0 * half))
}

/// Precomputed `log Z~(alpha)` on a uniform `alpha` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionTable {
    alpha_min: f64,
    alpha_max: f64,
    resolution: f64,
    tau: f64,
    intervals: usize,
    log_z: Vec<f64>,
}

fn grid_len(alpha_min: f64, alpha_max: f64, resolution: f64) -> Result<usize> {
    if !alpha_min.is_finite() || !alpha_max.is_finite() || alpha_min > alpha_max {
        return Err(Error::InvalidParameter(format!(
            "alpha grid bounds must be finite with min <= max, got [{alpha_min}, {alpha_max}]"
        )));
    }
    if !(resolution > 0.0) || !resolution.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "grid resolution must be positive, got {resolution}"
        )));
    }
    let steps = (alpha_max - alpha_min) / resolution;
    let rounded = math::round(steps);
    if (steps - rounded).abs() > 1e-6 {
        return Err(Error::InvalidParameter(format!(
            "resolution {resolution} does not divide [{alpha_min}, {alpha_max}]"
        )));
    }
    Ok(rounded as usize + 1)
}

impl PartitionTable {
    /// Tabulates the default grid: `alpha` in `[-10, 2]` at 0.1, `tau = 10`.
    pub fn build_default() -> Result<Self> {
        Self::build(
            DEFAULT_ALPHA_MIN,
            DEFAULT_ALPHA_MAX,
            DEFAULT_RESOLUTION,
            DEFAULT_TAU,
        )
    }

    pub fn build(alpha_min: f64, alpha_max: f64, resolution: f64, tau: f64) -> Result<Self> {
        Self::build_with_intervals(alpha_min, alpha_max, resolution, tau, DEFAULT_INTERVALS)
    }

    /// A single-point grid at `alpha_min == alpha_max` is allowed; it pins the
    /// E-step to one value.
    pub fn build_with_intervals(
        alpha_min: f64,
        alpha_max: f64,
        resolution: f64,
        tau: f64,
        intervals: usize,
    ) -> Result<Self> {
        let n = grid_len(alpha_min, alpha_max, resolution)?;
        let mut table = Self {
            alpha_min,
            alpha_max,
            resolution,
            tau,
            intervals,
            log_z: Vec::with_capacity(n),
        };
        for i in 0..n {
            let alpha = table.alpha_at(i);
            table
                .log_z
                .push(log_partition_with_intervals(alpha, tau, intervals)?);
        }
        table.validate()?;
        Ok(table)
    }

    /// Reassembles a table from stored values, re-checking every invariant.
    pub fn from_parts(
        alpha_min: f64,
        alpha_max: f64,
        resolution: f64,
        tau: f64,
        intervals: usize,
        log_z: Vec<f64>,
    ) -> Result<Self> {
        let n = grid_len(alpha_min, alpha_max, resolution)?;
        if log_z.len() != n {
            return Err(Error::InvalidData(format!(
                "expected {n} table entries, found {}",
                log_z.len()
            )));
        }
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "truncation limit must be positive, got {tau}"
            )));
        }
        let table = Self {
            alpha_min,
            alpha_max,
            resolution,
            tau,
            intervals,
            log_z,
        };
        table.validate()?;
        Ok(table)
    }

    // Heavier tails (smaller alpha) hold more mass inside [-tau, tau], so
    // log Z~ must not increase along the grid.
    fn validate(&self) -> Result<()> {
        for (index, v) in self.log_z.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::InvalidData(format!(
                    "non-finite log partition at grid index {index}"
                )));
            }
        }
        for (i, pair) in self.log_z.windows(2).enumerate() {
            if pair[1] > pair[0] {
                return Err(Error::NotMonotone { index: i + 1 });
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.log_z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_z.is_empty()
    }

    pub fn alpha_min(&self) -> f64 {
        self.alpha_min
    }

    pub fn alpha_max(&self) -> f64 {
        self.alpha_max
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    /// Truncation limit in normalized units.
    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn intervals(&self) -> usize {
        self.intervals
    }

    pub fn log_z(&self) -> &[f64] {
        &self.log_z
    }

    /// Grid node `i`. The last node is `alpha_max` exactly.
    pub fn alpha_at(&self, i: usize) -> f64 {
        let last = grid_len(self.alpha_min, self.alpha_max, self.resolution).unwrap_or(1) - 1;
        if i == last {
            return self.alpha_max;
        }
        // For decimal resolutions (0.1, 0.25, ...) step in integer multiples so
        // nodes print and compare as their decimal values.
        let per_unit = 1.0 / self.resolution;
        let per_unit_int = math::round(per_unit);
        let start = self.alpha_min * per_unit_int;
        if (per_unit - per_unit_int).abs() < 1e-9 && (start - math::round(start)).abs() < 1e-9 {
            (math::round(start) + i as f64) / per_unit_int
        } else {
            self.alpha_min + i as f64 * self.resolution
        }
    }

    pub fn alphas(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.len()).map(move |i| self.alpha_at(i))
    }

    /// Index of the grid node equal to `alpha` (up to rounding of the grid arithmetic).
    pub fn index_of(&self, alpha: f64) -> Result<usize> {
        if !alpha.is_finite() {
            return Err(Error::OffGrid { alpha });
        }
        let pos = math::round((alpha - self.alpha_min) / self.resolution);
        if pos < 0.0 || pos >= self.len() as f64 {
            return Err(Error::OffGrid { alpha });
        }
        let i = pos as usize;
        if (self.alpha_at(i) - alpha).abs() <= GRID_MATCH_TOL * alpha.abs().max(1.0) {
            Ok(i)
        } else {
            Err(Error::OffGrid { alpha })
        }
    }

    /// Snaps `alpha` to the nearest grid node, clamping to the bounds.
    pub fn quantize(&self, alpha: f64) -> f64 {
        let pos = math::round((alpha - self.alpha_min) / self.resolution);
        let i = if pos.is_nan() || pos < 0.0 {
            0
        } else {
            (pos as usize).min(self.len() - 1)
        };
        self.alpha_at(i)
    }

    pub fn log_z_at(&self, alpha: f64) -> Result<f64> {
        Ok(self.log_z[self.index_of(alpha)?])
    }

    /// Same grid and truncation (within rounding).
    pub fn same_grid(&self, alpha_min: f64, alpha_max: f64, resolution: f64, tau: f64) -> bool {
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0);
        close(self.alpha_min, alpha_min)
            && close(self.alpha_max, alpha_max)
            && close(self.resolution, resolution)
            && close(self.tau, tau)
    }

    /// Largest absolute difference between entries of two tables on the same grid.
    pub fn max_deviation(&self, other: &PartitionTable) -> Result<f64> {
        if self.len() != other.len()
            || !self.same_grid(other.alpha_min, other.alpha_max, other.resolution, other.tau)
        {
            return Err(Error::GridMismatch(format!(
                "cannot compare tables over different grids ({} vs {} entries)",
                self.len(),
                other.len()
            )));
        }
        Ok(self
            .log_z
            .iter()
            .zip(&other.log_z)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    /// Rebuilds the table with twice as many Simpson intervals and returns
    /// the largest deviation from the stored values.
    pub fn self_convergence(&self) -> Result<f64> {
        let refined = Self::build_with_intervals(
            self.alpha_min,
            self.alpha_max,
            self.resolution,
            self.tau,
            self.intervals * 2,
        )?;
        self.max_deviation(&refined)
    }

    /// True when `|r| <= tau * c`, where the truncated density is normalized.
    pub fn in_support(&self, r: f64, c: f64) -> bool {
        r.abs() <= self.tau * c
    }
}

/// `log P~(r, alpha, c) = -rho(r, alpha, c) - log c - log Z~(alpha)`.
///
/// `params.alpha()` must be a grid node. Residuals outside `[-tau c, tau c]`
/// still evaluate; use [`PartitionTable::in_support`] to flag them.
pub fn log_density(r: f64, params: KernelParams, table: &PartitionTable) -> Result<f64> {
    if !r.is_finite() {
        return Err(Error::NonFinite("residual"));
    }
    let log_z = table.log_z_at(params.alpha())?;
    Ok(-params.loss(r) - math::ln(params.scale()) - log_z)
}

/// Truncated adaptive loss `rho(r, alpha, c) + log(c Z~(alpha))`.
pub fn truncated_loss(r: f64, params: KernelParams, table: &PartitionTable) -> Result<f64> {
    Ok(-log_density(r, params, table)?)
}
