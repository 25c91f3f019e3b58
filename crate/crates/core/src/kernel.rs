//! The generalized robust kernel family and its named special cases.
//!
//! For a residual `r`, shape `alpha` and scale `c > 0`:
//!
//! ```text
//! rho(r, alpha, c) = |alpha - 2| / alpha * ((z / |alpha - 2| + 1)^(alpha / 2) - 1),   z = (r / c)^2
//! rho'(r)          = r / c^2 * (z / |alpha - 2| + 1)^(alpha / 2 - 1)
//! w(r)             = rho'(r) / r = 1 / c^2 * (z / |alpha - 2| + 1)^(alpha / 2 - 1)
//! ```
//!
//! The formula has removable singularities at `alpha = 0` (Cauchy) and
//! `alpha = 2` (squared loss). Within [`BRANCH_EPS`] of either point the closed
//! limit is used instead. The weight is always evaluated from its closed form,
//! so it is finite at `r = 0`.

use crate::error::{Error, Result};
use crate::math;

/// Half-width of the neighbourhood of `alpha = 0` and `alpha = 2` where the
/// limit branches replace the generic formula.
pub const BRANCH_EPS: f64 = 1e-5;

/// Shape and scale of the generalized kernel.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct KernelParams {
    alpha: f64,
    c: f64,
}

impl KernelParams {
    pub fn new(alpha: f64, c: f64) -> Result<Self> {
        if !alpha.is_finite() {
            return Err(Error::InvalidParameter(alloc::format!(
                "kernel shape must be finite, got {alpha}"
            )));
        }
        if !(c > 0.0) || !c.is_finite() {
            return Err(Error::InvalidParameter(alloc::format!(
                "kernel scale must be positive and finite, got {c}"
            )));
        }
        Ok(Self { alpha, c })
    }

    #[inline]
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    #[inline]
    pub fn scale(&self) -> f64 {
        self.c
    }

    #[inline]
    fn shape(&self) -> Shape {
        Shape::of(self.alpha)
    }
}

/// Evaluation branch selected from `alpha`.
#[derive(Clone, Copy)]
enum Shape {
    Quadratic,
    Cauchy,
    General { alpha: f64, b: f64 },
}

impl Shape {
    #[inline]
    fn of(alpha: f64) -> Self {
        if (alpha - 2.0).abs() < BRANCH_EPS {
            Shape::Quadratic
        } else if alpha.abs() < BRANCH_EPS {
            Shape::Cauchy
        } else {
            Shape::General {
                alpha,
                b: (alpha - 2.0).abs(),
            }
        }
    }

    /// Loss as a function of `z = (r/c)^2`.
    #[inline]
    fn rho_z(self, z: f64) -> f64 {
        match self {
            Shape::Quadratic => 0.5 * z,
            Shape::Cauchy => math::ln_1p(0.5 * z),
            // expm1/log1p keep precision for small z
            Shape::General { alpha, b } => {
                b / alpha * math::expm1(0.5 * alpha * math::ln_1p(z / b))
            }
        }
    }

    /// Weight times `c^2`, as a function of `z`.
    #[inline]
    fn unit_weight_z(self, z: f64) -> f64 {
        match self {
            Shape::Quadratic => 1.0,
            Shape::Cauchy => 1.0 / (0.5 * z + 1.0),
            Shape::General { alpha, b } => math::powf(z / b + 1.0, 0.5 * alpha - 1.0),
        }
    }
}

/// A kernel that can drive IRLS: loss, derivative and weight of a residual
/// magnitude. Inputs are assumed finite.
pub trait RobustLoss {
    fn loss(&self, r: f64) -> f64;
    fn derivative(&self, r: f64) -> f64;
    fn weight_of(&self, r: f64) -> f64;
    /// Shape parameter in the generalized family (`-inf` for Welsch).
    fn shape_alpha(&self) -> f64;
}

impl RobustLoss for KernelParams {
    #[inline]
    fn loss(&self, r: f64) -> f64 {
        let u = r.abs() / self.c;
        self.shape().rho_z(u * u)
    }

    #[inline]
    fn derivative(&self, r: f64) -> f64 {
        r * self.weight_of(r)
    }

    #[inline]
    fn weight_of(&self, r: f64) -> f64 {
        let u = r.abs() / self.c;
        self.shape().unit_weight_z(u * u) / (self.c * self.c)
    }

    fn shape_alpha(&self) -> f64 {
        self.alpha
    }
}

fn check_residual(r: f64) -> Result<()> {
    if r.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite("residual"))
    }
}

/// Generalized loss `rho(r, alpha, c)`.
pub fn rho(r: f64, params: KernelParams) -> Result<f64> {
    check_residual(r)?;
    Ok(params.loss(r))
}

/// Derivative of [`rho`] with respect to `r`.
pub fn rho_prime(r: f64, params: KernelParams) -> Result<f64> {
    check_residual(r)?;
    Ok(params.derivative(r))
}

/// IRLS weight `rho'(r) / r`, from the closed form (finite at `r = 0`).
pub fn weight(r: f64, params: KernelParams) -> Result<f64> {
    check_residual(r)?;
    Ok(params.weight_of(r))
}

/// Named members of the kernel family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum KernelFamily {
    SquaredL2,
    PseudoHuber,
    Cauchy,
    GemanMcClure,
    Welsch,
}

impl KernelFamily {
    pub const ALL: [KernelFamily; 5] = [
        KernelFamily::SquaredL2,
        KernelFamily::PseudoHuber,
        KernelFamily::Cauchy,
        KernelFamily::GemanMcClure,
        KernelFamily::Welsch,
    ];

    /// The `alpha` this member corresponds to; Welsch is the `-inf` limit.
    pub fn alpha(self) -> f64 {
        match self {
            KernelFamily::SquaredL2 => 2.0,
            KernelFamily::PseudoHuber => 1.0,
            KernelFamily::Cauchy => 0.0,
            KernelFamily::GemanMcClure => -2.0,
            KernelFamily::Welsch => f64::NEG_INFINITY,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            KernelFamily::SquaredL2 => "squared",
            KernelFamily::PseudoHuber => "pseudo-huber",
            KernelFamily::Cauchy => "cauchy",
            KernelFamily::GemanMcClure => "geman-mcclure",
            KernelFamily::Welsch => "welsch",
        }
    }
}

/// A named kernel with its scale.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct NamedKernel {
    pub family: KernelFamily,
    c: f64,
}

impl NamedKernel {
    pub fn new(family: KernelFamily, c: f64) -> Result<Self> {
        if !(c > 0.0) || !c.is_finite() {
            return Err(Error::InvalidParameter(alloc::format!(
                "kernel scale must be positive and finite, got {c}"
            )));
        }
        Ok(Self { family, c })
    }

    #[inline]
    pub fn scale(&self) -> f64 {
        self.c
    }
}

impl RobustLoss for NamedKernel {
    fn loss(&self, r: f64) -> f64 {
        let u = r.abs() / self.c;
        let z = u * u;
        match self.family {
            KernelFamily::SquaredL2 => 0.5 * z,
            KernelFamily::PseudoHuber => math::sqrt(z + 1.0) - 1.0,
            KernelFamily::Cauchy => math::ln_1p(0.5 * z),
            KernelFamily::GemanMcClure => 2.0 * z / (z + 4.0),
            KernelFamily::Welsch => -math::expm1(-0.5 * z),
        }
    }

    fn derivative(&self, r: f64) -> f64 {
        r * self.weight_of(r)
    }

    fn weight_of(&self, r: f64) -> f64 {
        let u = r.abs() / self.c;
        let z = u * u;
        let unit = match self.family {
            KernelFamily::SquaredL2 => 1.0,
            KernelFamily::PseudoHuber => 1.0 / math::sqrt(z + 1.0),
            KernelFamily::Cauchy => 1.0 / (0.5 * z + 1.0),
            KernelFamily::GemanMcClure => 16.0 / ((z + 4.0) * (z + 4.0)),
            KernelFamily::Welsch => math::exp(-0.5 * z),
        };
        unit / (self.c * self.c)
    }

    fn shape_alpha(&self) -> f64 {
        self.family.alpha()
    }
}

pub fn named_rho(r: f64, kernel: NamedKernel) -> Result<f64> {
    check_residual(r)?;
    Ok(kernel.loss(r))
}

pub fn named_rho_prime(r: f64, kernel: NamedKernel) -> Result<f64> {
    check_residual(r)?;
    Ok(kernel.derivative(r))
}

pub fn named_weight(r: f64, kernel: NamedKernel) -> Result<f64> {
    check_residual(r)?;
    Ok(kernel.weight_of(r))
}
