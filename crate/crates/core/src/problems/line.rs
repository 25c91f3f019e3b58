//! Robust straight-line fitting, `y = m x + b`.

use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::solver::{BlockJacobian, Problem};

/// Line-fit problem over `[m, b]` with scalar residuals `m x_i + b - y_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct LineFit {
    x: Vec<f64>,
    y: Vec<f64>,
}

pub fn line_fit_problem(points: &[(f64, f64)]) -> Result<LineFit> {
    if points.len() < 2 {
        return Err(Error::InvalidData(alloc::format!(
            "line fit needs at least 2 points, got {}",
            points.len()
        )));
    }
    if points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(Error::InvalidData("line fit points must be finite".into()));
    }
    Ok(LineFit {
        x: points.iter().map(|p| p.0).collect(),
        y: points.iter().map(|p| p.1).collect(),
    })
}

impl LineFit {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn points(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.x.iter().copied().zip(self.y.iter().copied())
    }
}

impl Problem for LineFit {
    type State = [f64; 2];

    fn tangent_dim(&self) -> usize {
        2
    }

    fn num_blocks(&self) -> usize {
        self.x.len()
    }

    fn block_dim(&self, _: usize) -> usize {
        1
    }

    fn residual(&self, s: &[f64; 2], i: usize, out: &mut [f64]) -> bool {
        out[0] = s[0] * self.x[i] + s[1] - self.y[i];
        true
    }

    fn jacobian(&self, _: &[f64; 2], i: usize, jac: &mut BlockJacobian) {
        jac.segment(0, 2).copy_from_slice(&[self.x[i], 1.0]);
    }

    fn plus(&self, s: &[f64; 2], d: &[f64]) -> [f64; 2] {
        [s[0] + d[0], s[1] + d[1]]
    }
}

/// `n` points with `x` uniform in `x_range` and Gaussian noise `sigma` on `y`.
pub fn synthetic_line<R: Rng + ?Sized>(
    rng: &mut R,
    n: usize,
    slope: f64,
    intercept: f64,
    sigma: f64,
    x_range: (f64, f64),
) -> Result<Vec<(f64, f64)>> {
    let noise = Normal::new(0.0, sigma).map_err(|_| Error::InvalidParameter(alloc::format!("bad noise sigma {sigma}")))?;
    Ok((0..n)
        .map(|_| {
            let x = rng.random_range(x_range.0..x_range.1);
            (x, slope * x + intercept + noise.sample(rng))
        })
        .collect())
}
