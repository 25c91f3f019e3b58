#![allow(dead_code)]

use std::sync::OnceLock;

use adakern_core::{BlockJacobian, PartitionTable, Problem};

pub fn table() -> &'static PartitionTable {
    static TABLE: OnceLock<PartitionTable> = OnceLock::new();
    TABLE.get_or_init(|| PartitionTable::build_default().unwrap())
}

/// Scalar location model, r_i = theta - z_i.
pub struct Location(pub Vec<f64>);

impl Problem for Location {
    type State = f64;
    fn tangent_dim(&self) -> usize {
        1
    }
    fn num_blocks(&self) -> usize {
        self.0.len()
    }
    fn block_dim(&self, _: usize) -> usize {
        1
    }
    fn residual(&self, theta: &f64, i: usize, out: &mut [f64]) -> bool {
        out[0] = theta - self.0[i];
        true
    }
    fn jacobian(&self, _: &f64, _: usize, jac: &mut BlockJacobian) {
        jac.segment(0, 1)[0] = 1.0;
    }
    fn plus(&self, theta: &f64, delta: &[f64]) -> f64 {
        theta + delta[0]
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Ordinary least squares line through `points` by the normal equations.
pub fn ols_line(points: &[(f64, f64)]) -> (f64, f64) {
    let n = points.len() as f64;
    let (sx, sy) = points.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
    let (mx, my) = (sx / n, sy / n);
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let m = sxy / sxx;
    (m, my - m * mx)
}
