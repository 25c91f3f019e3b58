//! Seeded outlier injection with a ground-truth mask.

use alloc::vec::Vec;

use nalgebra::SVector;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::ba::BAScene;
use super::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::math;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "kebab-case"))]
pub enum OutlierModel {
    /// Replace values with draws from `U(low, high)`.
    Uniform { low: f64, high: f64 },
    /// Re-point items at a different, randomly chosen partner.
    Shuffle,
    /// Move spatially compact groups of `cluster_size` points by a common
    /// random offset of length `magnitude`.
    ClusteredOffset { magnitude: f64, cluster_size: usize },
}

impl OutlierModel {
    pub fn name(&self) -> &'static str {
        match self {
            OutlierModel::Uniform { .. } => "uniform",
            OutlierModel::Shuffle => "shuffle",
            OutlierModel::ClusteredOffset { .. } => "clustered-offset",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct OutlierSpec {
    pub fraction: f64,
    pub model: OutlierModel,
    pub seed: u64,
}

impl OutlierSpec {
    pub fn new(fraction: f64, model: OutlierModel, seed: u64) -> Result<Self> {
        let spec = Self { fraction, model, seed };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.fraction) {
            return Err(Error::InvalidParameter(alloc::format!(
                "outlier fraction must lie in [0, 1), got {}",
                self.fraction
            )));
        }
        match self.model {
            OutlierModel::Uniform { low, high } if !(low.is_finite() && high.is_finite() && low < high) => {
                Err(Error::InvalidParameter(alloc::format!("uniform range [{low}, {high}) is empty")))
            }
            OutlierModel::ClusteredOffset { magnitude, cluster_size }
                if !(magnitude.is_finite() && magnitude >= 0.0) || cluster_size == 0 =>
            {
                Err(Error::InvalidParameter("clustered offset needs magnitude >= 0 and cluster size >= 1".into()))
            }
            _ => Ok(()),
        }
    }

    /// Number of items contaminated out of `n`: `floor(fraction * n)`.
    pub fn count(&self, n: usize) -> usize {
        // the small bias absorbs representation error, e.g. 0.29 * 100
        let k = math::floor(self.fraction * n as f64 + 1e-9) as usize;
        k.min(n)
    }
}

/// Data that can be contaminated in place.
pub trait Contaminate {
    fn item_count(&self) -> usize;

    /// Contaminates exactly `spec.count(item_count())` items and returns
    /// the mask. `spec` has been validated.
    fn contaminate(&mut self, spec: &OutlierSpec, rng: &mut ChaCha8Rng) -> Result<Vec<bool>>;
}

/// Contaminates `data` deterministically under `spec.seed`.
pub fn inject_outliers<T: Contaminate + ?Sized>(data: &mut T, spec: &OutlierSpec) -> Result<Vec<bool>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    if spec.count(data.item_count()) == 0 {
        return Ok(alloc::vec![false; data.item_count()]);
    }
    data.contaminate(spec, &mut rng)
}

fn unsupported(model: &OutlierModel, target: &'static str) -> Error {
    Error::UnsupportedOutlierModel {
        model: model.name(),
        target,
    }
}

/// Uniformly chosen mask of `spec.count(n)` items; indices ascending.
fn chosen(spec: &OutlierSpec, n: usize, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<bool>) {
    let mut idx = sample(rng, n, spec.count(n)).into_vec();
    idx.sort_unstable();
    let mut mask = alloc::vec![false; n];
    for &i in &idx {
        mask[i] = true;
    }
    (idx, mask)
}

/// A different index in `0..n` (`n >= 2`), uniform over the alternatives.
fn other_index(rng: &mut ChaCha8Rng, n: usize, original: usize) -> usize {
    let j = rng.random_range(0..n - 1);
    if j >= original {
        j + 1
    } else {
        j
    }
}

impl Contaminate for [f64] {
    fn item_count(&self) -> usize {
        self.len()
    }

    fn contaminate(&mut self, spec: &OutlierSpec, rng: &mut ChaCha8Rng) -> Result<Vec<bool>> {
        let OutlierModel::Uniform { low, high } = spec.model else {
            return Err(unsupported(&spec.model, "scalar values"));
        };
        let (idx, mask) = chosen(spec, self.len(), rng);
        for i in idx {
            self[i] = rng.random_range(low..high);
        }
        Ok(mask)
    }
}

/// Line-fit samples: the uniform model replaces `y`.
impl Contaminate for [(f64, f64)] {
    fn item_count(&self) -> usize {
        self.len()
    }

    fn contaminate(&mut self, spec: &OutlierSpec, rng: &mut ChaCha8Rng) -> Result<Vec<bool>> {
        let OutlierModel::Uniform { low, high } = spec.model else {
            return Err(unsupported(&spec.model, "2-D samples"));
        };
        let (idx, mask) = chosen(spec, self.len(), rng);
        for i in idx {
            self[i].1 = rng.random_range(low..high);
        }
        Ok(mask)
    }
}

/// A source-to-target association, `indices[i] < target_len`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Correspondences {
    pub indices: Vec<usize>,
    pub target_len: usize,
}

impl Contaminate for Correspondences {
    fn item_count(&self) -> usize {
        self.indices.len()
    }

    fn contaminate(&mut self, spec: &OutlierSpec, rng: &mut ChaCha8Rng) -> Result<Vec<bool>> {
        if spec.model != OutlierModel::Shuffle {
            return Err(unsupported(&spec.model, "correspondences"));
        }
        if self.target_len < 2 {
            return Err(Error::InvalidData("shuffling needs at least 2 targets".into()));
        }
        let (idx, mask) = chosen(spec, self.indices.len(), rng);
        for i in idx {
            self.indices[i] = other_index(rng, self.target_len, self.indices[i]);
        }
        Ok(mask)
    }
}

impl<const D: usize> Contaminate for PointCloud<D> {
    fn item_count(&self) -> usize {
        self.len()
    }

    fn contaminate(&mut self, spec: &OutlierSpec, rng: &mut ChaCha8Rng) -> Result<Vec<bool>> {
        match spec.model {
            OutlierModel::Uniform { low, high } => {
                let (idx, mask) = chosen(spec, self.len(), rng);
                let points = self.points_mut();
                for i in idx {
                    points[i] = SVector::from_fn(|_, _| rng.random_range(low..high));
                }
                Ok(mask)
            }
            OutlierModel::ClusteredOffset { magnitude, cluster_size } => {
                let n = self.len();
                let target = spec.count(n);
                let mut mask = alloc::vec![false; n];
                let mut marked = 0;
                let points = self.points_mut();
                while marked < target {
                    let free: Vec<usize> = (0..n).filter(|&i| !mask[i]).collect();
                    let seed = points[free[rng.random_range(0..free.len())]];
                    let mut by_distance: Vec<(f64, usize)> =
                        free.iter().map(|&i| ((points[i] - seed).norm_squared(), i)).collect();
                    by_distance.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                    let take = cluster_size.min(target - marked);
                    let direction: SVector<f64, D> = loop {
                        let v = SVector::<f64, D>::from_fn(|_, _| rng.sample(StandardNormal));
                        if v.norm() > 1e-9 {
                            break v.normalize();
                        }
                    };
                    let offset = direction * magnitude;
                    for &(_, i) in &by_distance[..take] {
                        points[i] += offset;
                        mask[i] = true;
                    }
                    marked += take;
                }
                Ok(mask)
            }
            OutlierModel::Shuffle => Err(unsupported(&spec.model, "point clouds")),
        }
    }
}

/// Observations: shuffle gives a masked observation the pixel of another
/// observation in the same camera (a data-association error); uniform
/// replaces both pixel coordinates.
impl Contaminate for BAScene {
    fn item_count(&self) -> usize {
        self.observations().len()
    }

    fn contaminate(&mut self, spec: &OutlierSpec, rng: &mut ChaCha8Rng) -> Result<Vec<bool>> {
        let n = self.observations().len();
        let (idx, mask) = chosen(spec, n, rng);
        match spec.model {
            OutlierModel::Shuffle => {
                let original: Vec<_> = self.observations().to_vec();
                let mut per_camera: Vec<Vec<usize>> = alloc::vec![Vec::new(); self.num_cameras()];
                for (i, o) in original.iter().enumerate() {
                    per_camera[o.camera].push(i);
                }
                let obs = self.observations_mut();
                for i in idx {
                    let pool: Vec<usize> = per_camera[original[i].camera]
                        .iter()
                        .copied()
                        .filter(|&k| original[k].landmark != original[i].landmark)
                        .collect();
                    let donor = if pool.is_empty() {
                        let pool: Vec<usize> = (0..n).filter(|&k| original[k].landmark != original[i].landmark).collect();
                        if pool.is_empty() {
                            return Err(Error::InvalidData("shuffling needs observations of 2+ landmarks".into()));
                        }
                        pool[rng.random_range(0..pool.len())]
                    } else {
                        pool[rng.random_range(0..pool.len())]
                    };
                    obs[i].pixel = original[donor].pixel;
                }
                Ok(mask)
            }
            OutlierModel::Uniform { low, high } => {
                let obs = self.observations_mut();
                for i in idx {
                    obs[i].pixel = nalgebra::Vector2::new(rng.random_range(low..high), rng.random_range(low..high));
                }
                Ok(mask)
            }
            OutlierModel::ClusteredOffset { .. } => Err(unsupported(&spec.model, "bundle-adjustment observations")),
        }
    }
}
