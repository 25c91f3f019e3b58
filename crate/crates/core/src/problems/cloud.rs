//! Point clouds and brute-force nearest-neighbour association.

use alloc::vec::Vec;

use nalgebra::SVector;

use super::geometry::RigidMotion;
use crate::error::{Error, Result};

const NORMAL_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud<const D: usize> {
    points: Vec<SVector<f64, D>>,
    normals: Option<Vec<SVector<f64, D>>>,
}

impl<const D: usize> PointCloud<D> {
    pub fn new(points: Vec<SVector<f64, D>>, normals: Option<Vec<SVector<f64, D>>>) -> Result<Self> {
        if points.iter().any(|p| p.iter().any(|v| !v.is_finite())) {
            return Err(Error::InvalidData("point cloud contains a non-finite coordinate".into()));
        }
        if let Some(normals) = &normals {
            if normals.len() != points.len() {
                return Err(Error::InvalidData(alloc::format!(
                    "{} normals for {} points",
                    normals.len(),
                    points.len()
                )));
            }
            if let Some(i) = normals.iter().position(|n| !((n.norm() - 1.0).abs() <= NORMAL_TOLERANCE)) {
                return Err(Error::InvalidData(alloc::format!("normal {i} is not unit length")));
            }
        }
        Ok(Self { points, normals })
    }

    pub fn from_points(points: Vec<SVector<f64, D>>) -> Result<Self> {
        Self::new(points, None)
    }

    pub fn points(&self) -> &[SVector<f64, D>] {
        &self.points
    }

    pub fn normals(&self) -> Option<&[SVector<f64, D>]> {
        self.normals.as_deref()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Drops normals, e.g. for point-to-point use.
    pub fn without_normals(mut self) -> Self {
        self.normals = None;
        self
    }

    /// Applies `transform` to every point (and rotates normals).
    pub fn transformed<T: RigidMotion<D>>(&self, transform: &T) -> Self {
        Self {
            points: self.points.iter().map(|p| transform.map_point(p)).collect(),
            normals: self
                .normals
                .as_ref()
                .map(|ns| ns.iter().map(|n| transform.map_vector(n).normalize()).collect()),
        }
    }

    pub(crate) fn points_mut(&mut self) -> &mut [SVector<f64, D>] {
        &mut self.points
    }
}

/// Index of the nearest target point for every transformed source point.
/// Ties resolve to the lowest target index.
pub fn nearest_correspondences<const D: usize, T: RigidMotion<D>>(
    source: &PointCloud<D>,
    target: &PointCloud<D>,
    transform: &T,
) -> Result<Vec<usize>> {
    if source.is_empty() || target.is_empty() {
        return Err(Error::InvalidData("correspondence search needs non-empty clouds".into()));
    }
    let targets = target.points();
    Ok(source
        .points()
        .iter()
        .map(|p| {
            let q = transform.map_point(p);
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (j, t) in targets.iter().enumerate() {
                let d = (t - q).norm_squared();
                if d < best_d {
                    best_d = d;
                    best = j;
                }
            }
            best
        })
        .collect())
}
