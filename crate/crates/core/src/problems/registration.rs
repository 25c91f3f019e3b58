//! Rigid registration residuals over SE(2) / SE(3).

use alloc::vec::Vec;

use nalgebra::SVector;

use super::cloud::PointCloud;
use super::geometry::RigidMotion;
use crate::error::{Error, Result};
use crate::solver::{BlockJacobian, Problem};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum RegistrationVariant {
    /// Vector residual `T p - q`.
    PointToPoint,
    /// Scalar residual `n^T (T p - q)` with target normals.
    PointToPlane,
}

/// Registration of `source` onto `target` for a fixed association.
#[derive(Debug, Clone)]
pub struct RegistrationProblem<'a, const D: usize, T> {
    source: &'a PointCloud<D>,
    target: &'a PointCloud<D>,
    correspondences: Vec<usize>,
    variant: RegistrationVariant,
    _motion: core::marker::PhantomData<T>,
}

/// `correspondences[i]` is the target index matched to source point `i`.
pub fn registration_problem<'a, const D: usize, T: RigidMotion<D>>(
    source: &'a PointCloud<D>,
    target: &'a PointCloud<D>,
    correspondences: &[usize],
    variant: RegistrationVariant,
) -> Result<RegistrationProblem<'a, D, T>> {
    if variant == RegistrationVariant::PointToPlane && target.normals().is_none() {
        return Err(Error::MissingNormals);
    }
    if correspondences.len() != source.len() {
        return Err(Error::InvalidData(alloc::format!(
            "{} correspondences for {} source points",
            correspondences.len(),
            source.len()
        )));
    }
    if let Some(&j) = correspondences.iter().find(|&&j| j >= target.len()) {
        return Err(Error::InvalidData(alloc::format!(
            "correspondence index {j} out of range for {} target points",
            target.len()
        )));
    }
    Ok(RegistrationProblem {
        source,
        target,
        correspondences: correspondences.to_vec(),
        variant,
        _motion: core::marker::PhantomData,
    })
}

impl<const D: usize, T> RegistrationProblem<'_, D, T> {
    pub fn variant(&self) -> RegistrationVariant {
        self.variant
    }

    pub fn correspondences(&self) -> &[usize] {
        &self.correspondences
    }

    fn normal(&self, j: usize) -> &SVector<f64, D> {
        // presence checked at construction
        &self.target.normals().expect("point-to-plane without normals")[j]
    }
}

impl<const D: usize, T: RigidMotion<D>> Problem for RegistrationProblem<'_, D, T> {
    type State = T;

    fn tangent_dim(&self) -> usize {
        T::DOF
    }

    fn num_blocks(&self) -> usize {
        self.correspondences.len()
    }

    fn block_dim(&self, _: usize) -> usize {
        match self.variant {
            RegistrationVariant::PointToPoint => D,
            RegistrationVariant::PointToPlane => 1,
        }
    }

    fn residual(&self, state: &T, i: usize, out: &mut [f64]) -> bool {
        let j = self.correspondences[i];
        let d = state.map_point(&self.source.points()[i]) - self.target.points()[j];
        match self.variant {
            RegistrationVariant::PointToPoint => out.copy_from_slice(d.as_slice()),
            RegistrationVariant::PointToPlane => out[0] = self.normal(j).dot(&d),
        }
        true
    }

    fn jacobian(&self, state: &T, i: usize, jac: &mut BlockJacobian) {
        let q = state.map_point(&self.source.points()[i]);
        let dof = T::DOF;
        let mut point_jac = [0.0; 18];
        T::point_jacobian(&q, &mut point_jac);
        match self.variant {
            RegistrationVariant::PointToPoint => {
                jac.segment(0, dof).copy_from_slice(&point_jac[..D * dof]);
            }
            RegistrationVariant::PointToPlane => {
                let n = self.normal(self.correspondences[i]);
                let seg = jac.segment(0, dof);
                for (k, out) in seg.iter_mut().enumerate() {
                    *out = (0..D).map(|row| n[row] * point_jac[row * dof + k]).sum();
                }
            }
        }
    }

    fn plus(&self, state: &T, delta: &[f64]) -> T {
        state.retract(delta)
    }
}
