use alloc::string::String;

/// Errors produced by kernel evaluation, table handling, the solvers and the
/// shipped problems.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("non-finite input: {0}")]
    NonFinite(&'static str),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("alpha {alpha} is not on the partition table grid")]
    OffGrid { alpha: f64 },
    #[error("residual set is empty")]
    EmptyResiduals,
    #[error("non-finite residual in block {block}")]
    NonFiniteResidual { block: usize },
    #[error("partition table is not monotone at grid index {index}")]
    NotMonotone { index: usize },
    #[error("partition table does not match the solver grid: {0}")]
    GridMismatch(String),
    #[error("point-to-plane registration requires target normals")]
    MissingNormals,
    #[error("invalid data: {0}")]
    InvalidData(String),
    #[error("outlier model {model} cannot be applied to {target}")]
    UnsupportedOutlierModel {
        model: &'static str,
        target: &'static str,
    },
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
