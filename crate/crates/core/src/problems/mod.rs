//! Shipped problems: robust line fitting, rigid registration (point-to-point
//! and point-to-plane, 2-D and 3-D) with an ICP driver, and synthetic bundle
//! adjustment with a convergence-basin sweep. Synthetic data generators and
//! outlier injection live alongside.

pub mod ba;
pub mod cloud;
pub mod geometry;
pub mod icp;
pub mod line;
pub mod outliers;
pub mod registration;
pub mod scan;
pub mod sweep;

pub use ba::{ba_problem, retriangulate, synthetic_ba_scene, triangulate_midpoint, BaProblem, BaSceneConfig, BaState, BAScene, Intrinsics, Observation};
pub use cloud::{nearest_correspondences, PointCloud};
pub use geometry::{pose_error, RigidMotion};
pub use icp::{icp_pipeline, AlphaCadence, IcpConfig, IcpIteration, IcpReport};
pub use line::{line_fit_problem, synthetic_line, LineFit};
pub use scan::{synthetic_scan, synthetic_scan_pair, ScanConfig};
pub use outliers::{inject_outliers, Contaminate, Correspondences, OutlierModel, OutlierSpec};
pub use registration::{registration_problem, RegistrationProblem, RegistrationVariant};
pub use sweep::{basin_sweep, run_cell, summarize, PolicySummary, SweepConfig, SweepRecord};
