//! Scan-to-scan lidar odometry for spinning multi-ring sensors.
//!
//! Pipeline: voxel downsampling, normal estimation with propagated normal
//! uncertainty ([`filtering`]), nearest-neighbor matching with
//! neighbor-beam rejection ([`correspondence`]), and point-to-plane ICP
//! ([`registration`]). [`simulation`] provides ray-cast scans with ground
//! truth, and [`evaluation`] the relative-error metric and rejector
//! benchmark.

// `!(x < y)` is used on purpose so that NaN fails validation checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod correspondence;
pub mod evaluation;
pub mod filtering;
pub mod geometry;
pub mod io;
pub mod kdtree;
pub mod registration;
pub mod scan;
pub mod simulation;
pub mod svg;
pub mod trajectory;

pub use correspondence::{Correspondence, CorrespondenceSet, GcrError};
pub use evaluation::{relative_error, BenchConfig, BenchReport, ErrorStats, EvalError, NoiseLevel, Variant};
pub use filtering::{filter_points, FilterConfig, FilterError};
pub use geometry::{Mat3, RigidTransform, Twist, Vec3};
pub use io::{IoError, PipelineConfig};
pub use kdtree::KdTree;
pub use registration::{
    icp_align, run_odometry, IcpConfig, IcpReport, IcpTarget, Odometry, OdometryConfig, RegistrationError, Rejector,
    TerminationReason,
};
pub use scan::{FeatureCloud, FeaturePoint, LidarIntrinsics, RawScan, ScanError, ScanPoint};
pub use simulation::{PerturbationSpec, Scene, SceneError};
pub use trajectory::Trajectory;
