//! Scan-to-scan ICP: extrapolated initialization, nearest-neighbor
//! matching, rejection, a point-to-plane Gauss-Newton step and termination
//! on increment size.

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use log::{debug, warn};
use nalgebra::{Matrix6, SymmetricEigen, Vector6};
use thiserror::Error;

use crate::correspondence::{distance_reject, gcr_reject_with, gcr_thresholds, match_nearest, trim_matches, CorrespondenceSet};
use crate::filtering::{filter_points, FilterConfig, FilterError};
use crate::geometry::{RigidTransform, Twist, Vec3};
use crate::kdtree::KdTree;
use crate::scan::{FeatureCloud, RawScan};
use crate::trajectory::Trajectory;

/// Systems with a larger condition number are treated as degenerate.
pub const MAX_CONDITION: f64 = 1e12;
/// Fewest matches that can determine a rigid transform.
pub const MIN_MATCHES: usize = 6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RegistrationError {
    #[error("need at least {MIN_MATCHES} matches, got {0}")]
    TooFewMatches(usize),
    #[error("point-to-plane system is degenerate (condition number {0:e})")]
    DegenerateSystem(f64),
    #[error("odometry needs at least two scans")]
    TooFewScans,
}

/// Match rejection stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rejector {
    /// Euclidean distance threshold.
    Dst,
    /// Distance threshold, then trimming.
    DstTrim,
    /// Neighbor-beam geometric rejector.
    Geom,
    /// Geometric rejector, then trimming.
    GeomTrim,
}

impl FromStr for Rejector {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "dst" => Ok(Rejector::Dst),
            "dst+trim" => Ok(Rejector::DstTrim),
            "geom" => Ok(Rejector::Geom),
            "geom+trim" => Ok(Rejector::GeomTrim),
            other => Err(format!("unknown rejector '{other}' (expected dst, dst+trim, geom or geom+trim)")),
        }
    }
}

impl fmt::Display for Rejector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Rejector::Dst => "dst",
            Rejector::DstTrim => "dst+trim",
            Rejector::Geom => "geom",
            Rejector::GeomTrim => "geom+trim",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IcpConfig {
    pub max_iterations: usize,
    /// Stop when the increment translates less than this (meters) and
    /// rotates less than `abs_rot_eps` (radians).
    pub abs_trans_eps: f64,
    pub abs_rot_eps: f64,
    /// Stop when successive increment magnitudes differ by less than this
    /// fraction.
    pub rel_eps: f64,
    pub rejector: Rejector,
    pub trim_fraction: f64,
    /// Threshold of the distance rejector, meters.
    pub max_match_distance: f64,
    /// Diagonal loading of the normal equations, relative to `trace / 6`.
    pub damping: f64,
}

impl Default for IcpConfig {
    fn default() -> Self {
        Self {
            max_iterations: 30,
            abs_trans_eps: 1e-4,
            abs_rot_eps: 1e-5,
            rel_eps: 1e-3,
            rejector: Rejector::GeomTrim,
            trim_fraction: 0.2,
            max_match_distance: 1.0,
            damping: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TerminationReason {
    AbsEps,
    RelEps,
    MaxIter,
    EmptyMatches,
    DegenerateSystem,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IcpReport {
    /// Transform taking source coordinates into the target frame.
    pub final_transform: RigidTransform,
    pub iterations: usize,
    /// Accepted matches at each iteration.
    pub match_counts: Vec<usize>,
    /// Mean squared point-to-plane residual of the accepted matches at each
    /// iteration, before that iteration's update.
    pub costs: Vec<f64>,
    pub termination: TerminationReason,
}

/// Target cloud with its search tree.
#[derive(Debug, Clone)]
pub struct IcpTarget {
    pub cloud: FeatureCloud,
    pub tree: KdTree,
}

impl IcpTarget {
    pub fn new(cloud: FeatureCloud) -> Self {
        let tree = KdTree::new(cloud.positions());
        Self { cloud, tree }
    }
}

/// Linearized point-to-plane system around the current estimate.
///
/// Parameters are `x = (ω, t)`; the residual of a match is
/// `r = (p + ω × p + t − q) · n` with `n` the target normal, so each row of
/// the Jacobian is `[p × n, n]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PointToPlaneSystem {
    /// `Σ Jᵀ J`.
    pub hessian: Matrix6<f64>,
    /// Gradient of `Σ r²`, i.e. `2 Σ Jᵀ r`.
    pub gradient: Vector6<f64>,
    /// `Σ r²`.
    pub cost: f64,
    pub count: usize,
}

pub fn point_to_plane_system(source: &[Vec3], target: &FeatureCloud, ms: &CorrespondenceSet) -> PointToPlaneSystem {
    let mut hessian = Matrix6::zeros();
    let mut jtr = Vector6::zeros();
    let mut cost = 0.0;
    // fixed-order accumulation keeps results schedule independent
    for m in ms.iter() {
        let p = source[m.source_index];
        let q = &target.points[m.target_index];
        let n = q.normal;
        let r = (p - q.position).dot(&n);
        let pn = p.cross(&n);
        let row = Vector6::new(pn.x, pn.y, pn.z, n.x, n.y, n.z);
        hessian += row * row.transpose();
        jtr += row * r;
        cost += r * r;
    }
    PointToPlaneSystem {
        hessian,
        gradient: jtr * 2.0,
        cost,
        count: ms.len(),
    }
}

/// Ratio of extreme eigenvalues; infinite for singular systems.
pub fn condition_number(h: &Matrix6<f64>) -> f64 {
    let ev = SymmetricEigen::new(*h).eigenvalues;
    let (lo, hi) = (ev.min(), ev.max());
    if lo <= 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// One Gauss-Newton step of the point-to-plane cost. `source` holds the
/// source points already moved by the current estimate.
pub fn estimate_point_to_plane(
    source: &[Vec3],
    target: &FeatureCloud,
    ms: &CorrespondenceSet,
    damping: f64,
) -> Result<RigidTransform, RegistrationError> {
    if ms.len() < MIN_MATCHES {
        return Err(RegistrationError::TooFewMatches(ms.len()));
    }
    let sys = point_to_plane_system(source, target, ms);
    let cond = condition_number(&sys.hessian);
    if !(cond <= MAX_CONDITION) {
        return Err(RegistrationError::DegenerateSystem(cond));
    }
    let mut h = sys.hessian;
    if damping > 0.0 {
        let load = damping * h.trace() / 6.0;
        for i in 0..6 {
            h[(i, i)] += load;
        }
    }
    let rhs = -sys.gradient * 0.5;
    let x = match h.cholesky() {
        Some(ch) => ch.solve(&rhs),
        None => h
            .lu()
            .solve(&rhs)
            .ok_or(RegistrationError::DegenerateSystem(f64::INFINITY))?,
    };
    let twist = Twist::new(Vec3::new(x[0], x[1], x[2]), Vec3::new(x[3], x[4], x[5]));
    Ok(RigidTransform::exp(&twist))
}

fn reject(ms: CorrespondenceSet, cfg: &IcpConfig, thresholds: &[f64]) -> CorrespondenceSet {
    match cfg.rejector {
        Rejector::Dst => distance_reject(&ms, cfg.max_match_distance),
        Rejector::DstTrim => trim_matches(&distance_reject(&ms, cfg.max_match_distance), cfg.trim_fraction),
        Rejector::Geom => gcr_reject_with(&ms, thresholds),
        Rejector::GeomTrim => trim_matches(&gcr_reject_with(&ms, thresholds), cfg.trim_fraction),
    }
}

fn mean_cost(source: &[Vec3], target: &FeatureCloud, ms: &CorrespondenceSet) -> f64 {
    let sum: f64 = ms
        .iter()
        .map(|m| {
            let q = &target.points[m.target_index];
            (source[m.source_index] - q.position).dot(&q.normal).powi(2)
        })
        .sum();
    sum / ms.len().max(1) as f64
}

/// Registers `source` onto `target` starting from `init`.
///
/// Each iteration re-applies the accumulated estimate to the original
/// source points, matches, rejects, solves for an increment `Δ` and updates
/// the estimate to `Δ ∘ T`.
pub fn icp_align(target: &IcpTarget, source: &FeatureCloud, init: &RigidTransform, cfg: &IcpConfig) -> IcpReport {
    let thresholds = match cfg.rejector {
        Rejector::Geom | Rejector::GeomTrim => gcr_thresholds(source),
        _ => Vec::new(),
    };
    let original = source.positions();
    let mut estimate = *init;
    let mut match_counts = Vec::new();
    let mut costs = Vec::new();
    let mut prev_magnitude: Option<f64> = None;
    let mut termination = TerminationReason::MaxIter;

    for _ in 0..cfg.max_iterations {
        let moved: Vec<Vec3> = original.iter().map(|p| estimate.apply(p)).collect();
        let ms = reject(match_nearest(&moved, &target.tree), cfg, &thresholds);
        match_counts.push(ms.len());
        if ms.len() < MIN_MATCHES {
            termination = TerminationReason::EmptyMatches;
            break;
        }
        costs.push(mean_cost(&moved, &target.cloud, &ms));
        let delta = match estimate_point_to_plane(&moved, &target.cloud, &ms, cfg.damping) {
            Ok(d) => d,
            Err(e) => {
                warn!("icp stopped: {e}");
                termination = TerminationReason::DegenerateSystem;
                break;
            }
        };
        estimate = delta.compose(&estimate);

        let trans = delta.translation.norm();
        let rot = delta.rotation_angle();
        if trans < cfg.abs_trans_eps && rot < cfg.abs_rot_eps {
            termination = TerminationReason::AbsEps;
            break;
        }
        let magnitude = trans.hypot(rot);
        if let Some(prev) = prev_magnitude {
            if (prev - magnitude).abs() < cfg.rel_eps * prev {
                termination = TerminationReason::RelEps;
                break;
            }
        }
        prev_magnitude = Some(magnitude);
    }

    IcpReport {
        final_transform: estimate,
        iterations: match_counts.len(),
        match_counts,
        costs,
        termination,
    }
}

/// Constant-velocity prediction of the next inter-frame increment.
///
/// Replays the last increment, scaled in the tangent space by the ratio of
/// the upcoming time step to the previous one (1 when untimed). Returns the
/// identity with fewer than two poses.
pub fn extrapolate_init(history: &Trajectory, next_timestamp: Option<f64>) -> RigidTransform {
    let n = history.len();
    if n < 2 {
        return RigidTransform::identity();
    }
    let last = history.relative(n - 2, n - 1);
    let ratio = match (history.has_timestamps(), next_timestamp) {
        (true, Some(next)) => {
            let prev_dt = history.timestamps[n - 1] - history.timestamps[n - 2];
            let next_dt = next - history.timestamps[n - 1];
            if prev_dt > 0.0 && next_dt.is_finite() {
                next_dt / prev_dt
            } else {
                1.0
            }
        }
        _ => 1.0,
    };
    if ratio == 1.0 {
        return last;
    }
    match last.log() {
        Ok(tw) => RigidTransform::exp(&tw.scaled(ratio)),
        Err(_) => RigidTransform::identity(),
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct OdometryConfig {
    pub filter: FilterConfig,
    pub icp: IcpConfig,
}

#[derive(Debug, Clone)]
pub struct FrameReport {
    pub index: usize,
    pub filtered_points: usize,
    pub icp: Option<IcpReport>,
    /// Set when the frame fell back to the extrapolated pose.
    pub failure: Option<String>,
    pub elapsed: Duration,
}

/// Streaming scan-to-scan odometry. Each scan is filtered once; the last
/// successfully filtered cloud is kept as the registration target.
#[derive(Debug)]
pub struct Odometry {
    cfg: OdometryConfig,
    trajectory: Trajectory,
    target: Option<(IcpTarget, RigidTransform)>,
    frames: Vec<FrameReport>,
}

impl Odometry {
    pub fn new(cfg: OdometryConfig) -> Self {
        Self {
            cfg,
            trajectory: Trajectory::default(),
            target: None,
            frames: Vec::new(),
        }
    }

    pub fn trajectory(&self) -> &Trajectory {
        &self.trajectory
    }

    pub fn frames(&self) -> &[FrameReport] {
        &self.frames
    }

    pub fn process(&mut self, scan: &RawScan) -> &FrameReport {
        let start = Instant::now();
        let index = self.trajectory.len();
        let timestamp = Some(scan.timestamp);
        let predicted = match self.trajectory.poses.last() {
            Some(last) => last.compose(&extrapolate_init(&self.trajectory, timestamp)),
            None => RigidTransform::identity(),
        };

        let filtered: Result<FeatureCloud, FilterError> = filter_points(scan, &self.cfg.filter);
        let mut report = FrameReport {
            index,
            filtered_points: filtered.as_ref().map(|c| c.len()).unwrap_or(0),
            icp: None,
            failure: None,
            elapsed: Duration::ZERO,
        };

        let pose = match (&filtered, &self.target) {
            (Ok(cloud), Some((target, target_pose))) => {
                let init = target_pose.inverse().compose(&predicted);
                let icp = icp_align(target, cloud, &init, &self.cfg.icp);
                let pose = match icp.termination {
                    TerminationReason::EmptyMatches | TerminationReason::DegenerateSystem => {
                        report.failure = Some(format!("icp terminated with {:?}", icp.termination));
                        predicted
                    }
                    _ => target_pose.compose(&icp.final_transform),
                };
                debug!("frame {index}: {} iterations, {:?}", icp.iterations, icp.termination);
                report.icp = Some(icp);
                pose
            }
            (Ok(_), None) => predicted,
            (Err(e), _) => {
                report.failure = Some(e.to_string());
                predicted
            }
        };
        if let Some(msg) = &report.failure {
            warn!("frame {index}: {msg}; using extrapolated pose");
        }

        self.trajectory.push(pose, timestamp);
        if let Ok(cloud) = filtered {
            self.target = Some((IcpTarget::new(cloud), pose));
        }
        report.elapsed = start.elapsed();
        self.frames.push(report);
        self.frames.last().unwrap()
    }
}

#[derive(Debug, Clone)]
pub struct OdometryResult {
    pub trajectory: Trajectory,
    pub frames: Vec<FrameReport>,
}

/// Runs odometry over a scan sequence; `poses[0]` is the identity.
pub fn run_odometry(scans: &[RawScan], cfg: &OdometryConfig) -> Result<OdometryResult, RegistrationError> {
    if scans.len() < 2 {
        return Err(RegistrationError::TooFewScans);
    }
    let mut odo = Odometry::new(cfg.clone());
    for scan in scans {
        odo.process(scan);
    }
    Ok(OdometryResult {
        trajectory: odo.trajectory.clone(),
        frames: odo.frames,
    })
}
