//! Trajectory error metrics and the rejector benchmark.

use std::fmt::{self, Write as _};
use std::str::FromStr;
use std::sync::Arc;

use log::{debug, info};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::filtering::{filter_points, FilterConfig};
use crate::geometry::{RigidTransform, Vec3};
use crate::registration::{icp_align, IcpConfig, IcpTarget, OdometryConfig, Rejector};
use crate::scan::LidarIntrinsics;
use crate::simulation::{sample_perturbation_with, simulate_scan, Scene, SENSOR_HEIGHT};
use crate::trajectory::Trajectory;

pub const DEFAULT_SEGMENT: f64 = 100.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("trajectory too short for a {0} m segment")]
    TrajectoryTooShort(f64),
    #[error("trajectories differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
}

/// Per-segment translation errors and their summary. `std` is the
/// population standard deviation. Errors in meters per `segment_length`
/// meters, so for 100 m segments the numbers read directly as percent.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorStats {
    pub per_segment: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub segment_length: f64,
}

impl ErrorStats {
    pub fn from_errors(per_segment: Vec<f64>, segment_length: f64) -> Self {
        let (mean, std) = mean_std(&per_segment);
        Self {
            per_segment,
            mean,
            std,
            segment_length,
        }
    }
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Relative positioning error: for every start pose, the first pose at least
/// `segment` meters further along the ground-truth path closes a segment,
/// and the error is the translation of the mismatch between estimated and
/// true relative motion over it.
pub fn relative_error(estimate: &Trajectory, ground_truth: &Trajectory, segment: f64) -> Result<ErrorStats, EvalError> {
    if estimate.len() != ground_truth.len() {
        return Err(EvalError::LengthMismatch(estimate.len(), ground_truth.len()));
    }
    let dist = ground_truth.path_lengths();
    let mut errors = Vec::new();
    let mut j = 0;
    for i in 0..dist.len() {
        j = j.max(i);
        while j < dist.len() && dist[j] - dist[i] < segment {
            j += 1;
        }
        if j == dist.len() {
            break;
        }
        let gt = ground_truth.relative(i, j);
        let est = estimate.relative(i, j);
        errors.push(gt.inverse().compose(&est).translation.norm());
    }
    if errors.is_empty() {
        return Err(EvalError::TrajectoryTooShort(segment));
    }
    Ok(ErrorStats::from_errors(errors, segment))
}

/// Method rows of the odometry comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// Distance rejection and trimming; no normal-covariance filtering.
    Bl,
    /// Baseline plus normal-covariance filtering.
    Ncf,
    /// Normal-covariance filtering plus geometric rejection and trimming.
    Salo,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Bl, Variant::Ncf, Variant::Salo];

    /// Overrides the parts of `base` that distinguish the variants.
    pub fn configure(self, base: &OdometryConfig) -> OdometryConfig {
        let mut cfg = base.clone();
        match self {
            Variant::Bl => {
                cfg.filter.c_tau = f64::INFINITY;
                cfg.icp.rejector = Rejector::DstTrim;
            }
            Variant::Ncf => cfg.icp.rejector = Rejector::DstTrim,
            Variant::Salo => cfg.icp.rejector = Rejector::GeomTrim,
        }
        cfg
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "bl" => Ok(Variant::Bl),
            "ncf" => Ok(Variant::Ncf),
            "salo" => Ok(Variant::Salo),
            _ => Err(format!("unknown variant '{s}' (expected bl, ncf or salo)")),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Bl => "bl",
            Variant::Ncf => "ncf",
            Variant::Salo => "salo",
        })
    }
}

/// Linear-interpolation quantile of already sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quartiles {
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
}

impl Quartiles {
    pub fn of(values: &[f64]) -> Self {
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        Self {
            q1: quantile_sorted(&v, 0.25),
            median: quantile_sorted(&v, 0.5),
            q3: quantile_sorted(&v, 0.75),
        }
    }
}

/// Initial-guess noise magnitudes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseLevel {
    /// Translation limit, meters.
    pub l_t: f64,
    /// Rotation limit, radians.
    pub l_r: f64,
}

impl NoiseLevel {
    pub fn new(l_t: f64, l_r_deg: f64) -> Self {
        Self {
            l_t,
            l_r: l_r_deg.to_radians(),
        }
    }

    pub fn standard() -> Vec<NoiseLevel> {
        vec![NoiseLevel::new(0.1, 1.0), NoiseLevel::new(0.5, 5.0), NoiseLevel::new(1.0, 10.0)]
    }
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub scene: Scene,
    pub levels: Vec<NoiseLevel>,
    pub trials: usize,
    pub seed: u64,
    pub intrinsics: Arc<LidarIntrinsics>,
    pub filter: FilterConfig,
    pub icp: IcpConfig,
    /// Rejectors compared on every trial.
    pub rejectors: Vec<Rejector>,
    /// Sensor positions are drawn with x in `[-span, span]`.
    pub span: f64,
}

impl BenchConfig {
    pub fn new(scene: Scene) -> Self {
        Self {
            scene,
            levels: NoiseLevel::standard(),
            trials: 100,
            seed: 0,
            intrinsics: Arc::new(LidarIntrinsics::default()),
            filter: FilterConfig::default(),
            icp: IcpConfig::default(),
            rejectors: vec![Rejector::Dst, Rejector::Geom],
            span: 40.0,
        }
    }
}

/// Outcome of one alignment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialError {
    /// `‖t_est − t_gt‖`, meters.
    pub translation: f64,
    /// Angle of `gt⁻¹ ∘ est`, radians.
    pub rotation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevelResult {
    pub level: NoiseLevel,
    /// `errors[r][t]`: rejector `r`, trial `t`.
    pub errors: Vec<Vec<TrialError>>,
}

impl LevelResult {
    pub fn translation_quartiles(&self, rejector: usize) -> Quartiles {
        Quartiles::of(&self.errors[rejector].iter().map(|e| e.translation).collect::<Vec<_>>())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub rejectors: Vec<Rejector>,
    pub levels: Vec<LevelResult>,
}

impl BenchReport {
    /// Tab-separated table, one row per level and rejector.
    pub fn to_table(&self) -> String {
        let mut out = String::from("l_t_m\tl_r_deg\trejector\tq1_m\tmedian_m\tq3_m\tmedian_rot_deg\n");
        for lv in &self.levels {
            for (r, rej) in self.rejectors.iter().enumerate() {
                let q = lv.translation_quartiles(r);
                let rot = Quartiles::of(&lv.errors[r].iter().map(|e| e.rotation.to_degrees()).collect::<Vec<_>>());
                let _ = writeln!(
                    out,
                    "{:.3}\t{:.3}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
                    lv.level.l_t,
                    lv.level.l_r.to_degrees(),
                    rej,
                    q.q1,
                    q.median,
                    q.q3,
                    rot.median
                );
            }
        }
        out
    }
}

/// Seeded RNG for one `(level, trial)` cell, independent of scheduling.
fn trial_rng(seed: u64, level: usize, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((level as u64) << 32) | trial as u64);
    rng
}

/// A scan pair with its true relative motion. `clouds` is `None` when
/// either scan did not survive filtering.
struct TrialSetup {
    clouds: Option<(IcpTarget, crate::scan::FeatureCloud)>,
    gt: RigidTransform,
    init: RigidTransform,
}

fn setup_trial(cfg: &BenchConfig, level: usize, trial: usize) -> TrialSetup {
    let mut rng = trial_rng(cfg.seed, level, trial);
    let x = rng.random_range(-cfg.span..=cfg.span);
    let y = rng.random_range(-1.5..=1.5);
    let yaw = rng.random_range(-0.2..=0.2);
    let target_pose = RigidTransform::new(RigidTransform::from_rotation_z(yaw).rotation, Vec3::new(x, y, SENSOR_HEIGHT));
    // a typical inter-frame motion: about a meter forward with a slight turn
    let gt = RigidTransform::new(
        RigidTransform::from_rotation_z(rng.random_range(-0.03..=0.03)).rotation,
        Vec3::new(rng.random_range(0.5..=1.5), rng.random_range(-0.05..=0.05), 0.0),
    );
    let source_pose = target_pose.compose(&gt);
    let seed_a: u64 = rng.random();
    let seed_b: u64 = rng.random();
    let lv = cfg.levels[level];
    let init = gt.compose(&sample_perturbation_with(lv.l_r, lv.l_t, &mut rng));

    let target_scan = simulate_scan(&cfg.scene, &target_pose, &cfg.intrinsics, seed_a, 0.0);
    let source_scan = simulate_scan(&cfg.scene, &source_pose, &cfg.intrinsics, seed_b, 0.1);
    let clouds = match (filter_points(&target_scan, &cfg.filter), filter_points(&source_scan, &cfg.filter)) {
        (Ok(target), Ok(source)) => Some((IcpTarget::new(target), source)),
        _ => None,
    };
    TrialSetup { clouds, gt, init }
}

fn trial_error(gt: &RigidTransform, est: &RigidTransform) -> TrialError {
    TrialError {
        translation: (est.translation - gt.translation).norm(),
        rotation: gt.inverse().compose(est).rotation_angle(),
    }
}

/// Aligns perturbed simulated scan pairs with each rejector. Trials run in
/// parallel; each draws from its own seeded stream, so the report does not
/// depend on thread scheduling.
pub fn bench_rejectors(cfg: &BenchConfig) -> BenchReport {
    let cells: Vec<(usize, usize)> = (0..cfg.levels.len()).flat_map(|l| (0..cfg.trials).map(move |t| (l, t))).collect();
    let results: Vec<Vec<TrialError>> = cells
        .par_iter()
        .map(|&(l, t)| {
            let setup = setup_trial(cfg, l, t);
            let Some((target, source)) = &setup.clouds else {
                debug!("level {l} trial {t}: filtering failed, reporting the initial error");
                return vec![trial_error(&setup.gt, &setup.init); cfg.rejectors.len()];
            };
            cfg.rejectors
                .iter()
                .map(|&rej| {
                    let icp = IcpConfig {
                        rejector: rej,
                        ..cfg.icp.clone()
                    };
                    let report = icp_align(target, source, &setup.init, &icp);
                    let e = trial_error(&setup.gt, &report.final_transform);
                    debug!(
                        "level {l} trial {t} {rej}: {:.4} m {:.4} deg, {} iterations",
                        e.translation,
                        e.rotation.to_degrees(),
                        report.iterations
                    );
                    e
                })
                .collect()
        })
        .collect();

    let mut levels: Vec<LevelResult> = cfg
        .levels
        .iter()
        .map(|&level| LevelResult {
            level,
            errors: vec![Vec::with_capacity(cfg.trials); cfg.rejectors.len()],
        })
        .collect();
    for ((l, _), errs) in cells.iter().zip(results) {
        for (r, e) in errs.into_iter().enumerate() {
            levels[*l].errors[r].push(e);
        }
    }
    for lv in &levels {
        for (r, rej) in cfg.rejectors.iter().enumerate() {
            let q = lv.translation_quartiles(r);
            info!(
                "l_t {:.2} m, l_r {:.1} deg, {rej}: median {:.4} m (q1 {:.4}, q3 {:.4})",
                lv.level.l_t,
                lv.level.l_r.to_degrees(),
                q.median,
                q.q1,
                q.q3
            );
        }
    }
    BenchReport {
        rejectors: cfg.rejectors.clone(),
        levels,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::so3_exp;

    fn straight(n: usize, step: f64) -> Trajectory {
        Trajectory::new((0..n).map(|i| RigidTransform::from_translation(Vec3::new(i as f64 * step, 0.0, 0.0))).collect())
    }

    #[test]
    fn identical_trajectories_have_zero_error() {
        let gt = straight(201, 1.0);
        let s = relative_error(&gt, &gt, 100.0).unwrap();
        assert_eq!(s.per_segment.len(), 101);
        assert_eq!(s.mean, 0.0);
        assert_eq!(s.std, 0.0);
    }

    #[test]
    fn scaled_line_gives_one_meter_per_segment() {
        let gt = straight(201, 1.0);
        let est = straight(201, 1.01);
        let s = relative_error(&est, &gt, 100.0).unwrap();
        for e in &s.per_segment {
            assert!((e - 1.0).abs() < 1e-9, "{e}");
        }
        assert!((s.mean - 1.0).abs() < 1e-9);
        assert!(s.std < 1e-9);
    }

    #[test]
    fn stats_are_recomputable() {
        let s = ErrorStats::from_errors(vec![1.0, 2.0, 4.0], 100.0);
        assert!((s.mean - 7.0 / 3.0).abs() < 1e-12);
        let var = ((1.0 - s.mean).powi(2) + (2.0 - s.mean).powi(2) + (4.0 - s.mean).powi(2)) / 3.0;
        assert!((s.std - var.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn short_trajectory_is_an_error() {
        let gt = straight(50, 1.0);
        assert_eq!(relative_error(&gt, &gt, 100.0), Err(EvalError::TrajectoryTooShort(100.0)));
        assert!(matches!(relative_error(&straight(3, 1.0), &gt, 100.0), Err(EvalError::LengthMismatch(3, 50))));
    }

    #[test]
    fn invariant_under_common_frame_change() {
        let gt = Trajectory::new(
            (0..150)
                .map(|i| {
                    let a = i as f64 * 0.01;
                    RigidTransform::new(so3_exp(&Vec3::new(0.0, 0.0, a)), Vec3::new(a.sin() * 80.0, (1.0 - a.cos()) * 80.0, 0.0))
                })
                .collect(),
        );
        let est = Trajectory::new(
            gt.poses
                .iter()
                .enumerate()
                .map(|(i, p)| p.compose(&RigidTransform::from_translation(Vec3::new(0.001 * i as f64, 0.0, 0.0))))
                .collect(),
        );
        let a = relative_error(&est, &gt, 50.0).unwrap();
        let g = RigidTransform::new(so3_exp(&Vec3::new(0.3, -1.1, 0.7)), Vec3::new(12.0, -40.0, 3.0));
        let b = relative_error(&est.transformed(&g), &gt.transformed(&g), 50.0).unwrap();
        assert_eq!(a.per_segment.len(), b.per_segment.len());
        assert!((a.mean - b.mean).abs() < 1e-9);
        assert!((a.std - b.std).abs() < 1e-9);
    }

    #[test]
    fn variants_round_trip_and_configure() {
        for v in Variant::ALL {
            assert_eq!(v.to_string().parse::<Variant>().unwrap(), v);
        }
        let base = OdometryConfig::default();
        let bl = Variant::Bl.configure(&base);
        assert!(bl.filter.c_tau.is_infinite());
        assert_eq!(bl.icp.rejector, Rejector::DstTrim);
        assert_eq!(Variant::Ncf.configure(&base).filter.c_tau, base.filter.c_tau);
        assert_eq!(Variant::Salo.configure(&base).icp.rejector, Rejector::GeomTrim);
    }

    #[test]
    fn quantiles() {
        let q = Quartiles::of(&[4.0, 1.0, 3.0, 2.0, 5.0]);
        assert_eq!((q.q1, q.median, q.q3), (2.0, 3.0, 4.0));
        assert_eq!(quantile_sorted(&[1.0, 2.0], 0.5), 1.5);
        assert!(quantile_sorted(&[], 0.5).is_nan());
    }
}
