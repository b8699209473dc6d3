//! File formats: KITTI Velodyne scans, KITTI pose files, and the flat
//! `key = value` pipeline configuration.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use log::warn;
use thiserror::Error;

use crate::filtering::FilterConfig;
use crate::geometry::{RigidTransform, Vec3};
use crate::registration::{IcpConfig, OdometryConfig};
use crate::scan::{LidarIntrinsics, RawScan, ScanError, ScanPoint};
use crate::trajectory::Trajectory;

const RECORD_BYTES: usize = 16;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed scan file: {len} bytes is not a multiple of {RECORD_BYTES}")]
    MalformedFile { len: usize },
    #[error(transparent)]
    Scan(#[from] ScanError),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Decodes little-endian `(x, y, z, reflectance)` f32 records. Reflectance is
/// discarded; ring and column are recovered from each point's elevation and
/// azimuth against `intrinsics`.
pub fn decode_velodyne(bytes: &[u8], intrinsics: &Arc<LidarIntrinsics>, timestamp: f64) -> Result<RawScan, IoError> {
    if !bytes.len().is_multiple_of(RECORD_BYTES) {
        return Err(IoError::MalformedFile { len: bytes.len() });
    }
    let f = |chunk: &[u8], k: usize| f32::from_le_bytes(chunk[4 * k..4 * k + 4].try_into().unwrap()) as f64;
    let points = bytes
        .chunks_exact(RECORD_BYTES)
        .map(|c| {
            let p = Vec3::new(f(c, 0), f(c, 1), f(c, 2));
            let elevation = p.z.atan2(p.x.hypot(p.y));
            let azimuth = p.y.atan2(p.x);
            ScanPoint::new(p, intrinsics.nearest_ring(elevation), intrinsics.column_of(azimuth))
        })
        .collect();
    Ok(RawScan::new(points, timestamp, intrinsics.clone())?)
}

pub fn read_velodyne_bin(path: &Path, intrinsics: &Arc<LidarIntrinsics>, timestamp: f64) -> Result<RawScan, IoError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    decode_velodyne(&bytes, intrinsics, timestamp)
}

/// Encodes positions as f32 records with zero reflectance.
pub fn encode_velodyne(scan: &RawScan) -> Vec<u8> {
    let mut out = Vec::with_capacity(scan.len() * RECORD_BYTES);
    for p in &scan.points {
        for v in [p.position.x as f32, p.position.y as f32, p.position.z as f32, 0.0f32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn write_velodyne_bin(scan: &RawScan, path: &Path) -> Result<(), IoError> {
    fs::write(path, encode_velodyne(scan)).map_err(io_err(path))
}

/// One line per pose: the 12 numbers of the row-major `[R | t]`, in the
/// shortest form that parses back to the same `f64`.
pub fn format_poses(traj: &Trajectory) -> String {
    let mut out = String::new();
    for pose in &traj.poses {
        let row = pose.to_row_major_3x4();
        let fields: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        let _ = writeln!(out, "{}", fields.join(" "));
    }
    out
}

/// Parses a pose file. Rotations that drift from orthonormal by more than
/// 1e-6 are re-orthonormalized with a warning.
pub fn parse_poses(text: &str) -> Result<Trajectory, IoError> {
    let mut poses = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| IoError::Parse { line: i + 1, message };
        let values: Vec<f64> = line
            .split_whitespace()
            .map(|f| f.parse::<f64>().map_err(|e| err(format!("'{f}': {e}"))))
            .collect::<Result<_, _>>()?;
        let row: [f64; 12] = values
            .as_slice()
            .try_into()
            .map_err(|_| err(format!("expected 12 values, found {}", values.len())))?;
        if row.iter().any(|v| !v.is_finite()) {
            return Err(err("non-finite value".into()));
        }
        let mut pose = RigidTransform::from_row_major_3x4(&row);
        if !pose.is_valid(1e-6) {
            warn!("pose on line {} is not a proper rotation; re-orthonormalizing", i + 1);
            pose = pose.orthonormalized();
        }
        poses.push(pose);
    }
    Ok(Trajectory::new(poses))
}

pub fn write_poses(traj: &Trajectory, path: &Path) -> Result<(), IoError> {
    fs::write(path, format_poses(traj)).map_err(io_err(path))
}

pub fn read_poses(path: &Path) -> Result<Trajectory, IoError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_poses(&text)
}

/// Everything a run needs besides the scans.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PipelineConfig {
    pub odometry: OdometryConfig,
    pub intrinsics: LidarIntrinsics,
}

impl PipelineConfig {
    pub fn filter(&self) -> &FilterConfig {
        &self.odometry.filter
    }

    pub fn icp(&self) -> &IcpConfig {
        &self.odometry.icp
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let num = || value.parse::<f64>().map_err(|e| format!("{key}: '{value}': {e}"));
        let int = || value.parse::<usize>().map_err(|e| format!("{key}: '{value}': {e}"));
        let f = &mut self.odometry.filter;
        let icp = &mut self.odometry.icp;
        let intr = &mut self.intrinsics;
        match key {
            "voxel_size" => f.voxel_size = num()?,
            "k" => f.k = int()?,
            "c_tau" => f.c_tau = num()?,
            "curvature_max" => f.curvature_max = num()?,
            "xi" | "range_noise_std" => {
                f.xi = num()?;
                intr.range_noise_std = f.xi;
            }
            "max_iterations" => icp.max_iterations = int()?,
            "abs_trans_eps" => icp.abs_trans_eps = num()?,
            "abs_rot_eps" => icp.abs_rot_eps = num()?,
            "rel_eps" => icp.rel_eps = num()?,
            "rejector" => icp.rejector = value.parse()?,
            "trim_fraction" => icp.trim_fraction = num()?,
            "max_match_distance" => icp.max_match_distance = num()?,
            "damping" => icp.damping = num()?,
            "azimuth_increment_deg" => intr.azimuth_increment = num()?.to_radians(),
            "ring_count" => {
                let n = int()?;
                let pitch = intr.ring_pitch.first().copied().unwrap_or(0.26f64.to_radians());
                *intr = LidarIntrinsics::centered(vec![pitch; n.saturating_sub(1)], intr.azimuth_increment, intr.range_noise_std);
            }
            "ring_pitch_deg" => {
                let list: Vec<f64> = value
                    .split(',')
                    .map(|s| s.trim().parse::<f64>().map(f64::to_radians))
                    .collect::<Result<_, _>>()
                    .map_err(|e| format!("{key}: {e}"))?;
                let pitches = if list.len() == 1 {
                    vec![list[0]; intr.ring_pitch.len()]
                } else {
                    list
                };
                *intr = LidarIntrinsics::centered(pitches, intr.azimuth_increment, intr.range_noise_std);
            }
            "lowest_elevation_deg" => intr.lowest_elevation = num()?.to_radians(),
            other => return Err(format!("unknown key '{other}'")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), String> {
        self.intrinsics.validate().map_err(|e| e.to_string())?;
        let f = &self.odometry.filter;
        if !(f.voxel_size > 0.0 && f.c_tau > 0.0 && f.curvature_max > 0.0 && f.xi >= 0.0) || f.k < 4 {
            return Err("filter settings must be positive and k >= 4".into());
        }
        let i = &self.odometry.icp;
        if i.max_iterations == 0
            || !(i.abs_trans_eps > 0.0 && i.abs_rot_eps > 0.0 && i.rel_eps > 0.0 && i.max_match_distance > 0.0)
            || !(0.0..1.0).contains(&i.trim_fraction)
            || i.damping < 0.0
        {
            return Err("icp thresholds must be positive and trim_fraction in [0, 1)".into());
        }
        Ok(())
    }
}

/// Writes every setting in the form [`parse_config`] reads. Angles are
/// written in degrees, so a round trip may differ in the last bit.
pub fn format_config(cfg: &PipelineConfig) -> String {
    let f = &cfg.odometry.filter;
    let i = &cfg.odometry.icp;
    let s = &cfg.intrinsics;
    let pitches: Vec<String> = s.ring_pitch.iter().map(|p| format!("{}", p.to_degrees())).collect();
    let mut out = String::new();
    let mut kv = |k: &str, v: String| {
        let _ = writeln!(out, "{k} = {v}");
    };
    kv("voxel_size", f.voxel_size.to_string());
    kv("k", f.k.to_string());
    kv("c_tau", f.c_tau.to_string());
    kv("curvature_max", f.curvature_max.to_string());
    kv("xi", f.xi.to_string());
    kv("max_iterations", i.max_iterations.to_string());
    kv("abs_trans_eps", i.abs_trans_eps.to_string());
    kv("abs_rot_eps", i.abs_rot_eps.to_string());
    kv("rel_eps", i.rel_eps.to_string());
    kv("rejector", i.rejector.to_string());
    kv("trim_fraction", i.trim_fraction.to_string());
    kv("max_match_distance", i.max_match_distance.to_string());
    kv("damping", i.damping.to_string());
    kv("azimuth_increment_deg", s.azimuth_increment.to_degrees().to_string());
    kv("ring_pitch_deg", pitches.join(", "));
    // after ring_pitch_deg, which re-centers the rings
    kv("lowest_elevation_deg", s.lowest_elevation.to_degrees().to_string());
    out
}

/// Parses `key = value` lines on top of the defaults. `#` starts a comment.
pub fn parse_config(text: &str) -> Result<PipelineConfig, IoError> {
    let mut cfg = PipelineConfig::default();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let err = |message: String| IoError::Parse { line: i + 1, message };
        let (key, value) = line.split_once('=').ok_or_else(|| err("expected 'key = value'".into()))?;
        cfg.set(key.trim(), value.trim()).map_err(err)?;
    }
    cfg.validate().map_err(|message| IoError::Parse { line: 0, message })?;
    Ok(cfg)
}

pub fn read_config(path: &Path) -> Result<PipelineConfig, IoError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_config(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::so3_exp;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn intr() -> Arc<LidarIntrinsics> {
        Arc::new(LidarIntrinsics::default())
    }

    fn record(x: f32, y: f32, z: f32, r: f32) -> Vec<u8> {
        [x, y, z, r].iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    #[test]
    fn decodes_two_records() {
        let mut bytes = record(1.5, -2.25, 0.125, 0.7);
        bytes.extend(record(10.0, 0.0, -0.5, 0.1));
        assert_eq!(bytes.len(), 32);
        let scan = decode_velodyne(&bytes, &intr(), 0.0).unwrap();
        assert_eq!(scan.len(), 2);
        assert_eq!(scan.points[0].position, Vec3::new(1.5, -2.25, 0.125));
        assert_eq!(scan.points[1].position, Vec3::new(10.0, 0.0, -0.5));
        assert_eq!(scan.points[1].column, 0);
        let e = intr().ring_elevations();
        let expected = intr().nearest_ring((-0.05f64).atan());
        assert_eq!(scan.points[1].ring, expected);
        assert!(e[expected as usize] < 0.0);
    }

    #[test]
    fn malformed_and_empty_files() {
        assert!(matches!(decode_velodyne(&[0u8; 17], &intr(), 0.0), Err(IoError::MalformedFile { len: 17 })));
        assert!(matches!(decode_velodyne(&[], &intr(), 0.0), Err(IoError::Scan(ScanError::EmptyScan))));
    }

    #[test]
    fn velodyne_round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pts: Vec<ScanPoint> = (0..500)
            .map(|_| {
                let p = Vec3::new(rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0), rng.random_range(-3.0..3.0));
                ScanPoint::new(p.map(|v| v as f32 as f64), 0, 0)
            })
            .filter(|p| p.range > 1.0)
            .collect();
        let scan = RawScan::new(pts, 0.0, intr()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("000000.bin");
        write_velodyne_bin(&scan, &path).unwrap();
        let back = read_velodyne_bin(&path, &intr(), 0.0).unwrap();
        assert_eq!(back.len(), scan.len());
        for (a, b) in scan.points.iter().zip(&back.points) {
            assert_eq!(a.position, b.position);
        }
    }

    #[test]
    fn identity_pose_line() {
        let text = format_poses(&Trajectory::new(vec![RigidTransform::identity()]));
        assert_eq!(text, "1 0 0 0 0 1 0 0 0 0 1 0\n");
    }

    #[test]
    fn poses_round_trip_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let poses: Vec<RigidTransform> = (0..100)
            .map(|_| {
                let w = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                let t = Vec3::new(rng.random_range(-500.0..500.0), rng.random_range(-500.0..500.0), rng.random_range(-1e-3..1e-3));
                RigidTransform::new(so3_exp(&w), t)
            })
            .collect();
        let traj = Trajectory::new(poses);
        let back = parse_poses(&format_poses(&traj)).unwrap();
        let max_diff = traj.poses.iter().zip(&back.poses).map(|(a, b)| a.max_abs_diff(b)).fold(0.0, f64::max);
        assert_eq!(max_diff, 0.0);
    }

    #[test]
    fn short_pose_line_is_a_parse_error() {
        let text = "1 0 0 0 0 1 0 0 0 0 1 0\n1 0 0 0 0 1 0 0 0 0 1\n";
        match parse_poses(text) {
            Err(IoError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
        assert!(matches!(parse_poses("1 0 0 x 0 1 0 0 0 0 1 0"), Err(IoError::Parse { line: 1, .. })));
    }

    #[test]
    fn config_keys_apply() {
        let cfg = parse_config(
            "# test\nvoxel_size = 0.25\nk = 12\nrejector = dst\nring_count = 64\nring_pitch_deg = 0.4\nazimuth_increment_deg = 0.2 # comment\n",
        )
        .unwrap();
        assert_eq!(cfg.filter().voxel_size, 0.25);
        assert_eq!(cfg.filter().k, 12);
        assert_eq!(cfg.icp().rejector, crate::registration::Rejector::Dst);
        assert_eq!(cfg.intrinsics.ring_count(), 64);
        assert!((cfg.intrinsics.ring_pitch[10] - 0.4f64.to_radians()).abs() < 1e-15);
        assert!((cfg.intrinsics.azimuth_increment - 0.2f64.to_radians()).abs() < 1e-15);

        let table = parse_config("ring_pitch_deg = 0.5, 0.4, 0.3\n").unwrap();
        assert_eq!(table.intrinsics.ring_count(), 4);

        assert!(matches!(parse_config("nonsense = 1"), Err(IoError::Parse { line: 1, .. })));
        assert!(matches!(parse_config("voxel_size 3"), Err(IoError::Parse { line: 1, .. })));
        assert!(parse_config("trim_fraction = 1.5").is_err());
    }

    #[test]
    fn config_text_round_trip() {
        let mut cfg = parse_config("k = 14\nrejector = dst+trim\nring_pitch_deg = 0.5, 0.25, 0.3\nxi = 0.03\n").unwrap();
        cfg.intrinsics.lowest_elevation -= 0.01;
        let back = parse_config(&format_config(&cfg)).unwrap();
        assert_eq!(back.odometry, cfg.odometry);
        assert_eq!(back.intrinsics.ring_count(), 4);
        for (a, b) in back.intrinsics.ring_pitch.iter().zip(&cfg.intrinsics.ring_pitch) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!((back.intrinsics.lowest_elevation - cfg.intrinsics.lowest_elevation).abs() < 1e-15);
        assert_eq!(back.intrinsics.range_noise_std, 0.03);
    }
}
