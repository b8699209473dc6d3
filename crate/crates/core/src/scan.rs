//! Ring-structured scans and the lidar intrinsics they are measured with.

use std::sync::Arc;

use thiserror::Error;

use crate::geometry::Vec3;

/// Returns closer than this are treated as self-hits and dropped on ingest.
pub const MIN_RANGE: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScanError {
    #[error("scan contains no points")]
    EmptyScan,
    #[error("point {index} has a non-finite coordinate")]
    NonFinite { index: usize },
    #[error("point {index} has ring {ring}, but the sensor has {ring_count} rings")]
    RingOutOfRange {
        index: usize,
        ring: u32,
        ring_count: usize,
    },
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
}

/// Calibration of a spinning lidar.
#[derive(Debug, Clone, PartialEq)]
pub struct LidarIntrinsics {
    /// Azimuth step between consecutive firings of one laser, radians.
    pub azimuth_increment: f64,
    /// `ring_pitch[j]` is the elevation gap between ring `j` and ring `j + 1`,
    /// radians. Length is `ring_count - 1`.
    pub ring_pitch: Vec<f64>,
    /// Elevation of ring 0 (the lowest ring), radians.
    pub lowest_elevation: f64,
    /// Standard deviation of the isotropic measurement error, meters.
    pub range_noise_std: f64,
}

impl Default for LidarIntrinsics {
    /// 32 rings, 0.08° azimuth step, uniform 0.26° pitch, 2 cm noise.
    fn default() -> Self {
        Self::uniform(32, 0.26f64.to_radians(), 0.08f64.to_radians(), 0.02)
    }
}

impl LidarIntrinsics {
    /// Uniform pitch, rings centered about the horizontal plane.
    pub fn uniform(ring_count: usize, pitch: f64, azimuth_increment: f64, range_noise_std: f64) -> Self {
        let ring_pitch = vec![pitch; ring_count.saturating_sub(1)];
        Self::centered(ring_pitch, azimuth_increment, range_noise_std)
    }

    pub fn centered(ring_pitch: Vec<f64>, azimuth_increment: f64, range_noise_std: f64) -> Self {
        let span: f64 = ring_pitch.iter().sum();
        Self {
            azimuth_increment,
            ring_pitch,
            lowest_elevation: -0.5 * span,
            range_noise_std,
        }
    }

    pub fn ring_count(&self) -> usize {
        self.ring_pitch.len() + 1
    }

    /// Number of azimuth columns in one revolution.
    pub fn column_count(&self) -> usize {
        (std::f64::consts::TAU / self.azimuth_increment).round() as usize
    }

    pub fn ring_elevations(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.ring_count());
        let mut e = self.lowest_elevation;
        out.push(e);
        for p in &self.ring_pitch {
            e += p;
            out.push(e);
        }
        out
    }

    /// Pitch to the ring above `ring`, if there is one.
    pub fn pitch_up(&self, ring: u32) -> Option<f64> {
        self.ring_pitch.get(ring as usize).copied()
    }

    /// Pitch to the ring below `ring`, if there is one.
    pub fn pitch_down(&self, ring: u32) -> Option<f64> {
        (ring as usize)
            .checked_sub(1)
            .and_then(|j| self.ring_pitch.get(j).copied())
    }

    /// Ring whose elevation is closest to `elevation`.
    pub fn nearest_ring(&self, elevation: f64) -> u32 {
        let mut best = (0u32, f64::INFINITY);
        for (j, e) in self.ring_elevations().into_iter().enumerate() {
            let d = (e - elevation).abs();
            if d < best.1 {
                best = (j as u32, d);
            }
        }
        best.0
    }

    /// Column index of an azimuth angle, wrapped into `[0, column_count)`.
    pub fn column_of(&self, azimuth: f64) -> u32 {
        let n = self.column_count() as i64;
        let c = (azimuth / self.azimuth_increment).round() as i64;
        c.rem_euclid(n) as u32
    }

    pub fn validate(&self) -> Result<(), ScanError> {
        let bad = |m: &str| Err(ScanError::InvalidIntrinsics(m.to_string()));
        if !(self.azimuth_increment > 0.0) {
            return bad("azimuth increment must be positive");
        }
        if self.ring_count() < 2 {
            return bad("at least two rings are required");
        }
        if self.ring_pitch.iter().any(|p| !(*p > 0.0)) {
            return bad("ring pitches must be positive");
        }
        if !(self.range_noise_std >= 0.0) {
            return bad("range noise must be non-negative");
        }
        Ok(())
    }
}

/// One return of a spinning lidar, in the sensor frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanPoint {
    pub position: Vec3,
    pub ring: u32,
    pub column: u32,
    /// Always `position.norm()`.
    pub range: f64,
}

impl ScanPoint {
    pub fn new(position: Vec3, ring: u32, column: u32) -> Self {
        Self {
            position,
            ring,
            column,
            range: position.norm(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RawScan {
    pub points: Vec<ScanPoint>,
    pub timestamp: f64,
    pub intrinsics: Arc<LidarIntrinsics>,
}

impl RawScan {
    /// Validates points and drops returns closer than [`MIN_RANGE`].
    pub fn new(
        points: Vec<ScanPoint>,
        timestamp: f64,
        intrinsics: Arc<LidarIntrinsics>,
    ) -> Result<Self, ScanError> {
        let ring_count = intrinsics.ring_count();
        for (index, p) in points.iter().enumerate() {
            if !p.position.iter().all(|v| v.is_finite()) {
                return Err(ScanError::NonFinite { index });
            }
            if p.ring as usize >= ring_count {
                return Err(ScanError::RingOutOfRange {
                    index,
                    ring: p.ring,
                    ring_count,
                });
            }
        }
        let points: Vec<_> = points.into_iter().filter(|p| p.range >= MIN_RANGE).collect();
        if points.is_empty() {
            return Err(ScanError::EmptyScan);
        }
        Ok(Self {
            points,
            timestamp,
            intrinsics,
        })
    }

    /// Builds a scan without validation; used for derived clouds whose
    /// points already came out of a validated scan.
    pub(crate) fn from_parts(points: Vec<ScanPoint>, timestamp: f64, intrinsics: Arc<LidarIntrinsics>) -> Self {
        Self {
            points,
            timestamp,
            intrinsics,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn positions(&self) -> Vec<Vec3> {
        self.points.iter().map(|p| p.position).collect()
    }
}

/// A filtered point carrying its estimated normal and normal uncertainty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeaturePoint {
    pub position: Vec3,
    /// Unit normal, oriented toward the sensor origin.
    pub normal: Vec3,
    /// Largest eigenvalue of the normal covariance.
    pub normal_uncertainty: f64,
    pub curvature: f64,
    pub ring: u32,
    pub column: u32,
    pub range: f64,
}

#[derive(Debug, Clone)]
pub struct FeatureCloud {
    pub points: Vec<FeaturePoint>,
    pub timestamp: f64,
    pub intrinsics: Arc<LidarIntrinsics>,
    /// Point count of the raw scan this cloud was filtered from.
    pub source_count: usize,
}

impl FeatureCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn positions(&self) -> Vec<Vec3> {
        self.points.iter().map(|p| p.position).collect()
    }

    pub fn pass_fraction(&self) -> f64 {
        self.points.len() as f64 / self.source_count.max(1) as f64
    }
}
