//! Nearest-neighbor matching and match rejection.
//!
//! The geometric rejector compares each match distance with the distance at
//! which a beam of an adjacent ring (one azimuth step left or right) would
//! have hit the locally planar surface around the source point. A match
//! farther away than every such hypothetical neighbor is discarded.

use thiserror::Error;

use crate::geometry::Vec3;
use crate::kdtree::KdTree;
use crate::scan::{FeatureCloud, FeaturePoint, LidarIntrinsics};

/// Below this norm of `p × p_ground` the beam frame is undefined.
const VERTICAL_BEAM_EPS: f64 = 1e-9;
/// Relative size of the in-surface component below which incidence is
/// treated as grazing.
const GRAZING_REL: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub source_index: usize,
    pub target_index: usize,
    /// Euclidean distance between the matched points, meters.
    pub distance: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CorrespondenceSet {
    pub matches: Vec<Correspondence>,
}

impl CorrespondenceSet {
    pub fn len(&self) -> usize {
        self.matches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matches.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Correspondence> {
        self.matches.iter()
    }
}

impl FromIterator<Correspondence> for CorrespondenceSet {
    fn from_iter<I: IntoIterator<Item = Correspondence>>(iter: I) -> Self {
        Self {
            matches: iter.into_iter().collect(),
        }
    }
}

#[derive(Debug, Error, Clone, Copy, PartialEq)]
pub enum GcrError {
    #[error("beam is parallel to the z axis or horizontal; its frame is undefined")]
    VerticalBeam,
    #[error("no adjacent ring on the requested side")]
    BoundaryRing,
    #[error("surface is nearly parallel to the neighbor-beam offset")]
    GrazingIncidence,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RingSide {
    Up,
    Down,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColumnSide {
    Left,
    Right,
}

/// One closest target point per source point; ties go to the lowest target
/// index.
pub fn match_nearest(source: &[Vec3], target: &KdTree) -> CorrespondenceSet {
    use rayon::prelude::*;
    let matches = source
        .par_iter()
        .enumerate()
        .filter_map(|(i, p)| {
            target.nearest(p).map(|(j, d)| Correspondence {
                source_index: i,
                target_index: j,
                distance: d,
            })
        })
        .collect();
    CorrespondenceSet { matches }
}

/// Number of matches kept when trimming `fraction` of `n`: `⌈(1 − fraction) n⌉`.
pub fn trimmed_count(n: usize, fraction: f64) -> usize {
    // the epsilon absorbs representation error in products like 0.8 * 10
    (((1.0 - fraction) * n as f64) - 1e-9).ceil().max(0.0) as usize
}

/// Keeps the `⌈(1 − fraction) n⌉` closest matches, in their original order.
pub fn trim_matches(ms: &CorrespondenceSet, fraction: f64) -> CorrespondenceSet {
    assert!((0.0..1.0).contains(&fraction), "trim fraction must be in [0, 1)");
    let keep = trimmed_count(ms.len(), fraction);
    if keep >= ms.len() {
        return ms.clone();
    }
    let mut idx: Vec<usize> = (0..ms.len()).collect();
    idx.sort_by(|&a, &b| {
        ms.matches[a]
            .distance
            .total_cmp(&ms.matches[b].distance)
            .then(a.cmp(&b))
    });
    idx.truncate(keep);
    idx.sort_unstable();
    idx.into_iter().map(|i| ms.matches[i]).collect()
}

pub fn distance_reject(ms: &CorrespondenceSet, max_dist: f64) -> CorrespondenceSet {
    ms.iter().filter(|m| m.distance < max_dist).copied().collect()
}

/// Unit beam frame `(u, v)` orthogonal to `p`: `u ∝ p × (pₓ, p_y, 0)` is
/// horizontal, `v ∝ p × u` points along increasing elevation (up to sign).
fn beam_frame(p: &Vec3) -> Result<(Vec3, Vec3), GcrError> {
    let ground = Vec3::new(p.x, p.y, 0.0);
    let u = p.cross(&ground);
    let un = u.norm();
    if un < VERTICAL_BEAM_EPS {
        return Err(GcrError::VerticalBeam);
    }
    let u = u / un;
    let v = p.cross(&u).normalize();
    Ok((u, v))
}

/// Offset from `p` to the hypothetical return of an adjacent-ring beam one
/// azimuth step to the side, on the plane through `p` orthogonal to the beam.
pub fn neighbor_diagonal(
    p: &FeaturePoint,
    intrinsics: &LidarIntrinsics,
    ring_side: RingSide,
    column_side: ColumnSide,
) -> Result<Vec3, GcrError> {
    let pitch = match ring_side {
        RingSide::Up => intrinsics.pitch_up(p.ring),
        RingSide::Down => intrinsics.pitch_down(p.ring),
    }
    .ok_or(GcrError::BoundaryRing)?;
    let (u, v) = beam_frame(&p.position)?;
    let su = match column_side {
        ColumnSide::Left => -1.0,
        ColumnSide::Right => 1.0,
    };
    let sv = match ring_side {
        RingSide::Up => 1.0,
        RingSide::Down => -1.0,
    };
    Ok((u * (su * intrinsics.azimuth_increment) + v * (sv * pitch)) * p.position.norm())
}

/// `‖d‖² / sqrt(‖d‖² − ⟨d, n⟩²)`: the diagonal stretched onto the surface
/// with normal `normal`. Never smaller than `‖d‖`.
pub fn neighbor_beam_distance(normal: &Vec3, diag: &Vec3) -> Result<f64, GcrError> {
    let d2 = diag.norm_squared();
    let dn = diag.dot(normal);
    let in_surface = d2 - dn * dn;
    if !(in_surface >= GRAZING_REL * GRAZING_REL * d2) {
        return Err(GcrError::GrazingIncidence);
    }
    Ok(d2 / in_surface.sqrt())
}

/// Rejection threshold for one source point: the largest neighbor beam
/// distance over the available diagonals, or `None` when the geometry is
/// degenerate and every match should be accepted.
pub fn gcr_threshold(p: &FeaturePoint, intrinsics: &LidarIntrinsics) -> Option<f64> {
    let mut best = f64::NEG_INFINITY;
    for ring_side in [RingSide::Up, RingSide::Down] {
        for column_side in [ColumnSide::Left, ColumnSide::Right] {
            let diag = match neighbor_diagonal(p, intrinsics, ring_side, column_side) {
                Ok(d) => d,
                Err(GcrError::BoundaryRing) => continue,
                Err(_) => return None,
            };
            match neighbor_beam_distance(&p.normal, &diag) {
                Ok(d) => best = best.max(d),
                Err(_) => return None,
            }
        }
    }
    best.is_finite().then_some(best)
}

/// Thresholds for every point of a cloud, in the cloud's own sensor frame.
pub fn gcr_thresholds(cloud: &FeatureCloud) -> Vec<f64> {
    cloud
        .points
        .iter()
        .map(|p| gcr_threshold(p, &cloud.intrinsics).unwrap_or(f64::INFINITY))
        .collect()
}

/// Keeps match `k` iff its distance is below the source point's threshold.
pub fn gcr_reject(ms: &CorrespondenceSet, source: &FeatureCloud) -> CorrespondenceSet {
    let thresholds = gcr_thresholds(source);
    gcr_reject_with(ms, &thresholds)
}

pub fn gcr_reject_with(ms: &CorrespondenceSet, thresholds: &[f64]) -> CorrespondenceSet {
    ms.iter()
        .filter(|m| m.distance < thresholds[m.source_index])
        .copied()
        .collect()
}
