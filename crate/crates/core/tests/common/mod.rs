#![allow(dead_code)]

use std::sync::Arc;

use beamtrim::geometry::so3_exp;
use beamtrim::{FeatureCloud, FeaturePoint, LidarIntrinsics, RigidTransform, Vec3};
use nalgebra::MatrixXx3;
use rand::Rng;

/// Noise-free points on three mutually orthogonal square patches meeting at
/// the origin (a box corner seen from inside), with exact normals.
pub fn three_plane_cloud(half: f64, spacing: f64) -> FeatureCloud {
    let n = (2.0 * half / spacing).round() as usize;
    let mut points = Vec::new();
    for axis in 0..3 {
        let normal = Vec3::ith(axis, 1.0);
        let (a, b) = ((axis + 1) % 3, (axis + 2) % 3);
        for i in 0..n {
            for j in 0..n {
                let mut p = Vec3::zeros();
                p[a] = spacing * (i as f64 + 0.5);
                p[b] = spacing * (j as f64 + 0.5);
                points.push(feature(p, normal));
            }
        }
    }
    cloud(points)
}

pub fn feature(position: Vec3, normal: Vec3) -> FeaturePoint {
    FeaturePoint {
        position,
        normal,
        normal_uncertainty: 0.0,
        curvature: 0.0,
        ring: 1,
        column: 0,
        range: position.norm(),
    }
}

pub fn cloud(points: Vec<FeaturePoint>) -> FeatureCloud {
    let source_count = points.len();
    FeatureCloud {
        points,
        timestamp: 0.0,
        intrinsics: Arc::new(LidarIntrinsics::default()),
        source_count,
    }
}

/// Moves every point (and normal) of `c` by `t`.
pub fn transform_cloud(c: &FeatureCloud, t: &RigidTransform) -> FeatureCloud {
    let mut out = c.clone();
    for p in &mut out.points {
        p.position = t.apply(&p.position);
        p.normal = t.rotate(&p.normal);
        p.range = p.position.norm();
    }
    out
}

pub fn random_unit<R: Rng>(rng: &mut R) -> Vec3 {
    loop {
        let v = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v / n;
        }
    }
}

pub fn random_rotation<R: Rng>(rng: &mut R, max_angle: f64) -> nalgebra::Matrix3<f64> {
    so3_exp(&(random_unit(rng) * rng.random_range(0.0..=max_angle)))
}

/// A mean-centered `k × 3` data matrix sampled from a noisy, randomly
/// oriented surface patch, the kind of neighborhood the filter sees.
pub fn random_surface_neighborhood<R: Rng>(rng: &mut R, k: usize) -> MatrixXx3<f64> {
    let r = random_rotation(rng, std::f64::consts::PI);
    let (sx, sy) = (rng.random_range(0.3..1.0), rng.random_range(0.3..1.0));
    let thickness = rng.random_range(0.01..0.08);
    let pts: Vec<Vec3> = (0..k)
        .map(|_| {
            r * Vec3::new(
                rng.random_range(-sx..sx),
                rng.random_range(-sy..sy),
                thickness * rng.random_range(-1.0..1.0),
            )
        })
        .collect();
    let mean = pts.iter().sum::<Vec3>() / k as f64;
    MatrixXx3::from_fn(k, |i, j| pts[i][j] - mean[j])
}
