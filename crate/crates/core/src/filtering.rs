//! Scan filtration: voxel grid, SVD normals, normal covariance propagated
//! from an isotropic measurement-error model, and the uncertainty and
//! curvature thresholds.
//!
//! For a mean-centered neighborhood `D = U S Vᵀ` the normal is the last
//! right singular vector `V₂`. Its derivative with respect to one data
//! entry `D[i][j]` is
//!
//! ```text
//! ∂V₂/∂D[i][j] = -V [ω₀, ω₁, 0]ᵀ,
//! ω_l = (S_l · U[i][l] V[j][2] + S₂ · U[i][2] V[j][l]) / (S_l² − S₂²)
//! ```
//!
//! and with every coordinate carrying independent noise of standard
//! deviation ξ the normal covariance is `ξ² Σ_ij J^{ij} J^{ij}ᵀ`.

use std::collections::HashMap;

use nalgebra::{MatrixXx3, SymmetricEigen};
use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::{Mat3, Vec3};
use crate::kdtree::KdTree;
use crate::scan::{FeatureCloud, FeaturePoint, RawScan, ScanPoint};

/// Singular values closer than this (relative to `S₀²`) make the normal
/// derivative blow up; such points are rejected.
pub const SINGULAR_GAP_REL: f64 = 1e-9;
const DEGENERATE_SINGULAR: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FilterError {
    #[error("neighborhood needs {needed} points but the cloud has {available}")]
    InsufficientPoints { needed: usize, available: usize },
    #[error("all neighborhood points coincide")]
    DegenerateNeighborhood,
    #[error("singular values {0} and 2 are too close to differentiate the normal")]
    SingularValueCollapse(usize),
    #[error("every point was rejected by the filter")]
    EmptyOutput,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterConfig {
    /// Voxel edge length, meters.
    pub voxel_size: f64,
    /// Neighborhood size for normal estimation (includes the query point).
    pub k: usize,
    /// Normal-uncertainty threshold; points with uncertainty `>= c_tau` are
    /// dropped. `f64::INFINITY` disables the uncertainty filter.
    pub c_tau: f64,
    /// Points with curvature above this are dropped.
    pub curvature_max: f64,
    /// Measurement-error standard deviation, meters.
    pub xi: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            voxel_size: 0.3,
            k: 20,
            c_tau: 0.1,
            curvature_max: 0.1,
            xi: 0.02,
        }
    }
}

/// Mean-centered k-neighborhood of a point.
#[derive(Debug, Clone)]
pub struct Neighborhood {
    /// The query point, in the sensor frame.
    pub center: Vec3,
    /// `k × 3` data matrix with zero column means.
    pub data: MatrixXx3<f64>,
}

impl Neighborhood {
    pub fn from_points(center: Vec3, points: &[Vec3]) -> Self {
        let mean = points.iter().fold(Vec3::zeros(), |a, p| a + p) / points.len() as f64;
        let data = MatrixXx3::from_fn(points.len(), |r, c| points[r][c] - mean[c]);
        Self { center, data }
    }

    pub fn k(&self) -> usize {
        self.data.nrows()
    }
}

/// `D = U diag(S) Vᵀ` with singular values sorted descending.
#[derive(Debug, Clone)]
pub struct SvdResult {
    pub u: MatrixXx3<f64>,
    pub singular: Vec3,
    /// Right singular vectors as columns; `v.column(2)` is the normal.
    pub v: Mat3,
}

impl SvdResult {
    pub fn decompose(data: &MatrixXx3<f64>) -> Self {
        let svd = data.clone().svd(true, true);
        let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
        let s = svd.singular_values;
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
        let mut su = MatrixXx3::zeros(data.nrows());
        let mut sv = Mat3::zeros();
        let mut ss = Vec3::zeros();
        for (dst, &src) in order.iter().enumerate() {
            su.set_column(dst, &u.column(src));
            sv.set_column(dst, &v_t.row(src).transpose());
            ss[dst] = s[src];
        }
        Self {
            u: su,
            singular: ss,
            v: sv,
        }
    }

    pub fn normal(&self) -> Vec3 {
        self.v.column(2).into_owned()
    }

    pub fn reconstruct(&self) -> MatrixXx3<f64> {
        &self.u * Mat3::from_diagonal(&self.singular) * self.v.transpose()
    }

    /// Flips the sign of the third singular pair, keeping `U S Vᵀ` intact.
    fn flip_third(&mut self) {
        self.u.column_mut(2).neg_mut();
        self.v.column_mut(2).neg_mut();
    }
}

#[derive(Debug, Clone)]
pub struct NormalEstimate {
    pub normal: Vec3,
    pub svd: SvdResult,
    /// `λ₂ / (λ₀ + λ₁ + λ₂)` with `λ_i = S_i² / k`.
    pub curvature: f64,
}

/// Cell-centroid downsampling. Each output point is the centroid of an
/// occupied voxel and inherits ring and column from the member closest to
/// that centroid. Output order follows first occupancy in scan order.
pub fn voxel_grid(scan: &RawScan, voxel_size: f64) -> RawScan {
    assert!(voxel_size > 0.0, "voxel size must be positive");
    let inv = 1.0 / voxel_size;
    let mut slots: HashMap<[i64; 3], usize> = HashMap::new();
    let mut members: Vec<Vec<usize>> = Vec::new();
    for (i, p) in scan.points.iter().enumerate() {
        let key = [
            (p.position.x * inv).floor() as i64,
            (p.position.y * inv).floor() as i64,
            (p.position.z * inv).floor() as i64,
        ];
        let slot = *slots.entry(key).or_insert_with(|| {
            members.push(Vec::new());
            members.len() - 1
        });
        members[slot].push(i);
    }
    let points = members
        .iter()
        .map(|idx| {
            let centroid =
                idx.iter().fold(Vec3::zeros(), |a, &i| a + scan.points[i].position) / idx.len() as f64;
            let nearest = idx
                .iter()
                .map(|&i| &scan.points[i])
                .min_by(|a, b| {
                    (a.position - centroid)
                        .norm_squared()
                        .total_cmp(&(b.position - centroid).norm_squared())
                })
                .unwrap();
            ScanPoint::new(centroid, nearest.ring, nearest.column)
        })
        .collect();
    RawScan::from_parts(points, scan.timestamp, scan.intrinsics.clone())
}

/// The `k` nearest points to `points[index]` (the query included), centered.
pub fn knn_neighborhood(tree: &KdTree, index: usize, k: usize) -> Result<Neighborhood, FilterError> {
    if tree.len() < k {
        return Err(FilterError::InsufficientPoints {
            needed: k,
            available: tree.len(),
        });
    }
    let center = tree.points()[index];
    let nbrs: Vec<Vec3> = tree
        .k_nearest(&center, k)
        .into_iter()
        .map(|(i, _)| tree.points()[i])
        .collect();
    Ok(Neighborhood::from_points(center, &nbrs))
}

pub fn svd_normal(nb: &Neighborhood) -> Result<NormalEstimate, FilterError> {
    let mut svd = SvdResult::decompose(&nb.data);
    if svd.singular[0] < DEGENERATE_SINGULAR {
        return Err(FilterError::DegenerateNeighborhood);
    }
    if svd.normal().dot(&nb.center) > 0.0 {
        svd.flip_third();
    }
    let lambda = svd.singular.component_mul(&svd.singular);
    let curvature = lambda[2] / lambda.sum();
    Ok(NormalEstimate {
        normal: svd.normal(),
        svd,
        curvature,
    })
}

/// The two gap coefficients `C_l = [S_l, S₂] / (S_l² − S₂²)`.
fn gap_coefficients(svd: &SvdResult) -> Result<[[f64; 2]; 2], FilterError> {
    let s = &svd.singular;
    let guard = SINGULAR_GAP_REL * s[0] * s[0];
    let mut out = [[0.0; 2]; 2];
    for l in 0..2 {
        let gap = s[l] * s[l] - s[2] * s[2];
        if !(gap.abs() > guard) {
            return Err(FilterError::SingularValueCollapse(l));
        }
        out[l] = [s[l] / gap, s[2] / gap];
    }
    Ok(out)
}

fn jacobian_entry_with(svd: &SvdResult, c: &[[f64; 2]; 2], i: usize, j: usize) -> Vec3 {
    // [Uᵀ Δ^{(i,j)} V]_{a,b} = U[i][a] V[j][b]
    let p = |a: usize, b: usize| svd.u[(i, a)] * svd.v[(j, b)];
    let omega0 = c[0][0] * p(0, 2) + c[0][1] * p(2, 0);
    let omega1 = c[1][0] * p(1, 2) + c[1][1] * p(2, 1);
    -(svd.v.column(0) * omega0 + svd.v.column(1) * omega1)
}

/// `∂V₂ / ∂D[i][j]`.
pub fn svd_jacobian_entry(svd: &SvdResult, i: usize, j: usize) -> Result<Vec3, FilterError> {
    let c = gap_coefficients(svd)?;
    Ok(jacobian_entry_with(svd, &c, i, j))
}

/// Covariance of the normal under isotropic coordinate noise with standard
/// deviation `xi`.
pub fn normal_covariance(svd: &SvdResult, xi: f64) -> Result<Mat3, FilterError> {
    let c = gap_coefficients(svd)?;
    let mut sum = Mat3::zeros();
    for i in 0..svd.u.nrows() {
        for j in 0..3 {
            let jac = jacobian_entry_with(svd, &c, i, j);
            sum += jac * jac.transpose();
        }
    }
    Ok(sum * (xi * xi))
}

/// Eigendecomposition `cov = Q diag(c) Qᵀ` with eigenvalues ascending, so
/// that `c[2]` is the variance along the most uncertain direction.
pub fn normal_frame_covariance(cov: &Mat3) -> (Mat3, Vec3) {
    let eig = SymmetricEigen::new(*cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let mut q = Mat3::zeros();
    let mut c = Vec3::zeros();
    for (dst, &src) in order.iter().enumerate() {
        q.set_column(dst, &eig.eigenvectors.column(src));
        c[dst] = eig.eigenvalues[src];
    }
    (q, c)
}

/// Scalar normal uncertainty: the largest eigenvalue of the covariance.
pub fn uncertainty_scalar(cov: &Mat3) -> f64 {
    normal_frame_covariance(cov).1[2]
}

/// Per-point normal analysis without thresholds. `None` for points whose
/// normal is degenerate or not differentiable.
pub fn analyze_point(tree: &KdTree, index: usize, k: usize, xi: f64) -> Option<(NormalEstimate, f64)> {
    let nb = knn_neighborhood(tree, index, k).ok()?;
    let est = svd_normal(&nb).ok()?;
    let cov = normal_covariance(&est.svd, xi).ok()?;
    let u = uncertainty_scalar(&cov);
    Some((est, u))
}

/// Voxel grid, then per-point normal, covariance, uncertainty and curvature
/// tests. Output order follows the voxel-filtered cloud.
pub fn filter_points(scan: &RawScan, cfg: &FilterConfig) -> Result<FeatureCloud, FilterError> {
    let voxels = voxel_grid(scan, cfg.voxel_size);
    if voxels.len() < cfg.k {
        return Err(FilterError::EmptyOutput);
    }
    let tree = KdTree::new(voxels.positions());
    let points: Vec<FeaturePoint> = (0..voxels.len())
        .into_par_iter()
        .filter_map(|i| {
            let (est, uncertainty) = analyze_point(&tree, i, cfg.k, cfg.xi)?;
            if uncertainty >= cfg.c_tau || est.curvature > cfg.curvature_max {
                return None;
            }
            let src = &voxels.points[i];
            Some(FeaturePoint {
                position: src.position,
                normal: est.normal,
                normal_uncertainty: uncertainty,
                curvature: est.curvature,
                ring: src.ring,
                column: src.column,
                range: src.range,
            })
        })
        .collect();
    if points.is_empty() {
        return Err(FilterError::EmptyOutput);
    }
    Ok(FeatureCloud {
        points,
        timestamp: scan.timestamp,
        intrinsics: scan.intrinsics.clone(),
        source_count: scan.len(),
    })
}
