//! Shared fixtures for the pipeline benchmarks.

use std::sync::Arc;

use beamtrim::simulation::{simulate_scan, street, SENSOR_HEIGHT};
use beamtrim::{LidarIntrinsics, RawScan, RigidTransform, Vec3};

/// Two consecutive street scans one meter apart along the street.
pub fn street_pair() -> (RawScan, RawScan) {
    let intrinsics = Arc::new(LidarIntrinsics::default());
    let scene = street();
    let a = RigidTransform::from_translation(Vec3::new(0.0, 0.0, SENSOR_HEIGHT));
    let b = RigidTransform::from_translation(Vec3::new(1.0, 0.0, SENSOR_HEIGHT));
    (
        simulate_scan(&scene, &a, &intrinsics, 1, 0.0),
        simulate_scan(&scene, &b, &intrinsics, 2, 0.1),
    )
}
