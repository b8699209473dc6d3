//! Synthetic spinning-lidar scans of simple polyhedral worlds, and random
//! SE(3) perturbations.
//!
//! Range noise for ray `(ring, column)` is drawn from a ChaCha8 stream keyed
//! by `(seed, ring, column)`, so scans are bit-identical under any thread
//! schedule.

use std::fmt::Write as _;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, UnitSphere};
use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::{RigidTransform, Vec3};
use crate::scan::{LidarIntrinsics, RawScan, ScanPoint};
use crate::trajectory::Trajectory;

pub const SIM_MIN_RANGE: f64 = 0.5;
pub const SIM_MAX_RANGE: f64 = 120.0;

pub const STANDARD_SCENES: [&str; 3] = ["corridor", "room-edge", "street"];

/// Height of the sensor above the ground plane in the standard scenes.
pub const SENSOR_HEIGHT: f64 = 1.8;

/// Bounded planar rectangle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Patch {
    pub center: Vec3,
    pub normal: Vec3,
    /// In-plane axis; the second axis is `normal × axis`.
    pub axis: Vec3,
    pub half_extent: [f64; 2],
}

impl Patch {
    pub fn new(center: Vec3, normal: Vec3, axis: Vec3, half_extent: [f64; 2]) -> Self {
        let normal = normal.normalize();
        let axis = (axis - normal * axis.dot(&normal)).normalize();
        Self {
            center,
            normal,
            axis,
            half_extent,
        }
    }

    pub fn second_axis(&self) -> Vec3 {
        self.normal.cross(&self.axis)
    }

    fn intersect(&self, origin: &Vec3, dir: &Vec3) -> Option<f64> {
        let denom = self.normal.dot(dir);
        if denom.abs() < 1e-12 {
            return None;
        }
        let t = self.normal.dot(&(self.center - origin)) / denom;
        let local = origin + dir * t - self.center;
        (local.dot(&self.axis).abs() <= self.half_extent[0]
            && local.dot(&self.second_axis()).abs() <= self.half_extent[1])
            .then_some(t)
    }
}

/// Axis-aligned solid box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn new(min: Vec3, max: Vec3) -> Self {
        Self { min, max }
    }

    /// Entry distance of the slab test; the exit distance when the origin is
    /// inside the box.
    fn intersect(&self, origin: &Vec3, dir: &Vec3) -> Option<f64> {
        self.intersect_inv(origin, dir, &dir.map(|d| 1.0 / d))
    }

    fn intersect_inv(&self, origin: &Vec3, dir: &Vec3, inv: &Vec3) -> Option<f64> {
        let (t0, t1) = self.slab(origin, dir, inv)?;
        Some(if t0 >= 0.0 { t0 } else { t1 })
    }

    /// Parameter interval of the ray inside the box, with the reciprocal
    /// direction precomputed.
    fn slab(&self, origin: &Vec3, dir: &Vec3, inv: &Vec3) -> Option<(f64, f64)> {
        let mut t0 = f64::NEG_INFINITY;
        let mut t1 = f64::INFINITY;
        for a in 0..3 {
            if dir[a].abs() < 1e-300 {
                if origin[a] < self.min[a] || origin[a] > self.max[a] {
                    return None;
                }
                continue;
            }
            let (mut near, mut far) = ((self.min[a] - origin[a]) * inv[a], (self.max[a] - origin[a]) * inv[a]);
            if near > far {
                std::mem::swap(&mut near, &mut far);
            }
            t0 = t0.max(near);
            t1 = t1.min(far);
        }
        (t0 <= t1 && t1 >= 0.0).then_some((t0, t1))
    }

    fn union(&self, other: &Aabb) -> Aabb {
        Aabb::new(self.min.inf(&other.min), self.max.sup(&other.max))
    }
}

/// Boxes grouped into runs of neighbors along x, each with a bounding box,
/// so a ray skips whole groups it misses or cannot reach before its current
/// closest hit.
struct BoxGroups {
    boxes: Vec<Aabb>,
    groups: Vec<(Aabb, std::ops::Range<usize>)>,
}

impl BoxGroups {
    const GROUP: usize = 8;

    fn new(boxes: &[Aabb]) -> Self {
        let mut boxes = boxes.to_vec();
        boxes.sort_by(|a, b| (a.min.x + a.max.x).total_cmp(&(b.min.x + b.max.x)));
        let groups = (0..boxes.len())
            .step_by(Self::GROUP)
            .map(|start| {
                let range = start..(start + Self::GROUP).min(boxes.len());
                let bound = boxes[range.clone()].iter().skip(1).fold(boxes[start], |acc, b| acc.union(b));
                (bound, range)
            })
            .collect();
        Self { boxes, groups }
    }

    /// Closest box hit at `t >= min_t` that is nearer than `best`.
    fn cast(&self, origin: &Vec3, dir: &Vec3, min_t: f64, mut best: Option<f64>) -> Option<f64> {
        let inv = dir.map(|d| 1.0 / d);
        for (bound, range) in &self.groups {
            let Some((entry, _)) = bound.slab(origin, dir, &inv) else {
                continue;
            };
            if best.is_some_and(|b| entry > b) {
                continue;
            }
            for b in &self.boxes[range.clone()] {
                if let Some(t) = b.intersect_inv(origin, dir, &inv) {
                    if t >= min_t && best.is_none_or(|cur| t < cur) {
                        best = Some(t);
                    }
                }
            }
        }
        best
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Scene {
    pub patches: Vec<Patch>,
    pub boxes: Vec<Aabb>,
}

/// A scene prepared for casting many rays; hits equal [`Scene::cast`].
struct AcceleratedScene<'a> {
    patches: &'a [Patch],
    boxes: BoxGroups,
}

impl AcceleratedScene<'_> {
    fn cast(&self, origin: &Vec3, dir: &Vec3, min_t: f64) -> Option<f64> {
        let best = self
            .patches
            .iter()
            .filter_map(|p| p.intersect(origin, dir))
            .filter(|t| *t >= min_t)
            .min_by(|a, b| a.total_cmp(b));
        self.boxes.cast(origin, dir, min_t, best)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SceneError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("unknown scene '{0}'")]
    UnknownScene(String),
}

impl Scene {
    /// Closest hit distance along a unit ray with `t >= min_t`.
    pub fn cast(&self, origin: &Vec3, dir: &Vec3, min_t: f64) -> Option<f64> {
        let patches = self.patches.iter().filter_map(|p| p.intersect(origin, dir));
        let boxes = self.boxes.iter().filter_map(|b| b.intersect(origin, dir));
        patches
            .chain(boxes)
            .filter(|t| *t >= min_t)
            .min_by(|a, b| a.total_cmp(b))
    }

    fn accelerated(&self) -> AcceleratedScene<'_> {
        AcceleratedScene {
            patches: &self.patches,
            boxes: BoxGroups::new(&self.boxes),
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("# patch cx cy cz nx ny nz ax ay az half_a half_b\n# box minx miny minz maxx maxy maxz\n");
        for p in &self.patches {
            let _ = writeln!(
                out,
                "patch {} {} {} {} {} {} {} {} {} {} {}",
                p.center.x, p.center.y, p.center.z, p.normal.x, p.normal.y, p.normal.z, p.axis.x, p.axis.y, p.axis.z,
                p.half_extent[0], p.half_extent[1]
            );
        }
        for b in &self.boxes {
            let _ = writeln!(out, "box {} {} {} {} {} {}", b.min.x, b.min.y, b.min.z, b.max.x, b.max.y, b.max.z);
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Scene, SceneError> {
        let mut scene = Scene::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| SceneError::Parse { line: i + 1, message };
            let mut fields = line.split_whitespace();
            let kind = fields.next().unwrap();
            let nums: Vec<f64> = fields
                .map(|f| f.parse::<f64>().map_err(|e| err(format!("'{f}': {e}"))))
                .collect::<Result<_, _>>()?;
            let v = |k: usize| Vec3::new(nums[k], nums[k + 1], nums[k + 2]);
            match (kind, nums.len()) {
                ("patch", 11) => {
                    if !(nums[9] > 0.0 && nums[10] > 0.0) || v(3).norm() == 0.0 {
                        return Err(err("patch needs a nonzero normal and positive extents".into()));
                    }
                    scene.patches.push(Patch::new(v(0), v(3), v(6), [nums[9], nums[10]]));
                }
                ("box", 6) => {
                    let (min, max) = (v(0), v(3));
                    if (0..3).any(|a| !(max[a] > min[a])) {
                        return Err(err("box max must exceed min on every axis".into()));
                    }
                    scene.boxes.push(Aabb::new(min, max));
                }
                (k, n) => return Err(err(format!("unexpected '{k}' with {n} numbers"))),
            }
        }
        Ok(scene)
    }
}

fn ray_seed(seed: u64, ring: u32, column: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((ring as u64) << 32) | column as u64);
    rng
}

/// Direction of ray `(elevation, azimuth)` in the sensor frame.
pub fn beam_direction(elevation: f64, azimuth: f64) -> Vec3 {
    Vec3::new(elevation.cos() * azimuth.cos(), elevation.cos() * azimuth.sin(), elevation.sin())
}

/// Casts every `(ring, column)` ray from `sensor_pose`. Hits within
/// `[0.5, 120]` m become points, with Gaussian range noise of the intrinsics'
/// standard deviation applied along the ray. The result may be empty.
pub fn simulate_scan(
    scene: &Scene,
    sensor_pose: &RigidTransform,
    intrinsics: &Arc<LidarIntrinsics>,
    noise_seed: u64,
    timestamp: f64,
) -> RawScan {
    let elevations = intrinsics.ring_elevations();
    let columns = intrinsics.column_count() as u32;
    let xi = intrinsics.range_noise_std;
    let origin = sensor_pose.translation;
    let accel = scene.accelerated();
    let scene = &accel;
    let points: Vec<ScanPoint> = elevations
        .par_iter()
        .enumerate()
        .flat_map_iter(|(ring, &elevation)| {
            let ring = ring as u32;
            (0..columns).filter_map(move |column| {
                let dir = beam_direction(elevation, column as f64 * intrinsics.azimuth_increment);
                let world_dir = sensor_pose.rotate(&dir);
                let range = scene.cast(&origin, &world_dir, 0.0)?;
                if !(SIM_MIN_RANGE..=SIM_MAX_RANGE).contains(&range) {
                    return None;
                }
                let noisy = if xi > 0.0 {
                    let z: f64 = StandardNormal.sample(&mut ray_seed(noise_seed, ring, column));
                    range + xi * z
                } else {
                    range
                };
                Some(ScanPoint::new(dir * noisy, ring, column))
            })
        })
        .collect();
    RawScan::from_parts(points, timestamp, intrinsics.clone())
}

/// Magnitude limits of a random rigid perturbation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbationSpec {
    /// Rotation limit, radians.
    pub l_r: f64,
    /// Translation limit, meters.
    pub l_t: f64,
    pub seed: u64,
}

/// Random rotation about a uniform axis by `U[-l_r, l_r]`, and translation
/// along an independent uniform axis by `U[-l_t, l_t]`.
pub fn sample_perturbation_with<R: Rng + ?Sized>(l_r: f64, l_t: f64, rng: &mut R) -> RigidTransform {
    let axis_r: [f64; 3] = UnitSphere.sample(rng);
    let axis_t: [f64; 3] = UnitSphere.sample(rng);
    let m_r = if l_r > 0.0 { rng.random_range(-l_r..=l_r) } else { 0.0 };
    let m_t = if l_t > 0.0 { rng.random_range(-l_t..=l_t) } else { 0.0 };
    let rot = RigidTransform::from_axis_angle(Vec3::from(axis_r) * m_r);
    RigidTransform::new(rot.rotation, Vec3::from(axis_t) * m_t)
}

pub fn sample_perturbation(spec: &PerturbationSpec) -> RigidTransform {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    sample_perturbation_with(spec.l_r, spec.l_t, &mut rng)
}

fn ground(x: [f64; 2], y: [f64; 2]) -> Patch {
    Patch::new(
        Vec3::new(0.5 * (x[0] + x[1]), 0.5 * (y[0] + y[1]), 0.0),
        Vec3::z(),
        Vec3::x(),
        [0.5 * (x[1] - x[0]), 0.5 * (y[1] - y[0])],
    )
}

/// Vertical wall in the plane `y = y0` spanning `x` and `z` ranges, facing
/// `facing` (+1 or -1 along y).
fn wall_y(y0: f64, x: [f64; 2], z: [f64; 2], facing: f64) -> Patch {
    Patch::new(
        Vec3::new(0.5 * (x[0] + x[1]), y0, 0.5 * (z[0] + z[1])),
        Vec3::y() * facing,
        Vec3::x(),
        [0.5 * (x[1] - x[0]), 0.5 * (z[1] - z[0])],
    )
}

fn wall_x(x0: f64, y: [f64; 2], z: [f64; 2], facing: f64) -> Patch {
    Patch::new(
        Vec3::new(x0, 0.5 * (y[0] + y[1]), 0.5 * (z[0] + z[1])),
        Vec3::x() * facing,
        Vec3::y(),
        [0.5 * (y[1] - y[0]), 0.5 * (z[1] - z[0])],
    )
}

/// Straight corridor along +x: ground, two side walls 8 m apart, end walls,
/// and pillars along both walls (mirror symmetric about `y = 0`).
pub fn corridor() -> Scene {
    let (x0, x1, half_w, h) = (-15.0, 115.0, 4.0, 6.0);
    let mut s = Scene {
        patches: vec![
            ground([x0, x1], [-half_w, half_w]),
            wall_y(half_w, [x0, x1], [0.0, h], -1.0),
            wall_y(-half_w, [x0, x1], [0.0, h], 1.0),
            wall_x(x0, [-half_w, half_w], [0.0, 30.0], 1.0),
            wall_x(x1, [-half_w, half_w], [0.0, 30.0], -1.0),
        ],
        boxes: Vec::new(),
    };
    let mut x = x0 + 4.0;
    while x < x1 - 2.0 {
        for side in [-1.0, 1.0] {
            let y_in = side * (half_w - 0.6);
            let y_out = side * half_w;
            s.boxes.push(Aabb::new(
                Vec3::new(x - 0.3, y_in.min(y_out), 0.0),
                Vec3::new(x + 0.3, y_in.max(y_out), h),
            ));
        }
        x += 7.0;
    }
    s
}

/// Two walls meeting at a right angle; the edge is the vertical line
/// through `ROOM_EDGE_CORNER`.
pub fn room_edge() -> Scene {
    let c = ROOM_EDGE_CORNER;
    Scene {
        patches: vec![
            wall_x(c.x, [c.y - 16.0, c.y], [-4.0, 4.0], -1.0),
            wall_y(c.y, [c.x - 16.0, c.x], [-4.0, 4.0], -1.0),
        ],
        boxes: Vec::new(),
    }
}

// off the voxel lattice of the usual voxel sizes, so the edge does not
// coincide with a voxel boundary
pub const ROOM_EDGE_CORNER: Vec3 = Vec3::new(6.1, 6.1, 0.0);

/// Street along x: ground, staggered building façades with pilasters and
/// gaps, parked cars, poles, and cross buildings closing both ends.
pub fn street() -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_57ee7);
    let (x0, x1) = (-120.0, 120.0);
    let mut s = Scene {
        patches: vec![ground([x0, x1], [-30.0, 30.0])],
        boxes: Vec::new(),
    };
    for side in [-1.0f64, 1.0] {
        let mut x = x0;
        while x < x1 {
            let len = rng.random_range(10.0..30.0);
            let setback = rng.random_range(9.0..12.0);
            let height = rng.random_range(8.0..25.0);
            let depth = 8.0;
            let (y_face, y_back) = (side * setback, side * (setback + depth));
            let x_end = (x + len).min(x1);
            s.boxes.push(Aabb::new(
                Vec3::new(x, y_face.min(y_back), 0.0),
                Vec3::new(x_end, y_face.max(y_back), height),
            ));
            // pilasters standing 0.3 m proud of the façade
            let y_proud = side * (setback - 0.3);
            let mut px = x + rng.random_range(1.0..3.0);
            while px + 0.5 < x_end {
                s.boxes.push(Aabb::new(
                    Vec3::new(px, y_proud.min(y_face), 0.0),
                    Vec3::new(px + 0.5, y_proud.max(y_face), height),
                ));
                px += rng.random_range(4.0..7.0);
            }
            x += len + if rng.random_bool(0.3) { rng.random_range(3.0..8.0) } else { 0.0 };
        }
        // parked cars
        let mut x = x0 + rng.random_range(0.0..5.0);
        while x < x1 {
            if rng.random_bool(0.6) {
                let y = side * rng.random_range(5.5..6.5);
                s.boxes.push(Aabb::new(
                    Vec3::new(x, y - 0.9, 0.0),
                    Vec3::new(x + 4.5, y + 0.9, 1.5),
                ));
            }
            x += rng.random_range(6.0..10.0);
        }
        // poles
        let mut x = x0 + rng.random_range(0.0..10.0);
        while x < x1 {
            let y = side * 7.8;
            s.boxes.push(Aabb::new(Vec3::new(x - 0.15, y - 0.15, 0.0), Vec3::new(x + 0.15, y + 0.15, 6.0)));
            x += rng.random_range(15.0..25.0);
        }
    }
    s.boxes.push(Aabb::new(Vec3::new(x1, -40.0, 0.0), Vec3::new(x1 + 10.0, 40.0, 20.0)));
    s.boxes.push(Aabb::new(Vec3::new(x0 - 10.0, -40.0, 0.0), Vec3::new(x0, 40.0, 20.0)));
    s
}

pub fn standard_scene(name: &str) -> Result<Scene, SceneError> {
    match name {
        "corridor" => Ok(corridor()),
        "room-edge" => Ok(room_edge()),
        "street" => Ok(street()),
        other => Err(SceneError::UnknownScene(other.to_string())),
    }
}

/// Sensor height used when placing a sensor in a scene: the room-edge walls
/// are centered on the sensor, the other scenes stand on ground `z = 0`.
pub fn default_sensor_height(scene_name: &str) -> f64 {
    if scene_name == "room-edge" {
        0.0
    } else {
        SENSOR_HEIGHT
    }
}

/// Ground-truth sensor motion for a simulated sequence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Motion {
    /// Drive along +x covering `length` meters. The speed ramps linearly
    /// from zero over the first `ramp_frames` increments, then stays
    /// constant.
    Straight {
        length: f64,
        ramp_frames: usize,
    },
    /// Circle of `radius` around the start point's left side, heading
    /// tangent to the circle, completing `turns` revolutions.
    Orbit { radius: f64, turns: f64 },
}

/// World poses of `frames` sensor positions following `motion` from
/// `start`.
pub fn motion_poses(motion: &Motion, start: &RigidTransform, frames: usize) -> Vec<RigidTransform> {
    match *motion {
        Motion::Straight { length, ramp_frames } => {
            let steps = frames.saturating_sub(1);
            let ramp = ramp_frames.min(steps);
            // increment k (1-based) has weight min(k / ramp, 1)
            let weight = |k: usize| if ramp == 0 { 1.0 } else { (k as f64 / ramp as f64).min(1.0) };
            let total: f64 = (1..=steps).map(weight).sum();
            let unit = if total > 0.0 { length / total } else { 0.0 };
            let mut x = 0.0;
            let mut out = vec![*start];
            for k in 1..=steps {
                x += unit * weight(k);
                out.push(start.compose(&RigidTransform::from_translation(Vec3::new(x, 0.0, 0.0))));
            }
            out
        }
        Motion::Orbit { radius, turns } => (0..frames)
            .map(|i| {
                let a = std::f64::consts::TAU * turns * i as f64 / frames.max(1) as f64;
                let local = RigidTransform::new(
                    RigidTransform::from_rotation_z(a).rotation,
                    Vec3::new(radius * a.sin(), radius * (1.0 - a.cos()), 0.0),
                );
                start.compose(&local)
            })
            .collect(),
    }
}

/// A simulated scan sequence with its ground truth.
#[derive(Debug, Clone)]
pub struct SimulatedSequence {
    pub scans: Vec<RawScan>,
    /// World-frame poses of each scan.
    pub world_poses: Vec<RigidTransform>,
}

impl SimulatedSequence {
    /// Ground truth expressed relative to the first scan, as odometry
    /// reports it.
    pub fn ground_truth(&self) -> Trajectory {
        let first_inv = self.world_poses[0].inverse();
        Trajectory::with_timestamps(
            self.world_poses.iter().map(|p| first_inv.compose(p)).collect(),
            self.scans.iter().map(|s| s.timestamp).collect(),
        )
    }
}

/// Scans at the given world poses, `frame_period` seconds apart. Frame `i`
/// uses noise seed `seed + i`.
pub fn simulate_sequence(
    scene: &Scene,
    world_poses: &[RigidTransform],
    intrinsics: &Arc<LidarIntrinsics>,
    seed: u64,
    frame_period: f64,
) -> SimulatedSequence {
    let scans = world_poses
        .iter()
        .enumerate()
        .map(|(i, pose)| simulate_scan(scene, pose, intrinsics, seed.wrapping_add(i as u64), i as f64 * frame_period))
        .collect();
    SimulatedSequence {
        scans,
        world_poses: world_poses.to_vec(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn intr(xi: f64) -> Arc<LidarIntrinsics> {
        Arc::new(LidarIntrinsics {
            range_noise_std: xi,
            ..LidarIntrinsics::default()
        })
    }

    #[test]
    fn ground_plane_points_lie_on_the_plane() {
        let scene = Scene {
            patches: vec![Patch::new(Vec3::new(0.0, 0.0, -2.0), Vec3::z(), Vec3::x(), [f64::INFINITY, f64::INFINITY])],
            boxes: Vec::new(),
        };
        // tilt the sensor down so most rings hit the plane
        let pose = RigidTransform::from_axis_angle(Vec3::y() * 0.5);
        let scan = simulate_scan(&scene, &pose, &intr(0.0), 1, 0.0);
        assert!(scan.len() > 1000);
        for p in &scan.points {
            let world = pose.apply(&p.position);
            assert!((world.z + 2.0).abs() < 1e-9);
        }
    }

    #[test]
    fn box_ranges_match_slab_oracle() {
        let b = Aabb::new(Vec3::new(-5.0, -7.0, -3.0), Vec3::new(9.0, 4.0, 6.0));
        let scene = Scene {
            patches: Vec::new(),
            boxes: vec![b],
        };
        let i = intr(0.0);
        let scan = simulate_scan(&scene, &RigidTransform::identity(), &i, 1, 0.0);
        assert_eq!(scan.len(), 32 * 4500);
        let elevations = i.ring_elevations();
        for p in scan.points.iter().step_by(37) {
            let dir = beam_direction(elevations[p.ring as usize], p.column as f64 * i.azimuth_increment);
            // exit distance of a ray from inside: min over axes of the face it leaves through
            let oracle = (0..3)
                .filter(|&a| dir[a] != 0.0)
                .map(|a| if dir[a] > 0.0 { b.max[a] / dir[a] } else { b.min[a] / dir[a] })
                .fold(f64::INFINITY, f64::min);
            assert!((p.range - oracle).abs() < 1e-9);
        }
    }

    #[test]
    fn grouped_casting_matches_linear_scan() {
        let scene = street();
        let accel = scene.accelerated();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20_000 {
            let origin = Vec3::new(rng.random_range(-100.0..100.0), rng.random_range(-4.0..4.0), rng.random_range(0.5..3.0));
            let dir = Vec3::from(UnitSphere.sample(&mut rng));
            assert_eq!(accel.cast(&origin, &dir, 0.0), scene.cast(&origin, &dir, 0.0));
        }
    }

    #[test]
    fn range_noise_has_configured_std() {
        let scene = Scene {
            patches: vec![Patch::new(Vec3::new(10.0, 0.0, 0.0), -Vec3::x(), Vec3::y(), [50.0, 50.0])],
            boxes: Vec::new(),
        };
        let clean = simulate_scan(&scene, &RigidTransform::identity(), &intr(0.0), 9, 0.0);
        let noisy = simulate_scan(&scene, &RigidTransform::identity(), &intr(0.02), 9, 0.0);
        assert_eq!(clean.len(), noisy.len());
        let residuals: Vec<f64> = clean.points.iter().zip(&noisy.points).map(|(a, b)| b.range - a.range).collect();
        assert!(residuals.len() >= 10_000);
        let n = residuals.len() as f64;
        let mean = residuals.iter().sum::<f64>() / n;
        let std = (residuals.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!((0.019..=0.021).contains(&std), "std {std}");
    }

    #[test]
    fn identical_seeds_give_identical_scans() {
        let scene = corridor();
        let pose = RigidTransform::from_translation(Vec3::new(3.0, 0.2, SENSOR_HEIGHT));
        let a = simulate_scan(&scene, &pose, &intr(0.02), 42, 0.0);
        let b = simulate_scan(&scene, &pose, &intr(0.02), 42, 0.0);
        assert_eq!(a.points, b.points);
        let c = simulate_scan(&scene, &pose, &intr(0.02), 43, 0.0);
        assert_ne!(a.points, c.points);
    }

    #[test]
    fn zero_limits_give_identity() {
        let t = sample_perturbation(&PerturbationSpec { l_r: 0.0, l_t: 0.0, seed: 5 });
        assert_eq!(t, RigidTransform::identity());
        let a = sample_perturbation(&PerturbationSpec { l_r: 0.1, l_t: 1.0, seed: 5 });
        let b = sample_perturbation(&PerturbationSpec { l_r: 0.1, l_t: 1.0, seed: 5 });
        assert_eq!(a, b);
    }

    #[test]
    fn perturbation_translation_is_isotropic() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let n = 10_000;
        let mean = (0..n).fold(Vec3::zeros(), |a, _| a + sample_perturbation_with(0.0, 1.0, &mut rng).translation) / n as f64;
        assert!(mean.amax() < 0.02, "mean {mean:?}");
    }

    /// Asymptotic Kolmogorov survival function.
    fn ks_p_value(d: f64, n: usize) -> f64 {
        let sqrt_n = (n as f64).sqrt();
        let lambda = (sqrt_n + 0.12 + 0.11 / sqrt_n) * d;
        let mut sum = 0.0;
        for k in 1..100 {
            let k = k as f64;
            sum += 2.0 * (-1f64).powf(k - 1.0) * (-2.0 * k * k * lambda * lambda).exp();
        }
        sum.clamp(0.0, 1.0)
    }

    #[test]
    fn perturbation_angle_is_uniform() {
        // signed angle m_r ~ U[-0.1, 0.1]: |m_r| is the rotation angle and
        // should be U[0, 0.1]
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 10_000;
        let mut angles: Vec<f64> = (0..n).map(|_| sample_perturbation_with(0.1, 0.0, &mut rng).rotation_angle()).collect();
        assert!(angles.iter().all(|a| *a <= 0.1 + 1e-12));
        angles.sort_by(f64::total_cmp);
        let d = angles
            .iter()
            .enumerate()
            .map(|(i, a)| {
                let cdf = a / 0.1;
                (cdf - i as f64 / n as f64).abs().max(((i + 1) as f64 / n as f64 - cdf).abs())
            })
            .fold(0.0, f64::max);
        assert!(ks_p_value(d, n) > 0.01, "KS statistic {d}");
    }

    #[test]
    fn room_edge_walls_are_perpendicular() {
        let s = room_edge();
        assert_eq!(s.patches.len(), 2);
        assert_eq!(s.patches[0].normal.dot(&s.patches[1].normal), 0.0);
    }

    #[test]
    fn corridor_is_left_right_symmetric() {
        let pose = RigidTransform::from_translation(Vec3::new(50.0, 0.0, SENSOR_HEIGHT));
        let scan = simulate_scan(&corridor(), &pose, &intr(0.0), 1, 0.0);
        let left = scan.points.iter().filter(|p| p.position.y > 0.5).count() as f64;
        let right = scan.points.iter().filter(|p| p.position.y < -0.5).count() as f64;
        assert!((left - right).abs() / left.max(right) < 0.02, "{left} vs {right}");
    }

    #[test]
    fn street_scan_is_dense() {
        let pose = RigidTransform::from_translation(Vec3::new(0.0, 0.0, SENSOR_HEIGHT));
        let scan = simulate_scan(&street(), &pose, &intr(0.02), 1, 0.0);
        assert!(scan.len() >= 30_000, "{}", scan.len());
    }

    #[test]
    fn adjacent_rings_are_separated_by_pitch_times_range() {
        let i = intr(0.0);
        let scene = Scene {
            patches: vec![Patch::new(Vec3::new(20.0, 0.0, 0.0), -Vec3::x(), Vec3::y(), [50.0, 50.0])],
            boxes: Vec::new(),
        };
        let scan = simulate_scan(&scene, &RigidTransform::identity(), &i, 1, 0.0);
        let at = |ring: u32| scan.points.iter().find(|p| p.ring == ring && p.column == 0).unwrap().position;
        let (a, b) = (at(15), at(16));
        let expected = i.ring_pitch[15] * 20.0;
        assert!(((a - b).norm() - expected).abs() / expected < 0.005);
    }

    #[test]
    fn scene_text_round_trip_and_errors() {
        let s = street();
        let back = Scene::from_text(&s.to_text()).unwrap();
        assert_eq!(back.boxes, s.boxes);
        assert_eq!(back.patches.len(), s.patches.len());
        assert!(matches!(Scene::from_text("box 0 0 0 1 1"), Err(SceneError::Parse { line: 1, .. })));
        assert!(Scene::from_text("box 0 0 0 -1 1 1").is_err());
        let inf = Scene::from_text("patch 0 0 -2 0 0 1 1 0 0 inf inf").unwrap();
        assert!(inf.patches[0].half_extent[0].is_infinite());
    }

    #[test]
    fn straight_motion_covers_length() {
        let poses = motion_poses(&Motion::Straight { length: 100.0, ramp_frames: 5 }, &RigidTransform::identity(), 50);
        assert_eq!(poses.len(), 50);
        assert!((poses[49].translation.x - 100.0).abs() < 1e-9);
        let steps: Vec<f64> = poses.windows(2).map(|w| w[1].translation.x - w[0].translation.x).collect();
        assert!(steps[0] < steps[10]);
        assert!((steps[10] - steps[40]).abs() < 1e-12);
    }
}
