use crate::geometry::RigidTransform;

/// Sequence of world-from-sensor poses, optionally timestamped.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    pub poses: Vec<RigidTransform>,
    /// Empty, or one entry per pose (seconds).
    pub timestamps: Vec<f64>,
}

impl Trajectory {
    pub fn new(poses: Vec<RigidTransform>) -> Self {
        Self {
            poses,
            timestamps: Vec::new(),
        }
    }

    pub fn with_timestamps(poses: Vec<RigidTransform>, timestamps: Vec<f64>) -> Self {
        assert_eq!(poses.len(), timestamps.len(), "one timestamp per pose");
        Self { poses, timestamps }
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn has_timestamps(&self) -> bool {
        !self.timestamps.is_empty() && self.timestamps.len() == self.poses.len()
    }

    pub fn push(&mut self, pose: RigidTransform, timestamp: Option<f64>) {
        if let Some(t) = timestamp {
            if self.timestamps.len() == self.poses.len() {
                self.timestamps.push(t);
            }
        } else {
            self.timestamps.clear();
        }
        self.poses.push(pose);
    }

    /// Relative motion from pose `i` to pose `j`: `poses[i]⁻¹ ∘ poses[j]`.
    pub fn relative(&self, i: usize, j: usize) -> RigidTransform {
        self.poses[i].inverse().compose(&self.poses[j])
    }

    /// Cumulative translational path length at each pose.
    pub fn path_lengths(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        let mut acc = 0.0;
        for (i, p) in self.poses.iter().enumerate() {
            if i > 0 {
                acc += (p.translation - self.poses[i - 1].translation).norm();
            }
            out.push(acc);
        }
        out
    }

    /// Applies `t` on the left of every pose (a change of world frame).
    pub fn transformed(&self, t: &RigidTransform) -> Trajectory {
        Trajectory {
            poses: self.poses.iter().map(|p| t.compose(p)).collect(),
            timestamps: self.timestamps.clone(),
        }
    }
}
