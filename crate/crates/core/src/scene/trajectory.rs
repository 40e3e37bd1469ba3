use serde::{Deserialize, Serialize};

use super::SceneError;
use crate::geometry::{axis_angle_from_rotation, rotation_from_axis_angle, Pose};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keyframe {
    pub time_s: f64,
    pub pose: Pose,
}

/// Piecewise pose path: linear in translation, slerp in rotation.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    keyframes: Vec<Keyframe>,
}

impl Trajectory {
    pub fn new(keyframes: Vec<Keyframe>) -> Result<Self, SceneError> {
        if keyframes.len() < 2 {
            return Err(SceneError::Invalid("trajectory needs at least two keyframes".into()));
        }
        if keyframes.iter().any(|k| !k.time_s.is_finite()) || keyframes.windows(2).any(|w| w[1].time_s <= w[0].time_s) {
            return Err(SceneError::Invalid("keyframe times must be strictly increasing".into()));
        }
        Ok(Self { keyframes })
    }

    pub fn keyframes(&self) -> &[Keyframe] {
        &self.keyframes
    }

    pub fn start(&self) -> f64 {
        self.keyframes[0].time_s
    }

    pub fn end(&self) -> f64 {
        self.keyframes[self.keyframes.len() - 1].time_s
    }

    pub fn sample(&self, t: f64) -> Result<Pose, SceneError> {
        sample_trajectory(self, t)
    }
}

pub fn sample_trajectory(traj: &Trajectory, t: f64) -> Result<Pose, SceneError> {
    if !(t >= traj.start() && t <= traj.end()) {
        return Err(SceneError::TimeOutOfRange(t));
    }
    let ks = &traj.keyframes;
    let i = ks.partition_point(|k| k.time_s <= t).clamp(1, ks.len() - 1);
    let (a, b) = (&ks[i - 1], &ks[i]);
    if t == a.time_s {
        return Ok(a.pose);
    }
    if t == b.time_s {
        return Ok(b.pose);
    }
    let s = (t - a.time_s) / (b.time_s - a.time_s);
    let translation = a.pose.translation * (1.0 - s) + b.pose.translation * s;
    let delta = a.pose.rotation.transpose() * b.pose.rotation;
    let rotation = a.pose.rotation * rotation_from_axis_angle(axis_angle_from_rotation(&delta) * s);
    Ok(Pose { rotation, translation })
}
