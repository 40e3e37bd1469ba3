//! Marker detection and pose estimation.

mod detect;
mod pose;

pub use detect::{detect_markers, detect_markers_with, DetectorParams};
pub use pose::{estimate_target_pose, fuse_prism_pose, pnp_planar, refine_pose, PoseEstimate};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{project, Intrinsics, Pose, Vec2};
use crate::scene::Target;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VisionError {
    #[error("at least 4 correspondences required, got {0}")]
    InsufficientPoints(usize),
    #[error("degenerate point configuration")]
    DegenerateConfiguration,
    #[error("no detection belongs to the target")]
    NoKnownMarkers,
    #[error("pose refinement failed: {0}")]
    Refinement(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub marker_id: u16,
    /// Image positions of the marker's TL, TR, BR, BL corners.
    pub corners: [Vec2; 4],
    pub decode_confidence: f64,
}

impl Detection {
    pub fn area(&self) -> f64 {
        let c = &self.corners;
        (0..4).map(|i| c[i].x * c[(i + 1) % 4].y - c[(i + 1) % 4].x * c[i].y).sum::<f64>() / 2.0
    }
}

/// Source of detections in the loop and the calibration sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectorMode {
    #[default]
    Image,
    Oracle,
}

/// Corner noise of the oracle detector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseModel {
    pub sigma0: f64,
    /// Extra σ per pixel of blur radius.
    pub eta: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self { sigma0: 0.05, eta: 0.1 }
    }
}

impl NoiseModel {
    pub const NOISELESS: NoiseModel = NoiseModel { sigma0: 0.0, eta: 0.0 };

    pub fn sigma(&self, blur_radius: f64) -> f64 {
        self.sigma0 + self.eta * blur_radius.max(0.0)
    }
}

/// Ground-truth corners of every marker on a front-facing face, with
/// Gaussian corner noise. Each marker draws from its own stream.
pub fn oracle_detect(
    target: &Target,
    pose: &Pose,
    intr: &Intrinsics,
    blur_radius: f64,
    noise: &NoiseModel,
    seed: u64,
) -> Vec<Detection> {
    let sigma = noise.sigma(blur_radius);
    let visible = target.visible_faces(pose);
    let faces = target.faces();
    let mut out = Vec::new();
    for (face, placed) in target.markers() {
        if !visible.contains(&face) {
            continue;
        }
        let corners_face = placed.corners_face();
        let mut corners = [Vec2::zeros(); 4];
        let mut ok = true;
        for (c, p) in corners.iter_mut().zip(corners_face) {
            match project(intr, pose, &faces[face].point(p)) {
                Ok(px) => *c = px,
                Err(_) => ok = false,
            }
        }
        if !ok {
            continue;
        }
        if sigma > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(placed.marker.id as u64);
            let normal = Normal::new(0.0, sigma).expect("finite sigma");
            for c in &mut corners {
                c.x += normal.sample(&mut rng);
                c.y += normal.sample(&mut rng);
            }
        }
        let det = Detection { marker_id: placed.marker.id, corners, decode_confidence: 1.0 };
        if det.area() >= 25.0 {
            out.push(det);
        }
    }
    out.sort_by_key(|d| d.marker_id);
    out
}

/// Optical-axis distance to the target origin.
pub fn estimate_target_distance(pose: &Pose) -> f64 {
    pose.translation.z
}
