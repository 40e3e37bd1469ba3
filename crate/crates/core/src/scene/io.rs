//! JSON scene descriptions.
//!
//! ```json
//! {
//!   "target": { "type": "board", "width_mm": 50, "height_mm": 50,
//!               "markers": [{ "id": 6, "side_mm": 13, "center_mm": [0, 0] }],
//!               "reference_dots_mm": [[-15, -15], [15, -15], [15, 15], [-15, 15]],
//!               "dot_radius_mm": 1.5 },
//!   "trajectory": [{ "time_s": 0, "translation_mm": [0, 0, 70] },
//!                  { "time_s": 1, "translation_mm": [0, 0, 250] }]
//! }
//! ```
//!
//! A prism target is `{ "type": "prism", "face_width_mm": 20, "height_mm": 20,
//! "marker_ids": [0, 1, 2, 3, 4, 5], "marker_side_mm": 13 }`. Keyframe
//! rotations are optional axis-angle vectors in radians (`axis_angle_rad`).

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{FiducialBoard, FiducialMarker, Keyframe, PlacedMarker, PrismTarget, SceneError, Target, Trajectory};
use crate::geometry::{Pose, Vec2, Vec3};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkerSpec {
    pub id: u16,
    #[serde(default = "default_side")]
    pub side_mm: f64,
    #[serde(default)]
    pub center_mm: [f64; 2],
    #[serde(default)]
    pub angle_rad: f64,
}

fn default_side() -> f64 {
    13.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoardSpec {
    pub width_mm: f64,
    pub height_mm: f64,
    pub markers: Vec<MarkerSpec>,
    #[serde(default)]
    pub reference_dots_mm: Vec<[f64; 2]>,
    #[serde(default = "default_dot_radius")]
    pub dot_radius_mm: f64,
}

fn default_dot_radius() -> f64 {
    1.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrismSpec {
    #[serde(default = "default_face")]
    pub face_width_mm: f64,
    #[serde(default = "default_face")]
    pub height_mm: f64,
    #[serde(default = "default_prism_ids")]
    pub marker_ids: [u16; 6],
    #[serde(default = "default_side")]
    pub marker_side_mm: f64,
}

fn default_face() -> f64 {
    20.0
}

fn default_prism_ids() -> [u16; 6] {
    [0, 1, 2, 3, 4, 5]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum TargetSpec {
    Board(BoardSpec),
    Prism(PrismSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySpec {
    pub time_s: f64,
    pub translation_mm: [f64; 3],
    #[serde(default)]
    pub axis_angle_rad: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneDescription {
    pub target: TargetSpec,
    #[serde(default)]
    pub trajectory: Vec<TrajectorySpec>,
}

impl SceneDescription {
    pub fn from_json(text: &str) -> Result<Self, SceneError> {
        serde_json::from_str(text).map_err(|e| SceneError::Invalid(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, SceneError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| SceneError::Invalid(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scene serializes")
    }

    pub fn build_target(&self) -> Result<Target, SceneError> {
        let marker = |id: u16, side: f64| {
            FiducialMarker::new(id, side)
                .ok_or_else(|| SceneError::Invalid(format!("bad marker id {id} or side {side}")))
        };
        match &self.target {
            TargetSpec::Board(b) => {
                let markers = b
                    .markers
                    .iter()
                    .map(|m| {
                        Ok(PlacedMarker {
                            marker: marker(m.id, m.side_mm)?,
                            center: Vec2::new(m.center_mm[0], m.center_mm[1]),
                            angle: m.angle_rad,
                        })
                    })
                    .collect::<Result<Vec<_>, SceneError>>()?;
                let dots = b.reference_dots_mm.iter().map(|d| Vec2::new(d[0], d[1])).collect();
                Ok(Target::Board(FiducialBoard::new(b.width_mm, b.height_mm, markers, dots, b.dot_radius_mm)?))
            }
            TargetSpec::Prism(p) => {
                let mut ms = [FiducialMarker { id: 0, side_mm: 1.0 }; 6];
                for (slot, id) in ms.iter_mut().zip(p.marker_ids) {
                    *slot = marker(id, p.marker_side_mm)?;
                }
                Ok(Target::Prism(PrismTarget::new(p.face_width_mm, p.height_mm, ms)?))
            }
        }
    }

    /// `None` when no keyframes are given.
    pub fn build_trajectory(&self) -> Result<Option<Trajectory>, SceneError> {
        if self.trajectory.is_empty() {
            return Ok(None);
        }
        let ks = self
            .trajectory
            .iter()
            .map(|k| Keyframe {
                time_s: k.time_s,
                pose: Pose::from_axis_angle(Vec3::from(k.axis_angle_rad), Vec3::from(k.translation_mm)),
            })
            .collect();
        Trajectory::new(ks).map(Some)
    }

    pub fn evaluation_default() -> Self {
        Self {
            target: TargetSpec::Board(BoardSpec {
                width_mm: 50.0,
                height_mm: 50.0,
                markers: vec![MarkerSpec { id: 6, side_mm: 13.0, center_mm: [0.0, 0.0], angle_rad: 0.0 }],
                reference_dots_mm: vec![[-15.0, -15.0], [15.0, -15.0], [15.0, 15.0], [-15.0, 15.0]],
                dot_radius_mm: 1.5,
            }),
            trajectory: vec![],
        }
    }

    /// Prism carried from 70 mm to 250 mm over 5.9 s, turning about its axis.
    pub fn dpm_default() -> Self {
        let key = |t: f64, z: f64, yaw: f64| TrajectorySpec {
            time_s: t,
            translation_mm: [0.0, 0.0, z],
            axis_angle_rad: [0.0, yaw, 0.0],
        };
        Self {
            target: TargetSpec::Prism(PrismSpec {
                face_width_mm: 20.0,
                height_mm: 20.0,
                marker_ids: default_prism_ids(),
                marker_side_mm: 13.0,
            }),
            trajectory: vec![key(0.0, 70.0, 0.26), key(5.9, 250.0, -0.26)],
        }
    }
}
