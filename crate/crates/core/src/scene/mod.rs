//! Projection targets: printed fiducial boards and the hexagonal marker prism,
//! plus trajectories and the distance-to-color zone rule.
//!
//! Every target is a set of planar rectangular faces. A face frame has its
//! origin at the face center, `+u` right, `+v` down and `+w` pointing into the
//! surface, so the outward normal is `-w`. Object frames follow the same
//! convention: with an identity pose a board at `z > 0` faces the device.

mod io;
pub mod marker;
mod trajectory;

pub use io::{BoardSpec, MarkerSpec, PrismSpec, SceneDescription, TargetSpec, TrajectorySpec};
pub use marker::FiducialMarker;
pub use trajectory::{sample_trajectory, Keyframe, Trajectory};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Mat3, Pose, Vec2, Vec3};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SceneError {
    #[error("unknown marker id {0}")]
    UnknownMarkerId(u16),
    #[error("time {0} s outside trajectory")]
    TimeOutOfRange(f64),
    #[error("distance {0} mm outside the zone range [70, 250]")]
    DistanceOutOfRange(f64),
    #[error("invalid scene: {0}")]
    Invalid(String),
}

/// A marker placed on a face: center in face coordinates (mm) and in-plane
/// rotation (rad, clockwise on the printed surface as seen from the front).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlacedMarker {
    pub marker: FiducialMarker,
    pub center: Vec2,
    pub angle: f64,
}

impl PlacedMarker {
    /// Corners in face coordinates: top-left, top-right, bottom-right, bottom-left.
    pub fn corners_face(&self) -> [Vec2; 4] {
        let h = self.marker.side_mm * 0.5;
        let (s, c) = self.angle.sin_cos();
        [(-h, -h), (h, -h), (h, h), (-h, h)].map(|(x, y)| self.center + Vec2::new(c * x - s * y, s * x + c * y))
    }

    /// Marker-local coordinates (origin at the top-left corner, mm) of a face point.
    pub fn to_local(&self, p: Vec2) -> Vec2 {
        let d = p - self.center;
        let (s, c) = self.angle.sin_cos();
        let h = self.marker.side_mm * 0.5;
        Vec2::new(c * d.x + s * d.y + h, -s * d.x + c * d.y + h)
    }

    /// Cell value at a face point, `None` outside the marker.
    pub fn sample(&self, p: Vec2) -> Option<bool> {
        let l = self.to_local(p);
        let side = self.marker.side_mm;
        if l.x < 0.0 || l.y < 0.0 || l.x >= side || l.y >= side {
            return None;
        }
        let cell = side / marker::GRID as f64;
        let col = ((l.x / cell) as usize).min(marker::GRID - 1);
        let row = ((l.y / cell) as usize).min(marker::GRID - 1);
        Some(self.marker.cell(row, col))
    }

    fn bounding_radius(&self) -> f64 {
        self.marker.side_mm * std::f64::consts::FRAC_1_SQRT_2
    }
}

/// Planar face of a target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Face {
    pub index: usize,
    /// Face frame to object frame.
    pub to_object: Pose,
    pub half_width: f64,
    pub half_height: f64,
}

impl Face {
    pub fn contains(&self, p: Vec2) -> bool {
        p.x.abs() <= self.half_width && p.y.abs() <= self.half_height
    }

    pub fn point(&self, p: Vec2) -> Vec3 {
        self.to_object.transform_point(&Vec3::new(p.x, p.y, 0.0))
    }

    /// Outward normal in the object frame.
    pub fn normal(&self) -> Vec3 {
        -self.to_object.rotation.column(2).into_owned()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FiducialBoard {
    pub width_mm: f64,
    pub height_mm: f64,
    pub markers: Vec<PlacedMarker>,
    pub reference_dots: Vec<Vec2>,
    pub dot_radius_mm: f64,
    /// Albedo of the unprinted surface.
    pub background: f64,
    /// Albedo of printed ink.
    pub ink: f64,
}

impl FiducialBoard {
    pub fn new(
        width_mm: f64,
        height_mm: f64,
        markers: Vec<PlacedMarker>,
        reference_dots: Vec<Vec2>,
        dot_radius_mm: f64,
    ) -> Result<Self, SceneError> {
        let b = Self { width_mm, height_mm, markers, reference_dots, dot_radius_mm, background: 1.0, ink: 0.0 };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        let bad = |m: String| Err(SceneError::Invalid(m));
        if !(self.width_mm > 0.0 && self.height_mm > 0.0) {
            return bad("board extent must be positive".into());
        }
        let (hw, hh) = (self.width_mm / 2.0, self.height_mm / 2.0);
        let inside = |p: Vec2, margin: f64| p.x.abs() + margin <= hw + 1e-9 && p.y.abs() + margin <= hh + 1e-9;
        for m in &self.markers {
            if m.corners_face().iter().any(|c| !inside(*c, 0.0)) {
                return bad(format!("marker {} leaves the board", m.marker.id));
            }
            for d in &self.reference_dots {
                if (d - m.center).norm() < m.bounding_radius() + self.dot_radius_mm {
                    return bad(format!("reference dot {d:?} overlaps marker {}", m.marker.id));
                }
            }
        }
        for d in &self.reference_dots {
            if !inside(*d, self.dot_radius_mm) {
                return bad(format!("reference dot {d:?} leaves the board"));
            }
        }
        let mut ids: Vec<u16> = self.markers.iter().map(|m| m.marker.id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return bad("duplicate marker id".into());
        }
        if !(0.0..=1.0).contains(&self.background) || !(0.0..=1.0).contains(&self.ink) {
            return bad("albedo must lie in [0, 1]".into());
        }
        Ok(())
    }

    /// Evaluation board: one marker centered, four reference dots at (±15, ±15) mm.
    pub fn evaluation_default() -> Self {
        let marker =
            PlacedMarker { marker: FiducialMarker { id: 6, side_mm: 13.0 }, center: Vec2::zeros(), angle: 0.0 };
        let dots = vec![Vec2::new(-15.0, -15.0), Vec2::new(15.0, -15.0), Vec2::new(15.0, 15.0), Vec2::new(-15.0, 15.0)];
        Self::new(50.0, 50.0, vec![marker], dots, 1.5).expect("default board is valid")
    }

    /// `cols × rows` grid of markers with side `side` and center pitch `1.5·side`.
    pub fn calibration_grid(cols: usize, rows: usize, side: f64, first_id: u16) -> Self {
        let pitch = 1.5 * side;
        let mut markers = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                let center = Vec2::new(
                    (c as f64 - (cols as f64 - 1.0) / 2.0) * pitch,
                    (r as f64 - (rows as f64 - 1.0) / 2.0) * pitch,
                );
                let id = first_id + (r * cols + c) as u16;
                markers.push(PlacedMarker { marker: FiducialMarker { id, side_mm: side }, center, angle: 0.0 });
            }
        }
        Self::new(cols as f64 * pitch, rows as f64 * pitch, markers, vec![], 0.0).expect("grid board is valid")
    }

    pub fn albedo(&self, p: Vec2) -> f64 {
        for m in &self.markers {
            if let Some(white) = m.sample(p) {
                return if white { self.background } else { self.ink };
            }
        }
        for d in &self.reference_dots {
            if (p - d).norm_squared() <= self.dot_radius_mm * self.dot_radius_mm {
                return self.ink;
            }
        }
        self.background
    }
}

/// Regular hexagonal prism with one centered marker per side face.
///
/// The prism axis runs along the object `y` axis. The object origin lies at
/// the center of face 0, whose outward normal is `-z`; the axis passes through
/// `(0, 0, apothem)`. Face `i` is rotated by `i · 60°` about the axis, toward
/// `+x` for increasing `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct PrismTarget {
    pub face_width_mm: f64,
    pub height_mm: f64,
    pub markers: [FiducialMarker; 6],
}

impl PrismTarget {
    pub fn new(face_width_mm: f64, height_mm: f64, markers: [FiducialMarker; 6]) -> Result<Self, SceneError> {
        let p = Self { face_width_mm, height_mm, markers };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        if !(self.face_width_mm > 0.0 && self.height_mm > 0.0) {
            return Err(SceneError::Invalid("prism dimensions must be positive".into()));
        }
        for m in &self.markers {
            if m.side_mm > self.face_width_mm.min(self.height_mm) {
                return Err(SceneError::Invalid(format!("marker {} does not fit its face", m.id)));
            }
        }
        let mut ids: Vec<u16> = self.markers.iter().map(|m| m.id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(SceneError::Invalid("duplicate marker id".into()));
        }
        Ok(())
    }

    pub fn default_prism() -> Self {
        let markers = std::array::from_fn(|i| FiducialMarker { id: i as u16, side_mm: 13.0 });
        Self::new(20.0, 20.0, markers).expect("default prism is valid")
    }

    pub fn apothem(&self) -> f64 {
        self.face_width_mm * 3f64.sqrt() / 2.0
    }

    pub fn axis_center(&self) -> Vec3 {
        Vec3::new(0.0, 0.0, self.apothem())
    }

    pub fn face(&self, i: usize) -> Face {
        let theta = i as f64 * std::f64::consts::FRAC_PI_3;
        let (s, c) = theta.sin_cos();
        let normal = Vec3::new(s, 0.0, -c);
        let u = Vec3::new(c, 0.0, s);
        let v = Vec3::new(0.0, 1.0, 0.0);
        let w = -normal;
        let rotation = Mat3::from_columns(&[u, v, w]);
        Face {
            index: i,
            to_object: Pose { rotation, translation: self.axis_center() + normal * self.apothem() },
            half_width: self.face_width_mm / 2.0,
            half_height: self.height_mm / 2.0,
        }
    }

    pub fn placed_marker(&self, i: usize) -> PlacedMarker {
        PlacedMarker { marker: self.markers[i], center: Vec2::zeros(), angle: 0.0 }
    }
}

/// What the device looks at.
#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    Board(FiducialBoard),
    Prism(PrismTarget),
}

impl Target {
    pub fn faces(&self) -> Vec<Face> {
        match self {
            Target::Board(b) => vec![Face {
                index: 0,
                to_object: Pose::identity(),
                half_width: b.width_mm / 2.0,
                half_height: b.height_mm / 2.0,
            }],
            Target::Prism(p) => (0..6).map(|i| p.face(i)).collect(),
        }
    }

    /// Markers with the index of the face that carries them.
    pub fn markers(&self) -> Vec<(usize, PlacedMarker)> {
        match self {
            Target::Board(b) => b.markers.iter().map(|m| (0, *m)).collect(),
            Target::Prism(p) => (0..6).map(|i| (i, p.placed_marker(i))).collect(),
        }
    }

    pub fn find_marker(&self, id: u16) -> Option<(usize, PlacedMarker)> {
        self.markers().into_iter().find(|(_, m)| m.marker.id == id)
    }

    /// Printed albedo at a face point.
    pub fn albedo(&self, face: usize, p: Vec2) -> f64 {
        match self {
            Target::Board(b) => b.albedo(p),
            Target::Prism(pr) => match pr.placed_marker(face).sample(p) {
                Some(true) | None => 1.0,
                Some(false) => 0.0,
            },
        }
    }

    /// Faces whose outward normal points toward the device (negative camera z).
    pub fn visible_faces(&self, pose: &Pose) -> Vec<usize> {
        self.faces().iter().filter(|f| pose.transform_vector(&f.normal()).z < 0.0).map(|f| f.index).collect()
    }

    pub fn reference_dots(&self) -> Vec<(usize, Vec2)> {
        match self {
            Target::Board(b) => b.reference_dots.iter().map(|d| (0, *d)).collect(),
            Target::Prism(_) => vec![],
        }
    }
}

/// Corners of a marker in the object frame: top-left, top-right,
/// bottom-right, bottom-left in the marker's own frame.
pub fn marker_corners_3d(target: &Target, marker_id: u16) -> Result<[Vec3; 4], SceneError> {
    let (face_idx, placed) = target.find_marker(marker_id).ok_or(SceneError::UnknownMarkerId(marker_id))?;
    let face = target.faces()[face_idx];
    Ok(placed.corners_face().map(|c| face.point(c)))
}

pub fn visible_faces(prism: &PrismTarget, pose: &Pose) -> Vec<usize> {
    Target::Prism(prism.clone()).visible_faces(pose)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ZoneColor {
    Blue,
    Green,
    Yellow,
}

impl ZoneColor {
    pub fn rgb(&self) -> [f64; 3] {
        match self {
            ZoneColor::Blue => [0.0, 0.0, 1.0],
            ZoneColor::Green => [0.0, 1.0, 0.0],
            ZoneColor::Yellow => [1.0, 1.0, 0.0],
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ZoneColor::Blue => "blue",
            ZoneColor::Green => "green",
            ZoneColor::Yellow => "yellow",
        }
    }
}

pub const ZONE_MIN_MM: f64 = 70.0;
pub const ZONE_MAX_MM: f64 = 250.0;

/// `[70, 130)` blue, `[130, 190)` green, `[190, 250]` yellow.
pub fn zone_color(distance_mm: f64) -> Result<ZoneColor, SceneError> {
    if !(ZONE_MIN_MM..=ZONE_MAX_MM).contains(&distance_mm) {
        return Err(SceneError::DistanceOutOfRange(distance_mm));
    }
    Ok(if distance_mm < 130.0 {
        ZoneColor::Blue
    } else if distance_mm < 190.0 {
        ZoneColor::Green
    } else {
        ZoneColor::Yellow
    })
}

/// Zone of a distance, saturating at the range ends.
pub fn zone_color_saturating(distance_mm: f64) -> ZoneColor {
    zone_color(distance_mm.clamp(ZONE_MIN_MM, ZONE_MAX_MM)).expect("clamped into range")
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn centered_marker_corners() {
        let board = Target::Board(FiducialBoard::evaluation_default());
        let c = marker_corners_3d(&board, 6).unwrap();
        let expected = [(-6.5, -6.5), (6.5, -6.5), (6.5, 6.5), (-6.5, 6.5)];
        for (p, (x, y)) in c.iter().zip(expected) {
            assert_abs_diff_eq!(*p, Vec3::new(x, y, 0.0), epsilon = 1e-12);
        }
        assert_eq!(marker_corners_3d(&board, 999), Err(SceneError::UnknownMarkerId(999)));
    }

    #[test]
    fn prism_marker_corners_are_square() {
        let prism = PrismTarget::default_prism();
        let t = Target::Prism(prism.clone());
        for i in 0..6 {
            let c = marker_corners_3d(&t, prism.markers[i].id).unwrap();
            let center = prism.face(i).to_object.translation;
            for p in &c {
                assert_abs_diff_eq!((p - center).norm(), 6.5 * 2f64.sqrt(), epsilon = 1e-12);
            }
            for k in 0..4 {
                assert_abs_diff_eq!((c[(k + 1) % 4] - c[k]).norm(), 13.0, epsilon = 1e-12);
            }
            // planar: all corners on the face plane
            let n = prism.face(i).normal();
            for p in &c {
                assert_abs_diff_eq!((p - center).dot(&n), 0.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn marker_corners_are_counter_clockwise_in_local_frame() {
        let m =
            PlacedMarker { marker: FiducialMarker { id: 1, side_mm: 13.0 }, center: Vec2::new(1.0, 2.0), angle: 0.4 };
        let c = m.corners_face();
        let area: f64 = (0..4).map(|i| c[i].x * c[(i + 1) % 4].y - c[(i + 1) % 4].x * c[i].y).sum::<f64>() / 2.0;
        assert_abs_diff_eq!(area, 169.0, epsilon = 1e-9);
    }

    #[test]
    fn prism_dihedral_structure() {
        let prism = PrismTarget::default_prism();
        for i in 0..6 {
            let a = prism.face(i).normal();
            let b = prism.face((i + 1) % 6).normal();
            assert_abs_diff_eq!(a.dot(&b), 0.5, epsilon = 1e-12);
            assert!(Pose::new(prism.face(i).to_object.rotation, Vec3::zeros()).is_ok());
        }
        assert_abs_diff_eq!(prism.face(0).to_object.translation, Vec3::zeros(), epsilon = 1e-12);
    }

    #[test]
    fn visible_faces_examples() {
        let prism = PrismTarget::default_prism();
        let front = Pose::from_translation(Vec3::new(0.0, 0.0, 150.0));
        let vis = visible_faces(&prism, &front);
        assert_eq!(vis, vec![0, 1, 5]);
        // rotating by 30° puts faces 0 and 1 at ±30°, and face 2 exactly edge-on
        let edge = Pose::from_axis_angle(Vec3::new(0.0, -std::f64::consts::FRAC_PI_6, 0.0), front.translation);
        let vis = visible_faces(&prism, &edge);
        assert!(vis.len() >= 2 && vis.len() <= 3);
        let rot = Pose::from_axis_angle(Vec3::new(0.0, -std::f64::consts::FRAC_PI_2, 0.0), front.translation);
        // face 3 normal is +z in object frame, after -90° about y it is (-1,0,0)·… edge-on; exclusion is strict
        let vis = visible_faces(&prism, &rot);
        assert!(vis.iter().all(|i| {
            let n = rot.transform_vector(&prism.face(*i).normal());
            n.z < 0.0
        }));
        let flipped = Pose::from_axis_angle(Vec3::new(0.0, std::f64::consts::PI, 0.0), front.translation);
        let mut anti = visible_faces(&prism, &flipped);
        anti.sort();
        assert_eq!(anti, vec![2, 3, 4]);
    }

    #[test]
    fn zone_rule() {
        assert_eq!(zone_color(100.0).unwrap(), ZoneColor::Blue);
        assert_eq!(zone_color(150.0).unwrap(), ZoneColor::Green);
        assert_eq!(zone_color(250.0).unwrap(), ZoneColor::Yellow);
        assert_eq!(zone_color(70.0).unwrap(), ZoneColor::Blue);
        assert_eq!(zone_color(129.999_999).unwrap(), ZoneColor::Blue);
        assert_eq!(zone_color(130.0).unwrap(), ZoneColor::Green);
        assert_eq!(zone_color(189.999_999).unwrap(), ZoneColor::Green);
        assert_eq!(zone_color(190.0).unwrap(), ZoneColor::Yellow);
        assert!(matches!(zone_color(69.9), Err(SceneError::DistanceOutOfRange(_))));
        assert!(matches!(zone_color(250.1), Err(SceneError::DistanceOutOfRange(_))));
    }

    #[test]
    fn board_validation() {
        let m = PlacedMarker { marker: FiducialMarker { id: 1, side_mm: 13.0 }, center: Vec2::zeros(), angle: 0.0 };
        assert!(FiducialBoard::new(10.0, 10.0, vec![m], vec![], 1.0).is_err());
        assert!(FiducialBoard::new(50.0, 50.0, vec![m], vec![Vec2::new(5.0, 0.0)], 1.0).is_err());
        assert!(FiducialBoard::new(50.0, 50.0, vec![m], vec![Vec2::new(24.5, 0.0)], 1.0).is_err());
        let g = FiducialBoard::calibration_grid(4, 3, 10.0, 16);
        assert_eq!(g.markers.len(), 12);
        assert!(g.validate().is_ok());
    }

    #[test]
    fn board_albedo_sampling() {
        let b = FiducialBoard::evaluation_default();
        assert_eq!(b.albedo(Vec2::new(15.0, 15.0)), 0.0);
        assert_eq!(b.albedo(Vec2::new(20.0, 0.0)), 1.0);
        // border cell of the marker is black
        assert_eq!(b.albedo(Vec2::new(-6.0, -6.0)), 0.0);
        // top-left payload cell is the white orientation mark
        let cell = 13.0 / 6.0;
        assert_eq!(b.albedo(Vec2::new(-6.5 + 1.5 * cell, -6.5 + 1.5 * cell)), 1.0);
    }
}
