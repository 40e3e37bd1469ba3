//! Projective geometry shared by every other module: intrinsics with radial
//! distortion, rigid poses, axis-angle rotations and planar homographies.
//!
//! Pixel coordinates place the center of pixel `(x, y)` at `(x, y)`. Camera
//! frames are right-handed with `+x` right, `+y` down and `+z` along the
//! optical axis away from the lens; distances are in millimetres.

use nalgebra::{DMatrix, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Vec2 = Vector2<f64>;
pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("point behind camera (z = {0})")]
    PointBehindCamera(f64),
    #[error("undistortion did not converge")]
    NoConvergence,
    #[error("degenerate point configuration")]
    DegenerateConfiguration,
    #[error("point maps to infinity")]
    PointAtInfinity,
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("invalid pose: {0}")]
    InvalidPose(String),
    #[error("need at least {needed} correspondences, got {got}")]
    TooFewPoints { needed: usize, got: usize },
}

/// Pinhole intrinsics with two radial distortion terms. Skew is always zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    #[serde(default)]
    pub skew: f64,
    #[serde(default)]
    pub k1: f64,
    #[serde(default)]
    pub k2: f64,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, k1: f64, k2: f64) -> Result<Self, GeometryError> {
        let intr = Self { fx, fy, cx, cy, skew: 0.0, k1, k2 };
        intr.validate()?;
        Ok(intr)
    }

    /// Distortion-free intrinsics.
    pub fn pinhole(fx: f64, fy: f64, cx: f64, cy: f64) -> Self {
        Self { fx, fy, cx, cy, skew: 0.0, k1: 0.0, k2: 0.0 }
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let bad = |m: &str| Err(GeometryError::InvalidIntrinsics(m.to_string()));
        if !(self.fx > 0.0 && self.fx.is_finite()) || !(self.fy > 0.0 && self.fy.is_finite()) {
            return bad("focal lengths must be positive and finite");
        }
        if !self.cx.is_finite() || !self.cy.is_finite() {
            return bad("principal point must be finite");
        }
        if self.skew != 0.0 {
            return bad("skew must be zero");
        }
        if !(self.k1.abs() < 1.0) || !(self.k2.abs() < 1.0) {
            return bad("|k1| and |k2| must be below 1");
        }
        Ok(())
    }

    pub fn without_distortion(&self) -> Self {
        Self { k1: 0.0, k2: 0.0, ..*self }
    }

    pub fn matrix(&self) -> Mat3 {
        Mat3::new(self.fx, self.skew, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn inverse_matrix(&self) -> Mat3 {
        Mat3::new(1.0 / self.fx, 0.0, -self.cx / self.fx, 0.0, 1.0 / self.fy, -self.cy / self.fy, 0.0, 0.0, 1.0)
    }

    /// Radial distortion of a normalized image point.
    pub fn distort(&self, p: Vec2) -> Vec2 {
        let r2 = p.norm_squared();
        p * (1.0 + self.k1 * r2 + self.k2 * r2 * r2)
    }

    /// Inverse of [`Intrinsics::distort`] by fixed-point iteration.
    pub fn undistort(&self, p: Vec2) -> Result<Vec2, GeometryError> {
        undistort(self, p)
    }

    pub fn normalized_to_pixel(&self, n: Vec2) -> Vec2 {
        let d = self.distort(n);
        Vec2::new(self.fx * d.x + self.skew * d.y + self.cx, self.fy * d.y + self.cy)
    }

    pub fn pixel_to_normalized(&self, px: Vec2) -> Result<Vec2, GeometryError> {
        let y = (px.y - self.cy) / self.fy;
        let x = (px.x - self.cx - self.skew * y) / self.fx;
        self.undistort(Vec2::new(x, y))
    }

    /// Parameter vector `[fx, fy, cx, cy, k1, k2]` used by the optimizers and
    /// the interpolation table.
    pub fn to_params(&self) -> [f64; 6] {
        [self.fx, self.fy, self.cx, self.cy, self.k1, self.k2]
    }

    pub fn from_params(p: &[f64]) -> Self {
        Self { fx: p[0], fy: p[1], cx: p[2], cy: p[3], skew: 0.0, k1: p[4], k2: p[5] }
    }
}

/// Rigid transform mapping object coordinates into the camera frame:
/// `x_cam = rotation * x_obj + translation`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self { rotation: Mat3::identity(), translation: Vec3::zeros() }
    }

    pub fn new(rotation: Mat3, translation: Vec3) -> Result<Self, GeometryError> {
        let orth = (rotation.transpose() * rotation - Mat3::identity()).abs().max();
        if orth > 1e-9 || (rotation.determinant() - 1.0).abs() > 1e-9 {
            return Err(GeometryError::InvalidPose("rotation is not a proper rotation".into()));
        }
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(GeometryError::InvalidPose("translation is not finite".into()));
        }
        Ok(Self { rotation, translation })
    }

    pub fn from_translation(t: Vec3) -> Self {
        Self { rotation: Mat3::identity(), translation: t }
    }

    pub fn from_axis_angle(axis_angle: Vec3, translation: Vec3) -> Self {
        Self { rotation: rotation_from_axis_angle(axis_angle), translation }
    }

    pub fn axis_angle(&self) -> Vec3 {
        axis_angle_from_rotation(&self.rotation)
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn transform_vector(&self, v: &Vec3) -> Vec3 {
        self.rotation * v
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose { rotation: rt, translation: -(rt * self.translation) }
    }

    /// Six-parameter vector `[axis-angle, translation]`.
    pub fn to_params(&self) -> [f64; 6] {
        let w = self.axis_angle();
        let t = self.translation;
        [w.x, w.y, w.z, t.x, t.y, t.z]
    }

    pub fn from_params(p: &[f64]) -> Self {
        Self::from_axis_angle(Vec3::new(p[0], p[1], p[2]), Vec3::new(p[3], p[4], p[5]))
    }

    /// Translation distance (mm) and rotation angle (rad) between two poses.
    pub fn difference(&self, other: &Pose) -> (f64, f64) {
        let dt = (self.translation - other.translation).norm();
        let dr = self.rotation.transpose() * other.rotation;
        (dt, axis_angle_from_rotation(&dr).norm())
    }
}

/// Pinhole projection with radial distortion.
pub fn project(intr: &Intrinsics, pose: &Pose, x_world: &Vec3) -> Result<Vec2, GeometryError> {
    let xc = pose.transform_point(x_world);
    project_camera_point(intr, &xc)
}

pub fn project_camera_point(intr: &Intrinsics, xc: &Vec3) -> Result<Vec2, GeometryError> {
    if !(xc.z > 1e-6) {
        return Err(GeometryError::PointBehindCamera(xc.z));
    }
    Ok(intr.normalized_to_pixel(Vec2::new(xc.x / xc.z, xc.y / xc.z)))
}

const UNDISTORT_MAX_ITERS: usize = 50;

/// Invert the radial model in normalized coordinates.
pub fn undistort(intr: &Intrinsics, p: Vec2) -> Result<Vec2, GeometryError> {
    if intr.k1 == 0.0 && intr.k2 == 0.0 {
        return Ok(p);
    }
    let mut q = p;
    for _ in 0..UNDISTORT_MAX_ITERS {
        let r2 = q.norm_squared();
        let factor = 1.0 + intr.k1 * r2 + intr.k2 * r2 * r2;
        if !(factor.abs() > 1e-12) {
            return Err(GeometryError::NoConvergence);
        }
        let next = p / factor;
        let delta = (next - q).norm();
        q = next;
        if delta <= 1e-15 * (1.0 + q.norm()) {
            return Ok(q);
        }
    }
    if (intr.distort(q) - p).norm() <= 1e-12 {
        Ok(q)
    } else {
        Err(GeometryError::NoConvergence)
    }
}

/// Rodrigues formula; the zero vector maps to the identity.
pub fn rotation_from_axis_angle(w: Vec3) -> Mat3 {
    let theta = w.norm();
    let k = skew_matrix(&w);
    if theta < 1e-12 {
        return Mat3::identity() + k;
    }
    let a = theta.sin() / theta;
    let b = (1.0 - theta.cos()) / (theta * theta);
    Mat3::identity() + k * a + k * k * b
}

/// Logarithm map of a rotation matrix, valid over the whole `[0, π]` range.
pub fn axis_angle_from_rotation(r: &Mat3) -> Vec3 {
    let cos_theta = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let v = Vec3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
    let sin_theta = 0.5 * v.norm();
    let theta = sin_theta.atan2(cos_theta);
    if theta < 1e-8 {
        return v * 0.5;
    }
    if std::f64::consts::PI - theta > 1e-4 {
        return v * (theta / (2.0 * sin_theta));
    }
    // near π: recover the axis from the symmetric part R + Rᵀ = 2cosθ I + 2(1-cosθ) nnᵀ
    let s = (r + r.transpose()) * 0.5 - Mat3::identity() * cos_theta;
    let denom = 1.0 - cos_theta;
    let mut best = 0;
    for i in 1..3 {
        if s[(i, i)] > s[(best, best)] {
            best = i;
        }
    }
    let mut n = Vec3::zeros();
    n[best] = (s[(best, best)] / denom).max(0.0).sqrt();
    for i in 0..3 {
        if i != best {
            n[i] = s[(i, best)] / (denom * n[best]);
        }
    }
    n.normalize_mut();
    // sign from the antisymmetric part (2 sinθ n)
    if n.dot(&v) < 0.0 {
        n = -n;
    }
    n * theta
}

pub fn skew_matrix(w: &Vec3) -> Mat3 {
    Mat3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

/// Nearest rotation in the Frobenius sense.
pub fn nearest_rotation(m: &Mat3) -> Mat3 {
    let svd = m.svd(true, true);
    let u = svd.u.expect("svd u");
    let vt = svd.v_t.expect("svd v_t");
    let mut d = Mat3::identity();
    if (u * vt).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    u * d * vt
}

/// Planar projective transform, stored with unit Frobenius norm and a
/// non-negative `(3,3)` entry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography {
    m: Mat3,
}

impl Homography {
    pub fn new(m: Mat3) -> Result<Self, GeometryError> {
        let norm = m.norm();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(GeometryError::DegenerateConfiguration);
        }
        let mut n = m / norm;
        if n[(2, 2)] < 0.0 || (n[(2, 2)] == 0.0 && first_nonzero(&n) < 0.0) {
            n = -n;
        }
        let sv = n.singular_values();
        let (max, min) = (sv.max(), sv.min());
        if !(min > 0.0 && (max / min).is_finite()) || min / max < 1e-14 {
            return Err(GeometryError::DegenerateConfiguration);
        }
        Ok(Self { m: n })
    }

    pub fn identity() -> Self {
        Self::new(Mat3::identity()).expect("identity is nonsingular")
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.m
    }

    pub fn inverse(&self) -> Homography {
        let inv = self.m.try_inverse().expect("homography is nonsingular by construction");
        Homography::new(inv).expect("inverse of a nonsingular homography")
    }

    pub fn compose(&self, other: &Homography) -> Result<Homography, GeometryError> {
        Homography::new(self.m * other.m)
    }

    pub fn apply(&self, p: Vec2) -> Result<Vec2, GeometryError> {
        apply_homography(self, p)
    }
}

fn first_nonzero(m: &Mat3) -> f64 {
    m.iter().copied().find(|v| *v != 0.0).unwrap_or(0.0)
}

pub fn apply_homography(h: &Homography, p: Vec2) -> Result<Vec2, GeometryError> {
    let m = &h.m;
    let w = m[(2, 0)] * p.x + m[(2, 1)] * p.y + m[(2, 2)];
    if !(w.abs() > 1e-12) {
        return Err(GeometryError::PointAtInfinity);
    }
    Ok(Vec2::new(
        (m[(0, 0)] * p.x + m[(0, 1)] * p.y + m[(0, 2)]) / w,
        (m[(1, 0)] * p.x + m[(1, 1)] * p.y + m[(1, 2)]) / w,
    ))
}

/// Isotropic normalization: centroid to the origin, mean distance √2.
fn normalizing_transform(points: &[Vec2]) -> Result<Mat3, GeometryError> {
    let n = points.len() as f64;
    let c = points.iter().fold(Vec2::zeros(), |a, p| a + p) / n;
    let mean_dist = points.iter().map(|p| (p - c).norm()).sum::<f64>() / n;
    if !(mean_dist > 0.0 && mean_dist.is_finite()) {
        return Err(GeometryError::DegenerateConfiguration);
    }
    let s = std::f64::consts::SQRT_2 / mean_dist;
    Ok(Mat3::new(s, 0.0, -s * c.x, 0.0, s, -s * c.y, 0.0, 0.0, 1.0))
}

fn transform(t: &Mat3, p: &Vec2) -> Vec2 {
    Vec2::new(t[(0, 0)] * p.x + t[(0, 2)], t[(1, 1)] * p.y + t[(1, 2)])
}

/// Normalized direct linear transform from `src -> dst` correspondences.
pub fn homography_dlt(pairs: &[(Vec2, Vec2)]) -> Result<Homography, GeometryError> {
    if pairs.len() < 4 {
        return Err(GeometryError::TooFewPoints { needed: 4, got: pairs.len() });
    }
    let src: Vec<Vec2> = pairs.iter().map(|p| p.0).collect();
    let dst: Vec<Vec2> = pairs.iter().map(|p| p.1).collect();
    let ts = normalizing_transform(&src)?;
    let td = normalizing_transform(&dst)?;

    // pad to at least nine rows so the SVD yields the full right basis
    let rows = (2 * pairs.len()).max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for (i, (s, d)) in src.iter().zip(&dst).enumerate() {
        let s = transform(&ts, s);
        let d = transform(&td, d);
        let (x, y, u, v) = (s.x, s.y, d.x, d.y);
        let r0 = 2 * i;
        let r1 = r0 + 1;
        a[(r0, 0)] = -x;
        a[(r0, 1)] = -y;
        a[(r0, 2)] = -1.0;
        a[(r0, 6)] = u * x;
        a[(r0, 7)] = u * y;
        a[(r0, 8)] = u;
        a[(r1, 3)] = -x;
        a[(r1, 4)] = -y;
        a[(r1, 5)] = -1.0;
        a[(r1, 6)] = v * x;
        a[(r1, 7)] = v * y;
        a[(r1, 8)] = v;
    }
    let svd = a.svd(false, true);
    let vt = svd.v_t.ok_or(GeometryError::DegenerateConfiguration)?;
    let mut order: Vec<usize> = (0..9).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let s_max = svd.singular_values[order[0]];
    let s_second_min = svd.singular_values[order[7]];
    if !(s_max > 0.0) || s_second_min / s_max < 1e-12 {
        return Err(GeometryError::DegenerateConfiguration);
    }
    let h = vt.row(order[8]);
    let hn = Mat3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let td_inv = td.try_inverse().ok_or(GeometryError::DegenerateConfiguration)?;
    Homography::new(td_inv * hn * ts)
}

/// Mean symmetric transfer error of a homography over correspondences.
pub fn symmetric_transfer_error(h: &Homography, pairs: &[(Vec2, Vec2)]) -> Result<f64, GeometryError> {
    let inv = h.inverse();
    let mut total = 0.0;
    for (s, d) in pairs {
        total += (h.apply(*s)? - d).norm() + (inv.apply(*d)? - s).norm();
    }
    Ok(total / (2.0 * pairs.len() as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn intr600() -> Intrinsics {
        Intrinsics::new(600.0, 600.0, 256.0, 256.0, 0.0, 0.0).unwrap()
    }

    #[test]
    fn on_axis_point_hits_principal_point() {
        let p = project(&intr600(), &Pose::identity(), &Vec3::new(0.0, 0.0, 200.0)).unwrap();
        assert_abs_diff_eq!(p, Vec2::new(256.0, 256.0), epsilon = 1e-12);
        let d = Intrinsics::new(600.0, 600.0, 256.0, 256.0, -0.05, 0.01).unwrap();
        let p = project(&d, &Pose::identity(), &Vec3::new(0.0, 0.0, 50.0)).unwrap();
        assert_abs_diff_eq!(p, Vec2::new(256.0, 256.0), epsilon = 1e-12);
    }

    #[test]
    fn distortion_polynomial_hand_value() {
        let d = Intrinsics::new(600.0, 600.0, 256.0, 256.0, -0.05, 0.01).unwrap();
        let p = project(&d, &Pose::identity(), &Vec3::new(10.0, 0.0, 200.0)).unwrap();
        // x_n = 0.05, r² = 0.0025, factor = 1 - 0.05 r² + 0.01 r⁴
        let factor = 1.0 - 0.05 * 0.0025 + 0.01 * 0.0025 * 0.0025;
        assert_abs_diff_eq!(factor, 0.9998750625, epsilon = 1e-15);
        assert_abs_diff_eq!(p.x, 256.0 + 600.0 * 0.05 * factor, epsilon = 1e-9);
        assert_abs_diff_eq!(p.x, 285.996, epsilon = 1e-3);
        assert_abs_diff_eq!(p.y, 256.0, epsilon = 1e-12);
    }

    #[test]
    fn behind_camera_is_rejected() {
        let r = project(&intr600(), &Pose::identity(), &Vec3::new(0.0, 0.0, -50.0));
        assert!(matches!(r, Err(GeometryError::PointBehindCamera(_))));
    }

    #[test]
    fn undistort_examples() {
        let id = intr600();
        assert_eq!(id.undistort(Vec2::new(0.3, -0.2)).unwrap(), Vec2::new(0.3, -0.2));
        let d = Intrinsics::new(600.0, 600.0, 256.0, 256.0, -0.05, 0.0).unwrap();
        let q = Vec2::new(0.1, 0.1);
        let back = d.undistort(d.distort(q)).unwrap();
        assert_abs_diff_eq!(back, q, epsilon = 1e-9);
        assert_eq!(d.undistort(Vec2::zeros()).unwrap(), Vec2::zeros());
    }

    #[test]
    fn intrinsics_invariants_enforced() {
        assert!(Intrinsics::new(-1.0, 600.0, 0.0, 0.0, 0.0, 0.0).is_err());
        assert!(Intrinsics::new(600.0, 600.0, 0.0, 0.0, 1.2, 0.0).is_err());
        assert!(Intrinsics::new(600.0, 600.0, f64::NAN, 0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn dlt_identity_on_unit_square() {
        let sq = [Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0), Vec2::new(1.0, 1.0), Vec2::new(0.0, 1.0)];
        let pairs: Vec<_> = sq.iter().map(|p| (*p, *p)).collect();
        let h = homography_dlt(&pairs).unwrap();
        let expected = Homography::identity();
        assert_abs_diff_eq!(*h.matrix(), *expected.matrix(), epsilon = 1e-12);
    }

    #[test]
    fn dlt_recovers_known_homography() {
        let truth = Homography::new(Mat3::new(1.2, 0.1, 30.0, -0.05, 0.9, -12.0, 1e-3, -2e-3, 1.0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let pairs: Vec<_> = (0..8)
            .map(|_| {
                let s = Vec2::new(rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0));
                (s, truth.apply(s).unwrap())
            })
            .collect();
        let h = homography_dlt(&pairs).unwrap();
        assert_abs_diff_eq!(*h.matrix(), *truth.matrix(), epsilon = 1e-9);
        assert!(symmetric_transfer_error(&h, &pairs).unwrap() < 1e-9);
    }

    #[test]
    fn dlt_rejects_collinear_points() {
        let pairs: Vec<_> = (0..4)
            .map(|i| {
                let p = Vec2::new(i as f64, 2.0 * i as f64 + 1.0);
                (p, p * 2.0)
            })
            .collect();
        assert_eq!(homography_dlt(&pairs), Err(GeometryError::DegenerateConfiguration));
    }

    #[test]
    fn apply_homography_examples() {
        let id = Homography::identity();
        assert_abs_diff_eq!(id.apply(Vec2::new(5.0, 7.0)).unwrap(), Vec2::new(5.0, 7.0), epsilon = 1e-12);
        let t = Homography::new(Mat3::new(1.0, 0.0, 3.0, 0.0, 1.0, -2.0, 0.0, 0.0, 1.0)).unwrap();
        assert_abs_diff_eq!(t.apply(Vec2::zeros()).unwrap(), Vec2::new(3.0, -2.0), epsilon = 1e-12);
        let s = Homography::new(Mat3::from_diagonal(&Vec3::new(2.0, 2.0, 1.0))).unwrap();
        assert_abs_diff_eq!(s.apply(Vec2::new(1.0, 1.0)).unwrap(), Vec2::new(2.0, 2.0), epsilon = 1e-12);
        let inf = Homography::new(Mat3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0)).unwrap();
        assert_eq!(inf.apply(Vec2::new(-1.0, 3.0)), Err(GeometryError::PointAtInfinity));
    }

    #[test]
    fn homography_normalization() {
        let h = Homography::new(Mat3::new(-2.0, 0.0, 0.0, 0.0, -2.0, 0.0, 0.0, 0.0, -2.0)).unwrap();
        assert_abs_diff_eq!(h.matrix().norm(), 1.0, epsilon = 1e-15);
        assert!(h.matrix()[(2, 2)] > 0.0);
        assert!(Homography::new(Mat3::zeros()).is_err());
    }

    #[test]
    fn rodrigues_examples() {
        assert_eq!(rotation_from_axis_angle(Vec3::zeros()), Mat3::identity());
        let r = rotation_from_axis_angle(Vec3::new(0.0, 0.0, std::f64::consts::FRAC_PI_2));
        assert_abs_diff_eq!(r * Vec3::x(), Vec3::y(), epsilon = 1e-15);
    }

    #[test]
    fn rodrigues_round_trip_near_pi() {
        for theta in [1e-7, 0.3, 2.0, std::f64::consts::PI - 1e-3, std::f64::consts::PI - 1e-6] {
            let w = Vec3::new(0.3, -0.5, 0.8).normalize() * theta;
            let back = axis_angle_from_rotation(&rotation_from_axis_angle(w));
            assert_abs_diff_eq!(back, w, epsilon = 1e-10);
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::{prop_assert, prop_assume, proptest, Strategy};

        fn vec3(range: f64) -> impl Strategy<Value = Vec3> {
            (-range..range, -range..range, -range..range).prop_map(|(a, b, c)| Vec3::new(a, b, c))
        }

        proptest! {
            #[test]
            fn distortion_round_trips(x in -0.35..0.35f64, y in -0.35..0.35f64, k1 in -0.2..0.2f64, k2 in -0.05..0.05f64) {
                let intr = Intrinsics::new(500.0, 500.0, 0.0, 0.0, k1, k2).unwrap();
                let p = Vec2::new(x, y);
                let q = intr.undistort(intr.distort(p)).unwrap();
                prop_assert!((q - p).norm() < 1e-9);
                let r = intr.distort(intr.undistort(p).unwrap());
                prop_assert!((r - p).norm() < 1e-9);
            }

            #[test]
            fn axis_angle_round_trips(axis in vec3(1.0), angle in 1e-3..(std::f64::consts::PI - 1e-3)) {
                prop_assume!(axis.norm() > 1e-3);
                let w = axis.normalize() * angle;
                let back = axis_angle_from_rotation(&rotation_from_axis_angle(w));
                prop_assert!((back - w).norm() < 1e-10);
            }

            #[test]
            fn pose_group_laws(a in vec3(3.0), b in vec3(3.0), c in vec3(3.0), ta in vec3(100.0), tb in vec3(100.0), tc in vec3(100.0)) {
                let pa = Pose::from_axis_angle(a, ta);
                let pb = Pose::from_axis_angle(b, tb);
                let pc = Pose::from_axis_angle(c, tc);
                let l = pa.compose(&pb).compose(&pc);
                let r = pa.compose(&pb.compose(&pc));
                prop_assert!((l.rotation - r.rotation).abs().max() < 1e-12);
                prop_assert!((l.translation - r.translation).abs().max() < 1e-12 * 300.0);
                let id = pa.compose(&pa.inverse());
                prop_assert!((id.rotation - Mat3::identity()).abs().max() < 1e-9);
                prop_assert!(id.translation.norm() < 1e-9);
                prop_assert!(Pose::new(pa.rotation, pa.translation).is_ok());
            }

            #[test]
            fn dlt_exact_under_similarity(seed in 0u64..1000, angle in -3.0..3.0f64, scale in 0.2..5.0f64, tx in -100.0..100.0f64) {
                let truth = Homography::new(Mat3::new(0.9, 0.2, 10.0, -0.1, 1.1, 5.0, 2e-3, 1e-3, 1.0)).unwrap();
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let src: Vec<Vec2> = (0..6).map(|_| Vec2::new(rng.random_range(-40.0..40.0), rng.random_range(-40.0..40.0))).collect();
                let pairs: Vec<_> = src.iter().map(|s| (*s, truth.apply(*s).unwrap())).collect();
                let h = homography_dlt(&pairs).unwrap();
                prop_assert!(symmetric_transfer_error(&h, &pairs).unwrap() < 1e-9);
                // similarity applied to the sources induces H·S⁻¹
                let (c, s) = (angle.cos() * scale, angle.sin() * scale);
                let sim = Mat3::new(c, -s, tx, s, c, -tx, 0.0, 0.0, 1.0);
                let simh = Homography::new(sim).unwrap();
                let moved: Vec<_> = pairs.iter().map(|(a, b)| (simh.apply(*a).unwrap(), *b)).collect();
                let h2 = homography_dlt(&moved).unwrap();
                let induced = Homography::new(truth.matrix() * sim.try_inverse().unwrap()).unwrap();
                prop_assert!((h2.matrix() - induced.matrix()).abs().max() < 1e-8);
            }
        }
    }
}
