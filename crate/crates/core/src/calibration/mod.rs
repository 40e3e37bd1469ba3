//! Planar calibration (closed form plus nonlinear refinement) and the
//! multi-focus sweep that tabulates intrinsics against ETL power.

mod profile;
mod sweep;

pub use profile::{
    interpolate, interpolate_with, load_profile, save_profile, InterpolationKind, IntrinsicProfile, ProfileEntry,
};
pub use sweep::{station_views, sweep_calibrate, SweepSetup};

use nalgebra::{DMatrix, Vector6};
use thiserror::Error;

use crate::geometry::{
    homography_dlt, nearest_rotation, project, GeometryError, Homography, Intrinsics, Mat3, Pose, Vec2, Vec3,
};
use crate::optim::{levenberg_marquardt, LmError, LmOptions, LmReport, Problem};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CalibrationError {
    #[error("need at least 3 views, got {0}")]
    InsufficientViews(usize),
    #[error("views do not constrain the intrinsics (degenerate motion)")]
    DegenerateMotion,
    #[error("closed-form conic is not positive definite")]
    NonPositiveDefinite,
    #[error("board lies behind the camera")]
    BehindCamera,
    #[error("view has {got} correspondences, need at least {needed}")]
    TooFewCorrespondences { needed: usize, got: usize },
    #[error("view correspondences are collinear")]
    DegenerateView,
    #[error("a profile needs at least 2 stations, got {0}")]
    InsufficientStations(usize),
    #[error("station {z_mm} mm: {source}")]
    Station {
        z_mm: f64,
        #[source]
        source: Box<CalibrationError>,
    },
    #[error("too few markers detected in view {view}: {found}")]
    DetectionFailed { view: usize, found: usize },
    #[error("invalid sweep: {0}")]
    InvalidSweep(String),
    #[error("profile i/o: {0}")]
    Io(String),
    #[error("profile schema: {0}")]
    Schema(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Lm(#[from] LmError),
}

pub const MIN_VIEW_POINTS: usize = 16;

/// One board observation: board-plane points (mm) and their image positions (px).
#[derive(Debug, Clone, PartialEq)]
pub struct CalibView {
    pub correspondences: Vec<(Vec2, Vec2)>,
    pub homography: Option<Homography>,
    pub pose: Option<Pose>,
}

impl CalibView {
    pub fn new(correspondences: Vec<(Vec2, Vec2)>) -> Result<Self, CalibrationError> {
        if correspondences.len() < MIN_VIEW_POINTS {
            return Err(CalibrationError::TooFewCorrespondences {
                needed: MIN_VIEW_POINTS,
                got: correspondences.len(),
            });
        }
        if !spans_plane(correspondences.iter().map(|c| c.0)) {
            return Err(CalibrationError::DegenerateView);
        }
        Ok(Self { correspondences, homography: None, pose: None })
    }
}

fn spans_plane(points: impl Iterator<Item = Vec2>) -> bool {
    let pts: Vec<Vec2> = points.collect();
    let mean = pts.iter().sum::<Vec2>() / pts.len() as f64;
    let mut cov = nalgebra::Matrix2::zeros();
    for p in &pts {
        let d = p - mean;
        cov += d * d.transpose();
    }
    let ev = cov.symmetric_eigenvalues();
    let (lo, hi) = (ev.min(), ev.max());
    hi > 0.0 && lo / hi > 1e-6
}

fn v_ij(h: &Mat3, i: usize, j: usize) -> Vector6<f64> {
    let (a, b) = (h.column(i), h.column(j));
    Vector6::new(
        a[0] * b[0],
        a[0] * b[1] + a[1] * b[0],
        a[1] * b[1],
        a[2] * b[0] + a[0] * b[2],
        a[2] * b[1] + a[1] * b[2],
        a[2] * b[2],
    )
}

/// Zhang's closed-form intrinsics (zero skew, no distortion).
///
/// Pixel coordinates are conditioned by a similarity built from the images
/// of the board origins before the conic is solved.
pub fn zhang_closed_form(homographies: &[Homography]) -> Result<Intrinsics, CalibrationError> {
    let n = homographies.len();
    if n < 3 {
        return Err(CalibrationError::InsufficientViews(n));
    }
    let origins: Vec<Vec2> = homographies.iter().filter_map(|h| h.apply(Vec2::zeros()).ok()).collect();
    let center = if origins.is_empty() { Vec2::zeros() } else { origins.iter().sum::<Vec2>() / origins.len() as f64 };
    let scale = center.norm().max(1.0);
    let t = Mat3::new(1.0 / scale, 0.0, -center.x / scale, 0.0, 1.0 / scale, -center.y / scale, 0.0, 0.0, 1.0);

    let mut v = DMatrix::<f64>::zeros(2 * n + 1, 6);
    for (k, h) in homographies.iter().enumerate() {
        let m = t * h.matrix();
        let m = m / m.norm();
        let v12 = v_ij(&m, 0, 1);
        let d = v_ij(&m, 0, 0) - v_ij(&m, 1, 1);
        v.row_mut(2 * k).copy_from(&v12.transpose());
        v.row_mut(2 * k + 1).copy_from(&d.transpose());
    }
    // zero skew: B12 = 0
    v[(2 * n, 1)] = 1.0;

    let svd = v.clone().svd(false, true);
    let vt = svd.v_t.ok_or(CalibrationError::DegenerateMotion)?;
    let mut order: Vec<usize> = (0..6).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let s = |k: usize| svd.singular_values[order[k]];
    if !(s(0) > 0.0) || (s(4) - s(5)) <= 1e-9 * s(0) {
        return Err(CalibrationError::DegenerateMotion);
    }
    let mut b = vt.row(order[5]).transpose();
    if b[0] < 0.0 {
        b = -b;
    }
    let (b11, b22, b13, b23, b33) = (b[0], b[2], b[3], b[4], b[5]);
    if !(b11 > 0.0 && b22 > 0.0) {
        return Err(CalibrationError::NonPositiveDefinite);
    }
    let v0 = -b23 / b22;
    let u0 = -b13 / b11;
    let lambda = b33 - b13 * b13 / b11 - b23 * b23 / b22;
    if !(lambda > 0.0) {
        return Err(CalibrationError::NonPositiveDefinite);
    }
    let alpha = (lambda / b11).sqrt();
    let beta = (lambda / b22).sqrt();
    let kn = Mat3::new(alpha, 0.0, u0, 0.0, beta, v0, 0.0, 0.0, 1.0);
    let t_inv = t.try_inverse().expect("similarity is invertible");
    let k = t_inv * kn;
    let k = k / k[(2, 2)];
    Ok(Intrinsics::new(k[(0, 0)], k[(1, 1)], k[(0, 2)], k[(1, 2)], 0.0, 0.0)?)
}

/// Board pose from a board→pixel homography and known intrinsics.
pub fn extrinsics_from_homography(intr: &Intrinsics, h: &Homography) -> Result<Pose, CalibrationError> {
    let kinv = intr.inverse_matrix();
    let m = kinv * h.matrix();
    let (h1, h2, h3) = (m.column(0).into_owned(), m.column(1).into_owned(), m.column(2).into_owned());
    let norm = h1.norm();
    if !(norm > 0.0) {
        return Err(CalibrationError::Geometry(GeometryError::DegenerateConfiguration));
    }
    let mut lambda = 1.0 / norm;
    if h3.z * lambda <= 0.0 {
        lambda = -lambda;
    }
    let t = h3 * lambda;
    if !(t.z > 0.0) {
        return Err(CalibrationError::BehindCamera);
    }
    let r1 = h1 * lambda;
    let r2 = h2 * lambda;
    let r3 = r1.cross(&r2);
    let r = nearest_rotation(&Mat3::from_columns(&[r1, r2, r3]));
    Ok(Pose { rotation: r, translation: t })
}

/// Result of a joint intrinsics + poses refinement.
#[derive(Debug, Clone)]
pub struct Refinement {
    pub intrinsics: Intrinsics,
    pub poses: Vec<Pose>,
    pub rms: f64,
    pub report: LmReport,
}

struct CalibProblem<'a> {
    views: &'a [CalibView],
    count: usize,
}

impl Problem for CalibProblem<'_> {
    fn residual_count(&self) -> usize {
        self.count
    }

    fn residuals(&self, params: &[f64], out: &mut [f64]) -> bool {
        let intr = Intrinsics::from_params(&params[..6]);
        let mut k = 0;
        for (i, v) in self.views.iter().enumerate() {
            let pose = Pose::from_params(&params[6 + 6 * i..12 + 6 * i]);
            for (board, img) in &v.correspondences {
                match project(&intr, &pose, &Vec3::new(board.x, board.y, 0.0)) {
                    Ok(p) => {
                        out[k] = p.x - img.x;
                        out[k + 1] = p.y - img.y;
                    }
                    Err(_) => return false,
                }
                k += 2;
            }
        }
        out.iter().all(|r| r.is_finite())
    }
}

/// Levenberg-Marquardt over `{fx, fy, cx, cy, k1, k2}` and every view pose.
pub fn refine_lm(views: &[CalibView], init: &Intrinsics, poses: &[Pose]) -> Result<Refinement, CalibrationError> {
    if views.len() < 3 {
        return Err(CalibrationError::InsufficientViews(views.len()));
    }
    assert_eq!(views.len(), poses.len(), "one initial pose per view");
    let mut x0 = init.to_params().to_vec();
    for p in poses {
        x0.extend_from_slice(&p.to_params());
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(CalibrationError::Lm(LmError::NonFiniteCost));
    }
    let count = 2 * views.iter().map(|v| v.correspondences.len()).sum::<usize>();
    let problem = CalibProblem { views, count };
    let report = levenberg_marquardt(&problem, &x0, &LmOptions::default())?;
    let p = report.params.as_slice();
    let intrinsics = Intrinsics::from_params(&p[..6]);
    let poses = (0..views.len()).map(|i| Pose::from_params(&p[6 + 6 * i..12 + 6 * i])).collect();
    Ok(Refinement { intrinsics, poses, rms: report.rms(), report })
}

/// Full pipeline: per-view DLT, closed form, extrinsics, joint refinement.
pub fn calibrate(views: &[CalibView]) -> Result<Refinement, CalibrationError> {
    if views.len() < 3 {
        return Err(CalibrationError::InsufficientViews(views.len()));
    }
    let mut views = views.to_vec();
    for v in &mut views {
        v.homography = Some(homography_dlt(&v.correspondences)?);
    }
    let homs: Vec<Homography> = views.iter().map(|v| v.homography.unwrap()).collect();
    let init = zhang_closed_form(&homs)?;
    let poses = homs.iter().map(|h| extrinsics_from_homography(&init, h)).collect::<Result<Vec<_>, _>>()?;
    for (v, p) in views.iter_mut().zip(&poses) {
        v.pose = Some(*p);
    }
    refine_lm(&views, &init, &poses)
}
